//! Counter-based random streams.
//!
//! Every stochastic draw in the crate comes from a ChaCha8 stream addressed by
//! a [`StreamKey`]: the 256-bit key is expanded from the master seed with
//! SplitMix64, and the 64-bit ChaCha stream id packs the orbit (or task) index
//! in the high 56 bits and the [`Purpose`] tag in the low 8 bits. A draw is
//! therefore a pure function of `(master seed, index, purpose, position)`, so
//! splitting the ensemble across any number of workers never changes a value.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for. The tag keeps streams of one orbit disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Purpose {
    InitialPoint = 1,
    /// Fresh binary digits shifted into exact doubling-map orbits.
    Digits = 2,
    /// Coin flips of the independent control process.
    Coins = 3,
    Calibration = 4,
    Validation = 5,
    Replicate = 6,
}

/// Largest orbit index a stream key can carry; reserved for calibration.
pub const MAX_STREAM_INDEX: u64 = (1 << 56) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master: u64,
    pub index: u64,
    pub purpose: Purpose,
}

impl StreamKey {
    pub fn new(master: u64, index: u64, purpose: Purpose) -> Self {
        Self {
            master,
            index,
            purpose,
        }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    /// Stream id: `index << 8 | purpose`. Indices must stay below 2^56.
    pub fn stream_id(&self) -> u64 {
        debug_assert!(self.index <= MAX_STREAM_INDEX);
        (self.index << 8) | self.purpose as u64
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(expand_seed(self.master));
        rng.set_stream(self.stream_id());
        rng
    }
}

/// SplitMix64 step.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn expand_seed(master: u64) -> [u8; 32] {
    let mut state = master;
    let mut out = [0u8; 32];
    for chunk in out.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    out
}

/// Uniform draw in `[0, 1)` with 53 random bits.
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
