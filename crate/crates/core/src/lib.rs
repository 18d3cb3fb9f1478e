//! Numerical laboratory for dynamical Borel–Cantelli lemmas and the shrinking
//! target problem on interval maps.
//!
//! * [`maps`]: the intermittent map, the implicit odd circle map, the doubling
//!   map, orbit iteration, branch inversion and backward sequences.
//! * [`targets`]: measure schedules, calibrated nested balls and explicit
//!   interval families.
//! * [`bc_stats`]: hit counting, `S_n / E_n` diagnostics, variance ratios and
//!   the Sprindzuk error-term monitor.
//! * [`correlations`]: decay-of-correlations estimation for piecewise-linear
//!   observables and decay-rate fits.
//! * [`returns`]: first-return statistics and short-return masses.

pub mod bc_stats;
pub mod correlations;
pub mod error;
pub mod maps;
pub mod nonfinite;
pub mod returns;
pub mod rng;
pub mod roots;
pub mod stats;
pub mod targets;

pub use error::{Error, Result};
pub use maps::{MapKind, MapSystem, Orbit, Start};
pub use rng::{Purpose, StreamKey};
pub use targets::{MeasureSchedule, TargetSchedule, TargetSet};
