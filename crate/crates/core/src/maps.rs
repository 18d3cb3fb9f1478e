//! Interval maps, orbit iteration and branch inversion.
//!
//! Three deterministic systems are provided:
//!
//! * the intermittent map with an indifferent fixed point at 0,
//!   `x(1 + 2^α x^α)` on `[0, 1/2)` and `2x - 1` on `[1/2, 1]`;
//! * the implicitly defined odd map on the circle `[-1, 1]`, whose positive
//!   half satisfies `x = (1/2γ)(1 + T)^γ` on `[0, 1/2γ]` and
//!   `x = T + (1/2γ)(1 - T)^γ` on `[1/2γ, 1]`; it preserves Lebesgue measure
//!   and has neutral fixed points at `±1`;
//! * the doubling map `2x mod 1`, used as a uniformly expanding control.
//!
//! A fourth kind, the independent control process, has no geometry: at step
//! `i` it "hits" with probability `μ_i` independently of the past.
//!
//! Doubling-map orbits are not iterated in floating point (which collapses to
//! 0 after ~55 steps). Instead the point is held as a 64-bit binary fraction
//! and each step shifts in one fresh binary digit drawn from the orbit's
//! digit stream. This is an exact realization of the orbit of a point whose
//! trailing digits are Lebesgue-distributed.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{unit_f64, Purpose, StreamKey};
use crate::roots::{increasing_root, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE};
use crate::targets::MeasureSchedule;

/// Phase space of every map: an interval whose endpoints are identified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub lo: f64,
    pub hi: f64,
}

impl Circle {
    pub const UNIT: Circle = Circle { lo: 0.0, hi: 1.0 };
    pub const SYMMETRIC: Circle = Circle { lo: -1.0, hi: 1.0 };

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    /// Arc distance between two points of the circle.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs() % self.length();
        d.min(self.length() - d)
    }

    /// Maps any real onto `[lo, hi)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let len = self.length();
        let w = (x - self.lo).rem_euclid(len) + self.lo;
        if w >= self.hi {
            self.lo
        } else {
            w
        }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }
}

/// Which measure the map preserves, and therefore what "μ" means for it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMeasure {
    /// Normalized Lebesgue measure on the circle.
    Lebesgue,
    /// Absolutely continuous invariant probability with unknown closed form;
    /// sampled as the limit of Lebesgue-started Birkhoff averages.
    Acip,
    /// Product measure of the independent control process.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    Lsv { alpha: f64 },
    Chmv { gamma: f64 },
    Doubling,
    IidControl { schedule: MeasureSchedule },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSystem {
    pub kind: MapKind,
    /// Absolute tolerance used by branch inversion and domain checks.
    pub tolerance: f64,
}

impl MapSystem {
    pub fn lsv(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self::with_kind(MapKind::Lsv { alpha }))
    }

    pub fn chmv(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self::with_kind(MapKind::Chmv { gamma }))
    }

    pub fn doubling() -> Self {
        Self::with_kind(MapKind::Doubling)
    }

    pub fn iid_control(schedule: MeasureSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self::with_kind(MapKind::IidControl { schedule }))
    }

    fn with_kind(kind: MapKind) -> Self {
        Self {
            kind,
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// Re-checks parameter ranges, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1e-3) {
            return Err(Error::Config(format!(
                "inversion tolerance {} outside (0, 1e-3)",
                self.tolerance
            )));
        }
        match &self.kind {
            MapKind::Lsv { alpha } => check_alpha(*alpha),
            MapKind::Chmv { gamma } => check_gamma(*gamma),
            MapKind::Doubling => Ok(()),
            MapKind::IidControl { schedule } => schedule.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            MapKind::Lsv { .. } => "lsv",
            MapKind::Chmv { .. } => "chmv",
            MapKind::Doubling => "doubling",
            MapKind::IidControl { .. } => "iid_control",
        }
    }

    pub fn domain(&self) -> Circle {
        match self.kind {
            MapKind::Chmv { .. } => Circle::SYMMETRIC,
            _ => Circle::UNIT,
        }
    }

    pub fn reference_measure(&self) -> ReferenceMeasure {
        match self.kind {
            MapKind::Lsv { .. } => ReferenceMeasure::Acip,
            MapKind::Chmv { .. } | MapKind::Doubling => ReferenceMeasure::Lebesgue,
            MapKind::IidControl { .. } => ReferenceMeasure::Product,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, MapKind::IidControl { .. })
    }

    /// One application of the map to a floating-point point.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match &self.kind {
            MapKind::Lsv { alpha } => eval_lsv(*alpha, x),
            MapKind::Chmv { gamma } => Chmv::new(*gamma)?.eval(x, self.tolerance),
            MapKind::Doubling => {
                if !(0.0..1.0).contains(&x) {
                    return Err(Error::Config(format!(
                        "doubling map point {x} outside [0, 1)"
                    )));
                }
                Ok(eval_doubling(x))
            }
            MapKind::IidControl { .. } => Err(Error::Unsupported(
                "the independent control process has no point dynamics".into(),
            )),
        }
    }

    /// Monotone pieces with their inverses.
    pub fn branches(&self) -> Vec<Branch> {
        match self.kind {
            MapKind::Lsv { alpha } => vec![
                Branch::new((0.0, 0.5), (0.0, 1.0), Inverse::LsvLeft { alpha }),
                Branch::new(
                    (0.5, 1.0),
                    (0.0, 1.0),
                    Inverse::Affine {
                        scale: 0.5,
                        shift: 0.5,
                    },
                ),
            ],
            MapKind::Chmv { gamma } => {
                let c = 1.0 / (2.0 * gamma);
                vec![
                    Branch::new((-1.0, -c), (-1.0, 0.0), Inverse::ChmvOuterNeg { gamma }),
                    Branch::new((-c, 0.0), (0.0, 1.0), Inverse::ChmvInnerNeg { gamma }),
                    Branch::new((0.0, c), (-1.0, 0.0), Inverse::ChmvInnerPos { gamma }),
                    Branch::new((c, 1.0), (0.0, 1.0), Inverse::ChmvOuterPos { gamma }),
                ]
            }
            MapKind::Doubling => vec![
                Branch::new(
                    (0.0, 0.5),
                    (0.0, 1.0),
                    Inverse::Affine {
                        scale: 0.5,
                        shift: 0.0,
                    },
                ),
                Branch::new(
                    (0.5, 1.0),
                    (0.0, 1.0),
                    Inverse::Affine {
                        scale: 0.5,
                        shift: 0.5,
                    },
                ),
            ],
            MapKind::IidControl { .. } => Vec::new(),
        }
    }

    /// Lebesgue length of `T^{-1}(u, v)`, summed branch by branch.
    pub fn preimage_length(&self, u: f64, v: f64) -> Result<f64> {
        let mut total = 0.0;
        for branch in self.branches() {
            let lo = u.max(branch.image.0);
            let hi = v.min(branch.image.1);
            if hi > lo {
                total += (branch.inverse(hi, self.tolerance)?
                    - branch.inverse(lo, self.tolerance)?)
                .abs();
            }
        }
        Ok(total)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "lsv parameter alpha = {alpha} must lie in (0, 1)"
        )))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 1.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "chmv parameter gamma = {gamma} must exceed 1"
        )))
    }
}

/// The intermittent map: `x(1 + 2^α x^α)` below 1/2, `2x - 1` above.
pub fn eval_lsv(alpha: f64, x: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Config(format!("lsv point {x} outside [0, 1]")));
    }
    Ok(lsv_step(alpha, x))
}

#[inline]
fn lsv_step(alpha: f64, x: f64) -> f64 {
    if x < 0.5 {
        x * (1.0 + (2.0 * x).powf(alpha))
    } else {
        2.0 * x - 1.0
    }
}

/// `2x mod 1`.
pub fn eval_doubling(x: f64) -> f64 {
    let y = 2.0 * x;
    y - y.floor()
}

/// Evaluates the implicit odd circle map with the default tolerance.
pub fn eval_chmv(gamma: f64, x: f64) -> Result<f64> {
    Chmv::new(gamma)?.eval(x, DEFAULT_TOLERANCE)
}

/// Right-hand side of the branch equation that defines the positive half of
/// the implicit map: returns the `x` whose image is `t`.
pub fn chmv_branch_equation(gamma: f64, t: f64, inner: bool) -> f64 {
    let c = 1.0 / (2.0 * gamma);
    if inner {
        c * (1.0 + t).powf(gamma)
    } else {
        t + c * (1.0 - t).powf(gamma)
    }
}

/// Parameters of the implicit map with integer-exponent fast paths.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Chmv {
    gamma: f64,
    c: f64,
    int_gamma: Option<i32>,
}

impl Chmv {
    pub(crate) fn new(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        let int_gamma = (gamma.fract() == 0.0 && gamma <= 16.0).then_some(gamma as i32);
        Ok(Self {
            gamma,
            c: 1.0 / (2.0 * gamma),
            int_gamma,
        })
    }

    #[inline]
    fn pow(&self, base: f64) -> f64 {
        match self.int_gamma {
            Some(k) => base.powi(k),
            None => base.powf(self.gamma),
        }
    }

    #[inline]
    fn pow_minus_one(&self, base: f64) -> f64 {
        match self.int_gamma {
            Some(k) => base.powi(k - 1),
            None => base.powf(self.gamma - 1.0),
        }
    }

    #[inline]
    fn root(&self, y: f64) -> f64 {
        match self.int_gamma {
            Some(2) => y.sqrt(),
            Some(3) => y.cbrt(),
            _ => y.powf(1.0 / self.gamma),
        }
    }

    pub(crate) fn eval(&self, x: f64, tol: f64) -> Result<f64> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::Config(format!("chmv point {x} outside [-1, 1]")));
        }
        if x < 0.0 {
            Ok(-self.eval_positive(-x, tol)?)
        } else {
            self.eval_positive(x, tol)
        }
    }

    #[inline]
    fn eval_positive(&self, x: f64, tol: f64) -> Result<f64> {
        if x <= self.c {
            // closed-form inversion of x = c (1 + T)^γ
            return Ok(self.root(x / self.c) - 1.0);
        }
        // T + c (1 - T)^γ = x has its root in [0, x]; one fixed-point step
        // is an excellent starting guess.
        let guess = x - self.c * self.pow(1.0 - x);
        increasing_root(
            |t| {
                let s = 1.0 - t;
                let p = self.pow_minus_one(s);
                (t + self.c * p * s - x, 1.0 - self.c * self.gamma * p)
            },
            0.0,
            x,
            guess,
            tol,
            DEFAULT_MAX_ITER,
        )
    }
}

/// Closed-form or root-solved inverse of one monotone branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inverse {
    Affine {
        scale: f64,
        shift: f64,
    },
    LsvLeft {
        alpha: f64,
    },
    /// `[0, 1/2γ] → [-1, 0]`: `x = c (1 + y)^γ`.
    ChmvInnerPos {
        gamma: f64,
    },
    /// `[1/2γ, 1] → [0, 1]`: `x = y + c (1 - y)^γ`.
    ChmvOuterPos {
        gamma: f64,
    },
    /// `[-1/2γ, 0] → [0, 1]`: `x = -c (1 - y)^γ`.
    ChmvInnerNeg {
        gamma: f64,
    },
    /// `[-1, -1/2γ] → [-1, 0]`: `x = y - c (1 + y)^γ`.
    ChmvOuterNeg {
        gamma: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub domain: (f64, f64),
    pub image: (f64, f64),
    pub rule: Inverse,
}

impl Branch {
    fn new(domain: (f64, f64), image: (f64, f64), rule: Inverse) -> Self {
        Self {
            domain,
            image,
            rule,
        }
    }

    /// All branches of the maps here are increasing.
    pub fn increasing(&self) -> bool {
        true
    }

    /// The unique preimage of `y` in this branch's domain.
    pub fn inverse(&self, y: f64, tol: f64) -> Result<f64> {
        let pw = |g: f64, b: f64| b.powf(g);
        Ok(match self.rule {
            Inverse::Affine { scale, shift } => scale * y + shift,
            Inverse::LsvLeft { alpha } => {
                // x (1 + (2x)^α) = y, increasing in x on [0, 1/2]
                increasing_root(
                    |x| {
                        let p = (2.0 * x).powf(alpha);
                        (x * (1.0 + p) - y, 1.0 + (1.0 + alpha) * p)
                    },
                    0.0,
                    0.5,
                    0.5 * y,
                    tol,
                    DEFAULT_MAX_ITER,
                )?
            }
            Inverse::ChmvInnerPos { gamma } => pw(gamma, 1.0 + y) / (2.0 * gamma),
            Inverse::ChmvOuterPos { gamma } => y + pw(gamma, 1.0 - y) / (2.0 * gamma),
            Inverse::ChmvInnerNeg { gamma } => -pw(gamma, 1.0 - y) / (2.0 * gamma),
            Inverse::ChmvOuterNeg { gamma } => y - pw(gamma, 1.0 + y) / (2.0 * gamma),
        })
    }
}

/// Preimage of `y` inside `branch`, found by bisection on the *forward* map.
///
/// Independent of [`Branch::inverse`]; used to cross-check the closed forms
/// and the backward recursion.
pub fn solve_preimage(map: &MapSystem, branch: &Branch, y: f64) -> Result<f64> {
    let (mut lo, mut hi) = branch.domain;
    for _ in 0..DEFAULT_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 0.25 * map.tolerance || mid == lo || mid == hi {
            return Ok(mid);
        }
        if map.eval(mid)? < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        input: y,
        residual: hi - lo,
        iterations: DEFAULT_MAX_ITER,
    })
}

/// Where an orbit starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Point(f64),
    /// Drawn from normalized Lebesgue measure on the domain.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub start: Start,
    /// Number of map applications after burn-in.
    pub length: u64,
    /// Iterations discarded before step 0.
    pub burn_in: u64,
    pub key: StreamKey,
}

impl Orbit {
    pub fn new(start: Start, length: u64, key: StreamKey) -> Self {
        Self {
            start,
            length,
            burn_in: 0,
            key,
        }
    }

    pub fn with_burn_in(mut self, burn_in: u64) -> Self {
        self.burn_in = burn_in;
        self
    }
}

enum State {
    Lsv {
        alpha: f64,
        x: f64,
    },
    Chmv {
        map: Chmv,
        x: f64,
    },
    Dyadic {
        bits: u64,
        digits: ChaCha8Rng,
        buffer: u64,
        left: u32,
    },
}

/// A running orbit. `point()` is `T^k x` after `k` calls to `advance`.
pub struct Trajectory {
    state: State,
    step: u64,
    tol: f64,
    domain: Circle,
    initial: f64,
}

impl Trajectory {
    /// Places the orbit at its start and runs the burn-in.
    pub fn new(map: &MapSystem, orbit: &Orbit) -> Result<Self> {
        map.validate()?;
        let domain = map.domain();
        let x0 = match orbit.start {
            Start::Point(x) => {
                if !domain.contains(x, 0.0) {
                    return Err(Error::Config(format!(
                        "initial point {x} outside [{}, {}]",
                        domain.lo, domain.hi
                    )));
                }
                x
            }
            Start::Uniform => {
                let mut rng = orbit.key.with_purpose(Purpose::InitialPoint).rng();
                domain.lo + domain.length() * unit_f64(&mut rng)
            }
        };
        let state = match &map.kind {
            MapKind::Lsv { alpha } => State::Lsv {
                alpha: *alpha,
                x: x0,
            },
            MapKind::Chmv { gamma } => State::Chmv {
                map: Chmv::new(*gamma)?,
                x: x0,
            },
            MapKind::Doubling => {
                let bits = match orbit.start {
                    // exact: every f64 in [0, 1) has at most 53 significant bits
                    Start::Point(x) => (domain.wrap(x) * 18_446_744_073_709_551_616.0) as u64,
                    Start::Uniform => orbit
                        .key
                        .with_purpose(Purpose::InitialPoint)
                        .rng()
                        .next_u64(),
                };
                State::Dyadic {
                    bits,
                    digits: orbit.key.with_purpose(Purpose::Digits).rng(),
                    buffer: 0,
                    left: 0,
                }
            }
            MapKind::IidControl { .. } => {
                return Err(Error::Unsupported(
                    "the independent control process has no trajectory".into(),
                ))
            }
        };
        let mut traj = Self {
            state,
            step: 0,
            tol: map.tolerance,
            domain,
            initial: 0.0,
        };
        traj.initial = traj.point();
        for _ in 0..orbit.burn_in {
            traj.advance()?;
        }
        traj.step = 0;
        Ok(traj)
    }

    /// Point at which the orbit started (before burn-in).
    pub fn initial_point(&self) -> f64 {
        self.initial
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    #[inline]
    pub fn point(&self) -> f64 {
        match &self.state {
            State::Lsv { x, .. } | State::Chmv { x, .. } => *x,
            State::Dyadic { bits, .. } => {
                // round to nearest; the top value rounds up to 1.0
                let y = *bits as f64 * (1.0 / 18_446_744_073_709_551_616.0);
                if y < 1.0 {
                    y
                } else {
                    1.0 - f64::EPSILON / 2.0
                }
            }
        }
    }

    #[inline]
    pub fn advance(&mut self) -> Result<()> {
        let step = self.step;
        match &mut self.state {
            State::Lsv { alpha, x } => {
                *x = confine(lsv_step(*alpha, *x), self.domain, self.tol, step)?;
            }
            State::Chmv { map, x } => {
                let y = map.eval(*x, self.tol)?;
                *x = confine(y, self.domain, self.tol, step)?;
            }
            State::Dyadic {
                bits,
                digits,
                buffer,
                left,
            } => {
                if *left == 0 {
                    *buffer = digits.next_u64();
                    *left = 64;
                }
                *bits = (*bits << 1) | (*buffer & 1);
                *buffer >>= 1;
                *left -= 1;
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[inline]
fn confine(y: f64, domain: Circle, tol: f64, step: u64) -> Result<f64> {
    if y.is_finite() && domain.contains(y, tol) {
        Ok(y.clamp(domain.lo, domain.hi))
    } else {
        Err(Error::Escaped {
            point: y,
            step,
            lo: domain.lo,
            hi: domain.hi,
        })
    }
}

/// Applies the map `orbit.length` times, calling `visitor(k, T^k x)` for
/// `k = 0 .. length` before each application. Returns `T^length x`.
pub fn iterate<F>(map: &MapSystem, orbit: &Orbit, mut visitor: F) -> Result<f64>
where
    F: FnMut(u64, f64),
{
    let mut traj = Trajectory::new(map, orbit)?;
    for k in 0..orbit.length {
        visitor(k, traj.point());
        traj.advance()?;
    }
    Ok(traj.point())
}

/// One step of the independent control process.
pub fn iid_control_step(p: f64, rng: &mut impl RngCore) -> bool {
    // p = 1 always hits because unit_f64 < 1
    unit_f64(rng) < p
}

/// Backward orbits of the point `-1/2γ` under the implicit map.
///
/// `a_minus[i]` is `a_{-i}` (the `i`-th preimage of `-1/2γ` on the branch
/// `(-1, -1/2γ)`), and `b[i - 1]` is `b_i`, the preimage of `a_{-(i-1)}` on
/// the branch `(0, 1/2γ)`. The target `(-1, a_{-n})` pulls back to
/// `(0, b_{n+1}) ∪ (-1, a_{-(n+1)})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackwardSequences {
    pub gamma: f64,
    pub tau: f64,
    pub a_minus: Vec<f64>,
    pub b: Vec<f64>,
}

impl BackwardSequences {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    /// `a_{-i}` for `0 <= i <= n`.
    pub fn a(&self, i: usize) -> f64 {
        self.a_minus[i]
    }

    /// `b_i` for `1 <= i <= n`.
    pub fn b_at(&self, i: usize) -> f64 {
        self.b[i - 1]
    }
}

/// Builds `a_{-0} .. a_{-n}` and `b_1 .. b_n` for the implicit map.
///
/// With `c = 1/2γ`: `b_{i+1} = c (1 + a_{-i})^γ` (the left-branch preimage of
/// `a_{-i}`) and `a_{-(i+1)} = a_{-i} - b_{i+1}` (the preimage on the branch
/// `(-1, -c)`, from the odd extension of the outer branch equation).
pub fn chmv_backward_sequence(gamma: f64, n: usize) -> Result<BackwardSequences> {
    let map = Chmv::new(gamma)?;
    if n == 0 {
        return Err(Error::Config("backward sequence needs n >= 1".into()));
    }
    let mut a_minus = Vec::with_capacity(n + 1);
    let mut b = Vec::with_capacity(n);
    let mut a = -map.c;
    a_minus.push(a);
    for _ in 0..n {
        let next_b = map.c * map.pow(1.0 + a);
        a -= next_b;
        b.push(next_b);
        a_minus.push(a);
    }
    Ok(BackwardSequences {
        gamma,
        tau: 1.0 / (gamma - 1.0),
        a_minus,
        b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub n: usize,
    /// `(1 + a_{-n}) / ((2γτ)^τ n^{-τ})`
    pub length_ratio: f64,
    /// `b_n / ((1/2γ)(2γτ)^{γτ} (n-1)^{-γτ})`
    pub b_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub gamma: f64,
    pub tau: f64,
    /// `(2γτ)^τ`
    pub length_constant: f64,
    /// `(1/2γ)(2γτ)^{γτ}`
    pub b_constant: f64,
    pub rows: Vec<AsymptoticRow>,
}

/// Compares the computed sequences with their power-law asymptotics at
/// `n = 2, 3, 4, 6, 8, 10, 15, 20, ...` (a 1-2-3-4-6-8 ladder per decade) and
/// at the last index.
pub fn chmv_asymptotics_report(seq: &BackwardSequences) -> Result<AsymptoticsReport> {
    let n_max = seq.len();
    if n_max < 10 {
        return Err(Error::Config(format!(
            "asymptotics need at least 10 terms, got {n_max}"
        )));
    }
    let (g, tau) = (seq.gamma, seq.tau);
    let length_constant = (2.0 * g * tau).powf(tau);
    let b_constant = (2.0 * g * tau).powf(g * tau) / (2.0 * g);
    let mut ns = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for m in [1usize, 2, 3, 4, 6, 8] {
            let n = m * decade;
            if n > n_max {
                break 'outer;
            }
            if n >= 2 {
                ns.push(n);
            }
        }
        decade *= 10;
    }
    if ns.last() != Some(&n_max) {
        ns.push(n_max);
    }
    let rows = ns
        .into_iter()
        .map(|n| AsymptoticRow {
            n,
            length_ratio: (1.0 + seq.a(n)) / (length_constant * (n as f64).powf(-tau)),
            b_ratio: seq.b_at(n) / (b_constant * ((n - 1) as f64).powf(-g * tau)),
        })
        .collect();
    Ok(AsymptoticsReport {
        gamma: g,
        tau,
        length_constant,
        b_constant,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lsv_examples() {
        assert_eq!(eval_lsv(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(eval_lsv(0.3, 0.0).unwrap(), 0.0);
        // 0.25 (1 + sqrt(2) sqrt(0.25))
        let expected = 0.25 * (1.0 + 2f64.sqrt() * 0.5);
        assert!((eval_lsv(0.5, 0.25).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.426_776_695_296_636_9).abs() < 1e-15);
        assert!(matches!(eval_lsv(1.0, 0.2), Err(Error::Config(_))));
        assert!(matches!(eval_lsv(0.0, 0.2), Err(Error::Config(_))));
        assert!(MapSystem::lsv(1.5).is_err());
    }

    #[test]
    fn lsv_right_branch_matches_doubling() {
        for k in 0..100 {
            let x = 0.5 + k as f64 / 200.0;
            let d = eval_doubling(x);
            let l = eval_lsv(0.4, x).unwrap();
            assert!((l - d).abs() < 1e-15 || (x == 1.0 && l == 1.0));
        }
    }

    #[test]
    fn chmv_examples() {
        assert!(eval_chmv(3.0, 1.0 / 6.0).unwrap().abs() < 1e-13);
        assert!((eval_chmv(3.0, 1.0).unwrap() - 1.0).abs() < 1e-13);
        let expected = 0.5f64.cbrt() - 1.0;
        assert!((eval_chmv(3.0, 1.0 / 12.0).unwrap() - expected).abs() < 1e-14);
        assert!((expected + 0.206_299_474_9).abs() < 1e-9);
        assert!(eval_chmv(1.0, 0.2).is_err());
    }

    #[test]
    fn chmv_non_integer_gamma_uses_general_power() {
        let g = 2.5;
        for k in 1..50 {
            let x = k as f64 / 50.0;
            let t = eval_chmv(g, x).unwrap();
            let inner = x <= 1.0 / (2.0 * g);
            assert!((chmv_branch_equation(g, t, inner) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_examples() {
        assert_eq!(eval_doubling(0.0), 0.0);
        assert_eq!(eval_doubling(0.75), 0.5);
        assert!((eval_doubling(1.0 / 3.0) - 2.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn iterate_examples() {
        let key = StreamKey::new(0, 0, Purpose::Digits);
        let d = MapSystem::doubling();
        let end = iterate(&d, &Orbit::new(Start::Point(0.1), 3, key), |_, _| {}).unwrap();
        assert!((end - 0.8).abs() < 1e-15);
        let lsv = MapSystem::lsv(0.5).unwrap();
        let end = iterate(&lsv, &Orbit::new(Start::Point(0.25), 1, key), |_, _| {}).unwrap();
        assert!((end - 0.426_776_695_296_636_9).abs() < 1e-15);
        for map in [d, lsv, MapSystem::chmv(3.0).unwrap()] {
            let end = iterate(&map, &Orbit::new(Start::Point(0.3), 0, key), |_, _| {}).unwrap();
            assert_eq!(end, 0.3);
        }
    }

    #[test]
    fn iterate_visits_each_step_in_order() {
        let key = StreamKey::new(5, 1, Purpose::Digits);
        let map = MapSystem::chmv(3.0).unwrap();
        let mut seen = Vec::new();
        let end = iterate(&map, &Orbit::new(Start::Point(0.7), 4, key), |k, x| {
            seen.push((k, x))
        })
        .unwrap();
        assert_eq!(seen.len(), 4);
        let mut x = 0.7;
        for (k, (idx, p)) in seen.iter().enumerate() {
            assert_eq!(*idx, k as u64);
            assert_eq!(*p, x);
            x = map.eval(x).unwrap();
        }
        assert_eq!(end, x);
    }

    #[test]
    fn doubling_orbit_does_not_collapse() {
        let key = StreamKey::new(1, 0, Purpose::Digits);
        let map = MapSystem::doubling();
        let mut upper = 0u64;
        iterate(&map, &Orbit::new(Start::Point(0.1), 10_000, key), |_, x| {
            if x >= 0.5 {
                upper += 1
            }
        })
        .unwrap();
        assert!((4_500..5_500).contains(&upper), "{upper}");
    }

    #[test]
    fn iid_control_degenerate_probabilities() {
        let mut rng = StreamKey::new(1, 0, Purpose::Coins).rng();
        assert!((0..1000).all(|_| !iid_control_step(0.0, &mut rng)));
        assert!((0..1000).all(|_| iid_control_step(1.0, &mut rng)));
    }

    #[test]
    fn iid_control_half_probability() {
        let mut rng = StreamKey::new(2, 0, Purpose::Coins).rng();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| iid_control_step(0.5, &mut rng)).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.002, "{frac}");
    }

    #[test]
    fn backward_sequence_examples() {
        let seq = chmv_backward_sequence(3.0, 5).unwrap();
        assert!((seq.a(0) + 1.0 / 6.0).abs() < 1e-16);
        let a1 = -1.0 / 6.0 - (1.0 / 6.0) * (5.0f64 / 6.0).powi(3);
        assert!((seq.a(1) - a1).abs() < 1e-16);
        assert!((seq.a(1) + 0.263_117).abs() < 1e-6);
        assert!((seq.b_at(1) - 0.096_450_6).abs() < 1e-7);
        assert_eq!(seq.a(1) + seq.b_at(1), seq.a(0));
        assert!((seq.tau - 0.5).abs() < 1e-16);
        assert!(chmv_backward_sequence(3.0, 0).is_err());
    }

    #[test]
    fn backward_recursion_matches_root_solved_preimages() {
        let map = MapSystem::chmv(3.0).unwrap();
        let outer_neg = map.branches()[0];
        let inner_pos = map.branches()[2];
        let seq = chmv_backward_sequence(3.0, 200).unwrap();
        for i in 0..200 {
            let a_next = solve_preimage(&map, &outer_neg, seq.a(i)).unwrap();
            assert!((a_next - seq.a(i + 1)).abs() < 1e-10, "a at {i}");
            let b_next = solve_preimage(&map, &inner_pos, seq.a(i)).unwrap();
            assert!((b_next - seq.b_at(i + 1)).abs() < 1e-10, "b at {i}");
        }
    }

    #[test]
    fn asymptotics_report_shape() {
        let seq = chmv_backward_sequence(3.0, 1000).unwrap();
        let rep = chmv_asymptotics_report(&seq).unwrap();
        assert!((rep.length_constant - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(rep.rows.last().unwrap().n, 1000);
        let last = rep.rows.last().unwrap();
        assert!((last.length_ratio - 1.0).abs() < 0.2);
        assert!(chmv_asymptotics_report(&chmv_backward_sequence(3.0, 9).unwrap()).is_err());
    }

    #[test]
    fn circle_distance_wraps() {
        let c = Circle::SYMMETRIC;
        assert!((c.distance(-0.95, 0.95) - 0.1).abs() < 1e-12);
        assert!((Circle::UNIT.distance(0.1, 0.9) - 0.2).abs() < 1e-12);
        assert_eq!(Circle::UNIT.wrap(1.25), 0.25);
        assert_eq!(Circle::SYMMETRIC.wrap(1.0), -1.0);
    }

    #[test]
    fn escaped_points_are_reported() {
        assert!(matches!(
            confine(f64::NAN, Circle::UNIT, 1e-13, 7),
            Err(Error::Escaped { step: 7, .. })
        ));
        assert!(confine(1.0 + 1e-6, Circle::UNIT, 1e-13, 0).is_err());
        assert_eq!(confine(1.0 + 1e-14, Circle::UNIT, 1e-13, 0).unwrap(), 1.0);
    }
}
