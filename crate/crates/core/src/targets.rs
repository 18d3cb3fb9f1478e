//! Shrinking-target sequences: measure schedules, calibrated nested balls and
//! the explicit counterexample interval families.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{
    BackwardSequences, Circle, MapKind, MapSystem, Orbit, ReferenceMeasure, Start, Trajectory,
};
use crate::rng::{Purpose, StreamKey};

/// Burn-in applied to every calibration or estimation orbit.
pub const DEFAULT_BURN_IN: u64 = 10_000;

/// Minimum number of calibration points inside the smallest ball.
pub const MIN_POINTS_IN_BALL: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `i^{-exponent}`, `0 < exponent < 1`.
    Power { exponent: f64 },
    /// `(log i) / i`.
    LogOverI,
    /// `1 / i`.
    Harmonic,
    /// `1 / (i log i)`.
    ILogI,
    /// `values[i - offset]`.
    Explicit { values: Vec<f64> },
}

/// Prescribed target measures `μ_i` for `i >= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSchedule {
    pub kind: ScheduleKind,
    pub offset: u64,
}

impl MeasureSchedule {
    pub fn power(exponent: f64) -> Self {
        Self {
            kind: ScheduleKind::Power { exponent },
            offset: 1,
        }
    }

    /// Starts at 3, where `(log i)/i` begins to decrease.
    pub fn log_over_i() -> Self {
        Self {
            kind: ScheduleKind::LogOverI,
            offset: 3,
        }
    }

    pub fn harmonic() -> Self {
        Self {
            kind: ScheduleKind::Harmonic,
            offset: 1,
        }
    }

    pub fn i_log_i() -> Self {
        Self {
            kind: ScheduleKind::ILogI,
            offset: 2,
        }
    }

    pub fn explicit(values: Vec<f64>, offset: u64) -> Self {
        Self {
            kind: ScheduleKind::Explicit { values },
            offset,
        }
    }

    pub fn with_offset(mut self, offset: u64) -> Self {
        self.offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min_offset = match &self.kind {
            ScheduleKind::Power { exponent } => {
                if !(*exponent > 0.0 && *exponent < 1.0) {
                    return Err(Error::Config(format!(
                        "power schedule exponent {exponent} must lie in (0, 1)"
                    )));
                }
                1
            }
            ScheduleKind::Harmonic => 1,
            ScheduleKind::ILogI => 2,
            ScheduleKind::LogOverI => 3,
            ScheduleKind::Explicit { values } => {
                if values.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                    return Err(Error::Config(
                        "explicit schedule values must lie in (0, 1]".into(),
                    ));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::Config(
                        "explicit schedule must be non-increasing".into(),
                    ));
                }
                0
            }
        };
        if self.offset < min_offset {
            return Err(Error::Config(format!(
                "schedule offset {} below the minimum {min_offset} for this kind",
                self.offset
            )));
        }
        Ok(())
    }

    /// Last valid index, if the schedule is finite.
    pub fn last_index(&self) -> Option<u64> {
        match &self.kind {
            ScheduleKind::Explicit { values } => Some(self.offset + values.len() as u64 - 1),
            _ => None,
        }
    }

    /// `μ_i`.
    pub fn measure(&self, i: u64) -> Result<f64> {
        if i < self.offset || self.last_index().is_some_and(|last| i > last) {
            return Err(Error::Index {
                index: i,
                lo: self.offset,
                hi: self.last_index().unwrap_or(u64::MAX),
            });
        }
        Ok(self.measure_unchecked(i))
    }

    #[inline]
    pub(crate) fn measure_unchecked(&self, i: u64) -> f64 {
        let x = i as f64;
        match &self.kind {
            ScheduleKind::Power { exponent } => x.powf(-exponent),
            ScheduleKind::LogOverI => x.ln() / x,
            ScheduleKind::Harmonic => 1.0 / x,
            ScheduleKind::ILogI => 1.0 / (x * x.ln()),
            ScheduleKind::Explicit { values } => values[(i - self.offset) as usize],
        }
    }

    /// `E_n = Σ_{offset <= i <= n} μ_i`; zero for `n < offset`.
    pub fn partial_sum(&self, n: u64) -> Result<f64> {
        if n < self.offset {
            return Ok(0.0);
        }
        self.measure(n)?;
        Ok((self.offset..=n).map(|i| self.measure_unchecked(i)).sum())
    }

    /// Whether `Σ μ_i` diverges (known for the closed-form kinds).
    pub fn diverges(&self) -> bool {
        !matches!(self.kind, ScheduleKind::Explicit { .. })
    }
}

/// `μ_i` for schedule `s`.
pub fn schedule_measure(s: &MeasureSchedule, i: u64) -> Result<f64> {
    s.measure(i)
}

/// A single target: an open arc around a centre, or an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum TargetSet {
    /// `{x : d(x, center) < radius}` on `domain`.
    Ball {
        center: f64,
        radius: f64,
        domain: Circle,
    },
    /// `lo < x < hi`, or `lo <= x < hi` when `closed_lo`.
    Interval { lo: f64, hi: f64, closed_lo: bool },
}

impl TargetSet {
    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            TargetSet::Ball {
                center,
                radius,
                domain,
            } => domain.distance(x, center) < radius,
            TargetSet::Interval { lo, hi, closed_lo } => {
                x < hi && (x > lo || (closed_lo && x == lo))
            }
        }
    }

    /// Lebesgue length (unnormalized).
    pub fn length(&self) -> f64 {
        match *self {
            TargetSet::Ball { radius, domain, .. } => (2.0 * radius).min(domain.length()),
            TargetSet::Interval { lo, hi, .. } => (hi - lo).max(0.0),
        }
    }

    /// Whether `self ⊆ other`, decided with exact comparisons.
    pub fn is_subset_of(&self, other: &TargetSet) -> bool {
        match (*self, *other) {
            (
                TargetSet::Ball {
                    center: c1,
                    radius: r1,
                    domain,
                },
                TargetSet::Ball {
                    center: c2,
                    radius: r2,
                    ..
                },
            ) => r1 <= 0.0 || r2 >= domain.length() / 2.0 || (c1 == c2 && r1 <= r2),
            (
                TargetSet::Interval {
                    lo: l1,
                    hi: h1,
                    closed_lo: c1,
                },
                TargetSet::Interval {
                    lo: l2,
                    hi: h2,
                    closed_lo: c2,
                },
            ) => h1 <= l1 || (h1 <= h2 && (l1 > l2 || (l1 == l2 && (c2 || !c1)))),
            _ => false,
        }
    }
}

/// `[0, n^{-1/(1-α)})`: nested intervals at the indifferent fixed point whose
/// invariant measure is of order `1/n`.
pub fn kim_interval(alpha: f64, n: u64) -> Result<TargetSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::Index {
            index: 0,
            lo: 1,
            hi: u64::MAX,
        });
    }
    Ok(TargetSet::Interval {
        lo: 0.0,
        hi: kim_edge(alpha, n),
        closed_lo: true,
    })
}

#[inline]
fn kim_edge(alpha: f64, n: u64) -> f64 {
    (n as f64).powf(-1.0 / (1.0 - alpha))
}

/// The arc `(-1, a_{-n})` of the implicit circle map.
pub fn chmv_interval(seq: &BackwardSequences, n: usize) -> Result<TargetSet> {
    if n >= seq.a_minus.len() {
        return Err(Error::Index {
            index: n as u64,
            lo: 0,
            hi: seq.a_minus.len() as u64 - 1,
        });
    }
    Ok(TargetSet::Interval {
        lo: -1.0,
        hi: seq.a(n),
        closed_lo: false,
    })
}

/// How the radius of a calibrated ball depends on its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Radii {
    /// Empirical radii `values[i - first_index]`.
    Table {
        first_index: u64,
        values: Arc<Vec<f64>>,
    },
    /// Exact for Lebesgue-invariant maps: `r_i = μ_i · length / 2`.
    Lebesgue { circle_length: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "construction", rename_all = "snake_case")]
pub enum Construction {
    CalibratedBall {
        center: f64,
        radii: Radii,
    },
    KimInterval {
        alpha: f64,
    },
    ChmvInterval {
        a_minus: Arc<Vec<f64>>,
    },
    ChmvBInterval {
        b: Arc<Vec<f64>>,
    },
    /// Measures only; used by the independent control process.
    Nominal,
}

/// Sequence of targets `B_i`, `i >= first_index`, with their measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSchedule {
    pub construction: Construction,
    /// Nominal measures; for the circle-map families the exact Lebesgue
    /// measure is used instead.
    pub schedule: MeasureSchedule,
    pub reference: ReferenceMeasure,
    pub domain: Circle,
}

impl TargetSchedule {
    /// Balls around `center` with empirically calibrated radii.
    pub fn calibrated_ball(
        map: &MapSystem,
        center: f64,
        schedule: MeasureSchedule,
        radii: Vec<f64>,
    ) -> Self {
        Self {
            construction: Construction::CalibratedBall {
                center,
                radii: Radii::Table {
                    first_index: schedule.offset,
                    values: Arc::new(radii),
                },
            },
            schedule,
            reference: map.reference_measure(),
            domain: map.domain(),
        }
    }

    /// Balls with exact radii `μ_i · L / 2` for a Lebesgue-invariant map.
    pub fn lebesgue_ball(map: &MapSystem, center: f64, schedule: MeasureSchedule) -> Result<Self> {
        if map.reference_measure() != ReferenceMeasure::Lebesgue {
            return Err(Error::Config(format!(
                "{} does not preserve Lebesgue measure; calibrate radii empirically",
                map.name()
            )));
        }
        schedule.validate()?;
        Ok(Self {
            construction: Construction::CalibratedBall {
                center,
                radii: Radii::Lebesgue {
                    circle_length: map.domain().length(),
                },
            },
            schedule,
            reference: ReferenceMeasure::Lebesgue,
            domain: map.domain(),
        })
    }

    /// `[0, n^{-1/(1-α)})` with nominal measures `1/n`.
    pub fn kim(alpha: f64) -> Result<Self> {
        kim_interval(alpha, 1)?;
        Ok(Self {
            construction: Construction::KimInterval { alpha },
            schedule: MeasureSchedule::harmonic(),
            reference: ReferenceMeasure::Acip,
            domain: Circle::UNIT,
        })
    }

    /// `(-1, a_{-n})`, `n >= 1`, with normalized Lebesgue measure `(1 + a_{-n})/2`.
    pub fn chmv(seq: &BackwardSequences) -> Self {
        let values: Vec<f64> = seq.a_minus[1..].iter().map(|a| 0.5 * (1.0 + a)).collect();
        Self {
            construction: Construction::ChmvInterval {
                a_minus: Arc::new(seq.a_minus.clone()),
            },
            schedule: MeasureSchedule::explicit(values, 1),
            reference: ReferenceMeasure::Lebesgue,
            domain: Circle::SYMMETRIC,
        }
    }

    /// `(0, b_n)`, `n >= 1`, with normalized Lebesgue measure `b_n / 2`.
    pub fn chmv_b(seq: &BackwardSequences) -> Self {
        let values: Vec<f64> = seq.b.iter().map(|b| 0.5 * b).collect();
        Self {
            construction: Construction::ChmvBInterval {
                b: Arc::new(seq.b.clone()),
            },
            schedule: MeasureSchedule::explicit(values, 1),
            reference: ReferenceMeasure::Lebesgue,
            domain: Circle::SYMMETRIC,
        }
    }

    pub fn nominal(schedule: MeasureSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            construction: Construction::Nominal,
            schedule,
            reference: ReferenceMeasure::Product,
            domain: Circle::UNIT,
        })
    }

    pub fn first_index(&self) -> u64 {
        self.schedule.offset
    }

    /// Last index with a defined target, if finite.
    pub fn last_index(&self) -> Option<u64> {
        let table = match &self.construction {
            Construction::CalibratedBall {
                radii:
                    Radii::Table {
                        first_index,
                        values,
                    },
                ..
            } => Some(first_index + values.len() as u64 - 1),
            _ => None,
        };
        match (table, self.schedule.last_index()) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn check_index(&self, i: u64) -> Result<()> {
        if i < self.first_index() || self.last_index().is_some_and(|l| i > l) {
            return Err(Error::Index {
                index: i,
                lo: self.first_index(),
                hi: self.last_index().unwrap_or(u64::MAX),
            });
        }
        Ok(())
    }

    /// `μ(B_i)` under the reference measure (nominal for calibrated families).
    pub fn measure(&self, i: u64) -> Result<f64> {
        self.check_index(i)?;
        Ok(self.schedule.measure_unchecked(i))
    }

    #[inline]
    pub(crate) fn measure_unchecked(&self, i: u64) -> f64 {
        self.schedule.measure_unchecked(i)
    }

    /// `B_i` as a geometric set.
    pub fn set(&self, i: u64) -> Result<TargetSet> {
        self.check_index(i)?;
        match &self.construction {
            Construction::Nominal => Err(Error::Unsupported(
                "nominal schedules have no geometric targets".into(),
            )),
            _ => Ok(self.set_unchecked(i)),
        }
    }

    #[inline]
    fn set_unchecked(&self, i: u64) -> TargetSet {
        match &self.construction {
            Construction::CalibratedBall { center, radii } => TargetSet::Ball {
                center: *center,
                radius: self.radius_unchecked(radii, i),
                domain: self.domain,
            },
            Construction::KimInterval { alpha } => TargetSet::Interval {
                lo: 0.0,
                hi: kim_edge(*alpha, i),
                closed_lo: true,
            },
            Construction::ChmvInterval { a_minus } => TargetSet::Interval {
                lo: -1.0,
                hi: a_minus[i as usize],
                closed_lo: false,
            },
            Construction::ChmvBInterval { b } => TargetSet::Interval {
                lo: 0.0,
                hi: b[i as usize - 1],
                closed_lo: false,
            },
            Construction::Nominal => TargetSet::Interval {
                lo: 0.0,
                hi: 0.0,
                closed_lo: false,
            },
        }
    }

    #[inline]
    fn radius_unchecked(&self, radii: &Radii, i: u64) -> f64 {
        match radii {
            Radii::Table {
                first_index,
                values,
            } => values[(i - first_index) as usize],
            Radii::Lebesgue { circle_length } => {
                0.5 * circle_length * self.schedule.measure_unchecked(i)
            }
        }
    }

    /// `r_i` for ball families.
    pub fn radius(&self, i: u64) -> Result<f64> {
        self.check_index(i)?;
        match &self.construction {
            Construction::CalibratedBall { radii, .. } => Ok(self.radius_unchecked(radii, i)),
            _ => Err(Error::Unsupported("only ball families have radii".into())),
        }
    }

    /// `x ∈ B_i`; `i` must be a valid index.
    #[inline]
    pub fn contains(&self, i: u64, x: f64) -> bool {
        self.set_unchecked(i).contains(x)
    }

    /// Checks `B_{i+1} ⊆ B_i` for all `first_index <= i < n`.
    pub fn is_nested(&self, n: u64) -> Result<bool> {
        let mut prev = self.set(self.first_index())?;
        for i in self.first_index() + 1..=n {
            let next = self.set(i)?;
            if !next.is_subset_of(&prev) {
                return Ok(false);
            }
            prev = next;
        }
        Ok(true)
    }
}

/// Empirical radii `r_i` with `μ(B(p, r_i)) ≈ μ_i`, for `offset <= i <= i_max`.
///
/// `r_i` is the `⌈μ_i N⌉`-quantile of the distances `d(T^j x, p)` along one
/// calibration orbit of `N` points (after the default burn-in); the sequence
/// is then replaced by its running minimum so the balls are nested.
pub fn calibrate_radii(
    map: &MapSystem,
    p: f64,
    schedule: &MeasureSchedule,
    i_max: u64,
    orbit_length: u64,
    key: StreamKey,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    if !map.is_deterministic() {
        return Err(Error::Unsupported(
            "cannot calibrate balls for the control process".into(),
        ));
    }
    let smallest = schedule.measure(i_max)?;
    if (orbit_length as f64) * smallest < MIN_POINTS_IN_BALL {
        return Err(Error::Calibration(format!(
            "{orbit_length} calibration points resolve fewer than {MIN_POINTS_IN_BALL} points in a ball of measure {smallest:e}"
        )));
    }
    let domain = map.domain();
    let orbit = Orbit::new(
        Start::Uniform,
        orbit_length,
        key.with_purpose(Purpose::Calibration),
    )
    .with_burn_in(DEFAULT_BURN_IN);
    let mut distances = Vec::with_capacity(orbit_length as usize);
    crate::maps::iterate(map, &orbit, |_, x| distances.push(domain.distance(x, p)))?;
    distances.sort_unstable_by(f64::total_cmp);
    let n = distances.len();
    let mut radii = Vec::with_capacity((i_max - schedule.offset + 1) as usize);
    let mut running = f64::INFINITY;
    for i in schedule.offset..=i_max {
        let k = (schedule.measure_unchecked(i) * n as f64).ceil() as usize;
        let r = if k >= n {
            domain.length()
        } else if k == 0 {
            0.0
        } else {
            // k points strictly inside
            0.5 * (distances[k - 1] + distances[k])
        };
        running = running.min(r);
        radii.push(running);
    }
    Ok(radii)
}

/// Birkhoff estimate of the measure of `{x : r < d(x, p) < r + ε}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusEstimate {
    pub r: f64,
    pub epsilon: f64,
    pub measure: f64,
    pub hits: u64,
    pub samples: u64,
    /// Zero hits: the estimate is 0 but not resolved.
    pub unresolved: bool,
}

impl AnnulusEstimate {
    /// Binomial standard error of `measure`.
    pub fn stderr(&self) -> f64 {
        let p = self.measure;
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }
}

pub fn annulus_measure_estimate(
    map: &MapSystem,
    p: f64,
    r: f64,
    epsilon: f64,
    samples: u64,
    key: StreamKey,
) -> Result<AnnulusEstimate> {
    Ok(annulus_scan(map, p, &[(r, epsilon)], samples, key)?.remove(0))
}

fn annulus_scan(
    map: &MapSystem,
    p: f64,
    shells: &[(f64, f64)],
    samples: u64,
    key: StreamKey,
) -> Result<Vec<AnnulusEstimate>> {
    for &(r, eps) in shells {
        if !(eps >= 0.0 && (eps < r || eps == 0.0)) {
            return Err(Error::Config(format!(
                "annulus needs 0 <= epsilon < r, got r = {r}, epsilon = {eps}"
            )));
        }
    }
    let domain = map.domain();
    let mut hits = vec![0u64; shells.len()];
    let r_min = shells.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let r_max = shells.iter().map(|s| s.0 + s.1).fold(0.0, f64::max);
    let orbit = Orbit::new(
        Start::Uniform,
        samples,
        key.with_purpose(Purpose::Validation),
    )
    .with_burn_in(DEFAULT_BURN_IN);
    crate::maps::iterate(map, &orbit, |_, x| {
        let d = domain.distance(x, p);
        if d > r_min && d < r_max {
            for (h, &(r, eps)) in hits.iter_mut().zip(shells) {
                if d > r && d < r + eps {
                    *h += 1;
                }
            }
        }
    })?;
    Ok(shells
        .iter()
        .zip(hits)
        .map(|(&(r, epsilon), h)| AnnulusEstimate {
            r,
            epsilon,
            measure: h as f64 / samples as f64,
            hits: h,
            samples,
            unresolved: h == 0 && epsilon > 0.0,
        })
        .collect())
}

/// Fitted exponent `δ̂` of `μ(annulus) ≍ ε^δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusFit {
    pub center: f64,
    pub delta_hat: f64,
    pub intercept: f64,
    pub residual_norm: f64,
    pub points: Vec<AnnulusEstimate>,
}

/// Regresses `log μ̂(annulus)` on `log ε` over `eps_grid`, with inner radius
/// `r = r_factor · ε` for each shell. Annuli whose inner radius is comparable
/// to their width are the binding case of the bound `μ < ε^δ` uniformly in
/// `r > ε`, so `r_factor` should stay of order one.
pub fn fit_annulus_exponent(
    map: &MapSystem,
    p: f64,
    eps_grid: &[f64],
    r_factor: f64,
    samples: u64,
    key: StreamKey,
) -> Result<AnnulusFit> {
    if r_factor <= 1.0 {
        return Err(Error::Config(
            "r_factor must exceed 1 so that epsilon < r".into(),
        ));
    }
    let shells: Vec<(f64, f64)> = eps_grid.iter().map(|&e| (r_factor * e, e)).collect();
    let points = annulus_scan(map, p, &shells, samples, key)?;
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|pt| pt.hits > 0)
        .map(|pt| (pt.epsilon.ln(), pt.measure.ln()))
        .collect();
    if data.len() < 2 {
        return Err(Error::Calibration("fewer than two resolved annuli".into()));
    }
    let (slope, intercept, residual_norm) = crate::stats::least_squares(&data);
    Ok(AnnulusFit {
        center: p,
        delta_hat: slope,
        intercept,
        residual_norm,
        points,
    })
}

/// Birkhoff estimate of `μ(B)` for a fixed set.
pub fn set_measure_estimate(
    map: &MapSystem,
    set: &TargetSet,
    samples: u64,
    key: StreamKey,
) -> Result<(f64, u64)> {
    Ok(measure_profile(map, std::slice::from_ref(set), samples, key)?[0])
}

/// Birkhoff estimates `(μ̂, hits)` for several sets along one shared orbit.
pub fn measure_profile(
    map: &MapSystem,
    sets: &[TargetSet],
    samples: u64,
    key: StreamKey,
) -> Result<Vec<(f64, u64)>> {
    if let MapKind::IidControl { .. } = map.kind {
        return Err(Error::Unsupported(
            "control process has no phase space".into(),
        ));
    }
    if samples == 0 {
        return Err(Error::Config(
            "measure estimate needs at least one sample".into(),
        ));
    }
    let orbit = Orbit::new(
        Start::Uniform,
        samples,
        key.with_purpose(Purpose::Validation),
    )
    .with_burn_in(DEFAULT_BURN_IN);
    let mut hits = vec![0u64; sets.len()];
    let mut traj = Trajectory::new(map, &orbit)?;
    for _ in 0..samples {
        let x = traj.point();
        for (h, set) in hits.iter_mut().zip(sets) {
            if set.contains(x) {
                *h += 1;
            }
        }
        traj.advance()?;
    }
    Ok(hits
        .into_iter()
        .map(|h| (h as f64 / samples as f64, h))
        .collect())
}

/// Inverse of the left branch `x(1 + (2x)^α)` on `[0, 1]`.
fn lsv_left_inverse(alpha: f64, y: f64) -> f64 {
    let c = 2f64.powf(alpha);
    let mut x = y / (1.0 + (2.0 * y).powf(alpha));
    for _ in 0..50 {
        let g = x + c * x.powf(1.0 + alpha) - y;
        let step = g / (1.0 + (1.0 + alpha) * c * x.powf(alpha));
        x -= step;
        if step.abs() <= 1e-15 * x {
            break;
        }
    }
    x
}

/// `Σ_{k≥0} L^{-k}(ε)` for the left branch `L`: the Lebesgue integral over
/// `[0, ε)` of the number of left-branch iterates spent below `ε`.
///
/// Preimages are summed exactly until they fall below `1e-10` (or a million
/// terms), then the tail is closed with the flow `dx/dk = -2^α x^{1+α}`,
/// whose relative error is of order `x^α`.
pub fn lsv_sojourn_integral(alpha: f64, eps: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !(eps > 0.0 && eps <= 0.5) {
        return Err(Error::Config(format!("eps = {eps} must lie in (0, 1/2]")));
    }
    let mut x = eps;
    let mut sum = 0.0;
    let mut k = 0;
    while x > 1e-10 && k < 1_000_000 {
        sum += x;
        x = lsv_left_inverse(alpha, x);
        k += 1;
    }
    let tail = x.powf(1.0 - alpha) / (2f64.powf(alpha) * (1.0 - alpha)) + x / 2.0;
    Ok(sum + tail)
}

/// Width of the strip `[1/2, 1/2 + w)` used to estimate the density at `1/2⁺`.
pub const HALF_DENSITY_WIDTH: f64 = 1e-3;

/// Invariant measure of `[0, ε)` for the intermittent map, from the density
/// `h(½⁺)` just right of the discontinuity.
///
/// Every excursion towards the fixed point starts at `2y − 1` with
/// `y ∈ [1/2, 1]`, so `μ([0, ε)) = ½ ∫ h((z+1)/2) N_ε(z) dz`, where `N_ε(z)`
/// counts left-branch iterates of `z` below `ε`. `h` is continuous on the
/// right half, so for small `ε` this is `½ h(½⁺) Σ_k L^{-k}(ε)`. The estimate
/// needs no visits to `[0, ε)` at all, which a time average of length `N`
/// only sees about `N ε / 2` times.
pub fn lsv_origin_measure(alpha: f64, eps: f64, density_half: f64) -> Result<f64> {
    Ok(0.5 * density_half * lsv_sojourn_integral(alpha, eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::chmv_backward_sequence;

    #[test]
    fn schedule_examples() {
        assert!((MeasureSchedule::power(0.5).measure(4).unwrap() - 0.5).abs() < 1e-16);
        assert!((MeasureSchedule::harmonic().measure(10).unwrap() - 0.1).abs() < 1e-16);
        let v = MeasureSchedule::i_log_i().measure(8).unwrap();
        assert!((v - 1.0 / (8.0 * 8f64.ln())).abs() < 1e-16);
        assert!((v - 0.060_12).abs() < 1e-5);
        assert!(matches!(
            MeasureSchedule::log_over_i().measure(2),
            Err(Error::Index {
                index: 2,
                lo: 3,
                ..
            })
        ));
        assert!(MeasureSchedule::power(1.0).validate().is_err());
        assert!(MeasureSchedule::i_log_i()
            .with_offset(1)
            .validate()
            .is_err());
    }

    #[test]
    fn partial_sums() {
        let s = MeasureSchedule::power(0.5);
        let e4 = s.partial_sum(4).unwrap();
        assert!((e4 - (1.0 + 0.5f64.sqrt() + (1.0f64 / 3.0).sqrt() + 0.5)).abs() < 1e-15);
        assert!((e4 - 2.784_46).abs() < 1e-5);
        assert_eq!(MeasureSchedule::log_over_i().partial_sum(2).unwrap(), 0.0);
        let n = 1_000_000u64;
        let ratio = s.partial_sum(n).unwrap() / (2.0 * (n as f64).sqrt());
        assert!((ratio - 1.0).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn divergent_schedules_keep_growing() {
        // E_{4n}/E_n against the closed-form growth of each kind at n = 10^5
        let n = 100_000u64;
        let cases: [(MeasureSchedule, f64); 4] = [
            (MeasureSchedule::power(0.5), 4f64.powf(0.5)),
            (MeasureSchedule::log_over_i(), {
                let (a, b) = ((4.0 * n as f64).ln(), (n as f64).ln());
                a * a / (b * b)
            }),
            (MeasureSchedule::harmonic(), {
                ((4.0 * n as f64).ln() + 0.5772) / ((n as f64).ln() + 0.5772)
            }),
            (
                MeasureSchedule::i_log_i(),
                ((4.0 * n as f64).ln().ln() + 0.79) / ((n as f64).ln().ln() + 0.79),
            ),
        ];
        for (s, predicted) in cases {
            let growth = s.partial_sum(4 * n).unwrap() / s.partial_sum(n).unwrap();
            assert!(growth > 1.0);
            assert!(
                growth > predicted * 0.95,
                "{:?}: {growth} vs {predicted}",
                s.kind
            );
        }
    }

    #[test]
    fn sojourn_integral_matches_brute_force_and_asymptotics() {
        // Direct sum of left-branch preimages for a moderate edge.
        let (alpha, eps) = (0.6, 0.01);
        let mut x = eps;
        let mut brute = 0.0;
        for _ in 0..20_000_000 {
            brute += x;
            x = lsv_left_inverse(alpha, x);
        }
        brute += x.powf(1.0 - alpha) / (2f64.powf(alpha) * (1.0 - alpha));
        let fast = lsv_sojourn_integral(alpha, eps).unwrap();
        assert!((fast / brute - 1.0).abs() < 1e-4, "{fast} vs {brute}");
        // n·Σ L^{-k}(n^{-1/(1-α)}) → 1/(2^α (1-α)).
        let limit = 1.0 / (2f64.powf(alpha) * (1.0 - alpha));
        for n in [1e4, 1e6] {
            let e = kim_edge(alpha, n as u64);
            let v = n * lsv_sojourn_integral(alpha, e).unwrap();
            assert!((v / limit - 1.0).abs() < 1e-3, "n = {n}: {v} vs {limit}");
        }
        assert!(lsv_sojourn_integral(0.6, 0.7).is_err());
    }

    #[test]
    fn left_inverse_inverts_the_left_branch() {
        for y in [1e-9, 1e-4, 0.1, 0.7, 1.0] {
            let x = lsv_left_inverse(0.6, y);
            assert!((lsv_step_left(0.6, x) - y).abs() <= 1e-14 * y.max(1e-300) + 1e-300);
        }
    }

    fn lsv_step_left(alpha: f64, x: f64) -> f64 {
        x * (1.0 + (2.0 * x).powf(alpha))
    }

    #[test]
    fn kim_interval_examples() {
        let a = kim_interval(0.5, 16).unwrap();
        assert_eq!(
            a,
            TargetSet::Interval {
                lo: 0.0,
                hi: 0.003_906_25,
                closed_lo: true
            }
        );
        assert_eq!(
            kim_interval(0.7, 1).unwrap(),
            TargetSet::Interval {
                lo: 0.0,
                hi: 1.0,
                closed_lo: true
            }
        );
        for n in 1..500 {
            assert!(kim_interval(0.6, n + 1)
                .unwrap()
                .is_subset_of(&kim_interval(0.6, n).unwrap()));
        }
        assert!(TargetSchedule::kim(0.6).unwrap().is_nested(10_000).unwrap());
    }

    #[test]
    fn chmv_interval_examples() {
        let seq = chmv_backward_sequence(3.0, 50).unwrap();
        let a0 = chmv_interval(&seq, 0).unwrap();
        assert!((a0.length() - 5.0 / 6.0).abs() < 1e-15);
        assert!((chmv_interval(&seq, 1).unwrap().length() - 0.736_883).abs() < 1e-6);
        assert!(chmv_interval(&seq, 51).is_err());
        let t = TargetSchedule::chmv(&seq);
        assert!(t.is_nested(50).unwrap());
        assert!((t.measure(1).unwrap() - 0.5 * (1.0 + seq.a(1))).abs() < 1e-16);
        assert!(t.measure(51).is_err());
        assert!(TargetSchedule::chmv_b(&seq).is_nested(50).unwrap());
    }

    #[test]
    fn ball_membership_is_circular() {
        let b = TargetSet::Ball {
            center: 0.0,
            radius: 0.1,
            domain: Circle::UNIT,
        };
        assert!(b.contains(0.95));
        assert!(b.contains(0.05));
        assert!(!b.contains(0.1));
        assert!(!b.contains(0.5));
    }

    #[test]
    fn lebesgue_balls_are_exact_and_nested() {
        let map = MapSystem::doubling();
        let t = TargetSchedule::lebesgue_ball(&map, 0.3, MeasureSchedule::power(0.5)).unwrap();
        assert!((t.radius(4).unwrap() - 0.25).abs() < 1e-16);
        assert!(t.is_nested(10_000).unwrap());
        assert!(TargetSchedule::lebesgue_ball(
            &MapSystem::lsv(0.5).unwrap(),
            0.3,
            MeasureSchedule::harmonic()
        )
        .is_err());
    }

    #[test]
    fn calibrated_radii_match_lebesgue_for_doubling() {
        let map = MapSystem::doubling();
        let s = MeasureSchedule::power(0.5);
        let key = StreamKey::new(11, 0, Purpose::Calibration);
        let radii =
            calibrate_radii(&map, 0.618_033_988_749_895, &s, 1_000, 1_000_000, key).unwrap();
        assert_eq!(radii[0], 1.0);
        for (k, r) in radii.iter().enumerate().skip(1) {
            let i = k as u64 + 1;
            let exact = 0.5 * (i as f64).powf(-0.5);
            // binomial error of the quantile, 4 sigma
            let mu = 2.0 * exact;
            let sigma = (mu * (1.0 - mu) / 1e6).sqrt() / 2.0;
            assert!(
                (r - exact).abs() < 4.0 * sigma + 1e-12,
                "i = {i}: {r} vs {exact}"
            );
        }
        assert!(radii.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn full_measure_calibration_covers_everything() {
        let map = MapSystem::doubling();
        let s = MeasureSchedule::explicit(vec![1.0; 5], 1);
        let radii = calibrate_radii(
            &map,
            0.2,
            &s,
            5,
            1_000,
            StreamKey::new(1, 0, Purpose::Calibration),
        )
        .unwrap();
        let t = TargetSchedule::calibrated_ball(&map, 0.2, s, radii);
        for x in [0.0, 0.2, 0.7, 0.999] {
            assert!(t.contains(3, x));
        }
    }

    #[test]
    fn calibration_rejects_short_orbits() {
        let map = MapSystem::doubling();
        let s = MeasureSchedule::harmonic();
        let err = calibrate_radii(
            &map,
            0.2,
            &s,
            10_000,
            100_000,
            StreamKey::new(1, 0, Purpose::Calibration),
        );
        assert!(matches!(err, Err(Error::Calibration(_))));
    }

    #[test]
    fn lsv_radii_scale_with_the_density_exponent() {
        // μ[0, r) ≈ C r^{1-α}  ⇒  log r_i ≈ log μ_i / (1 - α) + const
        let alpha = 0.6;
        let map = MapSystem::lsv(alpha).unwrap();
        let values: Vec<f64> = (0..7).map(|k| 0.1 * 0.5f64.powi(k)).collect();
        let s = MeasureSchedule::explicit(values.clone(), 1);
        let radii = calibrate_radii(
            &map,
            0.0,
            &s,
            7,
            4_000_000,
            StreamKey::new(3, 0, Purpose::Calibration),
        )
        .unwrap();
        let data: Vec<(f64, f64)> = values
            .iter()
            .zip(&radii)
            .map(|(m, r)| (m.ln(), r.ln()))
            .collect();
        let (slope, _, _) = crate::stats::least_squares(&data);
        let predicted = 1.0 / (1.0 - alpha);
        assert!((slope - predicted).abs() < 0.1 * predicted, "{slope}");
    }

    #[test]
    fn annulus_on_doubling_is_twice_epsilon() {
        let map = MapSystem::doubling();
        let key = StreamKey::new(4, 0, Purpose::Validation);
        let est = annulus_measure_estimate(&map, 0.3, 0.05, 0.01, 1_000_000, key).unwrap();
        assert!((est.measure - 0.02).abs() < 3.0 * est.stderr(), "{est:?}");
        let zero = annulus_measure_estimate(&map, 0.3, 0.05, 0.0, 10_000, key).unwrap();
        assert_eq!(zero.measure, 0.0);
        assert!(annulus_measure_estimate(&map, 0.3, 0.05, 0.1, 10, key).is_err());
        let fit =
            fit_annulus_exponent(&map, 0.3, &[1e-4, 1e-3, 1e-2], 2.0, 1_000_000, key).unwrap();
        assert!((fit.delta_hat - 1.0).abs() < 0.05, "{}", fit.delta_hat);
    }
}
