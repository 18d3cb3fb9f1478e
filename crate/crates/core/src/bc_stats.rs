//! Hit counting along orbits and the statistics built on it: `S_n / E_n`
//! ratios, hit plateaus, second-moment ratios and the Sprindzuk monitor.
//!
//! Conventions: `S_n` counts the indices `first_index <= i <= n` with
//! `T^i x ∈ B_i`, and `E_n` sums `μ(B_i)` over the same range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{iid_control_step, MapKind, MapSystem, Orbit, Trajectory};
use crate::rng::Purpose;
use crate::stats::{least_squares, mean, median, quantile, sample_variance};
use crate::targets::{Construction, TargetSchedule};

pub const CHECKPOINT_RATIO: f64 = 1.5;

/// `⌈first · ratio^k⌉` below `n`, followed by `n` itself. A geometric point
/// closer than `ratio^{1/2}` to `n` is dropped so the last gap is not tiny.
pub fn geometric_checkpoints(first: u64, n: u64, ratio: f64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    if n < first {
        return out;
    }
    let mut k = 0;
    loop {
        let c = (first.max(1) as f64 * ratio.powi(k)).ceil() as u64;
        k += 1;
        if c >= n {
            break;
        }
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    if let Some(&last) = out.last() {
        if (n as f64) < last as f64 * ratio.sqrt() {
            out.pop();
        }
    }
    out.push(n);
    out
}

/// Hit counts of one orbit at a list of checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitTrace {
    pub orbit_index: u64,
    pub master_seed: u64,
    pub initial_point: Option<f64>,
    pub first_index: u64,
    pub checkpoints: Vec<u64>,
    /// `S` at each checkpoint.
    pub hits: Vec<u64>,
    /// `E` at each checkpoint.
    pub expected: Vec<f64>,
    /// Index of the last hit, if any.
    pub last_hit: Option<u64>,
}

impl HitTrace {
    pub fn n(&self) -> u64 {
        *self.checkpoints.last().unwrap_or(&0)
    }

    pub fn final_hits(&self) -> u64 {
        *self.hits.last().unwrap_or(&0)
    }

    pub fn final_expected(&self) -> f64 {
        *self.expected.last().unwrap_or(&0.0)
    }

    pub fn final_ratio(&self) -> f64 {
        self.final_hits() as f64 / self.final_expected()
    }

    fn position(&self, n: u64) -> Result<usize> {
        self.checkpoints
            .binary_search(&n)
            .map_err(|_| Error::Index {
                index: n,
                lo: self.checkpoints.first().copied().unwrap_or(0),
                hi: self.n(),
            })
    }

    /// `(S_n, E_n)` at checkpoint `n`.
    pub fn at(&self, n: u64) -> Result<(u64, f64)> {
        let k = self.position(n)?;
        Ok((self.hits[k], self.expected[k]))
    }

    /// No hit at any index in `(after, n]`.
    pub fn quiet_after(&self, after: u64) -> bool {
        self.last_hit.is_none_or(|h| h <= after)
    }

    /// `S` strictly increases over each of the last `count - 1` checkpoint gaps.
    pub fn increasing_over_last(&self, count: usize) -> bool {
        if self.hits.len() < count || count < 2 {
            return false;
        }
        self.hits[self.hits.len() - count..]
            .windows(2)
            .all(|w| w[1] > w[0])
    }

    /// Rows `(checkpoint, S, E, S/E)`.
    pub fn rows(&self) -> impl Iterator<Item = (u64, u64, f64, f64)> + '_ {
        self.checkpoints
            .iter()
            .zip(&self.hits)
            .zip(&self.expected)
            .map(|((&c, &s), &e)| (c, s, e, s as f64 / e))
    }
}

/// Precomputed `E` at the checkpoints of one target schedule, shared by all
/// orbits of an ensemble.
#[derive(Debug, Clone)]
pub struct HitCounter {
    targets: TargetSchedule,
    checkpoints: Vec<u64>,
    expected: Vec<f64>,
}

impl HitCounter {
    /// Geometric checkpoints up to `n`.
    pub fn new(targets: TargetSchedule, n: u64) -> Result<Self> {
        let cps = geometric_checkpoints(targets.first_index(), n, CHECKPOINT_RATIO);
        Self::with_checkpoints(targets, cps)
    }

    pub fn with_checkpoints(targets: TargetSchedule, checkpoints: Vec<u64>) -> Result<Self> {
        let n = *checkpoints
            .last()
            .ok_or_else(|| Error::Config("at least one checkpoint is required".into()))?;
        if checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(
                "checkpoints must be strictly increasing".into(),
            ));
        }
        if checkpoints[0] < targets.first_index() {
            return Err(Error::Index {
                index: checkpoints[0],
                lo: targets.first_index(),
                hi: n,
            });
        }
        if let Some(last) = targets.last_index() {
            if last < n {
                return Err(Error::Index {
                    index: n,
                    lo: targets.first_index(),
                    hi: last,
                });
            }
        }
        let mut expected = Vec::with_capacity(checkpoints.len());
        let mut sum = 0.0;
        let mut c = 0;
        for i in targets.first_index()..=n {
            sum += targets.measure_unchecked(i);
            if i == checkpoints[c] {
                expected.push(sum);
                c += 1;
            }
        }
        Ok(Self {
            targets,
            checkpoints,
            expected,
        })
    }

    pub fn n(&self) -> u64 {
        *self.checkpoints.last().unwrap()
    }

    pub fn checkpoints(&self) -> &[u64] {
        &self.checkpoints
    }

    pub fn expected(&self) -> &[f64] {
        &self.expected
    }

    pub fn targets(&self) -> &TargetSchedule {
        &self.targets
    }

    /// Runs one orbit; `orbit.length` is ignored in favour of the last checkpoint.
    pub fn run(&self, map: &MapSystem, orbit: &Orbit) -> Result<HitTrace> {
        let n = self.n();
        let first = self.targets.first_index();
        let mut hits = Vec::with_capacity(self.checkpoints.len());
        let mut s = 0u64;
        let mut last_hit = None;
        let mut c = 0usize;
        let initial_point;
        match &map.kind {
            MapKind::IidControl { schedule } => {
                initial_point = None;
                let mut coins = orbit.key.with_purpose(Purpose::Coins).rng();
                for i in first..=n {
                    if iid_control_step(schedule.measure(i)?, &mut coins) {
                        s += 1;
                        last_hit = Some(i);
                    }
                    if i == self.checkpoints[c] {
                        hits.push(s);
                        c += 1;
                    }
                }
            }
            _ => {
                if matches!(self.targets.construction, Construction::Nominal) {
                    return Err(Error::Unsupported(
                        "nominal targets can only be hit by the control process".into(),
                    ));
                }
                let mut traj = Trajectory::new(map, orbit)?;
                initial_point = Some(traj.initial_point());
                for _ in 0..first {
                    traj.advance()?;
                }
                for i in first..=n {
                    if self.targets.contains(i, traj.point()) {
                        s += 1;
                        last_hit = Some(i);
                    }
                    if i == self.checkpoints[c] {
                        hits.push(s);
                        c += 1;
                    }
                    if i < n {
                        traj.advance()?;
                    }
                }
            }
        }
        Ok(HitTrace {
            orbit_index: orbit.key.index,
            master_seed: orbit.key.master,
            initial_point,
            first_index: first,
            checkpoints: self.checkpoints.clone(),
            hits,
            expected: self.expected.clone(),
            last_hit,
        })
    }
}

/// Hit trace of one orbit of length `orbit.length` with geometric checkpoints.
pub fn run_hits(map: &MapSystem, targets: &TargetSchedule, orbit: &Orbit) -> Result<HitTrace> {
    HitCounter::new(targets.clone(), orbit.length)?.run(map, orbit)
}

/// `E_n`; zero when `n < first_index`.
pub fn expected_hits(targets: &TargetSchedule, n: u64) -> Result<f64> {
    if n < targets.first_index() {
        return Ok(0.0);
    }
    targets.measure(n)?;
    Ok((targets.first_index()..=n)
        .map(|i| targets.measure_unchecked(i))
        .sum())
}

/// Final state of one orbit inside an ensemble summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitOutcome {
    pub orbit_index: u64,
    pub n: u64,
    pub hits: u64,
    #[serde(with = "crate::nonfinite")]
    pub expected: f64,
    #[serde(with = "crate::nonfinite")]
    pub ratio: f64,
    pub last_hit: Option<u64>,
}

/// Fold of hit traces, keyed and ordered by orbit index so that merging is
/// associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub outcomes: Vec<OrbitOutcome>,
}

impl EnsembleSummary {
    pub fn from_trace(trace: &HitTrace) -> Self {
        Self {
            outcomes: vec![OrbitOutcome {
                orbit_index: trace.orbit_index,
                n: trace.n(),
                hits: trace.final_hits(),
                expected: trace.final_expected(),
                ratio: trace.final_ratio(),
                last_hit: trace.last_hit,
            }],
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.outcomes.extend(other.outcomes);
        self.outcomes.sort_by_key(|o| o.orbit_index);
        self.outcomes.dedup_by_key(|o| o.orbit_index);
        self
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.ratio).collect()
    }

    pub fn median_ratio(&self) -> f64 {
        median(&self.ratios())
    }

    pub fn mean_ratio(&self) -> f64 {
        mean(&self.ratios())
    }

    /// Empirical variance of `S_n - E_n` across orbits.
    pub fn deviation_variance(&self) -> f64 {
        let d: Vec<f64> = self
            .outcomes
            .iter()
            .map(|o| o.hits as f64 - o.expected)
            .collect();
        sample_variance(&d)
    }

    /// Fraction of orbits with no hit in `(after, n]`.
    pub fn plateau_fraction_after(&self, after: u64) -> f64 {
        if self.is_empty() {
            return f64::NAN;
        }
        let quiet = self
            .outcomes
            .iter()
            .filter(|o| o.last_hit.is_none_or(|h| h <= after))
            .count();
        quiet as f64 / self.len() as f64
    }

    /// Plateau fraction over the final half of the index range.
    pub fn plateau_fraction(&self) -> f64 {
        let n = self.outcomes.iter().map(|o| o.n).max().unwrap_or(0);
        self.plateau_fraction_after(n / 2)
    }

    /// Classifies the ensemble against the zero-one law for nested targets:
    /// hits in `(after, n]` should occur for almost every orbit or almost none.
    pub fn zero_one(&self, after: u64, threshold: f64) -> ZeroOne {
        let quiet = self.plateau_fraction_after(after);
        if quiet >= threshold {
            ZeroOne::Plateau
        } else if 1.0 - quiet >= threshold {
            ZeroOne::Hitting
        } else {
            ZeroOne::Undersized
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroOne {
    Hitting,
    Plateau,
    /// Mixed outcome: the experiment is too small to decide.
    Undersized,
}

/// Folds traces into an ensemble summary.
pub fn sbc_report(traces: &[HitTrace]) -> Result<EnsembleSummary> {
    if traces.len() < 2 {
        return Err(Error::Config(format!(
            "an ensemble report needs at least 2 traces, got {}",
            traces.len()
        )));
    }
    Ok(traces
        .iter()
        .map(EnsembleSummary::from_trace)
        .fold(EnsembleSummary::default(), EnsembleSummary::merge))
}

pub const MIN_TRACES_FOR_VARIANCE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRatio {
    pub n: u64,
    #[serde(with = "crate::nonfinite")]
    pub expected: f64,
    /// Ensemble mean of `(S_n - E_n)^2 / E_n^2`.
    #[serde(with = "crate::nonfinite")]
    pub value: f64,
    /// Monte Carlo standard error of `value`.
    #[serde(with = "crate::nonfinite")]
    pub stderr: f64,
    pub traces: usize,
    pub low_confidence: bool,
}

/// Ensemble estimate of `E(S_n - E_n)^2 / E_n^2` at checkpoint `n`.
pub fn variance_ratio(traces: &[HitTrace], n: u64) -> Result<VarianceRatio> {
    if traces.is_empty() {
        return Err(Error::Config(
            "variance ratio needs at least one trace".into(),
        ));
    }
    let mut terms = Vec::with_capacity(traces.len());
    let mut expected = 0.0;
    for t in traces {
        let (s, e) = t.at(n)?;
        expected = e;
        terms.push(((s as f64 - e) / e).powi(2));
    }
    let stderr = if terms.len() > 1 {
        (sample_variance(&terms) / terms.len() as f64).sqrt()
    } else {
        f64::NAN
    };
    Ok(VarianceRatio {
        n,
        expected,
        value: mean(&terms),
        stderr,
        traces: traces.len(),
        low_confidence: traces.len() < MIN_TRACES_FOR_VARIANCE,
    })
}

/// Outcome of checking `|S_n - E_n| <= C θ(n)^{1/2} log^{3/2+ε} θ(n)` with
/// `θ(n) = E_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprindzukReport {
    #[serde(with = "crate::nonfinite")]
    pub epsilon: f64,
    #[serde(with = "crate::nonfinite")]
    pub c_max: f64,
    /// 99th percentile over orbits of the smallest `C` that works at every
    /// active checkpoint.
    #[serde(with = "crate::nonfinite")]
    pub fitted_c: f64,
    #[serde(with = "crate::nonfinite")]
    pub max_c: f64,
    #[serde(with = "crate::nonfinite::vec")]
    pub per_orbit_c: Vec<f64>,
    /// Active checkpoints and the ensemble mean of `|S - E| / bound` there.
    pub active_checkpoints: Vec<u64>,
    #[serde(with = "crate::nonfinite::vec")]
    pub mean_normalized: Vec<f64>,
    /// Slope of `log(mean normalized deviation)` against `log θ` over the
    /// upper half of the active checkpoints.
    #[serde(with = "crate::nonfinite")]
    pub growth_slope: f64,
    pub growing: bool,
    pub passed: bool,
    /// `c_max - fitted_c`.
    #[serde(with = "crate::nonfinite")]
    pub margin: f64,
}

/// Checkpoints with `θ < e` are inactive: there `log θ < 1` and the bound
/// degenerates towards zero.
pub const SPRINDZUK_MIN_THETA: f64 = std::f64::consts::E;

pub fn sprindzuk_bound(theta: f64, epsilon: f64) -> f64 {
    theta.sqrt() * theta.ln().powf(1.5 + epsilon)
}

/// Fits the constant of the Sprindzuk error term across an ensemble and flags
/// ensembles whose required constant keeps growing with `n`.
pub fn sprindzuk_monitor(traces: &[HitTrace], epsilon: f64, c_max: f64) -> Result<SprindzukReport> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Config("monitor needs at least one trace".into()))?;
    if traces.iter().any(|t| t.checkpoints != first.checkpoints) {
        return Err(Error::Config("traces must share checkpoints".into()));
    }
    let active: Vec<usize> = (0..first.checkpoints.len())
        .filter(|&k| first.expected[k] >= SPRINDZUK_MIN_THETA)
        .collect();
    let normalized = |t: &HitTrace, k: usize| {
        let theta = t.expected[k];
        (t.hits[k] as f64 - theta).abs() / sprindzuk_bound(theta, epsilon)
    };
    let per_orbit_c: Vec<f64> = traces
        .iter()
        .map(|t| active.iter().map(|&k| normalized(t, k)).fold(0.0, f64::max))
        .collect();
    let mean_normalized: Vec<f64> = active
        .iter()
        .map(|&k| traces.iter().map(|t| normalized(t, k)).sum::<f64>() / traces.len() as f64)
        .collect();
    let upper = &active[active.len() / 2..];
    let upper_means = &mean_normalized[active.len() / 2..];
    let growth_slope = if upper.len() >= 2 && upper_means.iter().all(|m| *m > 0.0) {
        let data: Vec<(f64, f64)> = upper
            .iter()
            .zip(upper_means)
            .map(|(&k, m)| (first.expected[k].ln(), m.ln()))
            .collect();
        least_squares(&data).0
    } else {
        0.0
    };
    let fitted_c = if per_orbit_c.is_empty() {
        0.0
    } else {
        quantile(&per_orbit_c, 0.99)
    };
    let max_c = per_orbit_c.iter().copied().fold(0.0, f64::max);
    let growing = growth_slope > 0.0;
    Ok(SprindzukReport {
        epsilon,
        c_max,
        fitted_c,
        max_c,
        per_orbit_c,
        active_checkpoints: active.iter().map(|&k| first.checkpoints[k]).collect(),
        mean_normalized,
        growth_slope,
        growing,
        passed: fitted_c <= c_max && !growing,
        margin: c_max - fitted_c,
    })
}
