//! Return times into fixed sets: exponential-law diagnostics, Kac's lemma and
//! short-return masses `μ(B ∩ T^{-r}B)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{MapKind, MapSystem, Orbit, Start, Trajectory};
use crate::rng::{Purpose, StreamKey};
use crate::stats::{least_squares, mean, sample_variance, slope_stderr};
use crate::targets::{TargetSet, DEFAULT_BURN_IN};

/// Return times collected along one orbit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSample {
    pub set: TargetSet,
    /// Visit frequency of the set over the steps that were run.
    #[serde(with = "crate::nonfinite")]
    pub measure_hat: f64,
    pub visits: u64,
    pub steps: u64,
    pub times: Vec<u64>,
    /// `τ · measure_hat`.
    #[serde(with = "crate::nonfinite::vec")]
    pub normalized: Vec<f64>,
    pub requested: usize,
    /// Budget exhausted before `requested` returns were seen.
    pub partial: bool,
}

impl ReturnSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn require_phase_space(map: &MapSystem) -> Result<()> {
    if let MapKind::IidControl { .. } = map.kind {
        return Err(Error::Unsupported(
            "control process has no phase space".into(),
        ));
    }
    Ok(())
}

/// Successive return times of one long orbit into `set`, stopping after
/// `samples` returns or `budget` steps. Each visit is the start of the next
/// return, so the sample follows the conditional measure on the set in the
/// ergodic limit.
pub fn first_return_times(
    map: &MapSystem,
    set: &TargetSet,
    samples: usize,
    budget: u64,
    key: StreamKey,
) -> Result<ReturnSample> {
    require_phase_space(map)?;
    let orbit = Orbit::new(
        Start::Uniform,
        budget,
        key.with_purpose(Purpose::Validation),
    )
    .with_burn_in(DEFAULT_BURN_IN);
    let mut traj = Trajectory::new(map, &orbit)?;
    let mut times = Vec::with_capacity(samples);
    let mut visits = 0u64;
    let mut prev: Option<u64> = None;
    let mut steps = 0u64;
    while steps < budget && times.len() < samples {
        if set.contains(traj.point()) {
            visits += 1;
            if let Some(p) = prev {
                times.push(steps - p);
            }
            prev = Some(steps);
        }
        steps += 1;
        if steps < budget && times.len() < samples {
            traj.advance()?;
        }
    }
    let measure_hat = visits as f64 / steps.max(1) as f64;
    Ok(ReturnSample {
        set: *set,
        measure_hat,
        visits,
        steps,
        normalized: times.iter().map(|&t| t as f64 * measure_hat).collect(),
        partial: times.len() < samples,
        requested: samples,
        times,
    })
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        Self { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// `#{v ≤ t} / n`.
    pub fn eval(&self, t: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        self.sorted.partition_point(|&v| v <= t) as f64 / self.sorted.len() as f64
    }

    /// `sup_t |F̂(t) − F(t)|` for a continuous `F`, exact in the presence of ties.
    pub fn ks_distance(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let n = self.sorted.len() as f64;
        let mut d: f64 = 0.0;
        let mut i = 0;
        while i < self.sorted.len() {
            let v = self.sorted[i];
            let mut j = i;
            while j < self.sorted.len() && self.sorted[j] == v {
                j += 1;
            }
            let f = cdf(v);
            d = d
                .max((i as f64 / n - f).abs())
                .max((j as f64 / n - f).abs());
            i = j;
        }
        d.min(1.0)
    }

    /// `(value, F̂(value))` at each distinct value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = (i + 1) as f64 / n,
                _ => out.push((v, (i + 1) as f64 / n)),
            }
        }
        out
    }
}

pub const DEFAULT_T_STAR: f64 = 0.1;
pub const MIN_KS_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub samples: usize,
    #[serde(with = "crate::nonfinite")]
    pub measure_hat: f64,
    #[serde(with = "crate::nonfinite")]
    pub ks: f64,
    #[serde(with = "crate::nonfinite")]
    pub mean_normalized: f64,
    #[serde(with = "crate::nonfinite")]
    pub t_star: f64,
    /// `F̂(t*)`; bounded away from 0 when short returns dominate.
    #[serde(with = "crate::nonfinite")]
    pub small_t_mass: f64,
    pub low_power: bool,
    /// All normalized values coincide.
    pub degenerate: bool,
}

pub fn exponential_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        -(-t).exp_m1()
    }
}

/// Compares the normalized returns with `1 − e^{−t}`.
pub fn ks_exponential(sample: &ReturnSample, t_star: f64) -> Result<DistributionReport> {
    if sample.is_empty() {
        return Err(Error::Calibration("no returns were observed".into()));
    }
    let ecdf = Ecdf::new(&sample.normalized);
    Ok(DistributionReport {
        samples: sample.len(),
        measure_hat: sample.measure_hat,
        ks: ecdf.ks_distance(exponential_cdf),
        mean_normalized: mean(&sample.normalized),
        t_star,
        small_t_mass: ecdf.eval(t_star),
        low_power: sample.len() < MIN_KS_SAMPLES,
        degenerate: sample.normalized.iter().all(|&t| t == sample.normalized[0]),
    })
}

/// `mean(τ) · μ(B)` against Kac's value 1, with `μ(B)` supplied from outside
/// the run (exact, or an independent estimate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KacCheck {
    #[serde(with = "crate::nonfinite")]
    pub measure: f64,
    #[serde(with = "crate::nonfinite")]
    pub mean_return: f64,
    #[serde(with = "crate::nonfinite")]
    pub product: f64,
    #[serde(with = "crate::nonfinite")]
    pub stderr: f64,
    pub within_3se: bool,
}

pub fn kac_check(sample: &ReturnSample, measure: f64) -> Result<KacCheck> {
    if sample.len() < 2 {
        return Err(Error::Calibration(
            "Kac check needs at least two returns".into(),
        ));
    }
    let t: Vec<f64> = sample.times.iter().map(|&t| t as f64).collect();
    let mean_return = mean(&t);
    let product = mean_return * measure;
    let stderr = (sample_variance(&t) / t.len() as f64).sqrt() * measure;
    Ok(KacCheck {
        measure,
        mean_return,
        product,
        stderr,
        within_3se: (product - 1.0).abs() <= 3.0 * stderr,
    })
}

pub const DEFAULT_SHORT_RETURN_EXPONENT: f64 = 5.0;

/// `⌈(ln i)^k⌉`.
pub fn short_return_window(i: u64, k: f64) -> Result<u64> {
    if i < 3 {
        return Err(Error::Config(
            "short-return index must be at least 3".into(),
        ));
    }
    let w = (i as f64).ln().powf(k).ceil();
    if !w.is_finite() || w > 1e9 {
        return Err(Error::Config(format!(
            "short-return window (ln {i})^{k} is too large"
        )));
    }
    Ok(w as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortReturnReport {
    pub set: TargetSet,
    pub i: u64,
    #[serde(with = "crate::nonfinite")]
    pub k: f64,
    pub window: u64,
    pub steps: u64,
    #[serde(with = "crate::nonfinite")]
    pub measure_hat: f64,
    /// Estimates of `μ(B ∩ T^{-r}B)` for `r = 1..=window`.
    #[serde(with = "crate::nonfinite::vec")]
    pub masses: Vec<f64>,
    pub counts: Vec<u64>,
    #[serde(with = "crate::nonfinite")]
    pub max_mass: f64,
    pub argmax_r: u64,
    /// `−ln(max_mass · i) / ln i`; a lower bound when unresolved.
    #[serde(with = "crate::nonfinite")]
    pub eta_hat: f64,
    /// No joint visit at any `r`: only `[0, upper_bound]` is known.
    pub unresolved: bool,
    #[serde(with = "crate::nonfinite")]
    pub upper_bound: f64,
    /// `η̂ ≤ ln 2 / ln i`, i.e. `max_mass ≥ 1/(2i)`.
    pub short_returns_not_rare: bool,
}

impl ShortReturnReport {
    /// Binomial standard error of the mass at `r`.
    pub fn stderr(&self, r: u64) -> f64 {
        let m = self.masses[r as usize - 1];
        (m * (1.0 - m) / (self.steps - r) as f64).sqrt()
    }
}

/// Birkhoff estimates of `μ(B ∩ T^{-r}B)`, `1 ≤ r ≤ ⌈(ln i)^k⌉`, from pairs of
/// visit times on one orbit of `steps` iterates.
pub fn short_return_mass(
    map: &MapSystem,
    set: &TargetSet,
    i: u64,
    k: f64,
    steps: u64,
    key: StreamKey,
) -> Result<ShortReturnReport> {
    require_phase_space(map)?;
    let window = short_return_window(i, k)?;
    if steps <= window {
        return Err(Error::Config(format!(
            "orbit of {steps} steps is shorter than the window {window}"
        )));
    }
    let mut counts = vec![0u64; window as usize];
    let mut visits = 0u64;
    if set.length() > 0.0 {
        let orbit = Orbit::new(Start::Uniform, steps, key.with_purpose(Purpose::Validation))
            .with_burn_in(DEFAULT_BURN_IN);
        let mut traj = Trajectory::new(map, &orbit)?;
        let mut recent: std::collections::VecDeque<u64> = std::collections::VecDeque::new();
        for j in 0..steps {
            if set.contains(traj.point()) {
                visits += 1;
                while recent.front().is_some_and(|&v| j - v > window) {
                    recent.pop_front();
                }
                for &v in &recent {
                    counts[(j - v - 1) as usize] += 1;
                }
                recent.push_back(j);
            }
            if j + 1 < steps {
                traj.advance()?;
            }
        }
    }
    let masses: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(r, &c)| c as f64 / (steps - r as u64 - 1) as f64)
        .collect();
    let (argmax, max_mass) = masses
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (r, m)| if m > acc.1 { (r, m) } else { acc });
    let unresolved = counts.iter().all(|&c| c == 0);
    // rule of three for a zero count at the shortest effective length
    let upper_bound = if unresolved {
        3.0 / (steps - window) as f64
    } else {
        max_mass
    };
    let li = (i as f64).ln();
    let eta_hat = -(upper_bound * i as f64).ln() / li;
    let measure_hat = visits as f64 / steps as f64;
    Ok(ShortReturnReport {
        set: *set,
        i,
        k,
        window,
        steps,
        measure_hat,
        masses,
        counts,
        max_mass,
        argmax_r: argmax as u64 + 1,
        eta_hat,
        unresolved,
        upper_bound,
        short_returns_not_rare: !unresolved && eta_hat <= std::f64::consts::LN_2 / li,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    #[serde(with = "crate::nonfinite")]
    pub radius: f64,
    pub sample: ReturnSample,
    pub report: DistributionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    #[serde(with = "crate::nonfinite")]
    pub center: f64,
    pub points: Vec<SweepPoint>,
    /// Slope of the K-S distance against `ln(1/μ̂)`.
    #[serde(with = "crate::nonfinite")]
    pub trend_slope: f64,
    #[serde(with = "crate::nonfinite")]
    pub trend_stderr: f64,
    /// Slope not significantly positive at the one-sided 95% level.
    pub non_increasing: bool,
}

/// Return-law diagnostics for balls `B(center, r)` with decreasing radii.
/// Each radius runs on its own stream (in parallel) with a budget of
/// `budget_factor · samples / λ(B)` steps, `λ` normalized Lebesgue measure.
pub fn return_law_sweep(
    map: &MapSystem,
    center: f64,
    radii: &[f64],
    samples: usize,
    budget_factor: f64,
    key: StreamKey,
) -> Result<SweepReport> {
    require_phase_space(map)?;
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("radii must be strictly decreasing".into()));
    }
    let domain = map.domain();
    let points: Vec<SweepPoint> = radii
        .par_iter()
        .enumerate()
        .map(|(k, &radius)| {
            let set = TargetSet::Ball {
                center,
                radius,
                domain,
            };
            let lambda = set.length() / domain.length();
            let budget = (budget_factor * samples as f64 / lambda).ceil() as u64;
            let k = StreamKey::new(
                key.master,
                key.index.wrapping_mul(1 << 16).wrapping_add(k as u64),
                Purpose::Validation,
            );
            let sample = first_return_times(map, &set, samples, budget, k)?;
            let report = ks_exponential(&sample, DEFAULT_T_STAR)?;
            Ok(SweepPoint {
                radius,
                sample,
                report,
            })
        })
        .collect::<Result<_>>()?;
    let data: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (-p.report.measure_hat.ln(), p.report.ks))
        .collect();
    let (trend_slope, trend_stderr) = if data.len() >= 3 {
        (least_squares(&data).0, slope_stderr(&data))
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SweepReport {
        center,
        points,
        trend_slope,
        trend_stderr,
        non_increasing: !(trend_slope > 1.645 * trend_stderr),
    })
}
