//! Piecewise-linear observables and Monte Carlo estimates of
//! `E(φ·ψ∘T^m) − Eφ·Eψ`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Circle, MapKind, MapSystem, Orbit, Start, Trajectory};
use crate::rng::{Purpose, StreamKey};
use crate::stats::{least_squares, mean, sample_variance};
use crate::targets::{TargetSet, DEFAULT_BURN_IN};

pub const DEFAULT_REPLICATES: usize = 8;

/// Continuous piecewise-linear function on a domain, given by its values at
/// sorted knots that span the whole domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    domain: Circle,
    knots: Vec<f64>,
    values: Vec<f64>,
    lipschitz: f64,
    /// Set when the knots are equally spaced, enabling O(1) lookup.
    uniform: bool,
}

impl Observable {
    pub fn new(domain: Circle, knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Config(
                "need at least two knots, one value per knot".into(),
            ));
        }
        if knots[0] != domain.lo || *knots.last().unwrap() != domain.hi {
            return Err(Error::Config(
                "knots must start and end at the domain ends".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("knots must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("observable values must be finite".into()));
        }
        let lipschitz = knots
            .windows(2)
            .zip(values.windows(2))
            .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            domain,
            knots,
            values,
            lipschitz,
            uniform: false,
        })
    }

    /// Interpolates `f` on `pieces + 1` equally spaced knots.
    pub fn sample(f: impl Fn(f64) -> f64, domain: Circle, pieces: usize) -> Result<Self> {
        let pieces = pieces.max(1);
        let h = domain.length() / pieces as f64;
        let mut knots: Vec<f64> = (0..=pieces).map(|k| domain.lo + k as f64 * h).collect();
        knots[pieces] = domain.hi;
        let values = knots.iter().map(|&x| f(x)).collect();
        let mut obs = Self::new(domain, knots, values)?;
        obs.uniform = true;
        Ok(obs)
    }

    pub fn constant(c: f64, domain: Circle) -> Self {
        Self {
            domain,
            knots: vec![domain.lo, domain.hi],
            values: vec![c, c],
            lipschitz: 0.0,
            uniform: true,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn domain(&self) -> Circle {
        self.domain
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|&v| v == self.values[0])
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.domain.lo, self.domain.hi);
        let n = self.knots.len();
        let k = if self.uniform {
            let h = self.domain.length() / (n - 1) as f64;
            (((x - self.domain.lo) / h) as usize).min(n - 2)
        } else {
            self.knots.partition_point(|&t| t <= x).clamp(1, n - 1) - 1
        };
        let (x0, x1) = (self.knots[k], self.knots[k + 1]);
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        y0 + (y1 - y0) * ((x - x0) / (x1 - x0))
    }

    /// Exact integral against normalized Lebesgue measure.
    pub fn lebesgue_mean(&self) -> f64 {
        let area: f64 = self
            .knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| 0.5 * (k[1] - k[0]) * (v[0] + v[1]))
            .sum();
        area / self.domain.length()
    }

    /// `a·self + b·other` on the union of both knot sets.
    pub fn combine(&self, a: f64, other: &Observable, b: f64) -> Result<Self> {
        if self.domain != other.domain {
            return Err(Error::Config(
                "observables live on different domains".into(),
            ));
        }
        let mut knots: Vec<f64> = self.knots.iter().chain(&other.knots).copied().collect();
        knots.sort_unstable_by(f64::total_cmp);
        knots.dedup();
        let values = knots
            .iter()
            .map(|&x| a * self.eval(x) + b * other.eval(x))
            .collect();
        Self::new(self.domain, knots, values)
    }
}

/// A mollified indicator and whether it degenerated to the constant 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mollified {
    pub observable: Observable,
    pub saturated: bool,
}

/// `f̃(x) = max(0, 1 − d(x, set)/slack)` with circular distance: 1 on the
/// set, 0 beyond the slack collar, linear in between.
pub fn mollify_indicator(set: &TargetSet, slack: f64, domain: Circle) -> Result<Mollified> {
    if !(slack > 0.0) {
        return Err(Error::Config(format!(
            "slack must be positive, got {slack}"
        )));
    }
    let len = domain.length();
    let (start, width) = match *set {
        TargetSet::Ball { center, radius, .. } => (center - radius, (2.0 * radius).min(len)),
        TargetSet::Interval { lo, hi, .. } => (lo, (hi - lo).clamp(0.0, len)),
    };
    let complement = len - width;
    if slack >= complement {
        return Ok(Mollified {
            observable: Observable::constant(1.0, domain),
            saturated: true,
        });
    }
    let start = domain.wrap(start);
    let offset = |x: f64| (x - start).rem_euclid(len);
    let dist = |x: f64| {
        let u = offset(x);
        if u <= width {
            0.0
        } else {
            (u - width).min(len - u)
        }
    };
    let f = |x: f64| (1.0 - dist(x) / slack).max(0.0);
    let mut pts = vec![(domain.lo, f(domain.lo)), (domain.hi, f(domain.hi))];
    for (u, v) in [
        (0.0, 1.0),
        (width, 1.0),
        (width + slack, 0.0),
        (len - slack, 0.0),
    ] {
        let x = domain.wrap(start + u);
        if x > domain.lo && x < domain.hi {
            pts.push((x, v));
        }
    }
    let mid = domain.wrap(start + width + complement / 2.0);
    if mid > domain.lo && mid < domain.hi {
        pts.push((mid, f(mid)));
    }
    pts.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    pts.dedup_by(|a, b| a.0 == b.0);
    let (knots, values): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(Mollified {
        observable: Observable::new(domain, knots, values)?,
        saturated: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    /// `ĉ(m) ≈ C m^{-q}`
    Poly,
    /// `ĉ(m) ≈ C α^m`
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    /// Exponent `q` (poly) or base `α` (exp).
    #[serde(with = "crate::nonfinite")]
    pub rate: f64,
    #[serde(with = "crate::nonfinite")]
    pub prefactor: f64,
    #[serde(with = "crate::nonfinite")]
    pub residual_norm: f64,
    pub lags_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FitOutcome {
    Fitted(DecayFit),
    Unavailable { significant_lags: usize },
}

impl FitOutcome {
    pub fn fitted(&self) -> Option<&DecayFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCurve {
    pub lags: Vec<u64>,
    #[serde(with = "crate::nonfinite::vec")]
    pub estimates: Vec<f64>,
    /// NaN when there are fewer than two replicates.
    #[serde(with = "crate::nonfinite::vec")]
    pub stderrs: Vec<f64>,
    pub replicates: usize,
    pub sample_length: u64,
    pub no_error_bars: bool,
    pub fit: Option<FitOutcome>,
}

impl CorrelationCurve {
    /// A noiseless curve, for exercising the fitter.
    pub fn synthetic(lags: Vec<u64>, estimates: Vec<f64>) -> Self {
        let n = lags.len();
        Self {
            lags,
            estimates,
            stderrs: vec![0.0; n],
            replicates: 0,
            sample_length: 0,
            no_error_bars: false,
            fit: None,
        }
    }

    /// Whether lag `k` (position) is distinguishable from zero at 2 standard errors.
    pub fn significant(&self, k: usize) -> bool {
        let c = self.estimates[k].abs();
        let se = self.stderrs[k];
        c > 0.0 && (se.is_nan() || c > 2.0 * se)
    }
}

/// One replicate: `(1/N) Σ_{j<N} (φ_j − φ̄)(ψ_{j+m} − ψ̄_m)` for each lag,
/// where `ψ̄_m` averages the same window that is paired with `φ`.
fn replicate(
    map: &MapSystem,
    phi: &Observable,
    psi: &Observable,
    lags: &[u64],
    n: u64,
    key: StreamKey,
) -> Result<Vec<f64>> {
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    let total = (n + max_lag) as usize;
    let orbit = Orbit::new(Start::Uniform, total as u64, key).with_burn_in(DEFAULT_BURN_IN);
    let mut traj = Trajectory::new(map, &orbit)?;
    let mut fx = Vec::with_capacity(n as usize);
    let mut gx = Vec::with_capacity(total);
    for j in 0..total {
        let x = traj.point();
        if j < n as usize {
            fx.push(phi.eval(x));
        }
        gx.push(psi.eval(x));
        traj.advance()?;
    }
    let fbar = mean(&fx);
    let fc: Vec<f64> = fx.iter().map(|v| v - fbar).collect();
    Ok(lags
        .iter()
        .map(|&m| {
            let w = &gx[m as usize..m as usize + n as usize];
            let gbar = mean(w);
            fc.iter().zip(w).map(|(a, b)| a * (b - gbar)).sum::<f64>() / n as f64
        })
        .collect())
}

/// Birkhoff estimates of the correlation at each lag, averaged over
/// independent replicate orbits (run in parallel); the standard error is the
/// replicate spread over `√replicates`.
pub fn estimate_correlation(
    map: &MapSystem,
    phi: &Observable,
    psi: &Observable,
    lags: &[u64],
    n: u64,
    replicates: usize,
    key: StreamKey,
) -> Result<CorrelationCurve> {
    if let MapKind::IidControl { .. } = map.kind {
        return Err(Error::Unsupported(
            "control process has no phase space".into(),
        ));
    }
    if n == 0 || replicates == 0 {
        return Err(Error::Config(
            "sample length and replicate count must be positive".into(),
        ));
    }
    let per_rep: Vec<Vec<f64>> = if phi.is_constant() || psi.is_constant() {
        // E(cψ∘T^m) − cEψ vanishes identically
        vec![vec![0.0; lags.len()]; replicates]
    } else {
        (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let k = StreamKey::new(
                    key.master,
                    key.index.wrapping_mul(1 << 20).wrapping_add(r),
                    Purpose::Replicate,
                );
                replicate(map, phi, psi, lags, n, k)
            })
            .collect::<Result<_>>()?
    };
    let mut estimates = Vec::with_capacity(lags.len());
    let mut stderrs = Vec::with_capacity(lags.len());
    for l in 0..lags.len() {
        let col: Vec<f64> = per_rep.iter().map(|r| r[l]).collect();
        estimates.push(mean(&col));
        stderrs.push((sample_variance(&col) / replicates as f64).sqrt());
    }
    Ok(CorrelationCurve {
        lags: lags.to_vec(),
        estimates,
        stderrs,
        replicates,
        sample_length: n,
        no_error_bars: replicates < 2,
        fit: None,
    })
}

pub const MIN_FIT_LAGS: usize = 5;

/// Least squares on `log|ĉ|` against `log m` (poly) or `m` (exp), using only
/// lags that are significant at 2 standard errors (and `m ≥ 1` for poly).
pub fn fit_decay_rate(curve: &CorrelationCurve, model: DecayModel) -> FitOutcome {
    let data: Vec<(f64, f64)> = (0..curve.lags.len())
        .filter(|&k| curve.significant(k) && (model == DecayModel::Exp || curve.lags[k] >= 1))
        .map(|k| {
            let m = curve.lags[k] as f64;
            let x = match model {
                DecayModel::Poly => m.ln(),
                DecayModel::Exp => m,
            };
            (x, curve.estimates[k].abs().ln())
        })
        .collect();
    if data.len() < MIN_FIT_LAGS {
        return FitOutcome::Unavailable {
            significant_lags: data.len(),
        };
    }
    let (slope, intercept, residual_norm) = least_squares(&data);
    let rate = match model {
        DecayModel::Poly => -slope,
        DecayModel::Exp => slope.exp(),
    };
    FitOutcome::Fitted(DecayFit {
        model,
        rate,
        prefactor: intercept.exp(),
        residual_norm,
        lags_used: data.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn cosine() -> Observable {
        Observable::sample(|x| (2.0 * PI * x).cos(), Circle::UNIT, 4096).unwrap()
    }

    #[test]
    fn mollifier_examples() {
        let set = TargetSet::Interval {
            lo: 0.2,
            hi: 0.4,
            closed_lo: true,
        };
        let m = mollify_indicator(&set, 0.1, Circle::UNIT).unwrap();
        assert!(!m.saturated);
        let f = &m.observable;
        assert_eq!(f.eval(0.3), 1.0);
        assert!((f.eval(0.45) - 0.5).abs() < 1e-12);
        assert_eq!(f.eval(0.55), 0.0);
        assert!((f.lipschitz() - 10.0).abs() < 1e-9);
        assert!(mollify_indicator(&set, 0.0, Circle::UNIT).is_err());
        let m = mollify_indicator(&set, 0.8, Circle::UNIT).unwrap();
        assert!(m.saturated && m.observable.is_constant());
    }

    #[test]
    fn mollifier_slack_sets_lipschitz_constant() {
        let (k, delta) = (100.0f64, 0.5);
        let slack = (k * k.ln().powi(2)).powf(-1.0 / delta);
        let set = TargetSet::Interval {
            lo: 0.3,
            hi: 0.31,
            closed_lo: true,
        };
        let m = mollify_indicator(&set, slack, Circle::UNIT).unwrap();
        let target = (k * k.ln().powi(2)).powf(1.0 / delta);
        assert!((m.observable.lipschitz() / target - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mollifier_wraps_around_the_circle() {
        let set = TargetSet::Ball {
            center: 0.02,
            radius: 0.05,
            domain: Circle::UNIT,
        };
        let f = mollify_indicator(&set, 0.1, Circle::UNIT)
            .unwrap()
            .observable;
        assert_eq!(f.eval(0.99), 1.0);
        assert!((f.eval(0.92) - 0.5).abs() < 1e-12);
        assert!((f.eval(0.12) - 0.5).abs() < 1e-12);
        // collar mean: width + slack
        assert!((f.lebesgue_mean() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn doubling_cosine_correlations() {
        let map = MapSystem::doubling();
        let c = cosine();
        let lags: Vec<u64> = (0..=10).collect();
        let curve = estimate_correlation(
            &map,
            &c,
            &c,
            &lags,
            200_000,
            8,
            StreamKey::new(3, 0, Purpose::Replicate),
        )
        .unwrap();
        assert!((curve.estimates[0] - 0.5).abs() < 0.005);
        for k in 1..=10 {
            assert!(
                curve.estimates[k].abs() < 3.0 * curve.stderrs[k] + 1e-12,
                "lag {k}"
            );
        }
    }

    #[test]
    fn constant_observable_is_uncorrelated() {
        let map = MapSystem::lsv(0.5).unwrap();
        let one = Observable::constant(0.7, Circle::UNIT);
        let curve = estimate_correlation(
            &map,
            &one,
            &cosine(),
            &[0, 1, 5],
            1000,
            1,
            StreamKey::new(1, 0, Purpose::Replicate),
        )
        .unwrap();
        assert!(curve.estimates.iter().all(|&c| c == 0.0));
        assert!(curve.no_error_bars);
    }

    #[test]
    fn bilinearity_on_shared_orbit() {
        let map = MapSystem::doubling();
        let a = cosine();
        let b = Observable::sample(|x| x * x, Circle::UNIT, 64).unwrap();
        let psi = Observable::sample(|x| (x - 0.3).abs(), Circle::UNIT, 100).unwrap();
        let key = StreamKey::new(5, 1, Purpose::Replicate);
        let lags = [0, 2, 7];
        let combo = a.combine(2.0, &b, -0.5).unwrap();
        let ea = estimate_correlation(&map, &a, &psi, &lags, 5000, 2, key).unwrap();
        let eb = estimate_correlation(&map, &b, &psi, &lags, 5000, 2, key).unwrap();
        let ec = estimate_correlation(&map, &combo, &psi, &lags, 5000, 2, key).unwrap();
        for k in 0..lags.len() {
            assert!(
                (ec.estimates[k] - (2.0 * ea.estimates[k] - 0.5 * eb.estimates[k])).abs() < 1e-10
            );
        }
    }

    #[test]
    fn synthetic_fits() {
        let lags: Vec<u64> = (1..=20).collect();
        let poly = CorrelationCurve::synthetic(
            lags.clone(),
            lags.iter().map(|&m| (m as f64).powi(-2)).collect(),
        );
        let fit = *fit_decay_rate(&poly, DecayModel::Poly).fitted().unwrap();
        assert!((fit.rate - 2.0).abs() < 0.01);
        let exp = CorrelationCurve::synthetic(
            lags.clone(),
            lags.iter().map(|&m| 0.5f64.powi(m as i32)).collect(),
        );
        let fit = *fit_decay_rate(&exp, DecayModel::Exp).fitted().unwrap();
        assert!((fit.rate - 0.5).abs() < 0.01);
        let short = CorrelationCurve::synthetic(vec![1, 2, 3], vec![1.0, 0.5, 0.25]);
        assert_eq!(
            fit_decay_rate(&short, DecayModel::Exp),
            FitOutcome::Unavailable {
                significant_lags: 3
            }
        );
    }

    proptest! {
        #[test]
        fn mollifier_sandwich(lo in 0.0f64..0.9, w in 0.0f64..0.1, slack in 0.001f64..0.2, x in 0.0f64..1.0) {
            let set = TargetSet::Interval { lo, hi: lo + w, closed_lo: true };
            let m = mollify_indicator(&set, slack, Circle::UNIT).unwrap();
            let f = m.observable.eval(x);
            prop_assert!((0.0..=1.0).contains(&f));
            if set.contains(x) {
                prop_assert!((f - 1.0).abs() < 1e-9);
            }
            let d = if x >= lo && x <= lo + w { 0.0 } else {
                Circle::UNIT.distance(x, lo).min(Circle::UNIT.distance(x, lo + w))
            };
            if d >= slack + 1e-9 {
                prop_assert!(f.abs() < 1e-9);
            }
            let mean = m.observable.lebesgue_mean();
            prop_assert!(mean >= w - 1e-12 && mean <= w + slack + 1e-12);
        }

        #[test]
        fn lipschitz_is_max_slope(vals in proptest::collection::vec(-5.0f64..5.0, 2..30)) {
            let n = vals.len() - 1;
            let obs = Observable::sample(|x| vals[(x * n as f64).round() as usize], Circle::UNIT, n).unwrap();
            let expected = vals.windows(2).map(|w| (w[1] - w[0]).abs() * n as f64).fold(0.0, f64::max);
            prop_assert!((obs.lipschitz() - expected).abs() <= 1e-9 * (1.0 + expected));
        }
    }
}
