//! Executes a configuration: hit ensembles, return-time sweeps, short-return
//! masses, correlation curves and measure profiles.

use std::time::Instant;

use bclab_core::bc_stats::{
    sbc_report, sprindzuk_monitor, variance_ratio, EnsembleSummary, HitCounter, HitTrace,
    SprindzukReport, VarianceRatio, ZeroOne,
};
use bclab_core::correlations::{
    estimate_correlation, fit_decay_rate, mollify_indicator, CorrelationCurve, Observable,
};
use bclab_core::maps::{Circle, MapKind, MapSystem, Orbit, ReferenceMeasure, Start};
use bclab_core::returns::{
    first_return_times, kac_check, ks_exponential, return_law_sweep, short_return_mass,
    DistributionReport, KacCheck, DEFAULT_T_STAR,
};
use bclab_core::stats::median;
use bclab_core::targets::{
    calibrate_radii, lsv_origin_measure, measure_profile, set_measure_estimate, MeasureSchedule,
    TargetSet, HALF_DENSITY_WIDTH,
};
use bclab_core::{Purpose, StreamKey};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::*;
use crate::error::CliError;
use crate::output::{
    csv_bytes, sha256_hex, OrbitSeed, RunDir, RunManifest, CONFIG, ENSEMBLE, SEEDING_CONTRACT,
};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "BCLAB_WORKERS";

/// `BCLAB_WORKERS` if set, else `requested`, else the available parallelism.
pub fn resolve_workers(requested: Option<usize>) -> Result<usize, CliError> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|w| *w > 0)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{WORKERS_ENV} must be a positive integer, got `{v}`"
                ))
            });
    }
    Ok(requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitResults {
    pub n: u64,
    pub first_index: u64,
    pub orbits: usize,
    #[serde(with = "bclab_core::nonfinite")]
    pub expected_n: f64,
    pub summary: EnsembleSummary,
    #[serde(with = "bclab_core::nonfinite")]
    pub median_ratio: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub mean_ratio: f64,
    pub variance: Option<VarianceRatio>,
    /// `Σ p_i(1-p_i) / E_n²`, for the independent control process.
    #[serde(with = "bclab_core::nonfinite::option", default)]
    pub closed_form_variance: Option<f64>,
    pub sprindzuk: Option<SprindzukReport>,
    /// Orbits whose `S` strictly increases across the last three checkpoints.
    #[serde(with = "bclab_core::nonfinite")]
    pub growth_fraction: f64,
    pub plateau_after: u64,
    #[serde(with = "bclab_core::nonfinite")]
    pub plateau_fraction: f64,
    pub zero_one: ZeroOne,
    /// `(checkpoint, E, median S/E)`.
    pub ratio_series: Vec<(u64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusResult {
    #[serde(with = "bclab_core::nonfinite")]
    pub radius: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub measure: f64,
    pub report: DistributionReport,
    pub kac: KacCheck,
    pub partial: bool,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnResults {
    #[serde(with = "bclab_core::nonfinite")]
    pub center: f64,
    pub radii: Vec<RadiusResult>,
    #[serde(with = "bclab_core::nonfinite")]
    pub trend_slope: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub trend_stderr: f64,
    pub non_increasing: bool,
    pub periodic: Option<RadiusResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortReturnResult {
    pub name: String,
    pub set: TargetSet,
    pub window: u64,
    #[serde(with = "bclab_core::nonfinite")]
    pub measure_hat: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub r1_mass: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub r1_stderr: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub max_mass: f64,
    pub argmax_r: u64,
    #[serde(with = "bclab_core::nonfinite")]
    pub eta_hat: f64,
    pub unresolved: bool,
    #[serde(with = "bclab_core::nonfinite")]
    pub upper_bound: f64,
    pub short_returns_not_rare: bool,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub n: u64,
    /// Direct time average along the profile orbit.
    #[serde(with = "bclab_core::nonfinite")]
    pub measure_hat: f64,
    pub hits: u64,
    /// First-return estimate from the density at `1/2⁺` (intermittent map only).
    #[serde(with = "bclab_core::nonfinite::option", default)]
    pub induced: Option<f64>,
    /// `n` times the induced estimate when available, else the direct one.
    #[serde(with = "bclab_core::nonfinite")]
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResults {
    pub samples: u64,
    #[serde(with = "bclab_core::nonfinite::option", default)]
    pub density_half: Option<f64>,
    pub rows: Vec<ProfileRow>,
    /// `max / min` of `n · μ̂(B_n)`; infinite when some estimate is zero.
    #[serde(with = "bclab_core::nonfinite")]
    pub spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BTail {
    pub from: u64,
    pub to: u64,
    /// `Σ_{from < n <= to} m(0, b_n) / 2`, in normalized measure.
    #[serde(with = "bclab_core::nonfinite")]
    pub normalized: f64,
    #[serde(with = "bclab_core::nonfinite")]
    pub lebesgue: f64,
}

/// Everything a run computes; serialized as the ensemble JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub preset: Preset,
    pub hits: Option<HitResults>,
    pub returns: Option<ReturnResults>,
    pub short_returns: Vec<ShortReturnResult>,
    pub correlations: Option<CorrelationCurve>,
    pub profile: Option<ProfileResults>,
    pub b_tail: Option<BTail>,
}

impl Results {
    pub fn is_empty(&self) -> bool {
        self.hits.is_none()
            && self.returns.is_none()
            && self.short_returns.is_empty()
            && self.correlations.is_none()
            && self.profile.is_none()
            && self.b_tail.is_none()
    }
}

pub fn orbit_key(master: u64, orbit: u64) -> StreamKey {
    StreamKey::new(master, orbit, Purpose::InitialPoint)
}

fn fmt_f(x: f64) -> String {
    format!("{x:?}")
}

pub fn trace_csv(trace: &HitTrace) -> Vec<u8> {
    csv_bytes(
        &["checkpoint", "S", "E", "ratio"],
        trace
            .rows()
            .map(|(c, s, e, r)| vec![c.to_string(), s.to_string(), fmt_f(e), fmt_f(r)]),
    )
}

pub fn trace_file(orbit: u64) -> String {
    format!("traces/orbit_{orbit:05}.csv")
}

/// Runs the hit ensemble on a pool of `workers` threads. Orbit `w` draws
/// only from streams keyed by `(master_seed, w)`, and results are collected
/// in orbit order, so the worker count never changes any value.
pub fn run_ensemble(
    cfg: &ExperimentConfig,
    built: &Built,
    workers: usize,
) -> Result<Vec<HitTrace>, CliError> {
    let Some(targets) = &built.targets else {
        return Ok(Vec::new());
    };
    if cfg.ensemble.size == 0 {
        return Ok(Vec::new());
    }
    let counter = HitCounter::new(targets.clone(), cfg.ensemble.orbit_length)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let e = &cfg.ensemble;
    let traces = pool.install(|| {
        (0..e.size)
            .into_par_iter()
            .map(|w| {
                let orbit = Orbit::new(Start::Uniform, e.orbit_length, orbit_key(e.master_seed, w))
                    .with_burn_in(e.burn_in);
                counter.run(&built.map, &orbit)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(traces)
}

pub fn hit_results(
    cfg: &ExperimentConfig,
    built: &Built,
    traces: &[HitTrace],
) -> Result<Option<HitResults>, CliError> {
    let Some(first) = traces.first() else {
        return Ok(None);
    };
    let n = first.n();
    let summary = if traces.len() >= 2 {
        sbc_report(traces)?
    } else {
        EnsembleSummary::from_trace(first)
    };
    let expected_n = first.final_expected();
    let closed_form_variance = match &built.map.kind {
        MapKind::IidControl { schedule } => {
            let v: f64 = (first.first_index..=n)
                .map(|i| schedule.measure(i).map(|p| p * (1.0 - p)))
                .sum::<Result<f64, _>>()?;
            Some(v / (expected_n * expected_n))
        }
        _ => None,
    };
    let sprindzuk = match cfg.checks.sprindzuk_c_max {
        Some(c_max) => Some(sprindzuk_monitor(
            traces,
            cfg.checks.sprindzuk_epsilon.unwrap_or(0.1),
            c_max,
        )?),
        None => None,
    };
    let plateau_after = cfg.checks.plateau_after.unwrap_or(n / 2);
    let growth = traces.iter().filter(|t| t.increasing_over_last(3)).count();
    let ratio_series = (0..first.checkpoints.len())
        .map(|k| {
            let ratios: Vec<f64> = traces
                .iter()
                .map(|t| t.hits[k] as f64 / t.expected[k])
                .collect();
            (first.checkpoints[k], first.expected[k], median(&ratios))
        })
        .collect();
    Ok(Some(HitResults {
        n,
        first_index: first.first_index,
        orbits: traces.len(),
        expected_n,
        median_ratio: summary.median_ratio(),
        mean_ratio: summary.mean_ratio(),
        variance: Some(variance_ratio(traces, n)?),
        closed_form_variance,
        sprindzuk,
        growth_fraction: growth as f64 / traces.len() as f64,
        plateau_after,
        plateau_fraction: summary.plateau_fraction_after(plateau_after),
        zero_one: summary.zero_one(plateau_after, 0.9),
        ratio_series,
        summary,
    }))
}

fn returns_csv(times: &[u64], normalized: &[f64]) -> Vec<u8> {
    csv_bytes(
        &["tau", "t"],
        times
            .iter()
            .zip(normalized)
            .map(|(t, x)| vec![t.to_string(), fmt_f(*x)]),
    )
}

/// `μ(B)` for Kac's lemma from outside the return run: exact for
/// Lebesgue-invariant maps, otherwise an estimate on an independent stream.
/// `μ(B)` for the Kac check: exact for Lebesgue-invariant maps, otherwise a
/// time average on its own stream `index`, independent of the return sample.
fn reference_measure(
    map: &MapSystem,
    set: &TargetSet,
    budget: u64,
    master: u64,
    index: u64,
) -> Result<f64, CliError> {
    if map.reference_measure() == ReferenceMeasure::Lebesgue {
        Ok(set.length() / map.domain().length())
    } else {
        let key = StreamKey::new(master, index, Purpose::Validation);
        Ok(set_measure_estimate(map, set, budget, key)?.0)
    }
}

fn run_returns(
    sec: &ReturnsSection,
    map: &MapSystem,
    master: u64,
    out: &mut RunDir,
    workers: usize,
) -> Result<ReturnResults, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    // Sweep streams are `1·2^16 + k`; the periodic control and the reference
    // measures use indices that cannot collide with them.
    let key = StreamKey::new(master, 1, Purpose::Validation);
    let sweep = pool.install(|| {
        return_law_sweep(
            map,
            sec.center,
            &sec.radii,
            sec.samples,
            sec.budget_factor,
            key,
        )
    })?;
    let mut radii = Vec::new();
    for (k, p) in sweep.points.iter().enumerate() {
        let file = format!("returns/radius_{k:02}.csv");
        out.write(&file, &returns_csv(&p.sample.times, &p.sample.normalized))?;
        let measure =
            reference_measure(map, &p.sample.set, p.sample.steps, master, 4000 + k as u64)?;
        radii.push(RadiusResult {
            radius: p.radius,
            measure,
            kac: kac_check(&p.sample, measure)?,
            report: p.report.clone(),
            partial: p.sample.partial,
            file,
        });
    }
    let periodic = match sec.periodic_center {
        None => None,
        Some(c) => {
            let radius = *sec.radii.last().unwrap();
            let domain = map.domain();
            let set = TargetSet::Ball {
                center: c,
                radius,
                domain,
            };
            let budget = (sec.budget_factor * sec.samples as f64 * domain.length() / set.length())
                .ceil() as u64;
            let k = StreamKey::new(master, 2, Purpose::Validation);
            let sample = first_return_times(map, &set, sec.samples, budget, k)?;
            let file = "returns/periodic.csv".to_string();
            out.write(&file, &returns_csv(&sample.times, &sample.normalized))?;
            let measure = reference_measure(map, &set, budget, master, 4999)?;
            Some(RadiusResult {
                radius,
                measure,
                report: ks_exponential(&sample, DEFAULT_T_STAR)?,
                kac: kac_check(&sample, measure)?,
                partial: sample.partial,
                file,
            })
        }
    };
    Ok(ReturnResults {
        center: sec.center,
        radii,
        trend_slope: sweep.trend_slope,
        trend_stderr: sweep.trend_stderr,
        non_increasing: sweep.non_increasing,
        periodic,
    })
}

fn short_return_set(
    case: &ShortReturnCase,
    map: &MapSystem,
    master: u64,
    k: u64,
) -> Result<TargetSet, CliError> {
    if let (Some(lo), Some(hi)) = (case.lo, case.hi) {
        return Ok(TargetSet::Interval {
            lo,
            hi,
            closed_lo: true,
        });
    }
    let center = case.center.unwrap();
    let measure = case.measure.unwrap_or(1.0 / case.index as f64);
    let domain = map.domain();
    let radius = if map.reference_measure() == ReferenceMeasure::Lebesgue {
        measure * domain.length() / 2.0
    } else {
        let s = MeasureSchedule::explicit(vec![measure], case.index);
        let length = case.calibration_length.unwrap_or(case.steps);
        let key = StreamKey::new(master, 1000 + k, Purpose::Calibration);
        calibrate_radii(map, center, &s, case.index, length, key)?[0]
    };
    Ok(TargetSet::Ball {
        center,
        radius,
        domain,
    })
}

fn run_short_returns(
    cfg: &ExperimentConfig,
    out: &mut RunDir,
    workers: usize,
) -> Result<Vec<ShortReturnResult>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let master = cfg.ensemble.master_seed;
    let reports = pool.install(|| {
        cfg.short_returns
            .par_iter()
            .enumerate()
            .map(|(k, case)| -> Result<_, CliError> {
                let map = case.map.build(None)?;
                let set = short_return_set(case, &map, master, k as u64)?;
                let key = StreamKey::new(master, 2000 + k as u64, Purpose::Validation);
                Ok(short_return_mass(
                    &map,
                    &set,
                    case.index,
                    case.exponent,
                    case.steps,
                    key,
                )?)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut results = Vec::new();
    for (case, rep) in cfg.short_returns.iter().zip(reports) {
        let file = format!("short_returns/{}.csv", case.name);
        let rows = (1..=rep.window).map(|r| {
            vec![
                r.to_string(),
                rep.counts[r as usize - 1].to_string(),
                fmt_f(rep.masses[r as usize - 1]),
                fmt_f(rep.stderr(r)),
            ]
        });
        out.write(&file, &csv_bytes(&["r", "count", "mass", "stderr"], rows))?;
        results.push(ShortReturnResult {
            name: case.name.clone(),
            set: rep.set,
            window: rep.window,
            measure_hat: rep.measure_hat,
            r1_mass: rep.masses[0],
            r1_stderr: rep.stderr(1),
            max_mass: rep.max_mass,
            argmax_r: rep.argmax_r,
            eta_hat: rep.eta_hat,
            unresolved: rep.unresolved,
            upper_bound: rep.upper_bound,
            short_returns_not_rare: rep.short_returns_not_rare,
            file,
        });
    }
    Ok(results)
}

pub fn observable(sec: &CorrelationSection, domain: Circle) -> Result<Observable, CliError> {
    Ok(match sec.observable {
        ObservableName::Cosine => {
            let len = domain.length();
            let lo = domain.lo;
            Observable::sample(
                move |x| (2.0 * std::f64::consts::PI * (x - lo) / len).cos(),
                domain,
                4096,
            )?
        }
        ObservableName::Mollified => {
            let set = TargetSet::Interval {
                lo: sec.lo.unwrap(),
                hi: sec.hi.unwrap(),
                closed_lo: true,
            };
            mollify_indicator(&set, sec.slack.unwrap(), domain)?.observable
        }
    })
}

fn run_correlations(
    sec: &CorrelationSection,
    map: &MapSystem,
    master: u64,
    workers: usize,
) -> Result<CorrelationCurve, CliError> {
    let f = observable(sec, map.domain())?;
    let lags: Vec<u64> = (0..=sec.max_lag).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let key = StreamKey::new(master, 0, Purpose::Replicate);
    let mut curve = pool.install(|| {
        estimate_correlation(map, &f, &f, &lags, sec.sample_length, sec.replicates, key)
    })?;
    if let Some(model) = sec.model {
        curve.fit = Some(fit_decay_rate(&curve, model));
    }
    Ok(curve)
}

fn run_profile(
    sec: &ProfileSection,
    built: &Built,
    master: u64,
) -> Result<ProfileResults, CliError> {
    let targets = built.targets.as_ref().unwrap();
    let mut sets = sec
        .indices
        .iter()
        .map(|&i| targets.set(i))
        .collect::<Result<Vec<_>, _>>()?;
    let lsv_alpha = match built.map.kind {
        MapKind::Lsv { alpha } => Some(alpha),
        _ => None,
    };
    if lsv_alpha.is_some() {
        sets.push(TargetSet::Interval {
            lo: 0.5,
            hi: 0.5 + HALF_DENSITY_WIDTH,
            closed_lo: true,
        });
    }
    let key = StreamKey::new(master, 3000, Purpose::Validation);
    let est = measure_profile(&built.map, &sets, sec.samples, key)?;
    let density_half = lsv_alpha.map(|_| est[sec.indices.len()].0 / HALF_DENSITY_WIDTH);
    let mut rows = Vec::with_capacity(sec.indices.len());
    for (k, &n) in sec.indices.iter().enumerate() {
        let (m, h) = est[k];
        let induced = match (lsv_alpha, density_half, &sets[k]) {
            (Some(alpha), Some(dh), TargetSet::Interval { lo, hi, .. })
                if *lo == 0.0 && *hi <= 0.5 =>
            {
                Some(lsv_origin_measure(alpha, *hi, dh)?)
            }
            _ => None,
        };
        rows.push(ProfileRow {
            n,
            measure_hat: m,
            hits: h,
            induced,
            scaled: n as f64 * induced.unwrap_or(m),
        });
    }
    let max = rows.iter().map(|r| r.scaled).fold(0.0, f64::max);
    let min = rows.iter().map(|r| r.scaled).fold(f64::INFINITY, f64::min);
    Ok(ProfileResults {
        samples: sec.samples,
        density_half,
        spread: if min > 0.0 { max / min } else { f64::INFINITY },
        rows,
    })
}

/// Executes `cfg`, writing all outputs and the manifest under `cfg.output.dir`.
/// On failure every file written so far is removed.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = RunDir::create(&cfg.output.dir)?;
    match execute(cfg, workers, &mut out) {
        Ok((first, last)) => {
            let rendered = render(cfg);
            let mut manifest = RunManifest {
                artifact_version: env!("CARGO_PKG_VERSION").to_string(),
                preset: cfg.preset,
                config_hash: sha256_hex(rendered.as_bytes()),
                master_seed: cfg.ensemble.master_seed,
                workers,
                seeding: SEEDING_CONTRACT.to_string(),
                orbits: (0..cfg.ensemble.size)
                    .map(|w| OrbitSeed {
                        orbit: w,
                        stream_id: orbit_key(cfg.ensemble.master_seed, w).stream_id(),
                    })
                    .collect(),
                start_index: first,
                end_index: last,
                files: Vec::new(),
                wall_clock_seconds: start.elapsed().as_secs_f64(),
            };
            out.finish(&mut manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

fn execute(
    cfg: &ExperimentConfig,
    workers: usize,
    out: &mut RunDir,
) -> Result<(u64, u64), CliError> {
    out.write(CONFIG, render(cfg).as_bytes())?;
    let built = cfg.build()?;
    let master = cfg.ensemble.master_seed;
    let traces = run_ensemble(cfg, &built, workers)?;
    for t in &traces {
        out.write(&trace_file(t.orbit_index), &trace_csv(t))?;
    }
    let hits = hit_results(cfg, &built, &traces)?;
    let returns = cfg
        .returns
        .as_ref()
        .map(|sec| run_returns(sec, &built.map, master, out, workers))
        .transpose()?;
    let short_returns = run_short_returns(cfg, out, workers)?;
    let correlations = cfg
        .correlations
        .as_ref()
        .map(|sec| run_correlations(sec, &built.map, master, workers))
        .transpose()?;
    if let Some(c) = &correlations {
        let rows = c
            .lags
            .iter()
            .zip(&c.estimates)
            .zip(&c.stderrs)
            .map(|((l, e), s)| vec![l.to_string(), fmt_f(*e), fmt_f(*s)]);
        out.write(
            "correlations.csv",
            &csv_bytes(&["lag", "estimate", "stderr"], rows),
        )?;
    }
    let profile = cfg
        .profile
        .as_ref()
        .map(|sec| run_profile(sec, &built, master))
        .transpose()?;
    let b_tail = match (&built.sequences, cfg.checks.b_tail_from) {
        (Some(seq), Some(from)) => {
            let to = seq.len() as u64;
            let lebesgue: f64 = ((from + 1) as usize..=seq.len()).map(|i| seq.b_at(i)).sum();
            Some(BTail {
                from,
                to,
                normalized: lebesgue / 2.0,
                lebesgue,
            })
        }
        _ => None,
    };
    let results = Results {
        preset: cfg.preset,
        hits,
        returns,
        short_returns,
        correlations,
        profile,
        b_tail,
    };
    out.write(
        ENSEMBLE,
        serde_json::to_string_pretty(&results)
            .expect("results serialize")
            .as_bytes(),
    )?;
    let span = built
        .targets
        .as_ref()
        .filter(|_| cfg.ensemble.size > 0)
        .map_or((0, 0), |t| (t.first_index(), cfg.ensemble.orbit_length));
    Ok(span)
}
