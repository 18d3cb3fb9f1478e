//! Reads a finished run, evaluates the embedded thresholds and writes a
//! plot-ready CSV bundle under `plots/`.

use std::fs;
use std::path::Path;

use bclab_core::returns::Ecdf;
use serde::{Deserialize, Serialize};

use crate::config::{parse, Expectation, ExperimentConfig};
use crate::error::CliError;
use crate::output::{csv_bytes, RunManifest, CONFIG, ENSEMBLE};
use crate::runner::Results;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub detail: String,
    pub passed: bool,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            detail,
            passed,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {}: {}",
            self.name,
            self.detail,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub lines: Vec<String>,
    pub checks: Vec<CheckOutcome>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn within(x: f64, band: [f64; 2]) -> bool {
    x >= band[0] && x <= band[1]
}

/// Compares the results of a run with the thresholds in its config.
pub fn evaluate(cfg: &ExperimentConfig, r: &Results) -> Vec<CheckOutcome> {
    let c = &cfg.checks;
    let mut out = Vec::new();
    if let Some(h) = &r.hits {
        if let Some(band) = c.median_ratio {
            let tol = (band[1] - band[0]) / 2.0;
            out.push(CheckOutcome::new(
                format!("SBC ratio median {:.2}±{tol:.2}", (band[0] + band[1]) / 2.0),
                within(h.median_ratio, band),
                format!(
                    "median S_n/E_n = {:.4} over {} orbits at n = {}",
                    h.median_ratio, h.orbits, h.n
                ),
            ));
        }
        if let (Some(max), Some(v)) = (c.variance_ratio_max, &h.variance) {
            out.push(CheckOutcome::new(
                "variance ratio",
                v.value < max,
                format!(
                    "E(S_n-E_n)^2/E_n^2 = {:.3e} ± {:.1e} (< {max})",
                    v.value, v.stderr
                ),
            ));
        }
        if let (Some(sig), Some(v), Some(cf)) = (
            c.variance_closed_form_sigmas,
            &h.variance,
            h.closed_form_variance,
        ) {
            out.push(CheckOutcome::new(
                "variance ratio vs closed form",
                (v.value - cf).abs() <= sig * v.stderr,
                format!(
                    "{:.4e} vs {cf:.4e}, |diff| = {:.2} standard errors",
                    v.value,
                    (v.value - cf).abs() / v.stderr
                ),
            ));
        }
        if let Some(s) = &h.sprindzuk {
            out.push(CheckOutcome::new(
                "error-term monitor",
                s.passed,
                format!(
                    "fitted C = {:.3} (<= {}), growth slope {:.3}{}",
                    s.fitted_c,
                    s.c_max,
                    s.growth_slope,
                    if s.growing { " (growing)" } else { "" }
                ),
            ));
        }
        if let Some(min) = c.plateau_fraction_min {
            out.push(CheckOutcome::new(
                "plateau fraction",
                h.plateau_fraction >= min,
                format!(
                    "{:.3} of orbits without hits in ({}, {}] (>= {min})",
                    h.plateau_fraction, h.plateau_after, h.n
                ),
            ));
        }
        if let Some(min) = c.growth_fraction_min {
            out.push(CheckOutcome::new(
                "unbounded growth",
                h.growth_fraction >= min,
                format!(
                    "{:.3} of orbits with S increasing over the last three checkpoints (>= {min})",
                    h.growth_fraction
                ),
            ));
        }
        if let Some(min) = c.expected_min {
            out.push(CheckOutcome::new(
                "divergent expectation",
                h.expected_n > min,
                format!("E_n = {:.2} at n = {} (> {min})", h.expected_n, h.n),
            ));
        }
    }
    if let (Some(t), Some(max)) = (&r.b_tail, c.b_tail_max) {
        out.push(CheckOutcome::new(
            "b_n tail",
            t.normalized < max,
            format!(
                "sum over ({}, {}] = {:.3e} normalized ({:.3e} Lebesgue) (< {max})",
                t.from, t.to, t.normalized, t.lebesgue
            ),
        ));
    }
    if let (Some(p), Some(max)) = (&r.profile, c.profile_spread_max) {
        let vals: Vec<String> = p.rows.iter().map(|r| format!("{:.3}", r.scaled)).collect();
        out.push(CheckOutcome::new(
            "n·μ(A_n) band",
            p.spread.is_finite() && p.spread <= max,
            format!(
                "n·μ̂(A_n) = [{}] ({}), max/min = {:.3} (<= {max})",
                vals.join(", "),
                if p.density_half.is_some() {
                    "first-return estimate"
                } else {
                    "time average"
                },
                p.spread
            ),
        ));
    }
    if let (Some(ret), Some(sec)) = (&r.returns, &cfg.returns) {
        if let (Some(max), Some(last)) = (sec.ks_max, ret.radii.last()) {
            out.push(CheckOutcome::new(
                "exponential return law",
                last.report.ks < max && !last.partial,
                format!(
                    "K-S = {:.4} at radius {:e} with {} returns (< {max})",
                    last.report.ks, last.radius, last.report.samples
                ),
            ));
        }
        if let Some(band) = sec.kac_band {
            let products: Vec<f64> = ret.radii.iter().map(|x| x.kac.product).collect();
            out.push(CheckOutcome::new(
                "Kac mean",
                products.iter().all(|&p| within(p, band)),
                format!(
                    "mean(τ)·μ(B) = [{}] in [{}, {}]",
                    products
                        .iter()
                        .map(|p| format!("{p:.4}"))
                        .collect::<Vec<_>>()
                        .join(", "),
                    band[0],
                    band[1]
                ),
            ));
        }
        if let (Some(min), Some(p)) = (sec.periodic_small_t_min, &ret.periodic) {
            out.push(CheckOutcome::new(
                "periodic-centre control",
                p.report.small_t_mass > min,
                format!(
                    "F̂({}) = {:.3} (> {min})",
                    p.report.t_star, p.report.small_t_mass
                ),
            ));
        }
    }
    for (case, res) in cfg.short_returns.iter().zip(&r.short_returns) {
        if let Some(m) = case.expected_r1 {
            out.push(CheckOutcome::new(
                format!("short returns {}", case.name),
                (res.r1_mass - m).abs() <= 3.0 * res.r1_stderr,
                format!(
                    "μ(B∩T^-1 B) = {:.4e} ± {:.1e} vs {m:.4e}",
                    res.r1_mass, res.r1_stderr
                ),
            ));
        }
        match case.expect {
            Some(Expectation::Rare) => out.push(CheckOutcome::new(
                format!("short returns {}", case.name),
                res.eta_hat > 0.0 && !res.short_returns_not_rare,
                format!(
                    "η̂ = {:.3} (> 0), max mass {:.3e} at r = {}",
                    res.eta_hat, res.max_mass, res.argmax_r
                ),
            )),
            Some(Expectation::NotRare) => out.push(CheckOutcome::new(
                format!("short returns {}", case.name),
                res.short_returns_not_rare,
                format!(
                    "η̂ = {:.3}, flag {} (max mass {:.3e} at r = {}, μ̂(B) = {:.3e})",
                    res.eta_hat,
                    if res.short_returns_not_rare {
                        "set"
                    } else {
                        "unset"
                    },
                    res.max_mass,
                    res.argmax_r,
                    res.measure_hat
                ),
            )),
            None => {}
        }
    }
    if let (Some(curve), Some(sec)) = (&r.correlations, &cfg.correlations) {
        if let Some(band) = sec.lag0 {
            out.push(CheckOutcome::new(
                "correlation lag 0",
                within(curve.estimates[0], band),
                format!(
                    "ĉ(0) = {:.5} in [{}, {}]",
                    curve.estimates[0], band[0], band[1]
                ),
            ));
        }
        if let Some(sig) = sec.null_sigmas {
            let worst = (1..curve.lags.len())
                .map(|k| curve.estimates[k].abs() / curve.stderrs[k])
                .fold(0.0, f64::max);
            out.push(CheckOutcome::new(
                "correlations vanish",
                worst <= sig,
                format!("max |ĉ(m)|/se over lags >= 1 is {worst:.2} (<= {sig})"),
            ));
        }
        if let Some(band) = sec.rate_band {
            let fit = curve.fit.as_ref().and_then(|f| f.fitted());
            out.push(CheckOutcome::new(
                "decay rate",
                fit.is_some_and(|f| within(f.rate, band)),
                match fit {
                    Some(f) => format!(
                        "{:?} rate {:.4} from {} lags in [{}, {}]",
                        f.model, f.rate, f.lags_used, band[0], band[1]
                    ),
                    None => "fit unavailable".to_string(),
                },
            ));
        }
    }
    out
}

fn read(dir: &Path, rel: &str) -> Result<String, CliError> {
    let path = dir.join(rel);
    fs::read_to_string(&path).map_err(|e| CliError::io(path, e))
}

fn write_plot(dir: &Path, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
    let path = dir.join("plots").join(rel);
    fs::create_dir_all(path.parent().unwrap()).map_err(|e| CliError::io(&path, e))?;
    fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
}

fn return_cdf(dir: &Path, rel: &str) -> Result<Vec<u8>, CliError> {
    let path = dir.join(rel);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| CliError::Malformed {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let mut t = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Malformed {
            path: path.clone(),
            message: e.to_string(),
        })?;
        t.push(rec[1].parse::<f64>().map_err(|e| CliError::Malformed {
            path: path.clone(),
            message: e.to_string(),
        })?);
    }
    let steps = Ecdf::new(&t).steps();
    Ok(csv_bytes(
        &["t", "ecdf", "exponential"],
        steps.into_iter().map(|(x, f)| {
            vec![
                format!("{x:?}"),
                format!("{f:?}"),
                format!("{:?}", bclab_core::returns::exponential_cdf(x)),
            ]
        }),
    ))
}

/// Verifies the manifest, evaluates the checks and writes the plot bundle.
pub fn report(dir: &Path) -> Result<Report, CliError> {
    let manifest = RunManifest::read(dir)?;
    let gaps = manifest.verify(dir);
    if !gaps.is_empty() {
        return Err(CliError::Missing(gaps));
    }
    let cfg = parse(&read(dir, CONFIG)?)?;
    let results: Results =
        serde_json::from_str(&read(dir, ENSEMBLE)?).map_err(|e| CliError::Malformed {
            path: dir.join(ENSEMBLE),
            message: e.to_string(),
        })?;
    let mut lines = vec![format!(
        "preset {} (seed {}, {} workers, {:.1} s)",
        manifest.preset, manifest.master_seed, manifest.workers, manifest.wall_clock_seconds
    )];
    if results.is_empty() {
        lines.push("nothing to report".to_string());
        return Ok(Report {
            lines,
            checks: Vec::new(),
        });
    }
    if let Some(h) = &results.hits {
        lines.push(format!(
            "{} orbits, n = {}, E_n = {:.3}, median S_n/E_n = {:.4}, plateau fraction {:.3}",
            h.orbits, h.n, h.expected_n, h.median_ratio, h.plateau_fraction
        ));
        let rows = h
            .ratio_series
            .iter()
            .map(|(n, e, r)| vec![n.to_string(), format!("{e:?}"), format!("{r:?}")]);
        write_plot(
            dir,
            "ratio_series.csv",
            &csv_bytes(&["n", "E", "median_ratio"], rows),
        )?;
    }
    if let Some(ret) = &results.returns {
        for (k, p) in ret.radii.iter().enumerate() {
            write_plot(
                dir,
                &format!("return_cdf_{k:02}.csv"),
                &return_cdf(dir, &p.file)?,
            )?;
        }
        if let Some(p) = &ret.periodic {
            write_plot(dir, "return_cdf_periodic.csv", &return_cdf(dir, &p.file)?)?;
        }
        lines.push(format!(
            "return law: K-S trend slope {:.4} ± {:.4} per log(1/μ)",
            ret.trend_slope, ret.trend_stderr
        ));
    }
    if let Some(c) = &results.correlations {
        let rows = c
            .lags
            .iter()
            .zip(&c.estimates)
            .zip(&c.stderrs)
            .map(|((l, e), s)| vec![l.to_string(), format!("{e:?}"), format!("{s:?}")]);
        write_plot(
            dir,
            "correlations.csv",
            &csv_bytes(&["lag", "estimate", "stderr"], rows),
        )?;
    }
    let checks = evaluate(&cfg, &results);
    lines.extend(checks.iter().map(CheckOutcome::line));
    Ok(Report { lines, checks })
}
