//! Experiment configuration: a TOML document with one table per concern.
//!
//! Every run is fully determined by its config; `render` and `parse`
//! round-trip exactly.

use std::fmt;
use std::str::FromStr;

use bclab_core::correlations::DecayModel;
use bclab_core::maps::{chmv_backward_sequence, BackwardSequences, MapSystem};
use bclab_core::rng::MAX_STREAM_INDEX;
use bclab_core::targets::{calibrate_radii, MeasureSchedule, TargetSchedule, DEFAULT_BURN_IN};
use bclab_core::{Purpose, StreamKey};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Thm1,
    Thm2,
    Thm3Returns,
    Thm4Short,
    KimCounterexample,
    ChmvCounterexample,
    Prop1Expanding,
    IidBaseline,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Thm1,
        Preset::Thm2,
        Preset::Thm3Returns,
        Preset::Thm4Short,
        Preset::KimCounterexample,
        Preset::ChmvCounterexample,
        Preset::Prop1Expanding,
        Preset::IidBaseline,
        Preset::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Thm1 => "thm1",
            Preset::Thm2 => "thm2",
            Preset::Thm3Returns => "thm3_returns",
            Preset::Thm4Short => "thm4_short",
            Preset::KimCounterexample => "kim_counterexample",
            Preset::ChmvCounterexample => "chmv_counterexample",
            Preset::Prop1Expanding => "prop1_expanding",
            Preset::IidBaseline => "iid_baseline",
            Preset::Custom => "custom",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown preset `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapName {
    Doubling,
    Lsv,
    Chmv,
    IidControl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSection {
    pub kind: MapName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl MapSection {
    pub fn doubling() -> Self {
        Self {
            kind: MapName::Doubling,
            alpha: None,
            gamma: None,
        }
    }

    pub fn lsv(alpha: f64) -> Self {
        Self {
            kind: MapName::Lsv,
            alpha: Some(alpha),
            gamma: None,
        }
    }

    pub fn chmv(gamma: f64) -> Self {
        Self {
            kind: MapName::Chmv,
            alpha: None,
            gamma: Some(gamma),
        }
    }

    /// The control process needs the schedule, so it is built elsewhere.
    pub fn build(&self, schedule: Option<&MeasureSchedule>) -> Result<MapSystem, CliError> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| CliError::Config(format!("map `{:?}` needs `{name}`", self.kind)))
        };
        let unused = |v: Option<f64>, name: &str| match v {
            Some(_) => Err(CliError::Config(format!(
                "`map.{name}` does not apply to map `{:?}`",
                self.kind
            ))),
            None => Ok(()),
        };
        if self.kind != MapName::Lsv {
            unused(self.alpha, "alpha")?;
        }
        if self.kind != MapName::Chmv {
            unused(self.gamma, "gamma")?;
        }
        Ok(match self.kind {
            MapName::Doubling => MapSystem::doubling(),
            MapName::Lsv => MapSystem::lsv(need(self.alpha, "alpha")?)?,
            MapName::Chmv => MapSystem::chmv(need(self.gamma, "gamma")?)?,
            MapName::IidControl => {
                let s = schedule
                    .ok_or_else(|| CliError::Config("iid_control needs a [schedule]".into()))?;
                MapSystem::iid_control(s.clone())?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleName {
    Power,
    LogOverI,
    Harmonic,
    ILogI,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u64>,
}

impl ScheduleSection {
    pub fn build(&self) -> Result<MeasureSchedule, CliError> {
        if self.kind != ScheduleName::Power && self.exponent.is_some() {
            return Err(CliError::Config(format!(
                "`schedule.exponent` does not apply to schedule `{:?}`",
                self.kind
            )));
        }
        let s = match self.kind {
            ScheduleName::Power => MeasureSchedule::power(
                self.exponent
                    .ok_or_else(|| CliError::Config("power schedule needs `exponent`".into()))?,
            ),
            ScheduleName::LogOverI => MeasureSchedule::log_over_i(),
            ScheduleName::Harmonic => MeasureSchedule::harmonic(),
            ScheduleName::ILogI => MeasureSchedule::i_log_i(),
        };
        let s = match self.offset {
            Some(o) => s.with_offset(o),
            None => s,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    /// Radii calibrated on a separate orbit to the schedule's measures.
    CalibratedBall,
    /// Exact radii for Lebesgue-invariant maps.
    LebesgueBall,
    /// `[0, n^{-1/(1-α)})` on the intermittent map.
    Kim,
    /// `(-1, a_{-n})` on the odd circle map.
    Chmv,
    /// Measures only, for the control process.
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub construction: TargetName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_length: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub size: u64,
    pub orbit_length: u64,
    pub master_seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
}

fn default_burn_in() -> u64 {
    DEFAULT_BURN_IN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

/// Acceptance thresholds; absent entries are not checked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checks {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_ratio: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_ratio_max: Option<f64>,
    /// Variance ratio within this many standard errors of the independent
    /// closed form `Σ p(1-p) / E_n²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_closed_form_sigmas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sprindzuk_c_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sprindzuk_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_after: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_fraction_min: Option<f64>,
    /// Fraction of orbits whose hit count strictly increases across the
    /// last three checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_fraction_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_tail_from: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_tail_max: Option<f64>,
    /// Largest allowed max/min spread of `n · μ̂(B_n)` over the profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_spread_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnsSection {
    pub center: f64,
    pub radii: Vec<f64>,
    pub samples: usize,
    pub budget_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic_center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kac_band: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic_small_t_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Rare,
    NotRare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortReturnCase {
    pub name: String,
    pub map: MapSection,
    /// Interval `[lo, hi)` when both are set, otherwise a ball of measure
    /// `measure` (default `1/index`) around `center`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<f64>,
    pub index: u64,
    pub exponent: f64,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_length: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expectation>,
    /// Closed-form `μ(B ∩ T^{-1}B)` to match within 3 standard errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_r1: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    /// `cos(2πx)` on the unit circle.
    Cosine,
    /// Mollified indicator of `[lo, hi)`.
    Mollified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSection {
    pub observable: ObservableName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
    pub max_lag: u64,
    pub sample_length: u64,
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<DecayModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag0: Option<[f64; 2]>,
    /// Lags `>= 1` within this many standard errors of zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_sigmas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_band: Option<[f64; 2]>,
}

/// Estimates `n · μ̂(B_n)` for the configured targets at a few indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub indices: Vec<u64>,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub map: MapSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<TargetSection>,
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub returns: Option<ReturnsSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub short_returns: Vec<ShortReturnCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlations: Option<CorrelationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn render(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("config serializes")
}

/// Applies `section.key=value` overrides; values are read as TOML literals
/// and fall back to bare strings.
pub fn apply_overrides(
    config: &ExperimentConfig,
    overrides: &[String],
) -> Result<ExperimentConfig, CliError> {
    if overrides.is_empty() {
        return Ok(config.clone());
    }
    let mut doc = toml::Value::try_from(config).map_err(|e| CliError::Config(e.to_string()))?;
    for o in overrides {
        let (path, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
        let keys: Vec<&str> = path.trim().split('.').collect();
        let mut slot = &mut doc;
        for (depth, key) in keys.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| CliError::Config(format!("`{path}` does not name a table entry")))?;
            if depth + 1 == keys.len() {
                table.insert(key.to_string(), value.clone());
                break;
            }
            slot = table
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    doc.try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
}

/// Map, schedule and targets built from a validated config.
#[derive(Debug, Clone)]
pub struct Built {
    pub map: MapSystem,
    pub schedule: Option<MeasureSchedule>,
    pub targets: Option<TargetSchedule>,
    pub sequences: Option<BackwardSequences>,
}

impl ExperimentConfig {
    /// Builds everything that does not require running orbits, surfacing
    /// parameter errors before any compute.
    pub fn validate(&self) -> Result<(), CliError> {
        let schedule = self
            .schedule
            .as_ref()
            .map(ScheduleSection::build)
            .transpose()?;
        let map = self.map.build(schedule.as_ref())?;
        if let Some(t) = &self.targets {
            let needs_schedule = matches!(
                t.construction,
                TargetName::CalibratedBall | TargetName::LebesgueBall | TargetName::Nominal
            );
            if needs_schedule && schedule.is_none() {
                return Err(CliError::Config(format!(
                    "{:?} targets need a [schedule]",
                    t.construction
                )));
            }
            let ok = match t.construction {
                TargetName::CalibratedBall | TargetName::LebesgueBall => {
                    map.is_deterministic() && t.center.is_some()
                }
                TargetName::Kim => self.map.kind == MapName::Lsv,
                TargetName::Chmv => self.map.kind == MapName::Chmv,
                TargetName::Nominal => !map.is_deterministic(),
            };
            if !ok {
                return Err(CliError::Config(format!(
                    "{:?} targets do not fit map `{}` (ball targets also need `center`)",
                    t.construction,
                    map.name()
                )));
            }
            if t.construction == TargetName::LebesgueBall {
                TargetSchedule::lebesgue_ball(
                    &map,
                    t.center.unwrap_or(0.0),
                    schedule.clone().unwrap(),
                )?;
            }
        } else if self.ensemble.size > 0 {
            return Err(CliError::Config(
                "a hit ensemble needs a [targets] table".into(),
            ));
        }
        if self.ensemble.orbit_length == 0 && self.ensemble.size > 0 {
            return Err(CliError::Config("orbit_length must be positive".into()));
        }
        if let Some(r) = &self.returns {
            if r.radii.is_empty() || r.radii.windows(2).any(|w| w[1] >= w[0]) {
                return Err(CliError::Config(
                    "return radii must be non-empty and decreasing".into(),
                ));
            }
            if !map.is_deterministic() {
                return Err(CliError::Config(
                    "return times need a deterministic map".into(),
                ));
            }
        }
        for c in &self.short_returns {
            c.map.build(None)?;
            if c.lo.is_none() != c.hi.is_none() || (c.lo.is_none() && c.center.is_none()) {
                return Err(CliError::Config(format!(
                    "short-return case `{}` needs either lo and hi, or center",
                    c.name
                )));
            }
            bclab_core::returns::short_return_window(c.index, c.exponent)?;
        }
        if let Some(c) = &self.correlations {
            if c.observable == ObservableName::Mollified
                && (c.lo.is_none() || c.hi.is_none() || c.slack.is_none())
            {
                return Err(CliError::Config(
                    "mollified observable needs lo, hi and slack".into(),
                ));
            }
            if !map.is_deterministic() {
                return Err(CliError::Config(
                    "correlations need a deterministic map".into(),
                ));
            }
        }
        if self.profile.is_some() && self.targets.is_none() {
            return Err(CliError::Config(
                "a measure profile needs a [targets] table".into(),
            ));
        }
        Ok(())
    }

    /// Builds the map and target sequence. Calibrated radii are computed here,
    /// so this can run orbits.
    pub fn build(&self) -> Result<Built, CliError> {
        self.validate()?;
        let schedule = self
            .schedule
            .as_ref()
            .map(ScheduleSection::build)
            .transpose()?;
        let map = self.map.build(schedule.as_ref())?;
        let n = self.ensemble.orbit_length;
        let mut sequences = None;
        let targets = match &self.targets {
            None => None,
            Some(t) => Some(match t.construction {
                TargetName::CalibratedBall => {
                    let s = schedule.clone().unwrap();
                    let center = t.center.unwrap();
                    let length = t.calibration_length.unwrap_or(10 * n.max(1));
                    let key = StreamKey::new(
                        self.ensemble.master_seed,
                        MAX_STREAM_INDEX,
                        Purpose::Calibration,
                    );
                    let radii = calibrate_radii(&map, center, &s, n, length, key)?;
                    TargetSchedule::calibrated_ball(&map, center, s, radii)
                }
                TargetName::LebesgueBall => TargetSchedule::lebesgue_ball(
                    &map,
                    t.center.unwrap(),
                    schedule.clone().unwrap(),
                )?,
                TargetName::Kim => TargetSchedule::kim(self.map.alpha.unwrap())?,
                TargetName::Chmv => {
                    let seq = chmv_backward_sequence(self.map.gamma.unwrap(), n.max(1) as usize)?;
                    let t = TargetSchedule::chmv(&seq);
                    sequences = Some(seq);
                    t
                }
                TargetName::Nominal => TargetSchedule::nominal(schedule.clone().unwrap())?,
            }),
        };
        Ok(Built {
            map,
            schedule,
            targets,
            sequences,
        })
    }
}
