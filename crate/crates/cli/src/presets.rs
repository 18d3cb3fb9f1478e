//! Built-in experiments, each with its acceptance thresholds.

use bclab_core::correlations::DecayModel;

use crate::config::*;

/// A generic point for the doubling map: irrational, far from short periodic orbits.
pub const GOLDEN_CENTER: f64 = 0.618_033_988_749_894_9;

pub fn description(p: Preset) -> &'static str {
    match p {
        Preset::Thm1 => "doubling map, balls of measure i^-1/2 with calibrated radii: S_n/E_n, variance ratio, error-term monitor",
        Preset::Thm2 => "doubling map, balls of measure (log i)/i: ratio and unbounded growth of S_n",
        Preset::Thm3Returns => "doubling map return times: K-S distance to the exponential law, Kac mean, periodic-centre control",
        Preset::Thm4Short => "short-return masses (generic centre, analytic identity, intermittent negative control) and balls of measure 1/(i log i)",
        Preset::KimCounterexample => "intermittent map, intervals [0, n^-1/(1-alpha)): hits stop although n*mu(A_n) stays bounded below",
        Preset::ChmvCounterexample => "odd circle map, arcs (-1, a_-n): divergent measures, hits stop; tail of the b_n series",
        Preset::Prop1Expanding => "doubling map, balls of measure 1/i, plus decay of correlations of a mollified indicator",
        Preset::IidBaseline => "independent events with p_i = i^-1/2: the estimator against the classical lemma",
        Preset::Custom => "user-supplied configuration file",
    }
}

fn ensemble(size: u64, orbit_length: u64, master_seed: u64) -> EnsembleSection {
    EnsembleSection {
        size,
        orbit_length,
        master_seed,
        burn_in: 10_000,
    }
}

fn output(p: Preset) -> OutputSection {
    OutputSection {
        dir: format!("runs/{}", p.name()),
    }
}

fn schedule(kind: ScheduleName, exponent: Option<f64>) -> Option<ScheduleSection> {
    Some(ScheduleSection {
        kind,
        exponent,
        offset: None,
    })
}

fn ball(construction: TargetName, center: f64) -> Option<TargetSection> {
    Some(TargetSection {
        construction,
        center: Some(center),
        calibration_length: None,
    })
}

pub fn preset(p: Preset) -> ExperimentConfig {
    let base = ExperimentConfig {
        preset: p,
        map: MapSection::doubling(),
        schedule: None,
        targets: None,
        ensemble: ensemble(0, 1, 1),
        output: output(p),
        checks: Checks::default(),
        returns: None,
        short_returns: Vec::new(),
        correlations: None,
        profile: None,
    };
    match p {
        Preset::Thm1 => ExperimentConfig {
            schedule: schedule(ScheduleName::Power, Some(0.5)),
            targets: Some(TargetSection {
                construction: TargetName::CalibratedBall,
                center: Some(GOLDEN_CENTER),
                calibration_length: Some(10_000_000),
            }),
            ensemble: ensemble(64, 1_000_000, 101),
            checks: Checks {
                median_ratio: Some([0.95, 1.05]),
                variance_ratio_max: Some(0.05),
                sprindzuk_c_max: Some(5.0),
                sprindzuk_epsilon: Some(0.1),
                ..Checks::default()
            },
            ..base
        },
        Preset::Thm2 => ExperimentConfig {
            schedule: schedule(ScheduleName::LogOverI, None),
            targets: ball(TargetName::LebesgueBall, GOLDEN_CENTER),
            ensemble: ensemble(16, 100_000_000, 102),
            checks: Checks {
                median_ratio: Some([0.6, 1.4]),
                growth_fraction_min: Some(0.9),
                ..Checks::default()
            },
            ..base
        },
        Preset::Thm3Returns => ExperimentConfig {
            returns: Some(ReturnsSection {
                center: GOLDEN_CENTER,
                radii: (8..=14).map(|k| 2f64.powi(-k)).collect(),
                samples: 10_000,
                budget_factor: 4.0,
                periodic_center: Some(0.0),
                ks_max: Some(0.08),
                kac_band: Some([0.95, 1.05]),
                periodic_small_t_min: Some(0.2),
            }),
            ensemble: ensemble(0, 1, 103),
            ..base
        },
        Preset::Thm4Short => ExperimentConfig {
            schedule: schedule(ScheduleName::ILogI, None),
            targets: ball(TargetName::LebesgueBall, GOLDEN_CENTER),
            ensemble: ensemble(16, 100_000_000, 104),
            checks: Checks {
                growth_fraction_min: Some(0.9),
                ..Checks::default()
            },
            short_returns: vec![
                ShortReturnCase {
                    name: "dyadic_identity".into(),
                    map: MapSection::doubling(),
                    lo: Some(0.0),
                    hi: Some(2f64.powi(-10)),
                    center: None,
                    measure: None,
                    index: 1000,
                    exponent: 1.0,
                    steps: 10_000_000,
                    calibration_length: None,
                    expect: None,
                    expected_r1: Some(2f64.powi(-11)),
                },
                ShortReturnCase {
                    name: "generic_center".into(),
                    map: MapSection::doubling(),
                    lo: None,
                    hi: None,
                    center: Some(GOLDEN_CENTER),
                    measure: None,
                    index: 1000,
                    exponent: 5.0,
                    steps: 10_000_000,
                    calibration_length: None,
                    expect: Some(Expectation::Rare),
                    expected_r1: None,
                },
                ShortReturnCase {
                    name: "indifferent_fixed_point".into(),
                    map: MapSection::lsv(0.6),
                    lo: None,
                    hi: None,
                    center: Some(0.0),
                    measure: None,
                    index: 1000,
                    exponent: 5.0,
                    steps: 10_000_000,
                    calibration_length: Some(1_000_000),
                    expect: Some(Expectation::NotRare),
                    expected_r1: None,
                },
            ],
            ..base
        },
        Preset::KimCounterexample => ExperimentConfig {
            map: MapSection::lsv(0.6),
            targets: Some(TargetSection {
                construction: TargetName::Kim,
                center: None,
                calibration_length: None,
            }),
            ensemble: ensemble(64, 10_000_000, 105),
            checks: Checks {
                plateau_after: Some(100_000),
                plateau_fraction_min: Some(0.9),
                profile_spread_max: Some(2.0),
                ..Checks::default()
            },
            profile: Some(ProfileSection {
                indices: vec![100, 1_000, 10_000, 100_000],
                samples: 20_000_000,
            }),
            ..base
        },
        Preset::ChmvCounterexample => ExperimentConfig {
            map: MapSection::chmv(3.0),
            targets: Some(TargetSection {
                construction: TargetName::Chmv,
                center: None,
                calibration_length: None,
            }),
            ensemble: ensemble(64, 10_000_000, 106),
            checks: Checks {
                expected_min: Some(50.0),
                plateau_after: Some(1_000_000),
                plateau_fraction_min: Some(0.9),
                b_tail_from: Some(10_000),
                b_tail_max: Some(1e-3),
                ..Checks::default()
            },
            ..base
        },
        Preset::Prop1Expanding => ExperimentConfig {
            schedule: schedule(ScheduleName::Harmonic, None),
            targets: ball(TargetName::LebesgueBall, GOLDEN_CENTER),
            ensemble: ensemble(64, 1_000_000, 107),
            checks: Checks {
                median_ratio: Some([0.85, 1.15]),
                ..Checks::default()
            },
            correlations: Some(CorrelationSection {
                observable: ObservableName::Mollified,
                lo: Some(0.2),
                hi: Some(0.4),
                slack: Some(0.001),
                max_lag: 15,
                sample_length: 1_000_000,
                replicates: 8,
                model: Some(DecayModel::Exp),
                lag0: None,
                null_sigmas: None,
                rate_band: Some([0.0, 0.9]),
            }),
            ..base
        },
        Preset::IidBaseline => ExperimentConfig {
            map: MapSection {
                kind: MapName::IidControl,
                alpha: None,
                gamma: None,
            },
            schedule: schedule(ScheduleName::Power, Some(0.5)),
            targets: Some(TargetSection {
                construction: TargetName::Nominal,
                center: None,
                calibration_length: None,
            }),
            ensemble: ensemble(256, 1_000_000, 108),
            checks: Checks {
                median_ratio: Some([0.98, 1.02]),
                variance_closed_form_sigmas: Some(3.0),
                ..Checks::default()
            },
            ..base
        },
        Preset::Custom => ExperimentConfig {
            schedule: schedule(ScheduleName::Power, Some(0.5)),
            targets: ball(TargetName::LebesgueBall, GOLDEN_CENTER),
            ensemble: ensemble(8, 100_000, 1),
            checks: Checks {
                median_ratio: Some([0.8, 1.2]),
                ..Checks::default()
            },
            ..base
        },
    }
}
