//! Experiment orchestration for shrinking-target numerics: configuration,
//! presets, deterministic parallel runs, manifests and reports.

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod report;
pub mod runner;

use std::path::Path;

pub use config::{ExperimentConfig, Preset};
pub use error::CliError;
pub use output::RunManifest;
pub use report::{report, Report};
pub use runner::{run_experiment, Results};

/// A preset name, or the path of a TOML config file.
pub fn load_config(source: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let base = match source.parse::<Preset>() {
        Ok(p) => presets::preset(p),
        Err(_) if Path::new(source).exists() => {
            let text = std::fs::read_to_string(source).map_err(|e| CliError::io(source, e))?;
            config::parse(&text)?
        }
        Err(e) => return Err(e),
    };
    config::apply_overrides(&base, overrides)
}
