use std::path::PathBuf;
use std::process::ExitCode;

use bclab::config::{render, Preset};
use bclab::presets::description;
use bclab::runner::resolve_workers;
use bclab::{load_config, report, run_experiment, CliError};
use clap::{Parser, Subcommand};

/// Shrinking-target and Borel-Cantelli experiments on interval maps.
///
/// Exit status: 0 when every embedded check passes, 1 when any fails,
/// 2 on configuration errors, 3 on other errors.
#[derive(Parser)]
#[command(name = "bclab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset (or a config file) and report on it.
    Run {
        /// Preset name or path to a TOML config.
        preset: String,
        /// Override a config entry, e.g. `--set ensemble.size=8`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads; BCLAB_WORKERS takes precedence.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Verify a finished run and evaluate its checks.
    Report { dir: PathBuf },
    /// List the built-in presets.
    ListPresets,
    /// Parse and validate a config without running it; prints the resolved config.
    ValidateConfig {
        preset: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn print_report(dir: &std::path::Path) -> Result<bool, CliError> {
    let rep = report(dir)?;
    for l in &rep.lines {
        println!("{l}");
    }
    Ok(rep.all_passed())
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run {
            preset,
            overrides,
            workers,
        } => {
            let cfg = load_config(&preset, &overrides)?;
            cfg.validate()?;
            let workers = resolve_workers(workers)?;
            run_experiment(&cfg, workers)?;
            print_report(cfg.output.dir.as_ref())
        }
        Command::Report { dir } => print_report(&dir),
        Command::ListPresets => {
            for p in Preset::ALL {
                println!("{:<20} {}", p.name(), description(p));
            }
            Ok(true)
        }
        Command::ValidateConfig { preset, overrides } => {
            let cfg = load_config(&preset, &overrides)?;
            cfg.validate()?;
            print!("{}", render(&cfg));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
