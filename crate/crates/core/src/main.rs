use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tgh_sg::pipeline::{self, PipelineConfig};
use tgh_sg::{Result, SgError};

/// Stochastic generator for gridded ensemble wind fields.
#[derive(Parser)]
#[command(name = "tgh-sg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply to anything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set p_max=2 --set wpd.rho=1.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-site Tukey g-and-h autoregressions and residuals.
    FitStep1(Common),
    /// Longitudinal evolutionary spectrum per band.
    FitStep2(Common),
    /// Latitudinal autoregression on spectral coefficients.
    FitStep3(Common),
    /// Draw surrogate runs from the fitted model.
    Generate(Common),
    /// Moment tests, BIC maps, contrast variances and likelihood deltas.
    Diagnose(Common),
    /// Wind power density at hub height for one site and month.
    Wpd(Common),
    /// Write a synthetic ensemble with known parameters.
    Synthetic(Common),
    /// Print the effective configuration as JSON.
    ShowConfig(Common),
}

fn load(common: &Common) -> Result<PipelineConfig> {
    let base = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let config = base.with_overrides(&common.overrides)?;
    if config.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build_global()
            .map_err(|e| SgError::Config(format!("cannot start worker pool: {e}")))?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::FitStep1(c) => {
            let t = pipeline::run_step1(&load(&c)?)?;
            eprintln!("fitted {} sites", t.sites.len());
        }
        Command::FitStep2(c) => {
            let t = pipeline::run_step2(&load(&c)?)?;
            eprintln!("fitted {} bands", t.bands.len());
        }
        Command::FitStep3(c) => {
            let t = pipeline::run_step3(&load(&c)?)?;
            eprintln!("fitted {} bands", t.bands.len());
        }
        Command::Generate(c) => {
            let p = pipeline::run_generate(&load(&c)?)?;
            eprintln!("wrote {}", p.display());
        }
        Command::Diagnose(c) => {
            let s = pipeline::run_diagnose(&load(&c)?)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Wpd(c) => {
            let p = pipeline::run_wpd(&load(&c)?)?;
            eprintln!("wrote {}", p.display());
        }
        Command::Synthetic(c) => {
            let (p, _) = pipeline::run_synthetic(&load(&c)?)?;
            eprintln!("wrote {}", p.display());
        }
        Command::ShowConfig(c) => {
            println!("{}", serde_json::to_string_pretty(&load(&c)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
