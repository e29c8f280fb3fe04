//! Command-line driver: run configuration, per-command orchestration,
//! manifests and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod study;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bcilm", version = env!("BCILM_VERSION"), about = "Spatial ILMs with behavioural-change alarm functions")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate populations and epidemics from the configured model.
    Simulate,
    /// Fit the configured model to one epidemic.
    Fit(DataArgs),
    /// Screen one epidemic for behavioural change with spike-and-slab priors.
    Screen(ScreenArgs),
    /// Posterior predictive band for the epidemic curve.
    Ppd(CurveArgs),
    /// Forecast the epidemic curve from a fit to truncated data.
    Forecast(ForecastArgs),
    /// Compare fitted models by WAIC.
    Compare(CompareArgs),
    /// Run a simulation study over a scenario grid.
    Study,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Fit only the epidemic before this time.
    #[arg(long)]
    pub t_cut: Option<i64>,
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Fit the selected model class after screening.
    #[arg(long)]
    pub then_fit: bool,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Output directory of a `fit` run.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Number of posterior draws to resimulate.
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long)]
    pub t_cut: Option<i64>,
    #[arg(long)]
    pub horizon: Option<i64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output directories of `fit` runs on the same data.
    #[arg(long = "fit", required = true, num_args = 1..)]
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub population: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    commands::dispatch(&cli)
}
