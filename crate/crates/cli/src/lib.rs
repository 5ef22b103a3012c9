//! Command-line workflows over the `demf` library: covariance grids,
//! simulation, two-model forecasting, MAP fitting and a self-check.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "demf", version, about = "Diffusion-based spatio-temporal Matérn fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write C(h_s, h_t) on a lag grid.
    Covariance(RunArgs),
    /// Draw one field on the mesh and time grid.
    Simulate(RunArgs),
    /// Condition both models on data and predict at the requested times.
    Forecast(RunArgs),
    /// Fit (σ, r_s, r_t) by maximising the penalised likelihood.
    Fit(RunArgs),
    /// Run the oracle checks and print a key=value report.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub config: Option<PathBuf>,
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Covariance(a) => commands::covariance::run(&load(a)?),
        Command::Simulate(a) => commands::simulate::run(&load(a)?),
        Command::Forecast(a) => commands::forecast::run(&load(a)?),
        Command::Fit(a) => commands::fit::run(&load(a)?),
        Command::Validate(a) => {
            let cfg = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            commands::validate::run(&cfg)
        }
    }
}
