//! Command-line front end for piecewise ABC runs: dataset simulation,
//! inference, exact oracles, comparison reports and smoothing sweeps.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "pwabc", version, about = "Piecewise ABC for discretely observed Markov models")]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from the config's `data` section.
    Simulate(Common),
    /// Sample every factor and assemble the configured posteriors.
    Infer(WithData),
    /// Exact-likelihood posterior and marginal likelihood on a lattice.
    Oracle(WithData),
    /// Tables and plots comparing a run with an optional oracle.
    Report(ReportArgs),
    /// Kernel posteriors for a list of smoothing parameters.
    SweepQ(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite artifacts in a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides the config seed (`abc.seed`; `data.seed` for simulate and oracle).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct WithData {
    #[command(flatten)]
    pub common: Common,
    /// Dataset CSV (with its JSON sidecar) instead of simulating one.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `infer` or `sweep-q`.
    pub run_dir: PathBuf,
    /// Directory written by `oracle`.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    /// Defaults to `<RUN_DIR>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub with_data: WithData,
    /// Comma-separated q values (default: `estimator.q_sweep`).
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<f64>,
}

fn run_options(c: &Common, data: Option<&PathBuf>) -> commands::RunOptions {
    commands::RunOptions {
        config: c.config.clone(),
        out: c.out.clone(),
        force: c.force,
        workers: c.workers,
        seed: c.seed,
        data: data.cloned(),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if matches!(cli.command, Command::Simulate(Common { workers: Some(0), .. })) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    match &cli.command {
        Command::Simulate(c) => commands::simulate(&run_options(c, None)),
        Command::Infer(w) => commands::infer(&checked(run_options(&w.common, w.data.as_ref()))?),
        Command::Oracle(w) => commands::oracle(&checked(run_options(&w.common, w.data.as_ref()))?),
        Command::Report(r) => report::report(&report::ReportOptions {
            run_dir: r.run_dir.clone(),
            oracle_dir: r.oracle.clone(),
            out: r.out.clone(),
            force: r.force,
            workers: nonzero(r.workers)?,
        }),
        Command::SweepQ(s) => {
            let w = &s.with_data;
            commands::sweep_q(&checked(run_options(&w.common, w.data.as_ref()))?, &s.q)
        }
    }
}

fn nonzero(w: Option<usize>) -> Result<Option<usize>, CliError> {
    match w {
        Some(0) => Err(CliError::Config("--workers must be at least 1".into())),
        other => Ok(other),
    }
}

fn checked(o: commands::RunOptions) -> Result<commands::RunOptions, CliError> {
    nonzero(o.workers)?;
    Ok(o)
}
