//! Command-line driver for second-order scheduling experiments.

pub mod commands;
pub mod config;
pub mod error;
pub mod format;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sosched_core::PolicyKind;

pub use config::{ClientSpec, ExperimentConfig, InstanceSpec, Overrides, SweepSpec};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "sosched", version, about = "Second-order AoI scheduling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-client AoI model validation sweep (validate.csv).
    Validate(Options),
    /// Subset means and temporal variances (stats.json, stats.csv).
    Stats(Options),
    /// Optimal operating point (solve.json).
    Solve(Options),
    /// One policy on one instance (simulate.json, convergence.csv).
    Simulate(Options),
    /// Policy comparison (compare_aoi.csv, variance_traj.csv, convergence.csv).
    Compare(Options),
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory [default: ./out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// vwd, whittle, randomized or maxweight.
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    /// Add Monte Carlo estimates to `stats`.
    #[arg(long)]
    pub simulate: bool,
    /// Resample channel and arrival traces for every policy.
    #[arg(long)]
    pub independent_traces: bool,
}

impl Options {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            runs: self.runs,
            horizon: self.horizon,
            out: self.out.clone(),
            policy: self.policy,
            independent_traces: self.independent_traces,
        }
    }

    pub fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        cfg.apply(&self.overrides());
        Ok(cfg)
    }
}

/// Runs a parsed command and returns the files it wrote.
pub fn execute(command: &Command) -> Result<Vec<PathBuf>, CliError> {
    match command {
        Command::Validate(o) => commands::cmd_validate(&o.load()?),
        Command::Stats(o) => commands::cmd_stats(&o.load()?, o.simulate),
        Command::Solve(o) => commands::cmd_solve(&o.load()?),
        Command::Simulate(o) => commands::cmd_simulate(&o.load()?),
        Command::Compare(o) => commands::cmd_compare(&o.load()?),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(sosched_core::Error::InfeasibleRegion { violations }) = &e {
                for v in violations {
                    eprintln!("  {:?} subset={:?} slack={}", v.constraint, v.subset, v.slack);
                }
            }
            e.exit_code()
        }
    }
}
