//! Command-line driver: offline training, online solves with error reports,
//! and scripted reproduction of the analytic and desk-scale experiments.
//!
//! Exit codes: 0 on success, 1 on numerical failure, 2 on usage errors.
//! All randomness sits behind a single 64-bit `--seed` (default 0);
//! identical configuration and seed produce byte-identical output files.
//! Worker-thread count follows the `RAYON_NUM_THREADS` environment variable.

mod reproduce;
mod solve;
mod train;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Result alias carrying the process exit code on failure.
pub type CmdResult = Result<(), CmdError>;

#[derive(Debug)]
pub enum CmdError {
    /// Invalid invocation (exit 2).
    Usage(String),
    /// Numerical or I/O failure while executing (exit 1).
    Run(String),
}

impl From<otrb_core::Error> for CmdError {
    fn from(e: otrb_core::Error) -> Self {
        CmdError::Run(e.to_string())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Run(e.to_string())
    }
}

impl From<serde_json::Error> for CmdError {
    fn from(e: serde_json::Error) -> Self {
        CmdError::Run(e.to_string())
    }
}

pub fn usage(msg: impl Into<String>) -> CmdError {
    CmdError::Usage(msg.into())
}

#[derive(Parser)]
#[command(
    name = "otrb",
    version,
    about = "Registration-based model order reduction via entropic optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the offline phase and store the trained artifacts.
    Train(train::TrainArgs),
    /// Solve at test parameters from stored artifacts and report errors.
    Solve(solve::SolveArgs),
    /// Reproduce the analytic and desk-scale experiments.
    #[command(subcommand)]
    Reproduce(ReproduceCommand),
}

#[derive(Subcommand)]
enum ReproduceCommand {
    /// Analytic 1D boundary-layer family: exact and one-mode bound checks
    /// plus transport-map sweep data over the floor and the regularization.
    #[command(name = "1d")]
    OneD(reproduce::OneDArgs),
    /// Elliptic experiment table over a tolerance sweep.
    Poisson(reproduce::PoissonArgs),
    /// Advection experiment: error-versus-time series with the training
    /// horizon marked.
    Advection(reproduce::AdvectionArgs),
}

/// Model family selector shared by `train` and the analytic commands.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Elliptic problem, densities proportional to the squared solution.
    PoissonU2,
    /// Elliptic problem, densities proportional to the source.
    PoissonF,
    /// Nonlinear advection problem, densities proportional to the solution.
    Advection,
    /// Analytic 1D boundary-layer family (reproduction only).
    #[value(name = "boundary-layer-1d")]
    #[serde(rename = "boundary-layer-1d")]
    BoundaryLayer1d,
    /// Analytic shift family (reproduction only).
    AdvectionAnalytic,
}

/// Shared output-path options.
#[derive(Args, Debug, Clone, Serialize)]
pub struct OutputArgs {
    /// Output directory; its parent must already exist.
    #[arg(long)]
    pub out: PathBuf,
}

impl OutputArgs {
    /// Create the output directory, treating a missing parent as a usage
    /// error rather than silently building a whole tree.
    pub fn prepare(&self) -> Result<&Path, CmdError> {
        if let Some(parent) = self.out.parent() {
            if !parent.as_os_str().is_empty() && !parent.exists() {
                return Err(usage(format!(
                    "output directory parent {} does not exist",
                    parent.display()
                )));
            }
        }
        std::fs::create_dir_all(&self.out)
            .map_err(|e| usage(format!("cannot create {}: {e}", self.out.display())))?;
        Ok(&self.out)
    }
}

/// Render a resolved configuration into a `#`-comment header string.
pub fn config_comment<T: Serialize>(config: &T) -> String {
    format!(
        "config: {}",
        serde_json::to_string(config).unwrap_or_else(|_| "<unserializable>".into())
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => train::run(args),
        Command::Solve(args) => solve::run(args),
        Command::Reproduce(cmd) => match cmd {
            ReproduceCommand::OneD(args) => reproduce::run_1d(args),
            ReproduceCommand::Poisson(args) => reproduce::run_poisson(args),
            ReproduceCommand::Advection(args) => reproduce::run_advection(args),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CmdError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}
