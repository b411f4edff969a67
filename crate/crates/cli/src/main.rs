//! `structpop` command-line runner.
//!
//! Exit codes: 0 success, 1 model or I/O error, 2 usage error,
//! 3 subcritical model, 4 invariant check failed.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use structpop::Error;

#[derive(Parser, Debug)]
#[command(name = "structpop", version, about = "Growth rates, stationary states and simulations for trait- and age-structured populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Opts {
    /// Scenario configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of trait cells.
    #[arg(long, global = true)]
    pub nx: Option<usize>,
    /// Age step.
    #[arg(long, global = true)]
    pub da: Option<f64>,
    /// Age truncation tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Stochastic replicates.
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Time horizon for PDE and particle runs.
    #[arg(long, global = true)]
    pub tmax: Option<f64>,
    /// Individuals per unit mass in particle runs.
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Write every n-th age node in grid dumps.
    #[arg(long, global = true)]
    pub age_stride: Option<usize>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Sweep the spectral radius over growth rates.
    Spectral,
    /// Growth rate with direct and dual eigenfunctions.
    Malthus,
    /// Stationary solution of the logistic model.
    Stationary,
    /// Nonlinear and linear PDE runs.
    Pde,
    /// Replicated particle simulations.
    Ibm,
    /// Grid invariant checks.
    Verify,
    /// Run a built-in scenario.
    Scenario {
        #[arg(value_enum)]
        name: Preset,
        /// Also run the invariant checks.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Constant,
    Singular,
}

/// Failure reported on stderr as JSON.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: u8,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            message: message.into(),
            exit_code: 2,
        }
    }

    pub fn checks(message: impl Into<String>) -> Self {
        Self {
            kind: "verification",
            message: message.into(),
            exit_code: 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, exit_code) = match &e {
            Error::Subcritical { .. } => ("subcritical", 3),
            Error::Config(_) | Error::Json(_) => ("config", 1),
            Error::Domain(_) => ("domain", 1),
            Error::Grid(_) | Error::TailBound { .. } | Error::Shape(_) => ("grid", 1),
            Error::LambdaBelowDeathFloor { .. } => ("lambda-below-death-floor", 1),
            Error::NotConverged(_) => ("not-converged", 1),
            Error::BracketCap(_) => ("bracket-cap", 1),
            Error::Regime(_) => ("regime", 1),
            Error::Explosion { .. } => ("explosion", 1),
            Error::Io(_) | Error::Csv(_) => ("io", 1),
        };
        Self {
            kind,
            message: e.to_string(),
            exit_code,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = serde_json::json!({ "error": f });
            eprintln!("{body}");
            ExitCode::from(f.exit_code)
        }
    }
}
