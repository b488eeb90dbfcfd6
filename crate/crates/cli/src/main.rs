//! `enskog`: command-line driver for the hard-sphere kinetic theory toolkit.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{CliError, EXIT_OK, EXIT_VALIDATION};

#[derive(Debug, Parser)]
#[command(name = "enskog", version, about = "Hard-sphere kinetic theory toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every Monte Carlo stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat convergence-guard warnings as errors.
    #[arg(long, global = true)]
    pub strict: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file; standard output when absent. A `.csv` suffix selects CSV where supported.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Evolve a hard-sphere state with the exact event-driven flow.
    Simulate(SimulateArgs),
    /// Truncated one-particle series at points or in position bins.
    Series(SeriesArgs),
    /// Marginal functionals and the pair correlation.
    Functionals(FunctionalsArgs),
    /// Collision integrals at one phase point.
    CollisionIntegral(CollisionArgs),
    /// Exact identities and operator checks.
    Verify(VerifyArgs),
    /// Convergence constants and norm majorants.
    Bounds(BoundsArgs),
    /// Series histogram against an event-driven ensemble.
    OracleCompare(OracleArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Initial state as JSON `{sigma, dim, points: [{q, p}]}`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Draw a random allowed state of this many particles instead.
    #[arg(long)]
    pub random: Option<usize>,
    /// Side of the box used for random states.
    #[arg(long, default_value_t = 4.0)]
    pub box_len: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Number of equally spaced trajectory samples in `[0, t]` written as CSV.
    #[arg(long)]
    pub frames: Option<usize>,
}

/// Shared description of the initial one-particle distribution.
#[derive(Debug, Args, Serialize)]
pub struct DistributionArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Mass of the default uniform Maxwellian.
    #[arg(long, default_value_t = 0.1)]
    pub mass: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub lo: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 20.0)]
    pub hi: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SeriesArgs {
    #[command(flatten)]
    pub dist: DistributionArgs,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    /// Samples per order and point.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Evaluation points `q,p;q,p` (components space separated in 3D).
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    /// Position bins `lo:hi:count`; replaces pointwise evaluation.
    #[arg(long, allow_hyphen_values = true)]
    pub bins: Option<String>,
    /// Guard the dimensionless norm instead of the plain L1 norm.
    #[arg(long)]
    pub scaled_guard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum FunctionalKind {
    General,
    Renormalized,
    Correlation,
}

#[derive(Debug, Args, Serialize)]
pub struct FunctionalsArgs {
    #[command(flatten)]
    pub dist: DistributionArgs,
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    #[arg(long, value_enum, default_value_t = FunctionalKind::General)]
    pub kind: FunctionalKind,
    #[arg(long)]
    pub scaled_guard: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum CollisionKind {
    /// Boltzmann–Enskog integral.
    Bee,
    /// Generalized Enskog term of order 0, 1 or 2.
    Gee0,
    Gee1,
    Gee2,
    /// First correction of the revised Enskog integral.
    Ree1,
    /// Markovian first correction.
    Markov,
    /// One-dimensional hard-rod integral by Laguerre quadrature.
    Rod,
    /// Mass, momentum and energy moments of the integral.
    Moments,
}

#[derive(Debug, Args, Serialize)]
pub struct CollisionArgs {
    #[command(flatten)]
    pub dist: DistributionArgs,
    #[arg(long, value_enum)]
    pub kind: CollisionKind,
    /// Evaluation point `q,p`.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Time argument of the generalized Enskog terms.
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    /// Let the third particle of the Markovian correction stream freely.
    #[arg(long)]
    pub collisionless_third: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[command(subcommand)]
    pub check: VerifyCommand,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum VerifyCommand {
    /// Bell counts and alternating sums of set partitions.
    Partitions {
        #[arg(long, default_value_t = 10)]
        max_m: usize,
    },
    /// Kinetic cluster expansion residual on random one-dimensional states.
    Recurrence {
        #[arg(long, default_value_t = 1)]
        s: usize,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
    },
    /// Rising-sum and nested-sum identities over their full ranges.
    Identities,
    /// Forward then backward flow on random states.
    Reversibility {
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 5)]
        particles: usize,
        #[arg(long, default_value_t = 3)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 3.0)]
        box_len: f64,
        #[arg(long, default_value_t = 5.0)]
        t: f64,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    /// Print the named convergence constants.
    #[arg(long)]
    pub list: bool,
    #[arg(long, default_value_t = 2)]
    pub s: u32,
    /// L1 norm of the one-particle distribution for the majorant.
    #[arg(long)]
    pub norm: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub dist: DistributionArgs,
    /// Ensemble runs.
    #[arg(long, default_value_t = 10_000)]
    pub runs: usize,
    /// Particles per ensemble member; defaults to the rounded mass.
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub t: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub bins: Option<String>,
    #[arg(long)]
    pub scaled_guard: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::from(EXIT_OK as u8);
            }
            let _ = e.print();
            eprintln!("{}", CliError::validation(e.kind().to_string()).to_json());
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit as u8)
        }
    }
}
