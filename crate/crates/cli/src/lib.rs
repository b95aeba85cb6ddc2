//! Command-line front end for `algebroid-mechanics`.

pub mod commands;
pub mod definition;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_THRESHOLD: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "algebroid", version, about = "Lagrangian mechanics on Lie algebroids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List catalog systems with their dimensions.
    ListSystems,
    /// Check the algebroid axioms at seeded sample points.
    Validate(ValidateArgs),
    /// Integrate the equations of motion and write the trajectory.
    Simulate(SimulateArgs),
    /// Compare the algebroid dynamics with the Lagrange-multiplier formulation.
    CompareOracle(CompareArgs),
    /// Compare the full rolling disk with its reduction by translations.
    ReduceCompare(ReduceArgs),
    /// Integrate an extremal of the control problem and check it solves the
    /// Lagrangian equations on the normal subbundle.
    PmpCheck(PmpArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SystemSource {
    /// Catalog system name.
    #[arg(long)]
    pub system: Option<String>,
    /// JSON system definition file.
    #[arg(long)]
    pub definition: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rk4,
    Rk45,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Initial state as a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    pub initial: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub t0: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    pub t1: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Rk45)]
    pub method: MethodArg,
    /// Fixed step for rk4, maximum step for rk45.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub abs_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub source: SystemSource,
    /// Sampling interval applied to every base coordinate, as `lo:hi`.
    #[arg(long = "box", allow_hyphen_values = true)]
    pub sample_box: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Catalog system with a multiplier formulation.
    #[arg(long)]
    pub system: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct PmpArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
