//! Command-line front end for the `mflq` library.
//!
//! Every command stages its artifacts in memory and writes them, together
//! with `manifest.json`, only after it has finished. Exit codes: `0` success,
//! `1` a check failed, `2` invalid input, `3` numerical breakdown.

macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod commands;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use mflq::matrix::{DEFAULT_PD_DELTA, DEFAULT_PSD_TOL};
use mflq::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mflq", version, about = "Mean-field LQ control with indefinite weights")]
pub struct Cli {
    /// Number of uniform time steps.
    #[arg(long, global = true, default_value_t = 2000)]
    pub grid_steps: usize,
    /// Number of Monte Carlo paths.
    #[arg(long, global = true, default_value_t = 10_000)]
    pub paths: usize,
    /// Seed of the Monte Carlo streams.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, env = "MFLQ_OUT_DIR", default_value = "mflq-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a problem file and list every violated requirement.
    Validate { problem: PathBuf },
    /// Solve the Riccati system and the linear terminal equation.
    Solve { problem: PathBuf },
    /// Check the positive-definiteness condition on the grid.
    CheckPd {
        problem: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PD_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_PSD_TOL)]
        tol: f64,
    },
    /// Check the relaxed compensator condition for a compensator file.
    CheckRc {
        problem: PathBuf,
        compensator: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PD_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = DEFAULT_PSD_TOL)]
        tol: f64,
    },
    /// Simulate the closed loop under the optimal law or a law file.
    Simulate {
        problem: PathBuf,
        #[arg(long)]
        law: Option<PathBuf>,
        /// Use interacting particles instead of the exact mean.
        #[arg(long)]
        particles: bool,
        /// Write every path to ensemble.bin.
        #[arg(long)]
        dump: bool,
    },
    /// Exact cost of a feedback law by moment propagation.
    Evaluate { problem: PathBuf, law: PathBuf },
    /// Run one of the worked examples against its closed forms.
    Example {
        name: ExampleName,
        /// Override a parameter, e.g. `--set nu=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Add a backward Euler reference with this many steps (speed only).
        #[arg(long)]
        reference_steps: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleName {
    Mv,
    Speed,
    Negdef,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SingularGainDenominator { .. } | Error::IndefiniteB { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match commands::execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
