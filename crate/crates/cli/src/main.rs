mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use peridyn::{Axis, PeridynError};

use crate::config::{ConfigError, RunConfig};

/// Spectral solver for the 2D nonlinear peridynamic wave equation.
#[derive(Parser)]
#[command(name = "peridyn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (default: `output.dir` from the config, else `peridyn-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel studies (fallback: PERIDYN_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Shorter evaluation time (and coarser dt for space studies).
    #[arg(long, global = true)]
    smoke: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write snapshots.
    Run { config: PathBuf },
    /// Error/rate table over a space or time ladder.
    Convergence {
        #[arg(long, value_enum)]
        axis: AxisArg,
        config: PathBuf,
    },
    /// Newmark-beta vs Störmer-Verlet over the time ladder.
    Compare { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Space,
    Time,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] PeridynError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("Newmark-beta error exceeds Stormer-Verlet error on some row")]
    Ordering,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                PeridynError::NonFinite { .. }
                | PeridynError::NewtonDivergence { .. }
                | PeridynError::KrylovStall { .. }
                | PeridynError::ImaginaryResidue(_)
                | PeridynError::ZeroDenominator
                | PeridynError::NonPositiveError(..) => 3,
                PeridynError::Io(_) | PeridynError::Format(_) => 1,
                _ => 2,
            },
            CliError::Io(_) => 1,
            CliError::Ordering => 4,
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<usize, CliError> {
    let requested = match flag {
        Some(k) => Some(k),
        None => match std::env::var("PERIDYN_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                ConfigError::Invalid(format!("PERIDYN_THREADS must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    match requested {
        Some(0) => Err(ConfigError::Invalid("thread count must be at least 1".into()).into()),
        Some(k) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build_global()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            Ok(k)
        }
        None => Ok(rayon::current_num_threads()),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.threads)?;
    let common = commands::Common {
        out: cli.out,
        smoke: cli.smoke,
        threads,
    };
    match cli.command {
        Command::Run { config } => commands::run(&RunConfig::load(&config)?, &common),
        Command::Convergence { axis, config } => {
            let axis = match axis {
                AxisArg::Space => Axis::Space,
                AxisArg::Time => Axis::Time,
            };
            commands::convergence(&RunConfig::load(&config)?, axis, &common)
        }
        Command::Compare { config } => commands::compare(&RunConfig::load(&config)?, &common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("peridyn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
