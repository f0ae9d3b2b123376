//! `repeater` - stationary GHZ-distribution rates of a multiplexed
//! multipartite quantum repeater, computed by exact Markov-chain solves,
//! closed forms, arborescence counting and Monte Carlo simulation.

mod commands;
mod output;

use anyhow::Result;
use clap::Parser;
use repeater_core::chain;
use std::fmt;
use std::process::ExitCode;

const ENV_HELP: &str = "Environment:
  REPEATER_STATE_CAP   max states for chain construction/power iteration
                       (default 2000000)
  REPEATER_DIRECT_CAP  max states for the sparse direct solve (default 20000)
  REPEATER_THREADS     worker threads for simulations and sweeps
                       (default: all cores)";

#[derive(Parser)]
#[command(
    name = "repeater",
    version,
    about = "Stationary GHZ rates of a multiplexed multipartite quantum repeater",
    after_help = ENV_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Compute the stationary rate for one parameter point.
    Rate(commands::RateArgs),
    /// Run every applicable method side by side and check bounds.
    Compare(commands::CompareArgs),
    /// Arborescence counts and tree-theorem stationary distributions of the
    /// small-p transition graph.
    Trees(commands::TreesArgs),
    /// Cartesian parameter sweep with CSV/JSON output.
    Sweep(commands::SweepArgs),
}

/// State-space caps, overridable through the environment.
pub struct Caps {
    pub state_cap: usize,
    pub direct_cap: usize,
}

impl Caps {
    fn from_env() -> Result<Self> {
        Ok(Caps {
            state_cap: env_usize("REPEATER_STATE_CAP")?.unwrap_or(chain::DEFAULT_STATE_CAP),
            direct_cap: env_usize("REPEATER_DIRECT_CAP")?.unwrap_or(chain::DEFAULT_DIRECT_SOLVE_CAP),
        })
    }
}

fn env_usize(name: &str) -> Result<Option<usize>> {
    match std::env::var(name) {
        Ok(text) => text
            .parse::<usize>()
            .map(Some)
            .map_err(|_| UsageError(format!("{name} must be an integer, got '{text}'")).into()),
        Err(_) => Ok(None),
    }
}

/// Invalid flag/parameter combination; mapped to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn is_usage_error(err: &anyhow::Error) -> bool {
    if err.downcast_ref::<UsageError>().is_some() {
        return true;
    }
    matches!(
        err.downcast_ref::<repeater_core::Error>(),
        Some(
            repeater_core::Error::InvalidParameter(_)
                | repeater_core::Error::StateCapExceeded { .. }
                | repeater_core::Error::MatrixTooDense { .. }
                | repeater_core::Error::BinarySpaceTooLarge { .. }
                | repeater_core::Error::OccupationOutOfRange { .. }
                | repeater_core::Error::RootNotFound(_)
                | repeater_core::Error::InvalidSimConfig(_)
        )
    )
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = env_usize("REPEATER_THREADS")? {
        // ignore failure if a pool already exists (e.g. under tests)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let caps = Caps::from_env()?;
    match cli.command {
        Command::Rate(args) => commands::cmd_rate(args, &caps),
        Command::Compare(args) => commands::cmd_compare(args, &caps),
        Command::Trees(args) => commands::cmd_trees(args),
        Command::Sweep(args) => commands::cmd_sweep(args, &caps),
    }
}

/// Die quietly on a closed pipe (e.g. `repeater sweep ... | head`) instead
/// of panicking mid-write.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() -> ExitCode {
    reset_sigpipe();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if is_usage_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
