//! Command-line front end for transient pipeline market clearing.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 solver finished without
//! reaching optimality, 3 internal numerical failure.

mod commands;
mod inputs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pipeclear::error::Error;

#[derive(Parser)]
#[command(
    name = "pipeclear",
    version,
    about = "Clear gas transport markets over a transient pipeline model",
    long_about = "Validate inputs, solve steady states, replay baseline withdrawals, \
                  clear the market over one periodic horizon, or roll the horizon \
                  forward step by step. Artifacts land in --out-dir as CSV tables, a \
                  JSONL solver log, and a manifest recording inputs and options."
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Artifact directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Also emit raw dimensionless tables beside the SI ones.
    #[arg(long, global = true)]
    nondim_dump: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ValidateArgs {
    /// Network description (JSON).
    #[arg(long, value_name = "FILE")]
    network: PathBuf,
    /// Transfer bids (CSV), checked when given.
    #[arg(long, value_name = "FILE")]
    bids: Option<PathBuf>,
    /// Baseline withdrawals (CSV), checked when given.
    #[arg(long, value_name = "FILE")]
    baseline: Option<PathBuf>,
}

#[derive(Args)]
struct FlowArgs {
    /// Network description (JSON).
    #[arg(long, value_name = "FILE")]
    network: PathBuf,
    /// Baseline withdrawals (CSV).
    #[arg(long, value_name = "FILE")]
    baseline: PathBuf,
}

#[derive(Args)]
struct MarketArgs {
    /// Network description (JSON).
    #[arg(long, value_name = "FILE")]
    network: PathBuf,
    /// Transfer bids (CSV).
    #[arg(long, value_name = "FILE")]
    bids: PathBuf,
    /// Baseline withdrawals (CSV).
    #[arg(long, value_name = "FILE")]
    baseline: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Check inputs: schema, connectivity, bid sanity, baseline balance.
    Validate(ValidateArgs),
    /// Solve the steady flow of horizon-averaged data with idle stations.
    Steady(FlowArgs),
    /// Integrate the baseline withdrawals forward from a steady start.
    Simulate(FlowArgs),
    /// Clear the market over one horizon; emit schedules, prices, flows.
    Optimize(MarketArgs),
    /// Roll the clearing horizon forward, pinning each step to the last.
    Mpc(MarketArgs),
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Io(_)
        | Error::InvalidInput(_)
        | Error::InvalidNetwork(_)
        | Error::DimensionMismatch(_) => 1,
        Error::NonOptimal(_) => 2,
        Error::NewtonFailure { .. } | Error::SimulationStep { .. } | Error::LinearSolve(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version print clean; anything else is an input error.
            let code = if e.use_stderr() { 1u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ctx = commands::Ctx {
        config: cli.config.as_deref(),
        out_dir: &cli.out_dir,
        nondim: cli.nondim_dump,
    };
    let outcome = match &cli.command {
        Command::Validate(a) => {
            commands::validate(&ctx, &a.network, a.bids.as_deref(), a.baseline.as_deref())
        }
        Command::Steady(a) => commands::steady(&ctx, &a.network, &a.baseline),
        Command::Simulate(a) => commands::simulate_baseline(&ctx, &a.network, &a.baseline),
        Command::Optimize(a) => commands::optimize(&ctx, &a.network, &a.bids, &a.baseline),
        Command::Mpc(a) => commands::mpc(&ctx, &a.network, &a.bids, &a.baseline),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
