//! `mortss`: fit, compare and forecast state-space mortality models.

mod commands;
mod config;
mod error;
mod rundir;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Flags;
use error::CliResult;

#[derive(Parser)]
#[command(name = "mortss", version, about = "State-space stochastic mortality models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Maximum likelihood for LC or LC_H by scoring.
    FitMle(Flags),
    /// Gibbs sampling with FFBS for LC or LC_H.
    FitGibbs(Flags),
    /// PIMH-within-Gibbs for LCSV or LCSV_H.
    FitPmcmc(Flags),
    /// Two-stage SVD fit with a random-walk drift.
    SvdFit(Flags),
    /// Posterior-predictive fan of log death rates.
    Forecast(Flags),
    /// Observed life table, or forecast life expectancy from a chain.
    Lifetable(Flags),
    /// Conditional DIC of a chain.
    Dic(Flags),
    /// Simulate a panel from given parameters.
    Simulate(Flags),
}

type Handler = fn(&config::RunConfig, bool) -> CliResult<()>;

fn run(cli: Cli) -> CliResult<()> {
    let (flags, f): (&Flags, Handler) = match &cli.command {
        Command::FitMle(a) => (a, commands::mle_cmd),
        Command::FitGibbs(a) => (a, |c, r| commands::gibbs_cmd(c, r, false)),
        Command::FitPmcmc(a) => (a, |c, r| commands::gibbs_cmd(c, r, true)),
        Command::SvdFit(a) => (a, commands::svd_cmd),
        Command::Forecast(a) => (a, commands::forecast_cmd),
        Command::Lifetable(a) => (a, commands::lifetable_cmd),
        Command::Dic(a) => (a, commands::dic_cmd),
        Command::Simulate(a) => (a, commands::simulate_cmd),
    };
    let cfg = flags.resolve()?;
    f(&cfg, flags.resume)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
