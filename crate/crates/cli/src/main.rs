//! Config-driven experiment runner.
//!
//! Exit codes: 0 success, 1 verification fail, 2 non-hyperbolic fixed
//! point, 3 degenerate weights, 64 config error, 70 runtime error.

mod config;
mod runners;
mod systems;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "hgsde",
    version,
    about = "Stochastic linearization experiments: simulate, reweight, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and plot data.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Locate a fixed point, classify it, export the linearization.
    Linearize(RunArgs),
    /// Verify measure equivalence of the reweighted nonlinear system.
    GirsanovVerify(RunArgs),
    /// Trace the slow manifold and measure sample-path concentration.
    Slowfast(RunArgs),
    /// Mollification studies: Sobolev dichotomy, occupation density,
    /// regularization convergence.
    Regularity(RunArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(runners::EXIT_CONFIG as u8);
        }
    };
    let code = match &cli.command {
        Command::Linearize(args) => runners::run_linearize(&args.config, &args.out, args.seed),
        Command::GirsanovVerify(args) => {
            runners::run_girsanov_verify(&args.config, &args.out, args.seed)
        }
        Command::Slowfast(args) => runners::run_slowfast(&args.config, &args.out, args.seed),
        Command::Regularity(args) => runners::run_regularity(&args.config, &args.out, args.seed),
    };
    ExitCode::from(code as u8)
}
