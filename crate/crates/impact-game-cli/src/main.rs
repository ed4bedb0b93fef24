//! `impact-game`: configuration-driven front end for the equilibrium solvers
//! and experiments. Outputs are CSV tables (the contract) and SVG charts.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 assumption failure,
//! 3 acceptance-window failure.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use run::{CliError, Overrides};

#[derive(Debug, Parser)]
#[command(name = "impact-game", version, about = "Liquidation games with transient impact and a predictive signal")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of signal paths (overrides `paths`).
    #[arg(long)]
    paths: Option<usize>,
    /// Number of time steps (overrides `steps`).
    #[arg(long)]
    steps: Option<usize>,
    /// Run simulations even when the assumption checks fail.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assumption report and small-horizon condition.
    Check(Common),
    /// Mean-field equilibrium trajectories.
    SimulateMfg(Common),
    /// N-player equilibrium trajectories.
    SimulateFinite(Common),
    /// Strategy and aggregate convergence rates in N.
    Converge(Common),
    /// Value convergence rate in N.
    ValueConverge(Common),
    /// Epsilon-Nash gaps of the mean-field strategies.
    Epsnash(Common),
    /// Uniform second-moment bounds across N.
    Bounds(Common),
    /// Illustration scenarios.
    Figures(Common),
}

const SUBCOMMANDS: &str =
    "check, simulate-mfg, simulate-finite, converge, value-converge, epsnash, bounds, figures";

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if matches!(e.kind(), ErrorKind::InvalidSubcommand) {
                eprintln!("valid subcommands: {SUBCOMMANDS}");
            }
            return ExitCode::from(code);
        }
    };
    let (common, f): (&Common, fn(&config::RunConfig, &Overrides) -> run::CliResult<Vec<PathBuf>>) = match &cli.command {
        Command::Check(c) => (c, run::check),
        Command::SimulateMfg(c) => (c, run::simulate_mfg),
        Command::SimulateFinite(c) => (c, run::simulate_finite),
        Command::Converge(c) => (c, run::converge),
        Command::ValueConverge(c) => (c, run::value_converge),
        Command::Epsnash(c) => (c, run::epsnash),
        Command::Bounds(c) => (c, run::bounds),
        Command::Figures(c) => (c, run::figures),
    };
    let overrides = Overrides {
        out: common.out.clone(),
        seed: common.seed,
        paths: common.paths,
        steps: common.steps,
        force: common.force,
    };
    let result = run::load(&common.config).and_then(|cfg| f(&cfg, &overrides));
    match result {
        Ok(files) => {
            for p in files {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
