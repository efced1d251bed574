//! `qlctrl`: scenario-driven control synthesis for quasilinear systems.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qlctrl_cli::artifacts::OutDir;
use qlctrl_cli::commands;
use qlctrl_cli::failure::{CliResult, Failure};
use qlctrl_cli::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "qlctrl",
    version,
    about = "Exact and averaged control synthesis for quasilinear ODE/SDE systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Report controllability diagnostics (Kalman rank, Gramian spectrum).
    Check(CommonArgs),
    /// Synthesize an exact steering control, single-shot or marching.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Solve by marching windows instead of one fixed-point pass.
        #[arg(long)]
        march: bool,
        /// Target relaxation factor in [0, 1).
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Run the Monte Carlo averaged-control experiment on the noisy system.
    Sde(CommonArgs),
    /// Compare truncated-series transition factors against accurate ones.
    ExpmStudy {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated truncation orders; an empty list runs only the
        /// accurate baseline.
        #[arg(long, default_value = "2,5,6,7")]
        orders: String,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for artifacts (overrides the scenario's output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the stochastic seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the synthesis step dt.
    #[arg(long)]
    dt: Option<f64>,
    /// Override the fixed-point iteration budget.
    #[arg(long)]
    max_iter: Option<usize>,
}

/// Loads the scenario and folds the common flag overrides into it, so the
/// `scenario.json` written next to the results reflects what actually ran.
fn resolve(common: &CommonArgs) -> CliResult<Scenario> {
    let mut scenario = Scenario::load(&common.scenario)?;
    if let Some(dt) = common.dt {
        scenario.solver.dt = dt;
    }
    if let Some(max_iter) = common.max_iter {
        scenario.solver.max_iter = max_iter;
    }
    if let Some(seed) = common.seed {
        match &mut scenario.stochastic {
            Some(stoch) => stoch.seed = seed,
            None => {
                return Err(Failure::config("--seed: the scenario has no stochastic block to reseed"))
            }
        }
    }
    if let Some(out) = &common.out {
        scenario.output_dir = Some(out.clone());
    }
    Ok(scenario)
}

/// Creates the output directory named by the resolved scenario.
fn out_dir(scenario: &Scenario) -> CliResult<OutDir> {
    let dir = scenario
        .output_dir
        .clone()
        .ok_or_else(|| Failure::config("output_dir: give --out or set output_dir in the scenario"))?;
    OutDir::create(&dir)
}

/// Parses the `--orders` list; empty entries are dropped so `--orders ""`
/// means "accurate baseline only".
fn parse_orders(orders: &str) -> CliResult<Vec<usize>> {
    orders
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>().map_err(|_| {
                Failure::config(format!("--orders: {s:?} is not a truncation order"))
            })
        })
        .collect()
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Commands::Check(common) => {
            let scenario = resolve(common)?;
            let out = out_dir(&scenario)?;
            commands::run_check(&scenario, &out)
        }
        Commands::Solve { common, march, alpha } => {
            let mut scenario = resolve(common)?;
            if *march {
                scenario.solver.marching = true;
            }
            if let Some(alpha) = alpha {
                scenario.solver.alpha = *alpha;
            }
            let out = out_dir(&scenario)?;
            commands::run_solve(&scenario, &out)
        }
        Commands::Sde(common) => {
            let scenario = resolve(common)?;
            let out = out_dir(&scenario)?;
            commands::run_sde(&scenario, &out)
        }
        Commands::ExpmStudy { common, orders } => {
            let scenario = resolve(common)?;
            let orders = parse_orders(orders)?;
            let out = out_dir(&scenario)?;
            commands::run_expm_study(&scenario, &orders, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
