//! `cpmm-lab`: simulate, estimate, solve, backtest and compare from the command line.
//!
//! Exit status: 0 success, 2 usage, 3 data, 4 numerical convergence.

mod commands;
mod config;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{ConvectionKind, FileConfig, StrategyKind};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("convergence: {0}")]
    Convergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Convergence(_) => 4,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<cpmm_lab::dynamics::DynamicsError> for Failure {
    fn from(e: cpmm_lab::dynamics::DynamicsError) -> Self {
        use cpmm_lab::dynamics::DynamicsError::*;
        match e {
            InvalidParam { .. } => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<cpmm_lab::strategy::StrategyError> for Failure {
    fn from(e: cpmm_lab::strategy::StrategyError) -> Self {
        use cpmm_lab::strategy::StrategyError::*;
        match e {
            Ode(_) => Failure::Convergence(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<cpmm_lab::pde::PdeError> for Failure {
    fn from(e: cpmm_lab::pde::PdeError) -> Self {
        use cpmm_lab::pde::PdeError::*;
        match e {
            PicardDiverged { .. } | Instability { .. } => Failure::Convergence(e.to_string()),
            InvalidGrid(_) | InvalidConfig(_) | InvalidParams(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<cpmm_lab::estimation::EstimationError> for Failure {
    fn from(e: cpmm_lab::estimation::EstimationError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<cpmm_lab::backtest::BacktestError> for Failure {
    fn from(e: cpmm_lab::backtest::BacktestError) -> Self {
        match e {
            cpmm_lab::backtest::BacktestError::Strategy(s) => s.into(),
            e => Failure::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cpmm-lab", version, about = "Execution and speculation in constant-product AMMs")]
struct Cli {
    /// RNG seed for simulate and compare [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel work [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// TOML file with a section per command
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate Model I or Model II paths
    Simulate(SimulateArgs),
    /// Estimate dynamics and execution parameters from event files
    Estimate(EstimateArgs),
    /// Solve closed-form coefficients and the HJB fields
    Solve(SolveArgs),
    /// Rolling-window campaign on event files
    Backtest(BacktestArgs),
    /// Strategy comparison on seeded synthetic windows
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub model: Option<u8>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub varsigma: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub z0: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Horizon in days
    #[arg(long, visible_alias = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt_seconds: Option<f64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Also write swaps.csv and oracle.csv
    #[arg(long)]
    pub events: bool,
    #[arg(long)]
    pub start_ms: Option<i64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub swaps: Option<PathBuf>,
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub lp: Option<PathBuf>,
    #[arg(long)]
    pub start_ms: Option<i64>,
    #[arg(long)]
    pub end_ms: Option<i64>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub model: Option<u8>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, visible_alias = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub varsigma: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub z0: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub n_z: Option<usize>,
    #[arg(long)]
    pub n_w: Option<usize>,
    #[arg(long)]
    pub picard_max_iterations: Option<usize>,
    #[arg(long)]
    pub picard_tolerance: Option<f64>,
    #[arg(long)]
    pub picard_damping: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long, value_enum)]
    pub convection: Option<ConvectionKind>,
    #[arg(long)]
    pub snapshot_stride: Option<usize>,
    #[arg(long)]
    pub coefficient_steps: Option<usize>,
    #[arg(long)]
    pub closed_form_only: bool,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub swaps: Option<PathBuf>,
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub lp: Option<PathBuf>,
    #[arg(long)]
    pub in_sample_hours: Option<f64>,
    #[arg(long)]
    pub horizon_hours: Option<f64>,
    #[arg(long)]
    pub shift_hours: Option<f64>,
    #[arg(long)]
    pub participation: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub phi_speculative: Option<f64>,
    #[arg(long)]
    pub gas_per_tx: Option<f64>,
    #[arg(long)]
    pub amm_fee_bps: Option<f64>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyKind>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub windows: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub z0: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, visible_alias = "T")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt_seconds: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub phi_speculative: Option<f64>,
    #[arg(long)]
    pub y0: Option<f64>,
    #[arg(long)]
    pub gas_per_tx: Option<f64>,
    #[arg(long)]
    pub amm_fee_bps: Option<f64>,
}

/// Settings shared by every command after merging flags and file.
pub struct Globals {
    pub seed: u64,
    pub output: PathBuf,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let globals = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        output: cli.output.or(file.output).unwrap_or_else(|| PathBuf::from("out")),
    };
    match cli.command {
        Command::Simulate(a) => commands::simulate(&globals, file.simulate, a),
        Command::Estimate(a) => commands::estimate(&globals, file.estimate, a),
        Command::Solve(a) => commands::solve(&globals, file.solve, a),
        Command::Backtest(a) => commands::backtest(&globals, file.backtest, a),
        Command::Compare(a) => commands::compare(&globals, file.compare, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
