//! Event ingestion, liquidity reconstruction, strategy replay and rolling
//! campaigns.

mod campaign;
mod events;
mod liquidity;
mod replay;
mod synthetic;

pub use campaign::{
    estimate_window, rolling_campaign, summarise, window_count, write_summary_csv, CampaignConfig, CampaignResult, PairedGap, StrategySummary,
    WindowOutcome,
};
pub use events::{
    load_events, parse_lp_events, parse_oracle, parse_swaps, write_oracle, write_swaps, Event, EventDataset, LpEvent, OracleTick,
    ParseReport, SwapEvent,
};
pub use liquidity::{reconstruct_liquidity, LiquidityHistory};
pub use replay::{
    closed_form_for, replay, run_liquidation, run_single_order, run_speculative, run_twap, ExecutionReport, Fill, MarketTape,
    TapePoint, MIN_TRADE,
};
pub use synthetic::{events_from_path, run_synthetic_window, synthetic_campaign, SyntheticConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpmm::CpmmError;
use crate::estimation::EstimationError;
use crate::strategy::StrategyError;

/// Default running penalty for speculation on a USDC-quoted pool.
pub const SPECULATIVE_PHI_USDC: f64 = 0.001;
/// Default running penalty for speculation on a DAI-quoted pool.
pub const SPECULATIVE_PHI_DAI: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("{file} row {row} column {column}: {message}")]
    Parse { file: String, row: usize, column: String, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("liquidity underflow at {timestamp_ms} on [{lo}, {hi}): cumulative depth {depth}")]
    LiquidityUnderflow { timestamp_ms: i64, lo: f64, hi: f64, depth: f64 },
    #[error("window underflow: {0}")]
    WindowUnderflow(String),
    #[error("no oracle observation before {timestamp_ms}")]
    MissingOracle { timestamp_ms: i64 },
    #[error("no pool depth known before {timestamp_ms}")]
    MissingDepth { timestamp_ms: i64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Cpmm(#[from] CpmmError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("simulation: {0}")]
    Simulation(String),
}

impl From<csv::Error> for BacktestError {
    fn from(e: csv::Error) -> Self {
        BacktestError::Csv(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BacktestError>;

/// Flat gas per transaction plus a proportional fee on the X value traded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeModel {
    pub gas_per_tx: f64,
    pub amm_fee_bps: f64,
}

impl Default for FeeModel {
    fn default() -> Self {
        Self { gas_per_tx: 5.0, amm_fee_bps: 1.0 }
    }
}

impl FeeModel {
    pub fn zero() -> Self {
        Self { gas_per_tx: 0.0, amm_fee_bps: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gas_per_tx >= 0.0 && self.amm_fee_bps >= 0.0 && self.gas_per_tx.is_finite() && self.amm_fee_bps.is_finite()) {
            return Err(BacktestError::InvalidInput(format!("fees must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }

    pub fn amm_fee(&self, delta_y: f64, exec_rate: f64) -> f64 {
        self.amm_fee_bps * 1e-4 * delta_y.abs() * exec_rate
    }
}
