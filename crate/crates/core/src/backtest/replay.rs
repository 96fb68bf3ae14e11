//! Strategy replay against a recorded or simulated market tape.
//!
//! The investor's fills never move the recorded rates: each decision executes
//! against the prevailing `(Z, kappa)` at exact constant-product prices.

use serde::{Deserialize, Serialize};

use super::events::EventDataset;
use super::liquidity::LiquidityHistory;
use super::{BacktestError, FeeModel, Result};
use crate::cpmm::PoolState;
use crate::dynamics::MarketPath;
use crate::estimation::SECONDS_PER_DAY;
use crate::strategy::{ClosedFormStrategy, ControlParams, LatticeConfig};

/// Orders smaller than this (in Y) are skipped.
pub const MIN_TRADE: f64 = 1e-6;

const MS_PER_DAY: f64 = SECONDS_PER_DAY * 1000.0;

/// Market state seen at one decision time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapePoint {
    pub timestamp_ms: i64,
    /// Days since the window start.
    pub t: f64,
    /// Days this decision covers, up to the next decision or the window end.
    pub dt: f64,
    pub z: f64,
    pub s: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketTape {
    pub start_ms: i64,
    /// Window length in days.
    pub horizon: f64,
    pub points: Vec<TapePoint>,
    /// Pool rate at the window end.
    pub z_end: f64,
}

impl MarketTape {
    pub fn z0(&self) -> f64 {
        self.points[0].z
    }

    /// Decision points at the observed swap times in `[start, start + horizon)`.
    ///
    /// Each decision sees the last recorded state strictly before its
    /// timestamp. The first decision also covers the gap from the window
    /// start, so the intervals sum to the horizon.
    pub fn from_dataset(ds: &EventDataset, liquidity: Option<&LiquidityHistory>, start_ms: i64, horizon_ms: i64) -> Result<Self> {
        if horizon_ms <= 0 {
            return Err(BacktestError::InvalidInput(format!("horizon must be positive, got {horizon_ms} ms")));
        }
        let end_ms = start_ms + horizon_ms;
        let (a, b) = (ds.swap_index_at(start_ms), ds.swap_index_at(end_ms));
        let mut times: Vec<i64> = ds.swaps[a..b].iter().map(|s| s.timestamp_ms).collect();
        times.dedup();
        if times.is_empty() {
            return Err(BacktestError::WindowUnderflow(format!("no swaps in [{start_ms}, {end_ms})")));
        }
        let state_before = |ts: i64| -> Result<(f64, f64)> {
            let i = ds.swap_index_at(ts);
            if i == 0 {
                return Err(BacktestError::WindowUnderflow(format!("no pool state before {ts}")));
            }
            let sw = &ds.swaps[i - 1];
            let depth = sw
                .depth
                .or_else(|| liquidity.map(|h| h.depth_before(ts, sw.rate)).filter(|d| *d > 0.0))
                .ok_or(BacktestError::MissingDepth { timestamp_ms: ts })?;
            Ok((sw.rate, depth))
        };
        let mut points = Vec::with_capacity(times.len());
        for (k, &ts) in times.iter().enumerate() {
            let (z, kappa) = state_before(ts)?;
            let s = ds.oracle_before(ts).ok_or(BacktestError::MissingOracle { timestamp_ms: ts })?;
            let from = if k == 0 { start_ms } else { ts };
            let to = times.get(k + 1).copied().unwrap_or(end_ms);
            points.push(TapePoint {
                timestamp_ms: ts,
                t: (ts - start_ms) as f64 / MS_PER_DAY,
                dt: (to - from) as f64 / MS_PER_DAY,
                z,
                s,
                kappa,
            });
        }
        let (z_end, _) = state_before(end_ms)?;
        Ok(Self { start_ms, horizon: horizon_ms as f64 / MS_PER_DAY, points, z_end })
    }

    /// Decision at every step of a simulated Model I path; the final node is
    /// the terminal state.
    pub fn from_path(path: &MarketPath) -> Result<Self> {
        let s = path.s.as_ref().ok_or_else(|| BacktestError::InvalidInput("path has no oracle series".into()))?;
        let n = path.len();
        if n < 2 {
            return Err(BacktestError::WindowUnderflow("path has fewer than two nodes".into()));
        }
        let points = (0..n - 1)
            .map(|k| TapePoint {
                timestamp_ms: (path.times[k] * MS_PER_DAY).round() as i64,
                t: path.times[k],
                dt: path.times[k + 1] - path.times[k],
                z: path.z[k],
                s: s[k],
                kappa: path.kappa[k],
            })
            .collect();
        Ok(Self { start_ms: 0, horizon: path.times[n - 1] - path.times[0], points, z_end: path.z[n - 1] })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub timestamp_ms: i64,
    pub t: f64,
    /// Positive sells Y.
    pub delta_y: f64,
    pub exec_rate: f64,
    pub gas_fee: f64,
    pub amm_fee: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub strategy: String,
    pub y0: f64,
    pub z0: f64,
    pub z_end: f64,
    pub fills: Vec<Fill>,
    /// Inventory before the first decision and after each one.
    pub inventory: Vec<f64>,
    /// Cash before the first decision and after each one, gross of fees.
    pub cash: Vec<f64>,
    pub gross_pnl: f64,
    pub net_pnl: f64,
    pub trade_count: usize,
    pub gas_total: f64,
    pub amm_total: f64,
}

impl ExecutionReport {
    pub fn terminal_inventory(&self) -> f64 {
        *self.inventory.last().unwrap()
    }

    /// Gross PnL rebuilt from the fills alone.
    pub fn recompute_gross(&self) -> f64 {
        let (mut cash, mut y) = (0.0, self.y0);
        for f in &self.fills {
            cash += f.delta_y * f.exec_rate;
            y -= f.delta_y;
        }
        cash + y * self.z_end - self.y0 * self.z0
    }

    pub fn fees(&self) -> f64 {
        self.gas_total + self.amm_total
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Replays a decision rule that maps `(point, inventory)` to an order size.
pub fn replay(
    tape: &MarketTape,
    name: &str,
    y0: f64,
    fees: &FeeModel,
    mut order: impl FnMut(&TapePoint, f64) -> Result<f64>,
) -> Result<ExecutionReport> {
    fees.validate()?;
    let n = tape.points.len();
    let mut y = y0;
    let mut x = 0.0;
    let mut inventory = Vec::with_capacity(n + 1);
    let mut cash = Vec::with_capacity(n + 1);
    inventory.push(y);
    cash.push(x);
    let mut fills = Vec::new();
    let (mut gas_total, mut amm_total) = (0.0, 0.0);
    for p in &tape.points {
        let dy = order(p, y)?;
        if !dy.is_finite() {
            return Err(BacktestError::InvalidInput(format!("non-finite order at {}", p.timestamp_ms)));
        }
        if dy.abs() >= MIN_TRADE {
            let rate = PoolState::from_rate_and_depth(p.z, p.kappa)?.execution_rate(dy)?;
            let (gas, amm) = (fees.gas_per_tx, fees.amm_fee(dy, rate));
            x += dy * rate;
            y -= dy;
            gas_total += gas;
            amm_total += amm;
            fills.push(Fill { timestamp_ms: p.timestamp_ms, t: p.t, delta_y: dy, exec_rate: rate, gas_fee: gas, amm_fee: amm });
        }
        inventory.push(y);
        cash.push(x);
    }
    let z0 = tape.z0();
    let gross = x + y * tape.z_end - y0 * z0;
    Ok(ExecutionReport {
        strategy: name.into(),
        y0,
        z0,
        z_end: tape.z_end,
        trade_count: fills.len(),
        fills,
        inventory,
        cash,
        gross_pnl: gross,
        net_pnl: gross - gas_total - amm_total,
        gas_total,
        amm_total,
    })
}

/// Feedback strategy on the constant-impact approximation, with `B` memoised
/// on a lattice around the opening rate.
pub fn closed_form_for(tape: &MarketTape, params: &ControlParams) -> Result<ClosedFormStrategy> {
    Ok(ClosedFormStrategy::with_lattice(*params, LatticeConfig::around(tape.z0()))?)
}

fn run_closed_form(tape: &MarketTape, strat: &ClosedFormStrategy, name: &str, y0: f64, fees: &FeeModel) -> Result<ExecutionReport> {
    replay(tape, name, y0, fees, |p, y| Ok(strat.speed(p.t, y, p.z, p.s)? * p.dt))
}

/// Liquidation of `y0` with the closed-form feedback speed.
pub fn run_liquidation(tape: &MarketTape, params: &ControlParams, y0: f64, fees: &FeeModel) -> Result<ExecutionReport> {
    run_closed_form(tape, &closed_form_for(tape, params)?, "closed_form", y0, fees)
}

/// Same engine starting flat, so only the oracle-signal term trades.
pub fn run_speculative(tape: &MarketTape, params: &ControlParams, fees: &FeeModel) -> Result<ExecutionReport> {
    run_closed_form(tape, &closed_form_for(tape, params)?, "speculative", 0.0, fees)
}

/// Constant speed `y0 / T`.
pub fn run_twap(tape: &MarketTape, y0: f64, fees: &FeeModel) -> Result<ExecutionReport> {
    let speed = y0 / tape.horizon;
    replay(tape, "twap", y0, fees, |p, _| Ok(speed * p.dt))
}

/// Whole inventory at the first decision.
pub fn run_single_order(tape: &MarketTape, y0: f64, fees: &FeeModel) -> Result<ExecutionReport> {
    let first = tape.points[0].timestamp_ms;
    replay(tape, "single_order", y0, fees, |p, _| Ok(if p.timestamp_ms == first { y0 } else { 0.0 }))
}
