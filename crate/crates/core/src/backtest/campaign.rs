//! Rolling estimation and execution windows.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info};

use super::events::EventDataset;
use super::liquidity::{reconstruct_liquidity, LiquidityHistory};
use super::replay::{closed_form_for, replay, run_single_order, run_twap, ExecutionReport, MarketTape};
use super::{BacktestError, FeeModel, Result};
use crate::estimation::{size_inventory, EstimationResult, SECONDS_PER_DAY};
use crate::stats::std_dev;
use crate::strategy::ControlParams;

const MS_PER_DAY: f64 = SECONDS_PER_DAY * 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub in_sample_ms: i64,
    pub horizon_ms: i64,
    pub shift_ms: i64,
    /// Share of in-sample volume, pro rata to the horizon, to liquidate.
    pub participation: f64,
    pub phi: f64,
    pub alpha: f64,
    pub phi_speculative: f64,
    pub fees: FeeModel,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            in_sample_ms: 24 * 3_600_000,
            horizon_ms: 2 * 3_600_000,
            shift_ms: 2 * 3_600_000,
            participation: 0.5,
            phi: 0.005,
            alpha: 10.0,
            phi_speculative: super::SPECULATIVE_PHI_USDC,
            fees: FeeModel::default(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_sample_ms <= 0 || self.horizon_ms <= 0 || self.shift_ms <= 0 {
            return Err(BacktestError::InvalidInput(format!("window lengths must be positive: {self:?}")));
        }
        self.fees.validate()
    }
}

/// Number of windows that fit in `span_ms`.
pub fn window_count(span_ms: i64, in_sample_ms: i64, horizon_ms: i64, shift_ms: i64) -> usize {
    let free = span_ms - in_sample_ms - horizon_ms;
    if free < 0 || shift_ms <= 0 {
        0
    } else {
        (free / shift_ms) as usize + 1
    }
}

/// Reports of every strategy on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub index: usize,
    pub start_ms: i64,
    pub estimation: Option<EstimationResult>,
    pub reports: Vec<ExecutionReport>,
}

impl WindowOutcome {
    pub fn report(&self, strategy: &str) -> Option<&ExecutionReport> {
        self.reports.iter().find(|r| r.strategy == strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub windows: usize,
    pub gross_mean: f64,
    pub gross_std: f64,
    pub gross_se: f64,
    pub net_mean: f64,
    pub trades_mean: f64,
    pub fees_mean: f64,
}

/// Sum after sorting, so the result does not depend on input order.
fn ordered_mean(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ordered_std(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    std_dev(&xs)
}

/// Per-strategy statistics in the order strategies first appear.
pub fn summarise(windows: &[WindowOutcome]) -> Vec<StrategySummary> {
    let mut names: Vec<String> = Vec::new();
    for w in windows {
        for r in &w.reports {
            if !names.contains(&r.strategy) {
                names.push(r.strategy.clone());
            }
        }
    }
    names
        .into_iter()
        .map(|name| {
            let reports: Vec<&ExecutionReport> = windows.iter().filter_map(|w| w.report(&name)).collect();
            let col = |f: &dyn Fn(&ExecutionReport) -> f64| reports.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let n = reports.len();
            let gross_std = ordered_std(col(&|r| r.gross_pnl));
            StrategySummary {
                strategy: name,
                windows: n,
                gross_mean: ordered_mean(col(&|r| r.gross_pnl)),
                gross_std,
                gross_se: gross_std / (n as f64).sqrt(),
                net_mean: ordered_mean(col(&|r| r.net_pnl)),
                trades_mean: ordered_mean(col(&|r| r.trade_count as f64)),
                fees_mean: ordered_mean(col(&|r| r.fees())),
            }
        })
        .collect()
}

/// Mean gross-PnL difference `a - b` over windows holding both, with the
/// standard error of the paired differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedGap {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl PairedGap {
    pub fn between(windows: &[WindowOutcome], a: &str, b: &str) -> Self {
        let diffs: Vec<f64> = windows
            .iter()
            .filter_map(|w| Some(w.report(a)?.gross_pnl - w.report(b)?.gross_pnl))
            .collect();
        let n = diffs.len();
        Self { mean: ordered_mean(diffs.clone()), se: ordered_std(diffs) / (n as f64).sqrt(), n }
    }

    /// Gap in units of its standard error.
    pub fn z_score(&self) -> f64 {
        self.mean / self.se
    }
}

pub fn write_summary_csv<W: Write>(rows: &[StrategySummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "windows", "gross_avg_pnl", "gross_std", "avg_num_trades", "avg_fees", "net_avg_pnl"])?;
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.windows.to_string(),
            format!("{:.2}", r.gross_mean),
            format!("{:.2}", r.gross_std),
            format!("{:.2}", r.trades_mean),
            format!("{:.2}", r.fees_mean),
            format!("{:.2}", r.net_mean),
        ])?;
    }
    w.flush().map_err(|e| BacktestError::Io(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub windows: Vec<WindowOutcome>,
    /// `(window index, reason)` for windows that could not be run.
    pub skipped: Vec<(usize, String)>,
    pub summary: Vec<StrategySummary>,
}

/// Estimation from the swaps in `[start, end)`, with the traded Y volume.
pub fn estimate_window(ds: &EventDataset, liq: Option<&LiquidityHistory>, start: i64, end: i64) -> Result<(EstimationResult, f64)> {
    let swaps = &ds.swaps[ds.swap_index_at(start)..ds.swap_index_at(end)];
    let mut ts = Vec::with_capacity(swaps.len());
    let mut z = Vec::with_capacity(swaps.len());
    let mut s = Vec::with_capacity(swaps.len());
    let mut depth = Vec::with_capacity(swaps.len());
    for sw in swaps {
        let o = ds.oracle_before(sw.timestamp_ms + 1).ok_or(BacktestError::MissingOracle { timestamp_ms: sw.timestamp_ms })?;
        let d = sw
            .depth
            .or_else(|| liq.map(|h| h.depth_at(sw.timestamp_ms, sw.rate)).filter(|d| *d > 0.0))
            .ok_or(BacktestError::MissingDepth { timestamp_ms: sw.timestamp_ms })?;
        ts.push(sw.timestamp_ms);
        z.push(sw.rate);
        s.push(o);
        depth.push(d);
    }
    let volume = swaps.iter().map(|s| s.delta_y.abs()).sum();
    Ok((EstimationResult::from_observations(&ts, &z, &s, &depth)?, volume))
}

fn run_window(
    ds: &EventDataset,
    liq: Option<&LiquidityHistory>,
    cfg: &CampaignConfig,
    index: usize,
    start: i64,
) -> Result<WindowOutcome> {
    let out_start = start + cfg.in_sample_ms;
    let (est, volume) = estimate_window(ds, liq, start, out_start)?;
    let beta = est.beta_hat.ok_or_else(|| BacktestError::InvalidInput("mean reversion not identified".into()))?;
    let horizon = cfg.horizon_ms as f64 / MS_PER_DAY;
    let y0 = size_inventory(volume, cfg.in_sample_ms as f64 / MS_PER_DAY, horizon, cfg.participation)?;
    let params = ControlParams {
        phi: cfg.phi,
        alpha: cfg.alpha,
        eta: est.eta,
        horizon,
        beta,
        gamma: est.gamma_hat,
        sigma: est.sigma_hat,
        kappa: est.kappa0,
    };
    params.validate()?;
    let tape = MarketTape::from_dataset(ds, liq, out_start, cfg.horizon_ms)?;
    let reports = run_all(&tape, &params, y0, cfg.phi_speculative, &cfg.fees)?;
    Ok(WindowOutcome { index, start_ms: start, estimation: Some(est), reports })
}

/// Closed-form liquidation, TWAP, single order and speculation on one tape.
pub(super) fn run_all(
    tape: &MarketTape,
    params: &ControlParams,
    y0: f64,
    phi_speculative: f64,
    fees: &FeeModel,
) -> Result<Vec<ExecutionReport>> {
    let liq = closed_form_for(tape, params)?;
    let spec = closed_form_for(tape, &ControlParams { phi: phi_speculative, ..*params })?;
    Ok(vec![
        replay(tape, "closed_form", y0, fees, |p, y| Ok(liq.speed(p.t, y, p.z, p.s)? * p.dt))?,
        run_twap(tape, y0, fees)?,
        run_single_order(tape, y0, fees)?,
        replay(tape, "speculative", 0.0, fees, |p, y| Ok(spec.speed(p.t, y, p.z, p.s)? * p.dt))?,
    ])
}

/// Estimates and trades every window; windows that fail are skipped and
/// counted. Windows run in parallel; results keep window order.
pub fn rolling_campaign(ds: &EventDataset, cfg: &CampaignConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let (first, last) = ds.span_ms().ok_or_else(|| BacktestError::WindowUnderflow("empty dataset".into()))?;
    let n = window_count(last - first, cfg.in_sample_ms, cfg.horizon_ms, cfg.shift_ms);
    if n == 0 {
        return Err(BacktestError::WindowUnderflow(format!(
            "dataset spans {} ms, need {}",
            last - first,
            cfg.in_sample_ms + cfg.horizon_ms
        )));
    }
    let liq = if ds.lp_events.is_empty() { None } else { Some(reconstruct_liquidity(&ds.lp_events, None)?) };
    info!(windows = n, "running campaign");
    let results: Vec<std::result::Result<WindowOutcome, (usize, String)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let start = first + i as i64 * cfg.shift_ms;
            run_window(ds, liq.as_ref(), cfg, i, start).map_err(|e| {
                debug!(window = i, error = %e, "window skipped");
                (i, e.to_string())
            })
        })
        .collect();
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(w) => windows.push(w),
            Err(s) => skipped.push(s),
        }
    }
    let summary = summarise(&windows);
    Ok(CampaignResult { windows, skipped, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        let h = 3_600_000;
        assert_eq!(window_count(240 * h, 24 * h, 2 * h, 2 * h), 108);
        assert_eq!(window_count(26 * h, 24 * h, 2 * h, 2 * h), 1);
        assert_eq!(window_count(25 * h, 24 * h, 2 * h, 2 * h), 0);
    }

    fn fake(index: usize, gross: [f64; 2]) -> WindowOutcome {
        let rep = |name: &str, g: f64| ExecutionReport {
            strategy: name.into(),
            y0: 1.0,
            z0: 1.0,
            z_end: 1.0,
            fills: vec![],
            inventory: vec![1.0],
            cash: vec![0.0],
            gross_pnl: g,
            net_pnl: g - 1.0,
            trade_count: index,
            gas_total: 1.0,
            amm_total: 0.0,
        };
        WindowOutcome { index, start_ms: 0, estimation: None, reports: vec![rep("a", gross[0]), rep("b", gross[1])] }
    }

    #[test]
    fn summary_is_order_independent() {
        let mut ws: Vec<WindowOutcome> = (0..40).map(|i| fake(i, [(i as f64 * 0.37).sin() * 1e4, i as f64 * 0.1])).collect();
        let a = summarise(&ws);
        ws.reverse();
        ws.swap(3, 17);
        assert_eq!(summarise(&ws), a);
        assert_eq!(a[0].strategy, "a");
        assert_eq!(a[1].windows, 40);
        let gap = PairedGap::between(&ws, "b", "a");
        assert_eq!(gap.n, 40);
        assert!((gap.mean - (a[1].gross_mean - a[0].gross_mean)).abs() < 1e-9);
    }

    #[test]
    fn summary_csv_columns() {
        let rows = summarise(&[fake(1, [1.0, 2.0]), fake(2, [3.0, 4.0])]);
        let mut buf = Vec::new();
        write_summary_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("strategy,windows,gross_avg_pnl,gross_std,avg_num_trades,avg_fees,net_avg_pnl\n"));
        assert!(text.contains("a,2,2.00,1.41,1.50,1.00,1.00"));
    }
}
