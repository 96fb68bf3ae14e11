//! Simulated paths through the event files, estimation and the rolling campaign.

use std::fs::{self, File};

use cpmm_lab::backtest::{
    events_from_path, load_events, rolling_campaign, write_oracle, write_swaps, CampaignConfig, EventDataset, FeeModel,
};
use cpmm_lab::dynamics::{simulate_model1, Model1Params};
use cpmm_lab::estimation::SECONDS_PER_DAY;

const HOUR_MS: i64 = 3_600_000;

fn params(days: f64) -> Model1Params {
    Model1Params { sigma: 0.045, beta: 657.9, gamma: 0.034, s0: 2690.0, z0: 2690.0, horizon: days, kappa: 22_561_783.0 }
}

/// 30 hours of events: three 24 h + 2 h windows with a 2 h shift.
fn dataset(seed: u64) -> EventDataset {
    let path = simulate_model1(&params(30.0 / 24.0), 13.0 / SECONDS_PER_DAY, seed).unwrap();
    events_from_path(&path, 1_000).unwrap()
}

#[test]
fn campaign_from_files_matches_in_memory() {
    let ds = dataset(21);
    let dir = tempfile::tempdir().unwrap();
    let (sp, op) = (dir.path().join("swaps.csv"), dir.path().join("oracle.csv"));
    write_swaps(&ds.swaps, File::create(&sp).unwrap()).unwrap();
    write_oracle(&ds.oracle, File::create(&op).unwrap()).unwrap();
    let loaded = load_events(&sp, None, &op).unwrap();
    assert_eq!(loaded.swaps, ds.swaps);
    assert_eq!(loaded.oracle, ds.oracle);

    let cfg = CampaignConfig::default();
    let a = rolling_campaign(&ds, &cfg).unwrap();
    let b = rolling_campaign(&loaded, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.windows.len(), 3);
    assert!(a.skipped.is_empty());
    for w in &a.windows {
        let est = w.estimation.as_ref().unwrap();
        assert!((est.sigma_hat / 0.045 - 1.0).abs() < 0.05, "{est:?}");
        assert!((est.gamma_hat / 0.034 - 1.0).abs() < 0.05, "{est:?}");
        assert_eq!(w.reports.len(), 4);
        for r in &w.reports {
            assert_eq!(r.recompute_gross(), r.gross_pnl);
            assert_eq!(r.net_pnl, r.gross_pnl - r.gas_total - r.amm_total);
            // the tape covers exactly the out-of-sample horizon
            assert!(r.fills.iter().all(|f| f.timestamp_ms >= w.start_ms + cfg.in_sample_ms));
            assert!(r.fills.iter().all(|f| f.timestamp_ms < w.start_ms + cfg.in_sample_ms + cfg.horizon_ms));
        }
        let liq = w.report("closed_form").unwrap();
        assert!(liq.terminal_inventory().abs() < 0.01 * liq.y0);
    }
}

#[test]
fn depth_from_liquidity_events_matches_depth_column() {
    let ds = dataset(5);
    let kappa = ds.swaps[0].depth.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (sp, op, lp) = (dir.path().join("swaps.csv"), dir.path().join("oracle.csv"), dir.path().join("lp.csv"));
    let bare: Vec<_> = ds.swaps.iter().map(|s| cpmm_lab::backtest::SwapEvent { depth: None, ..*s }).collect();
    write_swaps(&bare, File::create(&sp).unwrap()).unwrap();
    write_oracle(&ds.oracle, File::create(&op).unwrap()).unwrap();
    // one position covering every rate the path visits, added before trading starts
    fs::write(&lp, format!("timestamp_ms,tick_lower,tick_upper,liquidity_delta\n0,100,100000,{kappa}\n")).unwrap();

    let with_lp = load_events(&sp, Some(&lp), &op).unwrap();
    let cfg = CampaignConfig { fees: FeeModel::zero(), ..Default::default() };
    let a = rolling_campaign(&ds, &cfg).unwrap();
    let b = rolling_campaign(&with_lp, &cfg).unwrap();
    assert_eq!(a.windows.len(), b.windows.len());
    for (x, y) in a.windows.iter().zip(&b.windows) {
        for (r, s) in x.reports.iter().zip(&y.reports) {
            assert!((r.gross_pnl - s.gross_pnl).abs() <= 1e-9 * r.gross_pnl.abs().max(1.0), "{} {} {}", r.strategy, r.gross_pnl, s.gross_pnl);
        }
    }

    let no_depth = load_events(&sp, None, &op).unwrap();
    let c = rolling_campaign(&no_depth, &cfg).unwrap();
    assert!(c.windows.is_empty());
    assert_eq!(c.skipped.len(), 3);
}

#[test]
fn short_data_is_a_window_underflow() {
    let path = simulate_model1(&params(0.5), 13.0 / SECONDS_PER_DAY, 1).unwrap();
    let ds = events_from_path(&path, 0).unwrap();
    let err = rolling_campaign(&ds, &CampaignConfig::default()).unwrap_err();
    assert!(err.to_string().contains("window underflow"), "{err}");
    let cfg = CampaignConfig { in_sample_ms: 8 * HOUR_MS, horizon_ms: HOUR_MS, shift_ms: HOUR_MS, ..Default::default() };
    // 12 h of data leave 3 h of slack: starts at 0, 1, 2 and 3 h
    assert_eq!(rolling_campaign(&ds, &cfg).unwrap().windows.len(), 4);
}
