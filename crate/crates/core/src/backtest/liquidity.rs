//! Time-indexed depth profile rebuilt from liquidity provision events.

use super::events::LpEvent;
use super::{BacktestError, Result};
use crate::cpmm::LiquidityProfile;

/// Cumulative depth per elementary range after each event.
#[derive(Debug, Clone, PartialEq)]
pub struct LiquidityHistory {
    /// Union of all tick boundaries, increasing.
    boundaries: Vec<f64>,
    /// `(timestamp, depths)` after each event; the first entry is the initial state.
    states: Vec<(i64, Vec<f64>)>,
}

/// Relative slack before a negative cumulative depth counts as underflow.
const UNDERFLOW_TOL: f64 = 1e-9;

fn position(boundaries: &[f64], x: f64) -> usize {
    boundaries.partition_point(|b| *b < x)
}

/// Replays `events` (sorted by time) on top of an optional initial profile.
pub fn reconstruct_liquidity(events: &[LpEvent], initial: Option<&LiquidityProfile>) -> Result<LiquidityHistory> {
    let mut boundaries: Vec<f64> = events.iter().flat_map(|e| [e.tick_lower, e.tick_upper]).collect();
    if let Some(p) = initial {
        boundaries.extend_from_slice(p.boundaries());
    }
    boundaries.sort_by(f64::total_cmp);
    boundaries.dedup();
    let ranges = boundaries.len().saturating_sub(1);
    let mut depths = vec![0.0; ranges];
    if let Some(p) = initial {
        for (i, d) in p.depths().iter().enumerate() {
            let (a, b) = (position(&boundaries, p.boundaries()[i]), position(&boundaries, p.boundaries()[i + 1]));
            depths[a..b].iter_mut().for_each(|x| *x += d);
        }
    }
    let start = events.first().map_or(i64::MIN, |e| e.timestamp_ms.saturating_sub(1));
    let mut states = vec![(start, depths.clone())];
    let mut supplied = vec![0.0f64; ranges];
    for e in events {
        if let Some(prev) = states.last() {
            if e.timestamp_ms < prev.0 {
                return Err(BacktestError::InvalidInput(format!("liquidity events out of order at {}", e.timestamp_ms)));
            }
        }
        let (a, b) = (position(&boundaries, e.tick_lower), position(&boundaries, e.tick_upper));
        for i in a..b {
            depths[i] += e.liquidity_delta;
            supplied[i] = supplied[i].max(depths[i].abs()).max(e.liquidity_delta.abs());
            if depths[i] < 0.0 {
                if depths[i] < -UNDERFLOW_TOL * supplied[i] {
                    return Err(BacktestError::LiquidityUnderflow {
                        timestamp_ms: e.timestamp_ms,
                        lo: boundaries[i],
                        hi: boundaries[i + 1],
                        depth: depths[i],
                    });
                }
                depths[i] = 0.0;
            }
        }
        states.push((e.timestamp_ms, depths.clone()));
    }
    Ok(LiquidityHistory { boundaries, states })
}

impl LiquidityHistory {
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Depths after every event with timestamp `<= ts`.
    pub fn depths_at(&self, ts: i64) -> &[f64] {
        let i = self.states.partition_point(|s| s.0 <= ts);
        &self.states[i.saturating_sub(1)].1
    }

    /// Depths strictly before `ts`.
    pub fn depths_before(&self, ts: i64) -> &[f64] {
        let i = self.states.partition_point(|s| s.0 < ts);
        &self.states[i.saturating_sub(1)].1
    }

    /// Depth of the range holding `rate` at `ts`; zero outside all ranges.
    pub fn depth_at(&self, ts: i64, rate: f64) -> f64 {
        self.lookup(self.depths_at(ts), rate)
    }

    pub fn depth_before(&self, ts: i64, rate: f64) -> f64 {
        self.lookup(self.depths_before(ts), rate)
    }

    fn lookup(&self, depths: &[f64], rate: f64) -> f64 {
        if depths.is_empty() || !(rate >= self.boundaries[0] && rate < *self.boundaries.last().unwrap()) {
            return 0.0;
        }
        depths[self.boundaries.partition_point(|b| *b <= rate) - 1]
    }

    /// Profile at `ts`, or `None` when no range carries depth.
    pub fn profile_at(&self, ts: i64) -> Option<LiquidityProfile> {
        let d = self.depths_at(ts);
        if !d.iter().any(|v| *v > 0.0) {
            return None;
        }
        LiquidityProfile::new(self.boundaries.clone(), d.to_vec()).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(ts: i64, lo: f64, hi: f64, d: f64) -> LpEvent {
        LpEvent { timestamp_ms: ts, tick_lower: lo, tick_upper: hi, liquidity_delta: d }
    }

    #[test]
    fn single_deposit() {
        let h = reconstruct_liquidity(&[ev(10, 1.0, 2.0, 50.0)], None).unwrap();
        assert_eq!(h.depth_at(10, 1.5), 50.0);
        assert_eq!(h.depth_at(10, 1.0), 50.0);
        assert_eq!(h.depth_at(10, 2.0), 0.0);
        assert_eq!(h.depth_at(10, 0.5), 0.0);
        assert_eq!(h.depth_at(9, 1.5), 0.0);
        assert_eq!(h.depth_before(10, 1.5), 0.0);
        assert_eq!(h.profile_at(10).unwrap().depth_at(1.2).unwrap(), 50.0);
    }

    #[test]
    fn deposit_then_withdrawal_is_empty() {
        let h = reconstruct_liquidity(&[ev(1, 1.0, 2.0, 50.0), ev(2, 1.0, 2.0, -50.0)], None).unwrap();
        assert!(h.profile_at(2).is_none());
        assert!(h.profile_at(1).is_some());
    }

    #[test]
    fn underflow_names_timestamp() {
        let err = reconstruct_liquidity(&[ev(1, 1.0, 2.0, 50.0), ev(7, 1.5, 3.0, -60.0)], None).unwrap_err();
        assert!(matches!(err, BacktestError::LiquidityUnderflow { timestamp_ms: 7, .. }), "{err:?}");
    }

    #[test]
    fn initial_profile_is_included() {
        let init = LiquidityProfile::new(vec![1.0, 3.0], vec![10.0]).unwrap();
        let h = reconstruct_liquidity(&[ev(5, 2.0, 4.0, 5.0)], Some(&init)).unwrap();
        assert_eq!(h.depth_at(0, 2.5), 10.0);
        assert_eq!(h.depth_at(5, 2.5), 15.0);
        assert_eq!(h.depth_at(5, 3.5), 5.0);
        assert_eq!(h.depth_at(5, 1.5), 10.0);
    }

    proptest! {
        #[test]
        fn overlapping_deposits_match_brute_force(
            raw in prop::collection::vec((0u32..20, 1u32..8, 1u32..100), 1..30),
            probes in prop::collection::vec(0.0f64..30.0, 20),
        ) {
            let events: Vec<LpEvent> = raw
                .iter()
                .enumerate()
                .map(|(k, &(lo, w, d))| ev(k as i64, 1.0 + lo as f64, 1.0 + (lo + w) as f64, d as f64))
                .collect();
            let h = reconstruct_liquidity(&events, None).unwrap();
            for &x in &probes {
                for upto in [0usize, events.len() / 2, events.len() - 1] {
                    let brute: f64 = events[..=upto]
                        .iter()
                        .filter(|e| x >= e.tick_lower && x < e.tick_upper)
                        .map(|e| e.liquidity_delta)
                        .sum();
                    prop_assert!((h.depth_at(upto as i64, x) - brute).abs() < 1e-9);
                }
            }
        }
    }
}
