//! In-sample calibration of the rate dynamics and execution parameters.
//!
//! The oracle is fit from `dlog S = -sigma^2/2 dt + sigma sqrt(dt) u` and
//! the pool from `dlog Z = -gamma^2/2 dt + beta ((S - Z)/Z) dt + gamma sqrt(dt) e`
//! by least squares with a free intercept.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{mean, std_dev, weighted_ols};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const MIN_INCREMENTS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("series too short: {got} increments, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("empty window: {0}")]
    EmptyWindow(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

/// Spacing of the observations.
#[derive(Debug, Clone, Copy)]
pub enum Spacing<'a> {
    /// Every increment spans the same time (days).
    Uniform(f64),
    /// Per-increment durations (days); increments are weighted by `1 / dt`.
    PerIncrement(&'a [f64]),
}

impl Spacing<'_> {
    fn check(&self, increments: usize) -> Result<()> {
        let ok = |d: f64| d.is_finite() && d > 0.0;
        match self {
            Spacing::Uniform(d) if !ok(*d) => Err(EstimationError::InvalidInput(format!("dt must be positive, got {d}"))),
            Spacing::PerIncrement(ds) if ds.len() != increments => Err(EstimationError::InvalidInput(format!(
                "{} durations for {increments} increments",
                ds.len()
            ))),
            Spacing::PerIncrement(ds) if !ds.iter().all(|d| ok(*d)) => {
                Err(EstimationError::InvalidInput("durations must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    fn dt(&self, k: usize) -> f64 {
        match self {
            Spacing::Uniform(d) => *d,
            Spacing::PerIncrement(ds) => ds[k],
        }
    }
}

fn check_series(name: &str, xs: &[f64]) -> Result<()> {
    if xs.len() < MIN_INCREMENTS + 1 {
        return Err(EstimationError::TooShort { got: xs.len().saturating_sub(1), need: MIN_INCREMENTS });
    }
    if let Some(i) = xs.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(EstimationError::InvalidInput(format!("{name}[{i}] = {} is not a positive rate", xs[i])));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleVolEstimate {
    pub sigma_hat: f64,
    pub sigma_se: f64,
    /// `-sigma_hat^2 dt / 2`, what the drift should be under the model.
    pub implied_intercept: f64,
    pub mean_increment: f64,
    pub n: usize,
}

/// Oracle volatility from the sample standard deviation of log increments.
pub fn estimate_oracle_vol(s: &[f64], dt: f64) -> Result<OracleVolEstimate> {
    check_series("S", s)?;
    Spacing::Uniform(dt).check(s.len() - 1)?;
    let inc: Vec<f64> = s.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let n = inc.len();
    let sigma_hat = std_dev(&inc) / dt.sqrt();
    Ok(OracleVolEstimate {
        sigma_hat,
        sigma_se: sigma_hat / (2.0 * (n - 1) as f64).sqrt(),
        implied_intercept: -0.5 * sigma_hat * sigma_hat * dt,
        mean_increment: mean(&inc),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolDynamicsEstimate {
    /// `None` when the oracle never deviates from the pool rate.
    pub beta_hat: Option<f64>,
    pub beta_se: Option<f64>,
    pub gamma_hat: f64,
    pub gamma_se: f64,
    pub intercept: f64,
    /// `-gamma_hat^2 dt / 2` at the mean spacing.
    pub implied_intercept: f64,
    pub n: usize,
}

/// Mean-reversion speed and pool volatility from aligned `Z` and `S` series.
pub fn estimate_pool_dynamics(z: &[f64], s: &[f64], spacing: Spacing<'_>) -> Result<PoolDynamicsEstimate> {
    check_series("Z", z)?;
    check_series("S", s)?;
    if z.len() != s.len() {
        return Err(EstimationError::InvalidInput(format!("Z has {} points, S has {}", z.len(), s.len())));
    }
    let n = z.len() - 1;
    spacing.check(n)?;
    let y: Vec<f64> = z.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let x: Vec<f64> = (0..n).map(|k| (s[k] - z[k]) / z[k] * spacing.dt(k)).collect();
    let weights: Option<Vec<f64>> = match spacing {
        Spacing::Uniform(_) => None,
        Spacing::PerIncrement(ds) => Some(ds.iter().map(|d| 1.0 / d).collect()),
    };
    // variance of a weighted residual is gamma^2 times the harmonic mean spacing
    let dt_eff = match spacing {
        Spacing::Uniform(d) => d,
        Spacing::PerIncrement(ds) => n as f64 / ds.iter().map(|d| 1.0 / d).sum::<f64>(),
    };
    let mean_dt = (0..n).map(|k| spacing.dt(k)).sum::<f64>() / n as f64;
    let (beta_hat, beta_se, intercept, resid) = match weighted_ols(&x, &y, weights.as_deref()) {
        Some(fit) => (Some(fit.slope), Some(fit.slope_se), fit.intercept, fit.residual_std),
        None => (None, None, mean(&y), std_dev(&y)),
    };
    let gamma_hat = resid / dt_eff.sqrt();
    Ok(PoolDynamicsEstimate {
        beta_hat,
        beta_se,
        gamma_hat,
        gamma_se: gamma_hat / (2.0 * (n - 2) as f64).sqrt(),
        intercept,
        implied_intercept: -0.5 * gamma_hat * gamma_hat * mean_dt,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionCalibration {
    /// Mean inter-trade interval (days).
    pub dt_bar: f64,
    pub eta: f64,
    pub kappa0: f64,
    pub trades: usize,
}

/// Trading frequency, `eta = dt_bar` and the last observed depth.
pub fn calibrate_execution(timestamps_ms: &[i64], depths: &[f64]) -> Result<ExecutionCalibration> {
    if timestamps_ms.len() < 2 {
        return Err(EstimationError::EmptyWindow(format!("{} trades, need at least 2", timestamps_ms.len())));
    }
    let Some(&kappa0) = depths.last() else {
        return Err(EstimationError::EmptyWindow("no depth observations".into()));
    };
    if !(kappa0.is_finite() && kappa0 > 0.0) {
        return Err(EstimationError::InvalidInput(format!("last depth {kappa0} is not positive")));
    }
    let span = (timestamps_ms[timestamps_ms.len() - 1] - timestamps_ms[0]) as f64 / 1000.0;
    if !(span > 0.0) {
        return Err(EstimationError::InvalidInput("trade timestamps do not advance".into()));
    }
    let dt_bar = span / (timestamps_ms.len() - 1) as f64 / SECONDS_PER_DAY;
    Ok(ExecutionCalibration { dt_bar, eta: dt_bar, kappa0, trades: timestamps_ms.len() })
}

/// Inventory to liquidate: a share of the in-sample volume, pro rata to the horizon.
pub fn size_inventory(in_sample_volume: f64, in_sample_span: f64, horizon: f64, participation: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&participation) {
        return Err(EstimationError::InvalidInput(format!("participation {participation} outside [0, 1]")));
    }
    if !(in_sample_span > 0.0 && horizon > 0.0) {
        return Err(EstimationError::InvalidInput("spans must be positive".into()));
    }
    Ok(participation * in_sample_volume.abs() * horizon / in_sample_span)
}

/// Per-window estimation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub window_start_ms: i64,
    pub window_end_ms: i64,
    pub sigma_hat: f64,
    pub sigma_se: f64,
    pub beta_hat: Option<f64>,
    pub beta_se: Option<f64>,
    pub gamma_hat: f64,
    pub gamma_se: f64,
    pub pool_intercept: f64,
    pub pool_implied_intercept: f64,
    pub oracle_mean_increment: f64,
    pub oracle_implied_intercept: f64,
    pub dt_bar: f64,
    pub eta: f64,
    pub kappa0: f64,
    pub increments: usize,
    pub trades: usize,
}

impl EstimationResult {
    pub fn from_parts(
        window: (i64, i64),
        oracle: &OracleVolEstimate,
        pool: &PoolDynamicsEstimate,
        exec: &ExecutionCalibration,
    ) -> Self {
        Self {
            window_start_ms: window.0,
            window_end_ms: window.1,
            sigma_hat: oracle.sigma_hat,
            sigma_se: oracle.sigma_se,
            beta_hat: pool.beta_hat,
            beta_se: pool.beta_se,
            gamma_hat: pool.gamma_hat,
            gamma_se: pool.gamma_se,
            pool_intercept: pool.intercept,
            pool_implied_intercept: pool.implied_intercept,
            oracle_mean_increment: oracle.mean_increment,
            oracle_implied_intercept: oracle.implied_intercept,
            dt_bar: exec.dt_bar,
            eta: exec.eta,
            kappa0: exec.kappa0,
            increments: pool.n,
            trades: exec.trades,
        }
    }

    /// Estimates a window from trade-time observations of `Z`, `S` and depth.
    /// The regressions use the mean trade spacing as `dt`.
    pub fn from_observations(timestamps_ms: &[i64], z: &[f64], s: &[f64], depths: &[f64]) -> Result<Self> {
        if timestamps_ms.len() != z.len() {
            return Err(EstimationError::InvalidInput("timestamps and rates differ in length".into()));
        }
        let exec = calibrate_execution(timestamps_ms, depths)?;
        let oracle = estimate_oracle_vol(s, exec.dt_bar)?;
        let pool = estimate_pool_dynamics(z, s, Spacing::Uniform(exec.dt_bar))?;
        Ok(Self::from_parts((timestamps_ms[0], timestamps_ms[timestamps_ms.len() - 1]), &oracle, &pool, &exec))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimation record serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_model1, Model1Params};
    use proptest::prelude::*;

    const DT13: f64 = 13.0 / SECONDS_PER_DAY;

    fn eth_usdc_like(horizon_steps: usize) -> Model1Params {
        Model1Params {
            sigma: 0.045,
            beta: 657.9,
            gamma: 0.034,
            s0: 2690.0,
            z0: 2690.0,
            horizon: horizon_steps as f64 * DT13,
            kappa: 2.2e7,
        }
    }

    #[test]
    fn constant_series_has_zero_vol() {
        let est = estimate_oracle_vol(&[5.0; 40], 0.01).unwrap();
        assert_eq!(est.sigma_hat, 0.0);
        assert_eq!(est.mean_increment, 0.0);
    }

    #[test]
    fn short_series_rejected() {
        assert_eq!(estimate_oracle_vol(&[1.0; 30], 0.01), Err(EstimationError::TooShort { got: 29, need: 30 }));
        assert!(estimate_oracle_vol(&[1.0; 31], 0.01).is_ok());
        assert!(estimate_oracle_vol(&[1.0; 40], 0.0).is_err());
    }

    #[test]
    fn recovers_simulated_parameters() {
        let p = eth_usdc_like(100_000);
        let path = simulate_model1(&p, DT13, 3).unwrap();
        let s = path.s.as_ref().unwrap();
        let sig = estimate_oracle_vol(s, DT13).unwrap();
        assert!((sig.sigma_hat / p.sigma - 1.0).abs() < 0.01, "{}", sig.sigma_hat);
        let pool = estimate_pool_dynamics(&path.z, s, Spacing::Uniform(DT13)).unwrap();
        let beta = pool.beta_hat.unwrap();
        assert!((beta / p.beta - 1.0).abs() < 0.1, "{beta}");
        assert!((pool.gamma_hat / p.gamma - 1.0).abs() < 0.02, "{}", pool.gamma_hat);
        assert!(pool.beta_se.unwrap() < 0.05 * beta);
    }

    #[test]
    fn zero_noise_relaxation() {
        // gamma = sigma = 0: Z relaxes deterministically towards a fixed S
        let p = Model1Params { sigma: 0.0, gamma: 0.0, z0: 2689.9, ..eth_usdc_like(60) };
        let path = simulate_model1(&p, DT13, 0).unwrap();
        let pool = estimate_pool_dynamics(&path.z, path.s.as_ref().unwrap(), Spacing::Uniform(DT13)).unwrap();
        assert!(pool.gamma_hat <= 1e-6, "{}", pool.gamma_hat);
        assert!((pool.beta_hat.unwrap() / p.beta - 1.0).abs() < 0.01);
    }

    #[test]
    fn degenerate_regressor_flagged() {
        let z: Vec<f64> = (0..50).map(|k| 100.0 * (1.0 + 0.001 * (k as f64).sin())).collect();
        let pool = estimate_pool_dynamics(&z, &z, Spacing::Uniform(0.01)).unwrap();
        assert_eq!(pool.beta_hat, None);
        assert!(pool.gamma_hat > 0.0);
    }

    #[test]
    fn per_increment_spacing_matches_uniform_when_equal() {
        let p = eth_usdc_like(5_000);
        let path = simulate_model1(&p, DT13, 9).unwrap();
        let s = path.s.as_ref().unwrap();
        let ds = vec![DT13; path.len() - 1];
        let a = estimate_pool_dynamics(&path.z, s, Spacing::Uniform(DT13)).unwrap();
        let b = estimate_pool_dynamics(&path.z, s, Spacing::PerIncrement(&ds)).unwrap();
        assert!((a.beta_hat.unwrap() - b.beta_hat.unwrap()).abs() < 1e-9 * a.beta_hat.unwrap().abs());
        assert!((a.gamma_hat - b.gamma_hat).abs() < 1e-12);
        assert!(estimate_pool_dynamics(&path.z, s, Spacing::PerIncrement(&ds[1..])).is_err());
    }

    #[test]
    fn execution_calibration() {
        let ts: Vec<i64> = (0..10).map(|k| k * 13_000).collect();
        let c = calibrate_execution(&ts, &[1.0, 2.0, 3.0]).unwrap();
        assert!((c.dt_bar - 1.5046e-4).abs() < 1e-8);
        assert_eq!(c.eta, c.dt_bar);
        assert_eq!(c.kappa0, 3.0);
        let c = calibrate_execution(&[0, 360_000], &[1.0]).unwrap();
        assert!((c.dt_bar - 4.1667e-3).abs() < 1e-7);
        let c = calibrate_execution(&[5_000, 65_000], &[1.0]).unwrap();
        assert_eq!(c.dt_bar, 60.0 / SECONDS_PER_DAY);
        assert!(calibrate_execution(&[1], &[1.0]).is_err());
        assert!(calibrate_execution(&[1, 2], &[]).is_err());
    }

    #[test]
    fn inventory_sizing() {
        assert_eq!(size_inventory(4031.0, 1.0, 0.5, 0.0).unwrap(), 0.0);
        assert!((size_inventory(4031.0, 1.0, 0.5, 0.5).unwrap() - 1007.75).abs() < 1e-9);
        assert!((size_inventory(238_039.0, 24.0, 2.0, 0.5).unwrap() - 9918.29).abs() < 0.01);
        assert!(size_inventory(1.0, 1.0, 1.0, 1.5).is_err());
    }

    #[test]
    fn record_serializes() {
        let p = eth_usdc_like(2_000);
        let path = simulate_model1(&p, DT13, 1).unwrap();
        let ts: Vec<i64> = (0..path.len() as i64).map(|k| k * 13_000).collect();
        let rec = EstimationResult::from_observations(&ts, &path.z, path.s.as_ref().unwrap(), &path.kappa).unwrap();
        let back: EstimationResult = serde_json::from_str(&rec.to_json()).unwrap();
        assert_eq!(back, rec);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn scale_equivariance(seed in 0u64..1000, c in 0.01f64..100.0) {
            let path = simulate_model1(&eth_usdc_like(500), DT13, seed).unwrap();
            let s = path.s.unwrap();
            let zs: Vec<f64> = path.z.iter().map(|v| v * c).collect();
            let ss: Vec<f64> = s.iter().map(|v| v * c).collect();
            let a = estimate_pool_dynamics(&path.z, &s, Spacing::Uniform(DT13)).unwrap();
            let b = estimate_pool_dynamics(&zs, &ss, Spacing::Uniform(DT13)).unwrap();
            prop_assert!((a.beta_hat.unwrap() - b.beta_hat.unwrap()).abs() <= 1e-6 * a.beta_hat.unwrap().abs().max(1.0));
            prop_assert!((a.gamma_hat - b.gamma_hat).abs() <= 1e-9 * a.gamma_hat);
            let va = estimate_oracle_vol(&s, DT13).unwrap().sigma_hat;
            let vb = estimate_oracle_vol(&ss, DT13).unwrap().sigma_hat;
            prop_assert!((va - vb).abs() <= 1e-9 * va);
        }
    }
}
