//! Closed-form approximation strategy: constant-impact coefficients evaluated
//! at the current rate, `zeta = Z^{3/2} / kappa`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::coefficients::{riccati_a, solve_b_only, speed_constant_zeta, TimeGrid, DEFAULT_TIME_STEPS};
use super::{ControlParams, Result, StrategyError};

/// Memoization lattice for `B(t, Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Number of log-spaced rate nodes.
    pub points: usize,
    pub z_lo: f64,
    pub z_hi: f64,
    pub time_steps: usize,
}

impl LatticeConfig {
    /// 512 nodes over `[Z0/2, 2 Z0]` with the default time grid.
    pub fn around(z0: f64) -> Self {
        Self { points: 512, z_lo: 0.5 * z0, z_hi: 2.0 * z0, time_steps: DEFAULT_TIME_STEPS }
    }
}

#[derive(Debug)]
struct Lattice {
    log_lo: f64,
    log_step: f64,
    z: Vec<f64>,
    b: Vec<OnceLock<Vec<f64>>>,
}

/// Feedback speed `-(kappa/eta) Z^{-3/2} A(t,Z) y + (kappa/2 eta) Z^{-3/2} B(t,Z) (S - Z)`.
///
/// In exact mode every call solves the coefficient table at the current rate.
/// In lattice mode `A` is evaluated in closed form and `B` is interpolated
/// from tables solved lazily at lattice nodes; rates outside the lattice fall
/// back to a direct solve.
#[derive(Debug)]
pub struct ClosedFormStrategy {
    params: ControlParams,
    grid: TimeGrid,
    lattice: Option<Lattice>,
}

impl ClosedFormStrategy {
    pub fn exact(params: ControlParams, time_steps: usize) -> Result<Self> {
        params.validate()?;
        Ok(Self { grid: TimeGrid::new(params.horizon, time_steps)?, params, lattice: None })
    }

    pub fn with_lattice(params: ControlParams, cfg: LatticeConfig) -> Result<Self> {
        params.validate()?;
        if cfg.points < 2 || !(cfg.z_lo > 0.0 && cfg.z_lo < cfg.z_hi) {
            return Err(StrategyError::InvalidPartition(format!(
                "lattice needs >= 2 points over 0 < z_lo < z_hi, got {} over [{}, {}]",
                cfg.points, cfg.z_lo, cfg.z_hi
            )));
        }
        let log_lo = cfg.z_lo.ln();
        let log_step = (cfg.z_hi.ln() - log_lo) / (cfg.points - 1) as f64;
        let z = (0..cfg.points).map(|i| (log_lo + i as f64 * log_step).exp()).collect();
        let b = (0..cfg.points).map(|_| OnceLock::new()).collect();
        Ok(Self {
            grid: TimeGrid::new(params.horizon, cfg.time_steps)?,
            params,
            lattice: Some(Lattice { log_lo, log_step, z, b }),
        })
    }

    pub fn params(&self) -> &ControlParams {
        &self.params
    }

    /// Lattice nodes solved so far.
    pub fn solved_nodes(&self) -> usize {
        self.lattice.as_ref().map_or(0, |l| l.b.iter().filter(|c| c.get().is_some()).count())
    }

    fn b_column<'a>(&self, lattice: &'a Lattice, i: usize) -> Result<&'a Vec<f64>> {
        if let Some(col) = lattice.b[i].get() {
            return Ok(col);
        }
        let table = solve_b_only(&self.params, self.params.zeta_at(lattice.z[i]), &self.grid)?;
        Ok(lattice.b[i].get_or_init(|| table.b))
    }

    fn interp_time(&self, col: &[f64], t: f64) -> f64 {
        let (i, w) = self.grid.locate(t);
        col[i] + w * (col[i + 1] - col[i])
    }

    /// `B(t, Z)` from the lattice, or `None` when `z` lies outside it.
    fn lattice_b(&self, t: f64, z: f64) -> Result<Option<f64>> {
        let Some(lat) = &self.lattice else { return Ok(None) };
        let x = (z.ln() - lat.log_lo) / lat.log_step;
        if !(x >= 0.0 && x <= (lat.z.len() - 1) as f64) {
            return Ok(None);
        }
        let i = (x.floor() as usize).min(lat.z.len() - 2);
        let w = (z - lat.z[i]) / (lat.z[i + 1] - lat.z[i]);
        let lo = self.interp_time(self.b_column(lat, i)?, t);
        let hi = self.interp_time(self.b_column(lat, i + 1)?, t);
        Ok(Some(lo + w * (hi - lo)))
    }

    pub fn speed(&self, t: f64, y_tilde: f64, z: f64, s: f64) -> Result<f64> {
        let zeta = self.params.zeta_at(z);
        let ez = self.params.eta * zeta;
        if let Some(b) = self.lattice_b(t, z)? {
            let a = riccati_a(self.params.phi, self.params.alpha, ez, self.params.horizon - t);
            return Ok(-a / ez * y_tilde + b / (2.0 * ez) * (s - z));
        }
        let table = solve_b_only(&self.params, zeta, &self.grid)?;
        Ok(speed_constant_zeta(&table, t, y_tilde, z, s))
    }
}

/// One-shot closed-form speed on the default time grid (exact mode).
pub fn speed_closed_form(t: f64, y_tilde: f64, z: f64, s: f64, params: &ControlParams) -> Result<f64> {
    ClosedFormStrategy::exact(*params, DEFAULT_TIME_STEPS)?.speed(t, y_tilde, z, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_mode_is_constant_zeta_at_current_rate() {
        let p = ControlParams::benchmark();
        let strat = ClosedFormStrategy::exact(p, 2000).unwrap();
        let grid = TimeGrid::new(p.horizon, 2000).unwrap();
        for &(t, y, z, s) in &[(0.0, 100.0, 2000.0, 2050.0), (0.05, -40.0, 1800.0, 1700.0), (0.0999, 10.0, 2500.0, 2500.0)] {
            let table = solve_b_only(&p, p.zeta_at(z), &grid).unwrap();
            let direct = speed_constant_zeta(&table, t, y, z, s);
            assert!((strat.speed(t, y, z, s).unwrap() - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn lattice_close_to_exact_and_lazy() {
        let p = ControlParams::benchmark();
        let cfg = LatticeConfig { time_steps: 2000, ..LatticeConfig::around(2000.0) };
        let lat = ClosedFormStrategy::with_lattice(p, cfg).unwrap();
        let exact = ClosedFormStrategy::exact(p, 2000).unwrap();
        assert_eq!(lat.solved_nodes(), 0);
        for &(t, y, z, s) in &[(0.0, 100.0, 2003.0, 2050.0), (0.02, -40.0, 1811.0, 1700.0)] {
            let a = lat.speed(t, y, z, s).unwrap();
            let b = exact.speed(t, y, z, s).unwrap();
            assert!(((a - b) / b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_eq!(lat.solved_nodes(), 4);
        // outside the lattice falls back to a direct solve
        let far = lat.speed(0.0, 5.0, 9000.0, 9100.0).unwrap();
        assert_eq!(far, exact.speed(0.0, 5.0, 9000.0, 9100.0).unwrap());
    }

    #[test]
    fn linear_in_inventory_affine_in_oracle() {
        let p = ControlParams::benchmark();
        let strat = ClosedFormStrategy::with_lattice(p, LatticeConfig { time_steps: 1000, ..LatticeConfig::around(2000.0) })
            .unwrap();
        let v = |y: f64, s: f64| strat.speed(0.01, y, 2010.0, s).unwrap();
        let base = v(0.0, 2010.0);
        assert_eq!(base, 0.0);
        assert!((v(200.0, 2010.0) - 2.0 * v(100.0, 2010.0)).abs() < 1e-9 * v(200.0, 2010.0).abs());
        let slope1 = v(0.0, 2020.0) - v(0.0, 2010.0);
        let slope2 = v(0.0, 2030.0) - v(0.0, 2020.0);
        assert!((slope1 - slope2).abs() < 1e-9 * slope1.abs());
    }

    #[test]
    fn benchmark_sign_flip() {
        let p = ControlParams::benchmark();
        let strat = ClosedFormStrategy::exact(p, 2000).unwrap();
        let speeds: Vec<f64> = [1900.0, 1950.0, 2000.0, 2050.0, 2100.0]
            .iter()
            .map(|&z| strat.speed(0.0, 0.0, z, 2000.0).unwrap())
            .collect();
        assert!(speeds.windows(2).all(|w| w[1] > w[0]));
        assert!(speeds[0] < 0.0 && speeds[4] > 0.0);
        assert_eq!(speeds[2], 0.0);
    }

    #[test]
    fn invalid_lattice_rejected() {
        let p = ControlParams::benchmark();
        let bad = LatticeConfig { points: 1, ..LatticeConfig::around(1.0) };
        assert!(ClosedFormStrategy::with_lattice(p, bad).is_err());
    }
}
