//! Rate-space partition and the piecewise constant-impact strategy.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coefficients::{solve_b_only, speed_constant_zeta, CoefficientTable, TimeGrid};
use super::{ControlParams, Result, StrategyError};

/// Nodes `Z_j = z_lo + (j/N)(z_hi - z_lo)` and impacts `zeta_j = Z_j^{3/2} / kappa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePartition {
    pub z_lo: f64,
    pub z_hi: f64,
    pub n: usize,
    pub kappa: f64,
    pub nodes: Vec<f64>,
    pub zetas: Vec<f64>,
}

pub fn build_partition(z_lo: f64, z_hi: f64, n: usize, kappa: f64) -> Result<RatePartition> {
    if !(z_lo.is_finite() && z_hi.is_finite() && z_lo > 0.0 && z_lo < z_hi) {
        return Err(StrategyError::InvalidPartition(format!("need 0 < z_lo < z_hi, got [{z_lo}, {z_hi}]")));
    }
    if n == 0 {
        return Err(StrategyError::InvalidPartition("segment count must be at least 1".into()));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(StrategyError::InvalidPartition(format!("depth must be positive, got {kappa}")));
    }
    let nodes: Vec<f64> = (0..=n).map(|j| z_lo + (j as f64 / n as f64) * (z_hi - z_lo)).collect();
    let zetas = nodes.iter().map(|z| z.powf(1.5) / kappa).collect();
    Ok(RatePartition { z_lo, z_hi, n, kappa, nodes, zetas })
}

impl RatePartition {
    /// Index of the table used at rate `z`: 0 below `Z_1`, `j` on `[Z_j, Z_{j+1})`
    /// and `N` from `Z_N` upward.
    pub fn segment(&self, z: f64) -> usize {
        if z < self.nodes[1] {
            return 0;
        }
        if z >= self.nodes[self.n] {
            return self.n;
        }
        let guess = (((z - self.z_lo) / (self.z_hi - self.z_lo)) * self.n as f64).floor() as usize;
        let mut j = guess.clamp(1, self.n - 1);
        // repair floating-point disagreement with the stored nodes
        while j > 1 && z < self.nodes[j] {
            j -= 1;
        }
        while j + 1 < self.n && z >= self.nodes[j + 1] {
            j += 1;
        }
        j
    }
}

/// Piecewise strategy: each strip of the partition uses its own table.
#[derive(Debug, Clone)]
pub struct PiecewiseStrategy {
    pub partition: RatePartition,
    pub tables: Vec<CoefficientTable>,
}

impl PiecewiseStrategy {
    /// Solves one table per partition node; tables are built in parallel.
    pub fn new(params: &ControlParams, partition: RatePartition, grid: &TimeGrid) -> Result<Self> {
        let tables =
            partition.zetas.par_iter().map(|&zeta| solve_b_only(params, zeta, grid)).collect::<Result<Vec<_>>>()?;
        Ok(Self { partition, tables })
    }

    pub fn speed(&self, t: f64, y_tilde: f64, z: f64, s: f64) -> f64 {
        speed_constant_zeta(&self.tables[self.partition.segment(z)], t, y_tilde, z, s)
    }

    /// Largest jump of the speed across interior strip boundaries at fixed `(t, y, S)`.
    pub fn max_interior_jump(&self, t: f64, y_tilde: f64, s: f64) -> f64 {
        (1..=self.partition.n)
            .map(|j| {
                let z = self.partition.nodes[j];
                let left = speed_constant_zeta(&self.tables[j - 1], t, y_tilde, z, s);
                let right = speed_constant_zeta(&self.tables[j], t, y_tilde, z, s);
                (right - left).abs()
            })
            .fold(0.0, f64::max)
    }
}
