//! Model I strategies built from constant-impact coefficient tables.

mod closed_form;
mod coefficients;
mod partition;

pub use closed_form::{speed_closed_form, ClosedFormStrategy, LatticeConfig};
pub use coefficients::{
    ode_residuals, riccati_a, solve_b_only, solve_constant_zeta, speed_constant_zeta, terminal_layer_width, CoefficientTable,
    OdeResiduals, TimeGrid, ValueTerms,
};
pub use partition::{build_partition, PiecewiseStrategy, RatePartition};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::OdeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StrategyError {
    #[error("invalid control parameter {name}={value}: {reason}")]
    InvalidParam { name: &'static str, value: f64, reason: &'static str },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("coefficient integration failed: {0}")]
    Ode(#[from] OdeError),
}

pub type Result<T> = std::result::Result<T, StrategyError>;

/// Inputs of the Model I control problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Running inventory penalty.
    pub phi: f64,
    /// Terminal inventory penalty.
    pub alpha: f64,
    /// Execution-cost time scale (days).
    pub eta: f64,
    /// Horizon T (days).
    pub horizon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    /// Pool depth, constant over the window.
    pub kappa: f64,
}

impl ControlParams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, bool, &'static str); 8] = [
            ("phi", self.phi, self.phi >= 0.0, "must be >= 0"),
            ("alpha", self.alpha, self.alpha >= 0.0, "must be >= 0"),
            ("eta", self.eta, self.eta > 0.0, "must be > 0"),
            ("horizon", self.horizon, self.horizon > 0.0, "must be > 0"),
            ("beta", self.beta, self.beta >= 0.0, "must be >= 0"),
            ("gamma", self.gamma, self.gamma >= 0.0, "must be >= 0"),
            ("sigma", self.sigma, self.sigma >= 0.0, "must be >= 0"),
            ("kappa", self.kappa, self.kappa > 0.0, "must be > 0"),
        ];
        for (name, value, ok, reason) in checks {
            if !value.is_finite() || !ok {
                return Err(StrategyError::InvalidParam { name, value, reason });
            }
        }
        Ok(())
    }

    /// Impact parameter `zeta = Z^{3/2} / kappa` at a given rate.
    pub fn zeta_at(&self, z: f64) -> f64 {
        z.powf(1.5) / self.kappa
    }

    /// Desk-scale benchmark: one-tenth of a day, depth 1e7, unit cost scale.
    pub fn benchmark() -> Self {
        Self { phi: 1e-5, alpha: 5.0, eta: 1.0, horizon: 0.1, beta: 1.0, gamma: 0.02, sigma: 0.03, kappa: 1e7 }
    }
}
