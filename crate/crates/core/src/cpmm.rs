//! Constant-product pool mechanics.
//!
//! Sign convention: a positive `delta_y` sells Y into the pool (the trader
//! receives X), a negative `delta_y` buys Y out of the pool. Swaps are
//! fee-free; fees are applied as an accounting overlay by the backtester.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for the redundant depth check on mutation.
const DEPTH_CONSISTENCY_TOL: f64 = 1e-9;

/// Swaps leaving less than this fraction of the Y reserve are rejected.
pub const DRAIN_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpmmError {
    #[error("invalid reserves x={x}, y={y}: both must be finite and positive")]
    InvalidReserves { x: f64, y: f64 },
    #[error("invalid pool input: {0}")]
    InvalidInput(String),
    #[error("swap of {delta_y} would drain the pool (y={y})")]
    DegenerateDrain { y: f64, delta_y: f64 },
    #[error("liquidity change rho={0} must be greater than -1")]
    InvalidLiquidityChange(f64),
    #[error("depth {stored} inconsistent with reserves (sqrt(xy)={derived})")]
    InconsistentDepth { stored: f64, derived: f64 },
    #[error("rate {rate} outside the liquidity profile [{lo}, {hi})")]
    RateOutOfRange { rate: f64, lo: f64, hi: f64 },
    #[error("order exhausts the liquidity profile beyond rate {boundary}")]
    LiquidityExhausted { boundary: f64 },
    #[error("order traverses tick range {index} which has zero depth")]
    ZeroDepthRange { index: usize },
    #[error("invalid liquidity profile: {0}")]
    InvalidProfile(String),
}

pub type Result<T> = std::result::Result<T, CpmmError>;

/// Reserves of a constant-product pool with their depth `kappa = sqrt(x y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    x: f64,
    y: f64,
    kappa: f64,
}

impl PoolState {
    pub fn from_reserves(x: f64, y: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && x > 0.0 && y > 0.0) {
            return Err(CpmmError::InvalidReserves { x, y });
        }
        Ok(Self { x, y, kappa: (x * y).sqrt() })
    }

    /// Pool with depth `kappa` holding `y` units of Y, so `x = kappa^2 / y`.
    pub fn from_depth(kappa: f64, y: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(CpmmError::InvalidInput(format!("depth must be positive, got {kappa}")));
        }
        if !(y.is_finite() && y > 0.0) {
            return Err(CpmmError::InvalidReserves { x: f64::NAN, y });
        }
        Ok(Self { x: kappa * kappa / y, y, kappa })
    }

    /// Pool with instantaneous rate `rate` and depth `kappa`:
    /// `y = kappa / sqrt(rate)` and `x = kappa * sqrt(rate)`.
    pub fn from_rate_and_depth(rate: f64, kappa: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(CpmmError::InvalidInput(format!("rate must be positive, got {rate}")));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(CpmmError::InvalidInput(format!("depth must be positive, got {kappa}")));
        }
        let sqrt_rate = rate.sqrt();
        Ok(Self { x: kappa * sqrt_rate, y: kappa / sqrt_rate, kappa })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Instantaneous rate `Z = x / y` (units X per Y).
    pub fn instantaneous_rate(&self) -> f64 {
        self.x / self.y
    }

    fn check_drain(&self, delta_y: f64) -> Result<f64> {
        let y_after = self.y + delta_y;
        if !delta_y.is_finite() || !(y_after > DRAIN_THRESHOLD * self.y) {
            return Err(CpmmError::DegenerateDrain { y: self.y, delta_y });
        }
        Ok(y_after)
    }

    /// Average rate received for a swap of `delta_y`: `kappa^2 / (y (y + delta_y))`.
    ///
    /// At `delta_y = 0` this is the instantaneous rate.
    pub fn execution_rate(&self, delta_y: f64) -> Result<f64> {
        let y_after = self.check_drain(delta_y)?;
        if delta_y == 0.0 {
            return Ok(self.instantaneous_rate());
        }
        Ok(self.kappa * self.kappa / (self.y * y_after))
    }

    /// Unitary execution cost `|Z - Z~(delta_y)| = kappa^2 |delta_y| / (y^2 (y + delta_y))`.
    pub fn unitary_execution_cost(&self, delta_y: f64) -> Result<f64> {
        let y_after = self.check_drain(delta_y)?;
        Ok(self.kappa * self.kappa * delta_y.abs() / (self.y * self.y * y_after))
    }

    /// Executes a swap against the pool. Depth is unchanged by liquidity taking.
    pub fn apply_swap(&self, delta_y: f64) -> Result<(PoolState, SwapFill)> {
        let y_after = self.check_drain(delta_y)?;
        if delta_y == 0.0 {
            let rate = self.instantaneous_rate();
            return Ok((*self, SwapFill { delta_y: 0.0, delta_x: 0.0, exec_rate: rate, rate_after: rate }));
        }
        let x_after = self.kappa * self.kappa / y_after;
        let next = PoolState { x: x_after, y: y_after, kappa: self.kappa };
        next.verify_depth()?;
        let delta_x = self.x - x_after;
        let fill = SwapFill {
            delta_y,
            delta_x,
            exec_rate: delta_x / delta_y,
            rate_after: next.instantaneous_rate(),
        };
        Ok((next, fill))
    }

    /// Liquidity provision (`rho > 0`) or removal (`-1 < rho < 0`) in
    /// proportion to the reserves; the rate is unchanged.
    pub fn apply_liquidity_change(&self, rho: f64) -> Result<PoolState> {
        if !(rho.is_finite() && rho > -1.0) {
            return Err(CpmmError::InvalidLiquidityChange(rho));
        }
        let scale = 1.0 + rho;
        let next = PoolState { x: self.x * scale, y: self.y * scale, kappa: self.kappa * scale };
        next.verify_depth()?;
        Ok(next)
    }

    /// Checks the stored depth against `sqrt(x y)`.
    pub fn verify_depth(&self) -> Result<()> {
        let derived = (self.x * self.y).sqrt();
        if ((derived - self.kappa) / self.kappa).abs() > DEPTH_CONSISTENCY_TOL {
            return Err(CpmmError::InconsistentDepth { stored: self.kappa, derived });
        }
        Ok(())
    }
}

/// Outcome of a single swap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapFill {
    pub delta_y: f64,
    pub delta_x: f64,
    pub exec_rate: f64,
    pub rate_after: f64,
}

/// Convexity approximation of the unitary execution cost, `Z^{3/2} |delta_y| / kappa`.
pub fn execution_cost_approx(rate: f64, kappa: f64, delta_y: f64) -> f64 {
    rate.powf(1.5) * delta_y.abs() / kappa
}

/// Execution rate for trading at speed `nu` with cost time scale `eta`:
/// `Z - (eta / kappa) Z^{3/2} nu`.
///
/// A non-positive result means the speed is implausibly large for the pool
/// depth; it is returned as is and logged at warn level.
pub fn execution_rate_with_speed(rate: f64, kappa: f64, eta: f64, nu: f64) -> f64 {
    let out = rate - eta / kappa * rate.powf(1.5) * nu;
    if out <= 0.0 {
        tracing::warn!(rate, kappa, eta, nu, out, "speed-adjusted execution rate is non-positive");
    }
    out
}

/// Piecewise depth over tick ranges `[Z_i, Z_{i+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidityProfile {
    boundaries: Vec<f64>,
    depths: Vec<f64>,
}

impl LiquidityProfile {
    pub fn new(boundaries: Vec<f64>, depths: Vec<f64>) -> Result<Self> {
        if boundaries.len() < 2 || depths.len() + 1 != boundaries.len() {
            return Err(CpmmError::InvalidProfile(format!(
                "{} boundaries for {} depths",
                boundaries.len(),
                depths.len()
            )));
        }
        if boundaries.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(CpmmError::InvalidProfile("boundaries must be finite and positive".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CpmmError::InvalidProfile("boundaries must be strictly increasing".into()));
        }
        if depths.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(CpmmError::InvalidProfile("depths must be finite and non-negative".into()));
        }
        if !depths.iter().any(|d| *d > 0.0) {
            return Err(CpmmError::InvalidProfile("at least one depth must be positive".into()));
        }
        Ok(Self { boundaries, depths })
    }

    /// A single range with uniform depth.
    pub fn uniform(lo: f64, hi: f64, kappa: f64) -> Result<Self> {
        Self::new(vec![lo, hi], vec![kappa])
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn depths(&self) -> &[f64] {
        &self.depths
    }

    pub fn lower(&self) -> f64 {
        self.boundaries[0]
    }

    pub fn upper(&self) -> f64 {
        *self.boundaries.last().unwrap()
    }

    /// Index of the range containing `rate` (left-closed, right-open).
    pub fn range_index(&self, rate: f64) -> Result<usize> {
        if !(rate >= self.lower() && rate < self.upper()) {
            return Err(CpmmError::RateOutOfRange { rate, lo: self.lower(), hi: self.upper() });
        }
        // partition_point gives the number of boundaries <= rate
        Ok(self.boundaries.partition_point(|b| *b <= rate) - 1)
    }

    pub fn depth_at(&self, rate: f64) -> Result<f64> {
        Ok(self.depths[self.range_index(rate)?])
    }

    /// Level function `kappa_i^2 / y` for the range containing `rate`.
    pub fn level_function(&self, rate: f64, y: f64) -> Result<f64> {
        if !(y.is_finite() && y > 0.0) {
            return Err(CpmmError::InvalidInput(format!("y must be positive, got {y}")));
        }
        let kappa = self.depth_at(rate)?;
        Ok(kappa * kappa / y)
    }

    /// Walks an order through the tick ranges starting at `rate0`.
    ///
    /// Inside each range the pool behaves as a constant-product pool with that
    /// range's depth, with virtual reserve `y = kappa / sqrt(Z)`. Returns the
    /// final rate and the total X exchanged.
    pub fn swap_across_ticks(&self, rate0: f64, delta_y: f64) -> Result<(f64, f64)> {
        let mut idx = self.range_index(rate0)?;
        if delta_y == 0.0 {
            return Ok((rate0, 0.0));
        }
        if !delta_y.is_finite() {
            return Err(CpmmError::InvalidInput(format!("delta_y must be finite, got {delta_y}")));
        }
        let mut rate = rate0;
        let mut remaining = delta_y.abs();
        let mut delta_x = 0.0;
        let selling = delta_y > 0.0;
        loop {
            let kappa = self.depths[idx];
            if kappa == 0.0 {
                return Err(CpmmError::ZeroDepthRange { index: idx });
            }
            let y_virtual = kappa / rate.sqrt();
            if selling {
                // rate falls toward the lower boundary of range idx
                let lo = self.boundaries[idx];
                let y_at_lo = kappa / lo.sqrt();
                let capacity = y_at_lo - y_virtual;
                if remaining <= capacity {
                    let y_new = y_virtual + remaining;
                    delta_x += kappa * kappa * remaining / (y_virtual * y_new);
                    rate = kappa * kappa / (y_new * y_new);
                    return Ok((rate.max(lo), delta_x));
                }
                delta_x += kappa * (rate.sqrt() - lo.sqrt());
                remaining -= capacity;
                rate = lo;
                if idx == 0 {
                    return Err(CpmmError::LiquidityExhausted { boundary: lo });
                }
                idx -= 1;
            } else {
                let hi = self.boundaries[idx + 1];
                let y_at_hi = kappa / hi.sqrt();
                let capacity = y_virtual - y_at_hi;
                if remaining <= capacity {
                    let y_new = y_virtual - remaining;
                    delta_x -= kappa * kappa * remaining / (y_virtual * y_new);
                    rate = kappa * kappa / (y_new * y_new);
                    return Ok((rate.min(hi), delta_x));
                }
                delta_x -= kappa * (hi.sqrt() - rate.sqrt());
                remaining -= capacity;
                rate = hi;
                if idx + 1 == self.depths.len() {
                    return Err(CpmmError::LiquidityExhausted { boundary: hi });
                }
                idx += 1;
            }
        }
    }
}
