//! Constant-impact coefficient system.
//!
//! For a frozen impact parameter `zeta` the value function is quadratic in
//! inventory and rates, and its coefficients solve
//!
//! ```text
//! A' = phi - A^2 / (eta zeta)                     A(T) = -alpha
//! B' = beta + beta B - A B / (eta zeta)           B(T) = 0
//! E' = -(gamma^2 - 2 beta) E - B^2 / (4 eta zeta)
//! F' = -beta G - sigma^2 F - C^2 / (4 eta zeta)
//! G' = -2 beta E + beta G - B C / (2 eta zeta)
//! ```
//!
//! with `C = -B` and the remaining coefficients identically zero. `A` is
//! available in closed form; the rest are integrated backward from `T`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ControlParams, Result, StrategyError};
use crate::ode::DormandPrince;

const ODE_RTOL: f64 = 1e-10;
const ODE_ATOL: f64 = 1e-13;

/// Default number of time steps for coefficient tables.
pub const DEFAULT_TIME_STEPS: usize = 10_000;

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(StrategyError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(StrategyError::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn uniform(horizon: f64) -> Result<Self> {
        Self::new(horizon, DEFAULT_TIME_STEPS)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.dt()
        }
    }

    /// Left node index and weight of the right node for linear interpolation.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let x = (t / self.dt()).clamp(0.0, self.steps as f64);
        let i = (x.floor() as usize).min(self.steps - 1);
        (i, x - i as f64)
    }
}

/// `A` in closed form at time-to-maturity `tau`, with `eta_zeta = eta * zeta`.
///
/// With `c = sqrt(phi eta zeta)` the solution is `-c tanh(k tau + artanh(alpha/c))`
/// for `alpha < c` and the `coth` continuation for `alpha > c`, where
/// `k = c / (eta zeta)`. `phi = 0` reduces to `-1 / (1/alpha + tau/(eta zeta))`.
pub fn riccati_a(phi: f64, alpha: f64, eta_zeta: f64, tau: f64) -> f64 {
    if phi == 0.0 {
        if alpha == 0.0 {
            return 0.0;
        }
        return -1.0 / (1.0 / alpha + tau / eta_zeta);
    }
    let c = (phi * eta_zeta).sqrt();
    let k = (phi / eta_zeta).sqrt();
    let r = alpha / c;
    if r < 1.0 {
        -c * (k * tau + r.atanh()).tanh()
    } else if r == 1.0 {
        -c
    } else {
        let acoth = 0.5 * (2.0 / (r - 1.0)).ln_1p();
        -c / (k * tau + acoth).tanh()
    }
}

/// `E`, `F`, `G` tables, needed only for value-function diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTerms {
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// Coefficients for one impact parameter on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub zeta: f64,
    pub eta: f64,
    pub grid: TimeGrid,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub value_terms: Option<ValueTerms>,
}

impl CoefficientTable {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.grid.steps).map(|i| self.grid.time(i)).collect()
    }

    pub fn c(&self) -> Vec<f64> {
        self.b.iter().map(|b| -b).collect()
    }

    pub fn a_at(&self, t: f64) -> f64 {
        let (i, w) = self.grid.locate(t);
        self.a[i] + w * (self.a[i + 1] - self.a[i])
    }

    pub fn b_at(&self, t: f64) -> f64 {
        let (i, w) = self.grid.locate(t);
        self.b[i] + w * (self.b[i + 1] - self.b[i])
    }

    /// Writes columns `t,A,B,E,F,G`; the value columns are empty when not solved.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "A", "B", "E", "F", "G"])?;
        for i in 0..=self.grid.steps {
            let (e, f, g) = match &self.value_terms {
                Some(v) => (v.e[i].to_string(), v.f[i].to_string(), v.g[i].to_string()),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([self.grid.time(i).to_string(), self.a[i].to_string(), self.b[i].to_string(), e, f, g])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_inputs(params: &ControlParams, zeta: f64, grid: &TimeGrid) -> Result<()> {
    params.validate()?;
    if !(zeta.is_finite() && zeta > 0.0) {
        return Err(StrategyError::InvalidParam { name: "zeta", value: zeta, reason: "must be > 0" });
    }
    if (grid.horizon - params.horizon).abs() > 1e-12 * params.horizon {
        return Err(StrategyError::InvalidGrid(format!(
            "grid horizon {} differs from T={}",
            grid.horizon, params.horizon
        )));
    }
    Ok(())
}

fn a_column(params: &ControlParams, eta_zeta: f64, grid: &TimeGrid) -> Vec<f64> {
    (0..=grid.steps).map(|i| riccati_a(params.phi, params.alpha, eta_zeta, params.horizon - grid.time(i))).collect()
}

/// Solves `A` and `B` only; this is all the feedback speed needs.
pub fn solve_b_only(params: &ControlParams, zeta: f64, grid: &TimeGrid) -> Result<CoefficientTable> {
    check_inputs(params, zeta, grid)?;
    let ez = params.eta * zeta;
    let (phi, alpha, beta, horizon) = (params.phi, params.alpha, params.beta, params.horizon);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let a = riccati_a(phi, alpha, ez, horizon - t);
        dy[0] = beta + (beta - a / ez) * y[0];
    };
    let mut b = vec![0.0; grid.steps + 1];
    let mut state = [0.0];
    let mut dp = DormandPrince::new(ODE_RTOL, ODE_ATOL);
    for i in (0..grid.steps).rev() {
        dp.integrate(rhs, grid.time(i + 1), grid.time(i), &mut state)?;
        b[i] = state[0];
    }
    Ok(CoefficientTable { zeta, eta: params.eta, grid: *grid, a: a_column(params, ez, grid), b, value_terms: None })
}

/// Solves the full coefficient system for one `zeta`.
pub fn solve_constant_zeta(params: &ControlParams, zeta: f64, grid: &TimeGrid) -> Result<CoefficientTable> {
    check_inputs(params, zeta, grid)?;
    let ez = params.eta * zeta;
    let p = *params;
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let a = riccati_a(p.phi, p.alpha, ez, p.horizon - t);
        let (b, e, f, g) = (y[0], y[1], y[2], y[3]);
        let b2 = b * b;
        dy[0] = p.beta + (p.beta - a / ez) * b;
        dy[1] = -(p.gamma * p.gamma - 2.0 * p.beta) * e - b2 / (4.0 * ez);
        dy[2] = -p.beta * g - p.sigma * p.sigma * f - b2 / (4.0 * ez);
        // B C = -B^2
        dy[3] = -2.0 * p.beta * e + p.beta * g + b2 / (2.0 * ez);
    };
    let n = grid.steps + 1;
    let (mut b, mut e, mut f, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut state = [0.0; 4];
    let mut dp = DormandPrince::new(ODE_RTOL, ODE_ATOL);
    for i in (0..grid.steps).rev() {
        dp.integrate(rhs, grid.time(i + 1), grid.time(i), &mut state)?;
        b[i] = state[0];
        e[i] = state[1];
        f[i] = state[2];
        g[i] = state[3];
    }
    Ok(CoefficientTable {
        zeta,
        eta: params.eta,
        grid: *grid,
        a: a_column(params, ez, grid),
        b,
        value_terms: Some(ValueTerms { e, f, g }),
    })
}

/// Feedback speed `-A/(eta zeta) y + B/(2 eta zeta) (S - Z)`, with the table
/// interpolated linearly in time. Positive speeds sell Y.
pub fn speed_constant_zeta(table: &CoefficientTable, t: f64, y_tilde: f64, z: f64, s: f64) -> f64 {
    let ez = table.eta * table.zeta;
    -table.a_at(t) / ez * y_tilde + table.b_at(t) / (2.0 * ez) * (s - z)
}

/// Sup-norm residuals of the coefficient ODEs under finite differencing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeResiduals {
    pub a: f64,
    pub b: f64,
    pub e: f64,
    pub f: f64,
    pub g: f64,
    /// Latest time included in the sup norm.
    pub cutoff: f64,
}

impl OdeResiduals {
    pub fn max(&self) -> f64 {
        self.a.max(self.b).max(self.e).max(self.f).max(self.g)
    }
}

/// Width `eta zeta / alpha` of the terminal layer in which `A` relaxes from
/// `-alpha`; zero when `alpha = 0`.
pub fn terminal_layer_width(params: &ControlParams, zeta: f64) -> f64 {
    if params.alpha == 0.0 {
        return 0.0;
    }
    params.eta * zeta / params.alpha
}

/// Plugs the solved tables into the ODE system. Derivatives use the
/// fourth-order five-point central stencil on interior nodes.
///
/// Nodes within `layer_widths` terminal-layer widths of `T` are excluded:
/// there the stencil truncation error, not the solution error, dominates
/// once the layer is thinner than a few grid steps. Pass 0 to include every
/// interior node.
pub fn ode_residuals(params: &ControlParams, table: &CoefficientTable, layer_widths: f64) -> OdeResiduals {
    let h = table.grid.dt();
    let ez = params.eta * table.zeta;
    let p = params;
    let cutoff = params.horizon - layer_widths * terminal_layer_width(params, table.zeta);
    let deriv = |v: &[f64], i: usize| (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h);
    let mut out = OdeResiduals { a: 0.0, b: 0.0, e: 0.0, f: 0.0, g: 0.0, cutoff };
    let n = table.grid.steps;
    for i in 2..n - 1 {
        if table.grid.time(i + 2) > cutoff {
            break;
        }
        let (a, b) = (table.a[i], table.b[i]);
        out.a = out.a.max((deriv(&table.a, i) - (p.phi - a * a / ez)).abs());
        out.b = out.b.max((deriv(&table.b, i) - (p.beta + p.beta * b - a * b / ez)).abs());
        if let Some(v) = &table.value_terms {
            let (e, f, g) = (v.e[i], v.f[i], v.g[i]);
            let b2 = b * b;
            let re = deriv(&v.e, i) - (-(p.gamma * p.gamma - 2.0 * p.beta) * e - b2 / (4.0 * ez));
            let rf = deriv(&v.f, i) - (-p.beta * g - p.sigma * p.sigma * f - b2 / (4.0 * ez));
            let rg = deriv(&v.g, i) - (-2.0 * p.beta * e + p.beta * g + b2 / (2.0 * ez));
            out.e = out.e.max(re.abs());
            out.f = out.f.max(rf.abs());
            out.g = out.g.max(rg.abs());
        }
    }
    out
}
