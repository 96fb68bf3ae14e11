//! Finite-difference solvers for the semilinear HJB systems.
//!
//! Both models reduce, after the quadratic-in-inventory ansatz
//! `theta = theta2 y^2 + theta1 y + theta0`, to a Riccati-type PDE for
//! `theta2` followed by two linear PDEs. In backward time `tau = T - t`:
//!
//! ```text
//! d_tau theta2 = L theta2 - phi + c theta2^2
//! d_tau theta1 = L theta1 + beta (S - Z) + c theta2 theta1
//! d_tau theta0 = L theta0 + c theta1^2 / 4
//! ```
//!
//! with `c = kappa / (eta Z^{3/2})`. In Model I `L` carries the pool-rate
//! drift `beta (S - Z) d_Z` and diffusions in `Z` and `S`; in Model II it is
//! pure diffusion in `Z` and `kappa`, and `theta1 = theta0 = 0`.

mod bounds;
mod io;
mod solver;
mod tridiag;

pub use bounds::{check_bounds_model1, check_bounds_model2, merton_bound_coeffs, BoundCheck, BoundReport, MertonCoeffs};
pub use io::{read_bundle, write_bundle, FIELD_BUNDLE_VERSION};
pub use solver::{solve_model1, solve_model2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Model2Params;
use crate::strategy::ControlParams;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("Picard iteration did not converge at t={t} after {iterations} iterations (residual {residual:e})")]
    PicardDiverged { t: f64, iterations: usize, residual: f64 },
    #[error("unstable time stepping at t={t}: {reason}; refine the time grid")]
    Instability { t: f64, reason: String },
    #[error("query ({t}, {x}, {w}) outside the solved grid")]
    OutOfHull { t: f64, x: f64, w: f64 },
    #[error("field bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, PdeError>;

/// Placement of backward time levels `0 = tau_0 < ... < tau_{n_t} = T`.
///
/// `theta2` has a terminal layer of width about `eta zeta / alpha`, so
/// uniform steps waste most of the budget away from maturity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeMesh {
    /// `tau_i = T (i / n_t)^p`.
    Power(f64),
    /// `tau_i = c (exp(lambda i / n_t) - 1)` with `lambda = ln(1 + T / c)`:
    /// steps proportional to `tau + c`.
    Exponential(f64),
    /// Exponential with `c` set to the thinnest layer on the grid.
    Auto,
}

/// Space nodes for both axes and the backward time mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_t: usize,
    /// Pool rate nodes.
    pub z: Vec<f64>,
    /// Oracle rate nodes (Model I) or depth nodes (Model II).
    pub w: Vec<f64>,
    pub time_mesh: TimeMesh,
}

pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| match i {
            0 => lo,
            _ if i + 1 == n => hi,
            _ => (a + (b - a) * i as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

fn exponential_mesh(horizon: f64, c: f64, n: usize) -> Vec<f64> {
    let lambda = (horizon / c).ln_1p();
    (0..=n).map(|i| c * (lambda * i as f64 / n as f64).exp_m1()).collect()
}

impl GridSpec {
    /// 201 x 201 log-spaced nodes over `[Z0/2, 2 Z0] x [S0/2, 2 S0]`, 200 time steps.
    pub fn default_model1(z0: f64, s0: f64) -> Self {
        Self {
            n_t: 200,
            z: log_spaced(0.5 * z0, 2.0 * z0, 201),
            w: log_spaced(0.5 * s0, 2.0 * s0, 201),
            time_mesh: TimeMesh::Auto,
        }
    }

    /// 201 x 201 log-spaced nodes over `[Z0/2, 2 Z0] x [kappa0/4, 4 kappa0]`, 200 time steps.
    pub fn default_model2(z0: f64, kappa0: f64) -> Self {
        Self {
            n_t: 200,
            z: log_spaced(0.5 * z0, 2.0 * z0, 201),
            w: log_spaced(0.25 * kappa0, 4.0 * kappa0, 201),
            time_mesh: TimeMesh::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t < 1 {
            return Err(PdeError::InvalidGrid("need at least one time step".into()));
        }
        match self.time_mesh {
            TimeMesh::Power(p) if !(p.is_finite() && p >= 1.0) => {
                return Err(PdeError::InvalidGrid(format!("power grading must be >= 1, got {p}")));
            }
            TimeMesh::Exponential(c) if !(c.is_finite() && c > 0.0) => {
                return Err(PdeError::InvalidGrid(format!("exponential mesh scale must be > 0, got {c}")));
            }
            _ => {}
        }
        for (name, axis) in [("z", &self.z), ("w", &self.w)] {
            if axis.len() < 3 {
                return Err(PdeError::InvalidGrid(format!("axis {name} needs >= 3 nodes, got {}", axis.len())));
            }
            if axis.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(PdeError::InvalidGrid(format!("axis {name} must be finite and positive")));
            }
            if axis.windows(2).any(|p| p[1] <= p[0]) {
                return Err(PdeError::InvalidGrid(format!("axis {name} must be strictly increasing")));
            }
        }
        Ok(())
    }

    /// Backward times; `layer` is the scale used by [`TimeMesh::Auto`].
    pub fn tau_mesh(&self, horizon: f64, layer: f64) -> Vec<f64> {
        let n = self.n_t as f64;
        let mut tau: Vec<f64> = match self.time_mesh {
            TimeMesh::Power(p) => (0..=self.n_t).map(|i| horizon * (i as f64 / n).powf(p)).collect(),
            TimeMesh::Exponential(c) => exponential_mesh(horizon, c, self.n_t),
            TimeMesh::Auto => exponential_mesh(horizon, layer, self.n_t),
        };
        tau[self.n_t] = horizon;
        tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub max_iterations: usize,
    /// Sup-norm change between iterates that counts as converged.
    pub tolerance: f64,
    /// Relaxation in `(0, 1]`; 1 is plain Picard.
    pub damping: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self { max_iterations: 50, tolerance: 1e-8, damping: 1.0 }
    }
}

/// First-derivative differencing for the drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Convection {
    Central,
    Upwind,
    /// Central where the local Peclet number is at most one, upwind elsewhere.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub picard: PicardConfig,
    /// Implicitness of the Douglas scheme: 0.5 is Crank–Nicolson-like, 1 fully implicit.
    pub theta: f64,
    pub convection: Convection,
    /// Keep every `snapshot_stride`-th time level (plus `t = 0` and `t = T`).
    pub snapshot_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { picard: PicardConfig::default(), theta: 0.5, convection: Convection::Central, snapshot_stride: 10 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.picard;
        if p.max_iterations < 1 || !(p.tolerance > 0.0) || !(p.damping > 0.0 && p.damping <= 1.0) {
            return Err(PdeError::InvalidConfig(format!("bad Picard settings {p:?}")));
        }
        if !(self.theta >= 0.5 && self.theta <= 1.0) {
            return Err(PdeError::InvalidConfig(format!("theta must lie in [0.5, 1], got {}", self.theta)));
        }
        if self.snapshot_stride < 1 {
            return Err(PdeError::InvalidConfig("snapshot stride must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdeModel {
    ModelI,
    ModelII,
}

/// Per-level Picard statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardDiagnostics {
    pub iterations: Vec<usize>,
    pub final_residuals: Vec<f64>,
    /// Whether the iterate changes decreased monotonically at each level.
    pub monotone: Vec<bool>,
}

impl PicardDiagnostics {
    pub fn monotone_fraction(&self) -> f64 {
        if self.monotone.is_empty() {
            return 1.0;
        }
        self.monotone.iter().filter(|m| **m).count() as f64 / self.monotone.len() as f64
    }
}

/// Solution snapshots on the `(t, z, w)` grid. Values are stored time-major
/// with `w` varying slowest within a slice: index `(k, iw, iz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedFields {
    pub model: PdeModel,
    pub control: ControlParams,
    pub model2: Option<Model2Params>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// Snapshot times in increasing order; the last one is `T`.
    pub times: Vec<f64>,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub diagnostics: PicardDiagnostics,
}

fn bracket(axis: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = axis.len();
    if !(x >= axis[0] && x <= axis[n - 1]) {
        return None;
    }
    let i = (axis.partition_point(|v| *v <= x).max(1) - 1).min(n - 2);
    Some((i, (x - axis[i]) / (axis[i + 1] - axis[i])))
}

impl SolvedFields {
    pub fn slice_len(&self) -> usize {
        self.z.len() * self.w.len()
    }

    pub fn index(&self, k: usize, iw: usize, iz: usize) -> usize {
        k * self.slice_len() + iw * self.z.len() + iz
    }

    pub fn slice<'a>(&self, field: &'a [f64], k: usize) -> &'a [f64] {
        &field[k * self.slice_len()..(k + 1) * self.slice_len()]
    }

    fn interp(&self, field: &[f64], t: f64, x: f64, w: f64) -> Result<f64> {
        let out = || PdeError::OutOfHull { t, x, w };
        let (iz, fz) = bracket(&self.z, x).ok_or_else(out)?;
        let (iw, fw) = bracket(&self.w, w).ok_or_else(out)?;
        let (k, ft) = bracket(&self.times, t).ok_or_else(out)?;
        let at = |k: usize| {
            let v = |iw: usize, iz: usize| field[self.index(k, iw, iz)];
            let lo = v(iw, iz) + fz * (v(iw, iz + 1) - v(iw, iz));
            let hi = v(iw + 1, iz) + fz * (v(iw + 1, iz + 1) - v(iw + 1, iz));
            lo + fw * (hi - lo)
        };
        Ok(at(k) + ft * (at(k + 1) - at(k)))
    }

    pub fn theta2_at(&self, t: f64, z: f64, w: f64) -> Result<f64> {
        self.interp(&self.theta2, t, z, w)
    }

    pub fn theta1_at(&self, t: f64, z: f64, w: f64) -> Result<f64> {
        self.interp(&self.theta1, t, z, w)
    }

    pub fn theta0_at(&self, t: f64, z: f64, w: f64) -> Result<f64> {
        self.interp(&self.theta0, t, z, w)
    }

    /// Depth entering the speed formula at a query point.
    fn depth(&self, w: f64) -> f64 {
        match self.model {
            PdeModel::ModelI => self.control.kappa,
            PdeModel::ModelII => w,
        }
    }

    /// Feedback speed `-(kappa / 2 eta) Z^{-3/2} (2 theta2 y + theta1)`; the
    /// second coordinate is `S` in Model I and `kappa` in Model II.
    pub fn speed(&self, t: f64, y_tilde: f64, z: f64, w: f64) -> Result<f64> {
        let th2 = self.theta2_at(t, z, w)?;
        let th1 = self.theta1_at(t, z, w)?;
        Ok(-self.depth(w) / (2.0 * self.control.eta) * z.powf(-1.5) * (2.0 * th2 * y_tilde + th1))
    }
}

/// Model I numerical feedback speed at `(t, y, Z, S)`.
pub fn speed_numerical_model1(fields: &SolvedFields, t: f64, y_tilde: f64, z: f64, s: f64) -> Result<f64> {
    fields.speed(t, y_tilde, z, s)
}

/// Model II numerical feedback speed at `(t, y, Z, kappa)`.
pub fn speed_model2(fields: &SolvedFields, t: f64, y_tilde: f64, z: f64, kappa: f64) -> Result<f64> {
    fields.speed(t, y_tilde, z, kappa)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_spacing_hits_endpoints() {
        let v = log_spaced(1000.0, 4000.0, 201);
        assert_eq!(v[0], 1000.0);
        assert_eq!(v[200], 4000.0);
        assert!((v[100] - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn grid_validation() {
        let mut g = GridSpec::default_model1(2000.0, 2000.0);
        assert!(g.validate().is_ok());
        g.z = vec![1.0, 2.0];
        assert!(g.validate().is_err());
        let mut g = GridSpec::default_model1(2000.0, 2000.0);
        g.w[5] = g.w[4];
        assert!(g.validate().is_err());
        let tau = GridSpec { n_t: 4, time_mesh: TimeMesh::Power(2.0), ..GridSpec::default_model1(1.0, 1.0) }.tau_mesh(1.0, 0.0);
        assert_eq!(tau, vec![0.0, 1.0 / 16.0, 0.25, 9.0 / 16.0, 1.0]);
        let tau = GridSpec { n_t: 2, time_mesh: TimeMesh::Auto, ..GridSpec::default_model1(1.0, 1.0) }.tau_mesh(8.0, 1.0);
        assert!((tau[1] - 2.0).abs() < 1e-12);
        assert_eq!(tau[2], 8.0);
    }

    #[test]
    fn bracket_edges() {
        let axis = [1.0, 2.0, 4.0];
        assert_eq!(bracket(&axis, 1.0), Some((0, 0.0)));
        assert_eq!(bracket(&axis, 4.0), Some((1, 1.0)));
        assert_eq!(bracket(&axis, 3.0), Some((1, 0.5)));
        assert_eq!(bracket(&axis, 0.5), None);
    }
}
