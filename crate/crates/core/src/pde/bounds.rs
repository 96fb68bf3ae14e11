//! A-priori envelopes for the value-function coefficients.
//!
//! Model I uses the value of the frictionless speculator,
//! `M(t, Z, S) = A_m S^2 + B_m S Z / 2 + C_m Z^2`, with
//!
//! ```text
//! -A_m' = sigma^2 A_m + beta^2 / (4 phi) + beta B_m / 2
//! -B_m' = -beta B_m - beta^2 / phi + 4 beta C_m
//! -C_m' = (gamma^2 - 2 beta) C_m + beta^2 / (4 phi)
//! ```
//!
//! and zero terminal data. The envelopes checked are
//! `-(alpha + phi tau) <= theta2 <= M`, `0 <= theta0 <= M` and
//! `E[Z_T] - Z - (alpha + phi tau) - M <= theta1 <= M + alpha + phi tau`.

use serde::{Deserialize, Serialize};

use super::{PdeError, PdeModel, Result, SolvedFields};
use crate::dynamics::expected_terminal_rate;
use crate::strategy::ControlParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MertonCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl MertonCoeffs {
    pub fn envelope(&self, z: f64, s: f64) -> f64 {
        self.a * s * s + 0.5 * self.b * s * z + self.c * z * z
    }
}

const GL_NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

/// Composite five-point Gauss–Legendre rule on `[a, b]`.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            let mid = a + (p as f64 + 0.5) * h;
            GL_NODES.iter().zip(GL_WEIGHTS).map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

fn panels_for(rate: f64, tau: f64) -> usize {
    (8.0 + 4.0 * rate.abs() * tau).ceil().min(4096.0) as usize
}

/// `C_m` as a function of time to maturity.
fn c_m(beta: f64, phi: f64, gamma: f64, tau: f64) -> f64 {
    let a = gamma * gamma - 2.0 * beta;
    let k = beta * beta / (4.0 * phi);
    if a == 0.0 {
        k * tau
    } else {
        k * (a * tau).exp_m1() / a
    }
}

fn b_m(beta: f64, phi: f64, gamma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let n = panels_for(beta.max(2.0 * beta - gamma * gamma), tau);
    // s is time to maturity at the integration point
    gauss_legendre(|s| (-beta * (tau - s)).exp() * (4.0 * beta * c_m(beta, phi, gamma, s) - beta * beta / phi), 0.0, tau, n)
}

fn a_m(beta: f64, phi: f64, gamma: f64, sigma: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let n = panels_for(sigma * sigma + beta, tau);
    gauss_legendre(
        |s| (sigma * sigma * (tau - s)).exp() * (0.5 * beta * b_m(beta, phi, gamma, s) + beta * beta / (4.0 * phi)),
        0.0,
        tau,
        n,
    )
}

/// `(A_m, B_m, C_m)` at time `t`. Requires `phi > 0`.
pub fn merton_bound_coeffs(params: &ControlParams, t: f64) -> Result<MertonCoeffs> {
    let ControlParams { phi, beta, gamma, sigma, horizon, .. } = *params;
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(PdeError::InvalidParams(format!("bound coefficients need phi > 0, got {phi}")));
    }
    if !(t <= horizon) {
        return Err(PdeError::InvalidParams(format!("t={t} beyond horizon {horizon}")));
    }
    let tau = horizon - t;
    Ok(MertonCoeffs {
        a: a_m(beta, phi, gamma, sigma, tau),
        b: b_m(beta, phi, gamma, tau),
        c: c_m(beta, phi, gamma, tau),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Smallest `value - lower` or `upper - value` seen; negative means violated.
    pub worst_margin: f64,
    /// Location `(t, z, w)` of the worst margin.
    pub worst_at: (f64, f64, f64),
}

impl BoundCheck {
    fn new(name: &str) -> Self {
        Self { name: name.into(), checked: 0, violations: 0, worst_margin: f64::INFINITY, worst_at: (0.0, 0.0, 0.0) }
    }

    fn record(&mut self, margin: f64, scale: f64, at: (f64, f64, f64)) {
        self.checked += 1;
        if margin < -1e-8 * (1.0 + scale.abs()) || margin.is_nan() {
            self.violations += 1;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
            self.worst_at = at;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub checks: Vec<BoundCheck>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }

    pub fn total_violations(&self) -> usize {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

/// Evaluates the six Model I inequalities at every stored node.
pub fn check_bounds_model1(fields: &SolvedFields, params: &ControlParams) -> Result<BoundReport> {
    if fields.model != PdeModel::ModelI {
        return Err(PdeError::InvalidParams("Model I bounds on Model II fields".into()));
    }
    let names = ["theta2 lower", "theta2 upper", "theta1 lower", "theta1 upper", "theta0 lower", "theta0 upper"];
    let mut checks: Vec<BoundCheck> = names.iter().map(|n| BoundCheck::new(n)).collect();
    for (k, &t) in fields.times.iter().enumerate() {
        let m = merton_bound_coeffs(params, t)?;
        let l = params.alpha + params.phi * (params.horizon - t);
        for (iw, &s) in fields.w.iter().enumerate() {
            for (iz, &z) in fields.z.iter().enumerate() {
                let i = fields.index(k, iw, iz);
                let (th2, th1, th0) = (fields.theta2[i], fields.theta1[i], fields.theta0[i]);
                let env = m.envelope(z, s);
                let e = expected_terminal_rate(z, s, params.beta, t, params.horizon);
                let lo1 = e - z - l - env;
                let at = (t, z, s);
                let pairs = [
                    (th2 + l, l),
                    (env - th2, env),
                    (th1 - lo1, lo1),
                    (env + l - th1, env + l),
                    (th0, 0.0),
                    (env - th0, env),
                ];
                for (c, (margin, scale)) in checks.iter_mut().zip(pairs) {
                    c.record(margin, scale, at);
                }
            }
        }
    }
    Ok(BoundReport { checks })
}

/// `-alpha - phi (T - t) <= theta2 <= 0` at every stored node.
pub fn check_bounds_model2(fields: &SolvedFields) -> BoundReport {
    let p = &fields.control;
    let mut lower = BoundCheck::new("theta2 lower");
    let mut upper = BoundCheck::new("theta2 upper");
    for (k, &t) in fields.times.iter().enumerate() {
        let l = p.alpha + p.phi * (p.horizon - t);
        for (iw, &w) in fields.w.iter().enumerate() {
            for (iz, &z) in fields.z.iter().enumerate() {
                let v = fields.theta2[fields.index(k, iw, iz)];
                lower.record(v + l, l, (t, z, w));
                upper.record(-v, 0.0, (t, z, w));
            }
        }
    }
    BoundReport { checks: vec![lower, upper] }
}
