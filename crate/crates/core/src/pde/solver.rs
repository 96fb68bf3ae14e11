//! Douglas alternating-direction stepping with a Picard inner loop.
//!
//! One backward step from `u = u^n` over `dt` for `u_tau = Lz u + Lw u + q u + f`:
//!
//! ```text
//! Y0 = u + dt (Lz u + Lw u + q_old u + f_old)
//! (I - th dt (Lz + q_new)) Y1 = Y0 - th dt (Lz u + q_old u) + th dt (f_new - f_old)
//! (I - th dt Lw) Y2 = Y1 - th dt Lw u
//! ```
//!
//! For `theta2` the reaction is `c u^2 - phi`, linearized as `q_new = c u^(k)`
//! with `u^(k)` the latest Picard iterate at the new level.

use rayon::prelude::*;
use tracing::{debug, warn};

use super::tridiag;
use super::{Convection, GridSpec, PdeError, PdeModel, PicardDiagnostics, Result, SolvedFields, SolverConfig};
use crate::dynamics::Model2Params;
use crate::strategy::ControlParams;

/// `(time, theta0, theta1, theta2)` at one saved level.
type Snapshot = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// Tridiagonal coefficients of one directional operator at every node.
struct AxisOperator {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
}

/// Central/one-sided weights for `u'` and `u''` on a nonuniform axis.
/// Edge nodes use a reflected ghost point, i.e. `u' = 0`.
fn stencil(axis: &[f64], i: usize, drift: f64, diff: f64, conv: Convection) -> (f64, f64, f64) {
    let n = axis.len();
    if i == 0 {
        let h = axis[1] - axis[0];
        let w = 2.0 * diff / (h * h);
        return (0.0, -w, w);
    }
    if i == n - 1 {
        let h = axis[n - 1] - axis[n - 2];
        let w = 2.0 * diff / (h * h);
        return (w, -w, 0.0);
    }
    let hm = axis[i] - axis[i - 1];
    let hp = axis[i + 1] - axis[i];
    let s = hm + hp;
    let (mut l, mut d, mut u) = (2.0 * diff / (hm * s), -2.0 * diff / (hm * hp), 2.0 * diff / (hp * s));
    let upwind = match conv {
        Convection::Central => false,
        Convection::Upwind => true,
        Convection::Hybrid => drift.abs() * hm.max(hp) > 2.0 * diff,
    };
    if upwind && drift > 0.0 {
        d -= drift / hp;
        u += drift / hp;
    } else if upwind {
        l -= drift / hm;
        d += drift / hm;
    } else {
        l -= drift * hp / (hm * s);
        d += drift * (hp - hm) / (hm * hp);
        u += drift * hm / (hp * s);
    }
    (l, d, u)
}

struct Problem<'a> {
    z: &'a [f64],
    w: &'a [f64],
    lz: AxisOperator,
    lw: AxisOperator,
    /// Reaction scale `kappa / (eta Z^{3/2})` per node.
    c: Vec<f64>,
    theta: f64,
}

impl Problem<'_> {
    fn nz(&self) -> usize {
        self.z.len()
    }

    fn len(&self) -> usize {
        self.z.len() * self.w.len()
    }

    fn apply_z(&self, u: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        out.par_chunks_mut(nz).enumerate().for_each(|(iw, row)| {
            let base = iw * nz;
            for iz in 0..nz {
                let k = base + iz;
                let mut v = self.lz.di[k] * u[k];
                if iz > 0 {
                    v += self.lz.lo[k] * u[k - 1];
                }
                if iz + 1 < nz {
                    v += self.lz.up[k] * u[k + 1];
                }
                row[iz] = v;
            }
        });
    }

    fn apply_w(&self, u: &[f64], out: &mut [f64]) {
        let nz = self.nz();
        let nw = self.w.len();
        out.par_chunks_mut(nz).enumerate().for_each(|(iw, row)| {
            let base = iw * nz;
            for iz in 0..nz {
                let k = base + iz;
                let mut v = self.lw.di[k] * u[k];
                if iw > 0 {
                    v += self.lw.lo[k] * u[k - nz];
                }
                if iw + 1 < nw {
                    v += self.lw.up[k] * u[k + nz];
                }
                row[iz] = v;
            }
        });
    }

    /// Solves `(I - th dt (Lz + q)) x = rhs` line by line, overwriting `rhs`.
    fn sweep_z(&self, dt: f64, q: &[f64], rhs: &mut [f64]) {
        let nz = self.nz();
        let a = self.theta * dt;
        rhs.par_chunks_mut(nz).enumerate().for_each(|(iw, line)| {
            let base = iw * nz;
            let lo: Vec<f64> = (0..nz).map(|i| -a * self.lz.lo[base + i]).collect();
            let di: Vec<f64> = (0..nz).map(|i| 1.0 - a * (self.lz.di[base + i] + q[base + i])).collect();
            let up: Vec<f64> = (0..nz).map(|i| -a * self.lz.up[base + i]).collect();
            let mut scratch = vec![0.0; nz];
            tridiag::solve(&lo, &di, &up, line, &mut scratch);
        });
    }

    /// Solves `(I - th dt Lw) x = rhs` along each `w` column, overwriting `rhs`.
    fn sweep_w(&self, dt: f64, rhs: &mut [f64]) {
        let nz = self.nz();
        let nw = self.w.len();
        let a = self.theta * dt;
        let src: &[f64] = rhs;
        let cols: Vec<Vec<f64>> = (0..nz)
            .into_par_iter()
            .map(|iz| {
                let idx = |iw: usize| iw * nz + iz;
                let lo: Vec<f64> = (0..nw).map(|i| -a * self.lw.lo[idx(i)]).collect();
                let di: Vec<f64> = (0..nw).map(|i| 1.0 - a * self.lw.di[idx(i)]).collect();
                let up: Vec<f64> = (0..nw).map(|i| -a * self.lw.up[idx(i)]).collect();
                let mut col: Vec<f64> = (0..nw).map(|i| src[idx(i)]).collect();
                let mut scratch = vec![0.0; nw];
                tridiag::solve(&lo, &di, &up, &mut col, &mut scratch);
                col
            })
            .collect();
        for (iz, col) in cols.iter().enumerate() {
            for (iw, v) in col.iter().enumerate() {
                rhs[iw * nz + iz] = *v;
            }
        }
    }

    /// One Douglas step. `q_old`, `f_old` are the reaction coefficients at the
    /// known level, `q_new`, `f_new` at the level being computed.
    fn step(&self, u: &[f64], dt: f64, q_old: &[f64], f_old: &[f64], q_new: &[f64], f_new: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut lzu = vec![0.0; n];
        let mut lwu = vec![0.0; n];
        self.apply_z(u, &mut lzu);
        self.apply_w(u, &mut lwu);
        let th = self.theta;
        let mut y: Vec<f64> = (0..n)
            .map(|k| {
                let y0 = u[k] + dt * (lzu[k] + lwu[k] + q_old[k] * u[k] + f_old[k]);
                y0 - th * dt * (lzu[k] + q_old[k] * u[k]) + th * dt * (f_new[k] - f_old[k])
            })
            .collect();
        self.sweep_z(dt, q_new, &mut y);
        for k in 0..n {
            y[k] -= th * dt * lwu[k];
        }
        self.sweep_w(dt, &mut y);
        y
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

struct Coefficients {
    z_drift: Box<dyn Fn(f64, f64) -> f64 + Sync>,
    z_diff: Box<dyn Fn(f64, f64) -> f64 + Sync>,
    w_diff: Box<dyn Fn(f64, f64) -> f64 + Sync>,
    depth: Box<dyn Fn(f64) -> f64 + Sync>,
    /// Source of the `theta1` equation.
    theta1_source: Box<dyn Fn(f64, f64) -> f64 + Sync>,
}

fn build_problem<'a>(grid: &'a GridSpec, co: &Coefficients, control: &ControlParams, cfg: &SolverConfig) -> Problem<'a> {
    let (nz, nw) = (grid.z.len(), grid.w.len());
    let n = nz * nw;
    let mut lz = AxisOperator { lo: vec![0.0; n], di: vec![0.0; n], up: vec![0.0; n] };
    let mut lw = AxisOperator { lo: vec![0.0; n], di: vec![0.0; n], up: vec![0.0; n] };
    let mut c = vec![0.0; n];
    for iw in 0..nw {
        for iz in 0..nz {
            let k = iw * nz + iz;
            let (z, w) = (grid.z[iz], grid.w[iw]);
            let (l, d, u) = stencil(&grid.z, iz, (co.z_drift)(z, w), (co.z_diff)(z, w), cfg.convection);
            (lz.lo[k], lz.di[k], lz.up[k]) = (l, d, u);
            let (l, d, u) = stencil(&grid.w, iw, 0.0, (co.w_diff)(z, w), cfg.convection);
            (lw.lo[k], lw.di[k], lw.up[k]) = (l, d, u);
            c[k] = (co.depth)(w) / (control.eta * z.powf(1.5));
        }
    }
    Problem { z: &grid.z, w: &grid.w, lz, lw, c, theta: cfg.theta }
}

fn solve(
    model: PdeModel,
    control: &ControlParams,
    model2: Option<Model2Params>,
    grid: &GridSpec,
    cfg: &SolverConfig,
    co: Coefficients,
) -> Result<SolvedFields> {
    grid.validate()?;
    cfg.validate()?;
    let horizon = control.horizon;
    let p = build_problem(grid, &co, control, cfg);
    let n = p.len();
    let c_max = p.c.iter().fold(0.0f64, |m, v| m.max(*v));
    let layer = if control.alpha > 0.0 { 1.0 / (control.alpha * c_max) } else { horizon / 100.0 };
    let tau = grid.tau_mesh(horizon, layer);
    let keep = |level: usize| level.is_multiple_of(cfg.snapshot_stride) || level == grid.n_t;

    let cap = 10.0 * (control.alpha + control.phi * horizon) + 1.0;
    let neg_phi = vec![-control.phi; n];
    let zeros = vec![0.0; n];
    let src1: Vec<f64> = (0..n).map(|k| (co.theta1_source)(grid.z[k % p.nz()], grid.w[k / p.nz()])).collect();

    let mut th2 = vec![-control.alpha; n];
    let mut th1 = vec![0.0; n];
    let mut th0 = vec![0.0; n];
    // snapshots in backward order, reversed at the end
    let mut snaps: Vec<Snapshot> = vec![(horizon, th0.clone(), th1.clone(), th2.clone())];
    let mut diag = PicardDiagnostics::default();
    let pc = cfg.picard;

    for level in 1..=grid.n_t {
        let dt = tau[level] - tau[level - 1];
        let t_new = horizon - tau[level];
        let q_old: Vec<f64> = (0..n).map(|k| p.c[k] * th2[k]).collect();

        let mut iterate = th2.clone();
        let mut changes = Vec::with_capacity(pc.max_iterations);
        let mut converged = false;
        for _ in 0..pc.max_iterations {
            let q_new: Vec<f64> = (0..n).map(|k| p.c[k] * iterate[k]).collect();
            let y = p.step(&th2, dt, &q_old, &neg_phi, &q_new, &neg_phi);
            let next: Vec<f64> = if pc.damping < 1.0 {
                iterate.iter().zip(&y).map(|(a, b)| a + pc.damping * (b - a)).collect()
            } else {
                y
            };
            let change = sup_diff(&next, &iterate);
            iterate = next;
            if !change.is_finite() {
                return Err(PdeError::Instability { t: t_new, reason: "non-finite theta2 iterate".into() });
            }
            changes.push(change);
            if change < pc.tolerance {
                converged = true;
                break;
            }
        }
        let last = *changes.last().unwrap_or(&f64::NAN);
        if !converged {
            warn!(t = t_new, residual = last, "Picard iteration failed");
            return Err(PdeError::PicardDiverged { t: t_new, iterations: changes.len(), residual: last });
        }
        diag.iterations.push(changes.len());
        diag.final_residuals.push(last);
        diag.monotone.push(changes.windows(2).all(|w| w[1] <= w[0]));

        let sup = iterate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !sup.is_finite() || sup > cap {
            return Err(PdeError::Instability { t: t_new, reason: format!("sup |theta2| = {sup:e} exceeds {cap:e}") });
        }

        let q_new: Vec<f64> = (0..n).map(|k| p.c[k] * iterate[k]).collect();
        let new1 = p.step(&th1, dt, &q_old, &src1, &q_new, &src1);
        let f0_old: Vec<f64> = (0..n).map(|k| 0.25 * p.c[k] * th1[k] * th1[k]).collect();
        let f0_new: Vec<f64> = (0..n).map(|k| 0.25 * p.c[k] * new1[k] * new1[k]).collect();
        let new0 = p.step(&th0, dt, &zeros, &f0_old, &zeros, &f0_new);
        if new1.iter().chain(&new0).any(|v| !v.is_finite()) {
            return Err(PdeError::Instability { t: t_new, reason: "non-finite theta1/theta0".into() });
        }
        th2 = iterate;
        th1 = new1;
        th0 = new0;
        if keep(level) {
            let t = if level == grid.n_t { 0.0 } else { t_new };
            snaps.push((t, th0.clone(), th1.clone(), th2.clone()));
        }
    }
    debug!(levels = grid.n_t, mean_iterations = diag.iterations.iter().sum::<usize>() as f64 / grid.n_t as f64, "PDE solved");

    snaps.reverse();
    let mut fields = SolvedFields {
        model,
        control: *control,
        model2,
        z: grid.z.clone(),
        w: grid.w.clone(),
        times: Vec::with_capacity(snaps.len()),
        theta0: Vec::with_capacity(snaps.len() * n),
        theta1: Vec::with_capacity(snaps.len() * n),
        theta2: Vec::with_capacity(snaps.len() * n),
        diagnostics: diag,
    };
    for (t, a, b, c) in snaps {
        fields.times.push(t);
        fields.theta0.extend(a);
        fields.theta1.extend(b);
        fields.theta2.extend(c);
    }
    Ok(fields)
}

fn check_control(control: &ControlParams) -> Result<()> {
    control.validate().map_err(|e| PdeError::InvalidParams(e.to_string()))
}

/// Model I system on a `(Z, S)` grid.
pub fn solve_model1(control: &ControlParams, grid: &GridSpec, cfg: &SolverConfig) -> Result<SolvedFields> {
    check_control(control)?;
    let ControlParams { beta, gamma, sigma, kappa, .. } = *control;
    let co = Coefficients {
        z_drift: Box::new(move |z, s| beta * (s - z)),
        z_diff: Box::new(move |z, _| 0.5 * gamma * gamma * z * z),
        w_diff: Box::new(move |_, s| 0.5 * sigma * sigma * s * s),
        depth: Box::new(move |_| kappa),
        theta1_source: Box::new(move |z, s| beta * (s - z)),
    };
    solve(PdeModel::ModelI, control, None, grid, cfg, co)
}

/// Model II system on a `(Z, kappa)` grid. The horizon, penalties and `eta`
/// come from `control`; its drift, oracle and depth fields are ignored.
pub fn solve_model2(control: &ControlParams, m2: &Model2Params, grid: &GridSpec, cfg: &SolverConfig) -> Result<SolvedFields> {
    check_control(control)?;
    m2.validate().map_err(|e| PdeError::InvalidParams(e.to_string()))?;
    if (m2.horizon - control.horizon).abs() > 1e-12 * control.horizon {
        return Err(PdeError::InvalidParams(format!("horizon mismatch: {} vs {}", m2.horizon, control.horizon)));
    }
    let Model2Params { gamma, varsigma, .. } = *m2;
    let co = Coefficients {
        z_drift: Box::new(|_, _| 0.0),
        z_diff: Box::new(move |z, _| 0.5 * gamma * gamma * z * z),
        w_diff: Box::new(move |_, k| 0.5 * varsigma * varsigma * k * k),
        depth: Box::new(|k| k),
        theta1_source: Box::new(|_, _| 0.0),
    };
    solve(PdeModel::ModelII, control, Some(*m2), grid, cfg, co)
}

#[cfg(test)]
mod tests {
    use super::super::{log_spaced, TimeMesh};
    use super::*;
    use crate::strategy::riccati_a;

    fn small_grid(z0: f64, w0: f64, n: usize, n_t: usize) -> GridSpec {
        GridSpec { n_t, z: log_spaced(0.5 * z0, 2.0 * z0, n), w: log_spaced(0.5 * w0, 2.0 * w0, n), time_mesh: TimeMesh::Auto }
    }

    #[test]
    fn stencil_exact_on_quadratics() {
        let axis = [1.0, 1.3, 2.0, 2.2, 3.5];
        let u = |x: f64| 3.0 * x * x - 2.0 * x + 1.0;
        for i in 1..4 {
            let (l, d, r) = stencil(&axis, i, 0.7, 1.9, Convection::Central);
            let got = l * u(axis[i - 1]) + d * u(axis[i]) + r * u(axis[i + 1]);
            let want = 0.7 * (6.0 * axis[i] - 2.0) + 1.9 * 6.0;
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        let (l, d, r) = stencil(&axis, 0, 5.0, 1.0, Convection::Central);
        assert_eq!(l, 0.0);
        assert!((d + r).abs() < 1e-15);
    }

    #[test]
    fn degenerate_model1_is_pointwise_riccati() {
        let mut p = ControlParams::benchmark();
        (p.beta, p.gamma, p.sigma) = (0.0, 0.0, 0.0);
        let grid = small_grid(2000.0, 2000.0, 21, 1000);
        let f = solve_model1(&p, &grid, &SolverConfig::default()).unwrap();
        let mut worst: f64 = 0.0;
        for (k, &t) in f.times.iter().enumerate() {
            for iw in [0, 10, 20] {
                for (iz, &z) in f.z.iter().enumerate() {
                    let exact = riccati_a(p.phi, p.alpha, p.eta * p.zeta_at(z), p.horizon - t);
                    worst = worst.max((f.theta2[f.index(k, iw, iz)] - exact).abs());
                    assert_eq!(f.theta1[f.index(k, iw, iz)], 0.0);
                }
            }
        }
        assert!(worst < 1e-4, "sup error {worst:e}");
    }

    #[test]
    fn terminal_slices_and_time_order() {
        let p = ControlParams::benchmark();
        let f = solve_model1(&p, &small_grid(2000.0, 2000.0, 11, 20), &SolverConfig::default()).unwrap();
        assert_eq!(*f.times.last().unwrap(), p.horizon);
        assert_eq!(f.times[0], 0.0);
        assert!(f.times.windows(2).all(|w| w[1] > w[0]));
        let k = f.times.len() - 1;
        assert!(f.slice(&f.theta2, k).iter().all(|v| *v == -p.alpha));
        assert!(f.slice(&f.theta1, k).iter().all(|v| *v == 0.0));
        assert!(f.slice(&f.theta0, k).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_beta_gives_zero_theta1() {
        let mut p = ControlParams::benchmark();
        p.beta = 0.0;
        let f = solve_model1(&p, &small_grid(2000.0, 2000.0, 15, 30), &SolverConfig::default()).unwrap();
        assert!(f.theta1.iter().all(|v| *v == 0.0));
        assert_eq!(f.speed(0.0, 0.0, 2000.0, 2100.0).unwrap(), 0.0);
    }

    #[test]
    fn model2_bounds_and_zero_fields() {
        let p = ControlParams { beta: 0.0, sigma: 0.0, ..ControlParams::benchmark() };
        let m2 = Model2Params { gamma: 0.05, varsigma: 0.3, z0: 2000.0, kappa0: 1e7, horizon: p.horizon };
        let grid = GridSpec { n_t: 40, ..GridSpec::default_model2(2000.0, 1e7) };
        let grid = GridSpec { z: log_spaced(1000.0, 4000.0, 41), w: log_spaced(2.5e6, 4e7, 41), ..grid };
        let f = solve_model2(&p, &m2, &grid, &SolverConfig::default()).unwrap();
        assert!(f.theta1.iter().chain(&f.theta0).all(|v| v.abs() <= 1e-12));
        for (k, &t) in f.times.iter().enumerate() {
            let lo = -p.alpha - p.phi * (p.horizon - t);
            assert!(f.slice(&f.theta2, k).iter().all(|v| *v >= lo - 1e-12 && *v <= 1e-12));
        }
        let v1 = f.speed(0.02, 50.0, 2000.0, 1e7).unwrap();
        assert!(v1 > 0.0);
        assert!(f.speed(0.02, -50.0, 2000.0, 1e7).unwrap() < 0.0);
        assert_eq!(f.speed(0.02, 0.0, 2000.0, 1e7).unwrap(), 0.0);
    }

    #[test]
    fn out_of_hull_rejected() {
        let p = ControlParams::benchmark();
        let f = solve_model1(&p, &small_grid(2000.0, 2000.0, 11, 10), &SolverConfig::default()).unwrap();
        assert!(matches!(f.speed(0.0, 1.0, 5000.0, 2000.0), Err(PdeError::OutOfHull { .. })));
        assert!(matches!(f.speed(0.2, 1.0, 2000.0, 2000.0), Err(PdeError::OutOfHull { .. })));
    }

    #[test]
    fn picard_failure_reported() {
        let p = ControlParams::benchmark();
        let cfg = SolverConfig { picard: super::super::PicardConfig { max_iterations: 1, ..Default::default() }, ..Default::default() };
        let err = solve_model1(&p, &small_grid(2000.0, 2000.0, 11, 10), &cfg).unwrap_err();
        assert!(matches!(err, PdeError::PicardDiverged { iterations: 1, .. }));
    }

    #[test]
    fn rejects_bad_config() {
        let p = ControlParams::benchmark();
        let cfg = SolverConfig { theta: 0.2, ..Default::default() };
        assert!(solve_model1(&p, &small_grid(2000.0, 2000.0, 11, 10), &cfg).is_err());
    }
}
