//! Small ODE toolkit: adaptive Dormand–Prince 5(4) and fixed-step RK4.
//!
//! Both integrate in either time direction, which is what the backward
//! coefficient systems need.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at t={t}")]
    NonFinite { t: f64 },
}

// Dormand–Prince tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand–Prince 5(4) integrator with a mixed error norm.
#[derive(Debug, Clone)]
pub struct DormandPrince {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Step size carried between calls; zero lets the integrator pick one.
    pub h: f64,
    pub steps_taken: usize,
}

impl DormandPrince {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, max_steps: 1_000_000, h: 0.0, steps_taken: 0 }
    }

    /// Advances `y` from `t0` to `t1`. The last accepted step size is kept in
    /// `self.h`, so repeated calls over consecutive intervals stay cheap.
    pub fn integrate<F>(&mut self, mut f: F, t0: f64, t1: f64, y: &mut [f64]) -> Result<(), OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut t = t0;
        f(t, y, &mut k[0]);
        let mut h = if self.h != 0.0 { self.h.abs() } else { initial_step(span.abs(), y, &k[0], self.rtol, self.atol) };
        let mut steps = 0usize;
        loop {
            let remaining = (t1 - t) * dir;
            if remaining <= 1e-14 * span.abs().max(t.abs()) {
                return Ok(());
            }
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let hs = step * dir;
            if step < 1e-15 * t.abs().max(1.0) {
                return Err(OdeError::StepUnderflow { t });
            }

            for i in 0..n {
                tmp[i] = y[i] + hs * A21 * k[0][i];
            }
            f(t + C2 * hs, &tmp, &mut k[1]);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A31 * k[0][i] + A32 * k[1][i]);
            }
            f(t + C3 * hs, &tmp, &mut k[2]);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            f(t + C4 * hs, &tmp, &mut k[3]);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            f(t + C5 * hs, &tmp, &mut k[4]);
            for i in 0..n {
                tmp[i] = y[i]
                    + hs * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
            }
            f(t + hs, &tmp, &mut k[5]);
            for i in 0..n {
                y_new[i] = y[i] + hs * (B1 * k[0][i] + B3 * k[2][i] + B4 * k[3][i] + B5 * k[4][i] + B6 * k[5][i]);
            }
            f(t + hs, &y_new, &mut k[6]);

            let mut err = 0.0;
            for i in 0..n {
                let e = hs
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / n as f64).sqrt();
            if !err.is_finite() {
                if y_new.iter().any(|v| !v.is_finite()) && step < 1e-12 {
                    return Err(OdeError::NonFinite { t });
                }
                h = step * 0.1;
                continue;
            }

            steps += 1;
            self.steps_taken += 1;
            if steps > self.max_steps {
                return Err(OdeError::TooManySteps(self.max_steps));
            }

            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t = if last { t1 } else { t + hs };
                y.copy_from_slice(&y_new);
                k.swap(0, 6);
                if !last || self.h == 0.0 {
                    self.h = step * factor;
                }
                h = step * factor;
                if last {
                    return Ok(());
                }
            } else {
                h = step * factor.min(1.0);
            }
        }
    }
}

fn initial_step(span: f64, y: &[f64], dy: &[f64], rtol: f64, atol: f64) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for (yi, di) in y.iter().zip(dy) {
        let sc = atol + rtol * yi.abs();
        d0 += (yi / sc).powi(2);
        d1 += (di / sc).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 * span } else { 0.01 * (d0 / d1).sqrt() };
    h.min(span).max(1e-12 * span)
}

/// Classical fourth-order Runge–Kutta with `n` equal steps from `t0` to `t1`.
pub fn rk4<F>(mut f: F, t0: f64, t1: f64, y: &mut [f64], n: usize)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y.len();
    let h = (t1 - t0) / n as f64;
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..n {
        let t = t0 + step as f64 * h;
        f(t, y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        f(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        f(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_backward() {
        // y' = -2y integrated from t=1 back to t=0 starting at y(1)=1
        let mut y = [1.0];
        let mut dp = DormandPrince::new(1e-12, 1e-14);
        dp.integrate(|_, y, dy| dy[0] = -2.0 * y[0], 1.0, 0.0, &mut y).unwrap();
        assert!((y[0] - 2f64.exp()).abs() < 1e-10 * 2f64.exp());
    }

    #[test]
    fn harmonic_oscillator_forward() {
        let mut y = [1.0, 0.0];
        let mut dp = DormandPrince::new(1e-11, 1e-13);
        dp.integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            10.0,
            &mut y,
        )
        .unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn chained_intervals_match_single_call() {
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = t.cos() * y[0];
        let mut single = [1.0];
        DormandPrince::new(1e-12, 1e-14).integrate(rhs, 0.0, 3.0, &mut single).unwrap();
        let mut chained = [1.0];
        let mut dp = DormandPrince::new(1e-12, 1e-14);
        for i in 0..300 {
            dp.integrate(rhs, i as f64 * 0.01, (i + 1) as f64 * 0.01, &mut chained).unwrap();
        }
        let exact = 3f64.sin().exp();
        assert!((single[0] - exact).abs() < 1e-10);
        assert!((chained[0] - exact).abs() < 1e-10);
    }

    #[test]
    fn rk4_fourth_order() {
        let run = |n| {
            let mut y = [1.0];
            rk4(|_, y, dy| dy[0] = y[0], 0.0, 1.0, &mut y, n);
            (y[0] - 1f64.exp()).abs()
        };
        let ratio = run(20) / run(40);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }
}
