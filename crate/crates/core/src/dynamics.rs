//! Stochastic environments: Model I (oracle plus mean-reverting pool rate)
//! and Model II (pool rate with stochastic depth).

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid parameter {name}={value}: {reason}")]
    InvalidParam { name: &'static str, value: f64, reason: &'static str },
    #[error("pool rate became non-positive at step {step} (t={t}); refine dt")]
    NonPositiveRate { step: usize, t: f64 },
    #[error("path csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("path csv row {row}: {msg}")]
    Malformed { row: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

fn check(name: &'static str, value: f64, ok: bool, reason: &'static str) -> Result<()> {
    if !value.is_finite() || !ok {
        return Err(DynamicsError::InvalidParam { name, value, reason });
    }
    Ok(())
}

/// Model I: `dS = sigma S dW`, `dZ = beta (S - Z) dt + gamma Z dB`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model1Params {
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub s0: f64,
    pub z0: f64,
    pub horizon: f64,
    /// Pool depth carried on simulated paths; constant in this model.
    pub kappa: f64,
}

impl Model1Params {
    pub fn validate(&self) -> Result<()> {
        check("sigma", self.sigma, self.sigma >= 0.0, "must be >= 0")?;
        check("beta", self.beta, self.beta >= 0.0, "must be >= 0")?;
        check("gamma", self.gamma, self.gamma >= 0.0, "must be >= 0")?;
        check("s0", self.s0, self.s0 > 0.0, "must be > 0")?;
        check("z0", self.z0, self.z0 > 0.0, "must be > 0")?;
        check("horizon", self.horizon, self.horizon > 0.0, "must be > 0")?;
        check("kappa", self.kappa, self.kappa > 0.0, "must be > 0")
    }
}

/// Model II: `dZ = gamma Z dB`, `dkappa = varsigma kappa dL`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model2Params {
    pub gamma: f64,
    pub varsigma: f64,
    pub z0: f64,
    pub kappa0: f64,
    pub horizon: f64,
}

impl Model2Params {
    pub fn validate(&self) -> Result<()> {
        check("gamma", self.gamma, self.gamma >= 0.0, "must be >= 0")?;
        check("varsigma", self.varsigma, self.varsigma >= 0.0, "must be >= 0")?;
        check("z0", self.z0, self.z0 > 0.0, "must be > 0")?;
        check("kappa0", self.kappa0, self.kappa0 > 0.0, "must be > 0")?;
        check("horizon", self.horizon, self.horizon > 0.0, "must be > 0")
    }
}

/// Time-indexed oracle rate, pool rate and depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketPath {
    pub times: Vec<f64>,
    /// Oracle rate; absent for Model II paths.
    pub s: Option<Vec<f64>>,
    pub z: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl MarketPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "S", "Z", "kappa"])?;
        for i in 0..self.len() {
            let s = self.s.as_ref().map_or(String::new(), |s| s[i].to_string());
            w.write_record([self.times[i].to_string(), s, self.z[i].to_string(), self.kappa[i].to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut path = MarketPath { times: vec![], s: Some(vec![]), z: vec![], kappa: vec![] };
        let mut saw_empty_s = false;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let field = |j: usize, name: &str| -> Result<f64> {
                rec.get(j)
                    .ok_or_else(|| DynamicsError::Malformed { row, msg: format!("missing column {name}") })?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| DynamicsError::Malformed { row, msg: format!("column {name}: {e}") })
            };
            path.times.push(field(0, "t")?);
            if rec.get(1).is_none_or(|v| v.trim().is_empty()) {
                saw_empty_s = true;
            } else if let Some(s) = path.s.as_mut() {
                s.push(field(1, "S")?);
            }
            path.z.push(field(2, "Z")?);
            path.kappa.push(field(3, "kappa")?);
        }
        if saw_empty_s {
            path.s = None;
        }
        Ok(path)
    }
}

/// Number of steps and the effective step for a horizon and requested `dt`.
pub fn step_count(horizon: f64, dt: f64) -> (usize, f64) {
    let n = ((horizon / dt).round() as usize).max(1);
    (n, horizon / n as f64)
}

/// Default simulation step: `T / 5000`.
pub fn default_dt(horizon: f64) -> f64 {
    horizon / 5000.0
}

/// Two independent generators for one path, one per driving noise.
fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut a = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ChaCha8Rng::seed_from_u64(seed);
    a.set_stream(0);
    b.set_stream(1);
    (a, b)
}

/// Simulates Model I on a uniform grid. `S` uses exact log-normal steps and
/// `Z` an Euler–Maruyama step in levels.
pub fn simulate_model1(params: &Model1Params, dt: f64, seed: u64) -> Result<MarketPath> {
    params.validate()?;
    check("dt", dt, dt > 0.0 && dt <= params.horizon, "must lie in (0, T]")?;
    let (n, h) = step_count(params.horizon, dt);
    let (mut rng_s, mut rng_z) = streams(seed);
    let sq = h.sqrt();
    let drift_s = -0.5 * params.sigma * params.sigma * h;
    let mut times = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut z = Vec::with_capacity(n + 1);
    let (mut s_k, mut z_k) = (params.s0, params.z0);
    times.push(0.0);
    s.push(s_k);
    z.push(z_k);
    for k in 0..n {
        let dw: f64 = StandardNormal.sample(&mut rng_s);
        let db: f64 = StandardNormal.sample(&mut rng_z);
        let z_next = z_k + params.beta * (s_k - z_k) * h + params.gamma * z_k * sq * db;
        let t = (k + 1) as f64 * h;
        if !(z_next > 0.0) {
            return Err(DynamicsError::NonPositiveRate { step: k + 1, t });
        }
        s_k *= (drift_s + params.sigma * sq * dw).exp();
        z_k = z_next;
        times.push(t);
        s.push(s_k);
        z.push(z_k);
    }
    Ok(MarketPath { times, s: Some(s), kappa: vec![params.kappa; n + 1], z })
}

/// Simulates Model II with exact log-normal steps for both `Z` and `kappa`.
pub fn simulate_model2(params: &Model2Params, dt: f64, seed: u64) -> Result<MarketPath> {
    params.validate()?;
    check("dt", dt, dt > 0.0 && dt <= params.horizon, "must lie in (0, T]")?;
    let (n, h) = step_count(params.horizon, dt);
    let (mut rng_z, mut rng_k) = streams(seed);
    let sq = h.sqrt();
    let drift_z = -0.5 * params.gamma * params.gamma * h;
    let drift_k = -0.5 * params.varsigma * params.varsigma * h;
    let mut times = Vec::with_capacity(n + 1);
    let mut z = Vec::with_capacity(n + 1);
    let mut kappa = Vec::with_capacity(n + 1);
    let (mut z_k, mut k_k) = (params.z0, params.kappa0);
    times.push(0.0);
    z.push(z_k);
    kappa.push(k_k);
    for k in 0..n {
        let db: f64 = StandardNormal.sample(&mut rng_z);
        let dl: f64 = StandardNormal.sample(&mut rng_k);
        z_k *= (drift_z + params.gamma * sq * db).exp();
        k_k *= (drift_k + params.varsigma * sq * dl).exp();
        times.push((k + 1) as f64 * h);
        z.push(z_k);
        kappa.push(k_k);
    }
    Ok(MarketPath { times, s: None, z, kappa })
}

/// `E[Z_T | Z_t = Z, S_t = S]` under Model I.
pub fn expected_terminal_rate(z: f64, s: f64, beta: f64, t: f64, horizon: f64) -> f64 {
    let decay = (-beta * (horizon - t)).exp();
    z * decay + s * (1.0 - decay)
}

/// Raw driving increments of a Model I path, for independence diagnostics.
pub fn model1_noise(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut a, mut b) = streams(seed);
    let w = (0..n).map(|_| StandardNormal.sample(&mut a)).collect();
    let z = (0..n).map(|_| StandardNormal.sample(&mut b)).collect();
    (w, z)
}
