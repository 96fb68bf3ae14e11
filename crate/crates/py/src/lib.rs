//! Python bindings for the CPMM execution lab.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use cpmm_lab::backtest::{summarise, synthetic_campaign, PairedGap, SyntheticConfig};
use cpmm_lab::cpmm::{self, LiquidityProfile, PoolState};
use cpmm_lab::dynamics::{simulate_model1 as simulate1, Model1Params};
use cpmm_lab::estimation::EstimationResult;
use cpmm_lab::pde::{self, GridSpec, PdeError, SolvedFields, SolverConfig};
use cpmm_lab::strategy::{self, ClosedFormStrategy, ControlParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pde_err(e: PdeError) -> PyErr {
    match e {
        PdeError::PicardDiverged { .. } | PdeError::Instability { .. } => PyRuntimeError::new_err(e.to_string()),
        e => value_err(e),
    }
}

/// Serde value to plain Python objects.
fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn serde_to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(v).map_err(value_err)?)
}

/// Average rate received for a swap of `delta_y` (positive sells Y).
#[pyfunction]
fn execution_rate(kappa: f64, y: f64, delta_y: f64) -> PyResult<f64> {
    PoolState::from_depth(kappa, y).and_then(|p| p.execution_rate(delta_y)).map_err(value_err)
}

#[pyfunction]
fn unitary_execution_cost(kappa: f64, y: f64, delta_y: f64) -> PyResult<f64> {
    PoolState::from_depth(kappa, y).and_then(|p| p.unitary_execution_cost(delta_y)).map_err(value_err)
}

/// Convexity approximation `Z^{3/2} |dy| / kappa` of the unitary cost.
#[pyfunction]
fn execution_cost_approx(rate: f64, kappa: f64, delta_y: f64) -> f64 {
    cpmm::execution_cost_approx(rate, kappa, delta_y)
}

/// Swap through a concentrated-liquidity profile; returns `(rate_after, delta_x)`.
#[pyfunction]
fn swap_across_ticks(boundaries: Vec<f64>, depths: Vec<f64>, rate0: f64, delta_y: f64) -> PyResult<(f64, f64)> {
    LiquidityProfile::new(boundaries, depths).and_then(|p| p.swap_across_ticks(rate0, delta_y)).map_err(value_err)
}

#[pyfunction]
fn riccati_a(phi: f64, alpha: f64, eta_zeta: f64, tau: f64) -> f64 {
    strategy::riccati_a(phi, alpha, eta_zeta, tau)
}

#[allow(clippy::too_many_arguments)]
fn control(phi: f64, alpha: f64, eta: f64, horizon: f64, beta: f64, gamma: f64, sigma: f64, kappa: f64) -> PyResult<ControlParams> {
    let p = ControlParams { phi, alpha, eta, horizon, beta, gamma, sigma, kappa };
    p.validate().map_err(value_err)?;
    Ok(p)
}

/// Closed-form feedback speed; positive sells Y. Defaults are the benchmark set.
#[pyfunction]
#[pyo3(signature = (t, y_tilde, z, s, phi=1e-5, alpha=5.0, eta=1.0, horizon=0.1, beta=1.0, gamma=0.02, sigma=0.03, kappa=1e7, time_steps=10_000))]
#[allow(clippy::too_many_arguments)]
fn closed_form_speed(
    t: f64,
    y_tilde: f64,
    z: f64,
    s: f64,
    phi: f64,
    alpha: f64,
    eta: f64,
    horizon: f64,
    beta: f64,
    gamma: f64,
    sigma: f64,
    kappa: f64,
    time_steps: usize,
) -> PyResult<f64> {
    let p = control(phi, alpha, eta, horizon, beta, gamma, sigma, kappa)?;
    ClosedFormStrategy::exact(p, time_steps).and_then(|c| c.speed(t, y_tilde, z, s)).map_err(value_err)
}

/// Model I path as a dict of lists `t`, `S`, `Z`, `kappa`.
#[pyfunction]
#[pyo3(signature = (sigma=0.045, beta=657.9, gamma=0.034, s0=2690.0, z0=2690.0, horizon=0.083, kappa=22_561_783.0, dt=13.0 / 86_400.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn simulate_model1<'py>(
    py: Python<'py>,
    sigma: f64,
    beta: f64,
    gamma: f64,
    s0: f64,
    z0: f64,
    horizon: f64,
    kappa: f64,
    dt: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let params = Model1Params { sigma, beta, gamma, s0, z0, horizon, kappa };
    let path = simulate1(&params, dt, seed).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("t", path.times)?;
    d.set_item("S", path.s.unwrap_or_default())?;
    d.set_item("Z", path.z)?;
    d.set_item("kappa", path.kappa)?;
    Ok(d)
}

/// Estimation record from trade-time observations.
#[pyfunction]
fn estimate<'py>(py: Python<'py>, timestamps_ms: Vec<i64>, z: Vec<f64>, s: Vec<f64>, depths: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    let est = EstimationResult::from_observations(&timestamps_ms, &z, &s, &depths).map_err(value_err)?;
    serde_to_py(py, &est)
}

/// Solved Model I value-function coefficients.
#[pyclass(frozen, module = "pycpmm")]
struct Model1Fields {
    inner: SolvedFields,
    bounds_passed: bool,
}

#[pymethods]
impl Model1Fields {
    /// Numerical feedback speed at `(t, y_tilde, Z, S)`.
    fn speed(&self, t: f64, y_tilde: f64, z: f64, s: f64) -> PyResult<f64> {
        self.inner.speed(t, y_tilde, z, s).map_err(pde_err)
    }

    fn theta2(&self, t: f64, z: f64, s: f64) -> PyResult<f64> {
        self.inner.theta2_at(t, z, s).map_err(pde_err)
    }

    #[getter]
    fn bounds_passed(&self) -> bool {
        self.bounds_passed
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn picard_monotone_fraction(&self) -> f64 {
        self.inner.diagnostics.monotone_fraction()
    }
}

/// Model I HJB solve on an `n x n` log grid over `[Z0/2, 2 Z0] x [S0/2, 2 S0]`.
#[pyfunction]
#[pyo3(signature = (phi=1e-5, alpha=5.0, eta=1.0, horizon=0.1, beta=1.0, gamma=0.02, sigma=0.03, kappa=1e7, z0=2000.0, s0=2000.0, n=201, n_t=200))]
#[allow(clippy::too_many_arguments)]
fn solve_model1(
    py: Python<'_>,
    phi: f64,
    alpha: f64,
    eta: f64,
    horizon: f64,
    beta: f64,
    gamma: f64,
    sigma: f64,
    kappa: f64,
    z0: f64,
    s0: f64,
    n: usize,
    n_t: usize,
) -> PyResult<Model1Fields> {
    let p = control(phi, alpha, eta, horizon, beta, gamma, sigma, kappa)?;
    let base = GridSpec::default_model1(z0, s0);
    let grid = GridSpec {
        n_t,
        z: pde::log_spaced(0.5 * z0, 2.0 * z0, n),
        w: pde::log_spaced(0.5 * s0, 2.0 * s0, n),
        ..base
    };
    let inner = py.detach(|| pde::solve_model1(&p, &grid, &SolverConfig::default())).map_err(pde_err)?;
    let bounds_passed = if phi > 0.0 { pde::check_bounds_model1(&inner, &p).map_err(pde_err)?.passed() } else { true };
    Ok(Model1Fields { inner, bounds_passed })
}

/// Seeded synthetic comparison: per-strategy summaries plus paired gaps.
#[pyfunction]
#[pyo3(signature = (windows=50, seed=0))]
fn synthetic_compare<'py>(py: Python<'py>, windows: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SyntheticConfig::default();
    let ws = py.detach(|| synthetic_campaign(&cfg, seed, windows)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("summary", serde_to_py(py, &summarise(&ws))?)?;
    d.set_item("closed_form_minus_twap", serde_to_py(py, &PairedGap::between(&ws, "closed_form", "twap"))?)?;
    d.set_item("twap_minus_single_order", serde_to_py(py, &PairedGap::between(&ws, "twap", "single_order"))?)?;
    Ok(d)
}

#[pymodule]
fn pycpmm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(execution_rate, m)?)?;
    m.add_function(wrap_pyfunction!(unitary_execution_cost, m)?)?;
    m.add_function(wrap_pyfunction!(execution_cost_approx, m)?)?;
    m.add_function(wrap_pyfunction!(swap_across_ticks, m)?)?;
    m.add_function(wrap_pyfunction!(riccati_a, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_speed, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_model1, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_model1, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_compare, m)?)?;
    m.add_class::<Model1Fields>()?;
    Ok(())
}
