//! Run configuration: defaults, TOML file sections and flag overlays.
//!
//! Precedence is flags over the config file over built-in defaults. The
//! resolved section is echoed to the output directory and hashed into the
//! fingerprint stamped on every output.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output: Option<PathBuf>,
    pub simulate: SimulateConfig,
    pub estimate: EstimateConfig,
    pub solve: SolveConfig,
    pub backtest: BacktestConfig,
    pub compare: CompareConfig,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// 1 or 2.
    pub model: u8,
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub varsigma: f64,
    pub s0: f64,
    pub z0: f64,
    /// Depth (Model I) or initial depth (Model II).
    pub kappa: f64,
    /// Days.
    pub horizon: f64,
    pub dt_seconds: f64,
    pub paths: usize,
    /// Also write swaps/oracle event files (Model I only).
    pub events: bool,
    pub start_ms: i64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            model: 1,
            sigma: 0.045,
            beta: 657.9,
            gamma: 0.034,
            varsigma: 0.0,
            s0: 2690.0,
            z0: 2690.0,
            kappa: 22_561_783.0,
            horizon: 0.083,
            dt_seconds: 13.0,
            paths: 1,
            events: false,
            start_ms: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub swaps: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub lp: Option<PathBuf>,
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ConvectionKind {
    Central,
    Upwind,
    Hybrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub model: u8,
    pub phi: f64,
    pub alpha: f64,
    pub eta: f64,
    pub horizon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub varsigma: f64,
    pub kappa: f64,
    pub z0: f64,
    pub s0: f64,
    pub n_t: usize,
    pub n_z: usize,
    pub n_w: usize,
    pub picard_max_iterations: usize,
    pub picard_tolerance: f64,
    pub picard_damping: f64,
    pub theta: f64,
    pub convection: ConvectionKind,
    pub snapshot_stride: usize,
    /// Time steps of the closed-form coefficient tables.
    pub coefficient_steps: usize,
    /// Write the closed-form coefficients only and skip the PDE.
    pub closed_form_only: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            model: 1,
            phi: 1e-5,
            alpha: 5.0,
            eta: 1.0,
            horizon: 0.1,
            beta: 1.0,
            gamma: 0.02,
            sigma: 0.03,
            varsigma: 0.0,
            kappa: 1e7,
            z0: 2000.0,
            s0: 2000.0,
            n_t: 200,
            n_z: 201,
            n_w: 201,
            picard_max_iterations: 50,
            picard_tolerance: 1e-8,
            picard_damping: 1.0,
            theta: 0.5,
            convection: ConvectionKind::Central,
            snapshot_stride: 10,
            coefficient_steps: 10_000,
            closed_form_only: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    All,
    Liquidation,
    Twap,
    Single,
    Speculative,
}

impl StrategyKind {
    /// Report names kept by this selection.
    pub fn keeps(self, report: &str) -> bool {
        match self {
            StrategyKind::All => true,
            StrategyKind::Liquidation => report == "closed_form",
            StrategyKind::Twap => report == "twap",
            StrategyKind::Single => report == "single_order",
            StrategyKind::Speculative => report == "speculative",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub swaps: Option<PathBuf>,
    pub oracle: Option<PathBuf>,
    pub lp: Option<PathBuf>,
    pub in_sample_hours: f64,
    pub horizon_hours: f64,
    pub shift_hours: f64,
    pub participation: f64,
    pub phi: f64,
    pub alpha: f64,
    pub phi_speculative: f64,
    pub gas_per_tx: f64,
    pub amm_fee_bps: f64,
    pub strategy: StrategyKind,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            swaps: None,
            oracle: None,
            lp: None,
            in_sample_hours: 24.0,
            horizon_hours: 2.0,
            shift_hours: 2.0,
            participation: 0.5,
            phi: 0.005,
            alpha: 10.0,
            phi_speculative: cpmm_lab::backtest::SPECULATIVE_PHI_USDC,
            gas_per_tx: 5.0,
            amm_fee_bps: 1.0,
            strategy: StrategyKind::All,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub windows: usize,
    pub sigma: f64,
    pub beta: f64,
    pub gamma: f64,
    pub s0: f64,
    pub z0: f64,
    pub kappa: f64,
    /// Days.
    pub horizon: f64,
    pub dt_seconds: f64,
    pub phi: f64,
    pub alpha: f64,
    pub phi_speculative: f64,
    pub y0: f64,
    pub gas_per_tx: f64,
    pub amm_fee_bps: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        let d = cpmm_lab::backtest::SyntheticConfig::default();
        Self {
            windows: 200,
            sigma: d.model.sigma,
            beta: d.model.beta,
            gamma: d.model.gamma,
            s0: d.model.s0,
            z0: d.model.z0,
            kappa: d.model.kappa,
            horizon: d.model.horizon,
            dt_seconds: d.dt * cpmm_lab::estimation::SECONDS_PER_DAY,
            phi: d.phi,
            alpha: d.alpha,
            phi_speculative: d.phi_speculative,
            y0: d.y0,
            gas_per_tx: d.fees.gas_per_tx,
            amm_fee_bps: d.fees.amm_fee_bps,
        }
    }
}

/// Copies every `Some` flag over the matching config field.
#[macro_export]
macro_rules! overlay {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v; } )*
    };
}

/// Like `overlay!` for fields that are themselves optional.
#[macro_export]
macro_rules! overlay_opt {
    ($cfg:expr, $args:expr; $($field:ident),* $(,)?) => {
        $( if $args.$field.is_some() { $cfg.$field = $args.$field.clone(); } )*
    };
}

/// Resolved section plus seed, as echoed and hashed.
pub struct Resolved<T> {
    pub command: &'static str,
    pub seed: u64,
    pub section: T,
}

impl<T: Serialize> Resolved<T> {
    pub fn fingerprint(&self) -> String {
        let body = serde_json::json!({ "command": self.command, "seed": self.seed, "config": &self.section });
        hex::encode(Sha256::digest(body.to_string().as_bytes()))
    }

    /// TOML that reproduces this run when passed back through `--config`.
    pub fn echo(&self) -> Result<String, Failure> {
        let section = toml::Value::try_from(&self.section).map_err(|e| Failure::Data(format!("echo config: {e}")))?;
        let mut table = toml::Table::new();
        table.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        table.insert(self.command.into(), section);
        toml::to_string(&table).map_err(|e| Failure::Data(format!("echo config: {e}")))
    }
}

pub fn require_file(name: &str, path: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let p = path.clone().ok_or_else(|| Failure::Usage(format!("--{name} is required")))?;
    if !p.is_file() {
        return Err(Failure::Usage(format!("--{name}: {} does not exist", p.display())));
    }
    Ok(p)
}

pub fn optional_file(name: &str, path: &Option<PathBuf>) -> Result<Option<PathBuf>, Failure> {
    match path {
        Some(_) => require_file(name, path).map(Some),
        None => Ok(None),
    }
}
