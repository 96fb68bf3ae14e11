use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use cpmm_lab::backtest::{
    estimate_window, events_from_path, load_events, reconstruct_liquidity, rolling_campaign, summarise, synthetic_campaign,
    write_oracle, write_summary_csv, write_swaps, CampaignConfig, FeeModel, PairedGap, ParseReport, SyntheticConfig,
    WindowOutcome,
};
use cpmm_lab::dynamics::{simulate_model1, simulate_model2, Model1Params, Model2Params};
use cpmm_lab::estimation::{EstimationResult, SECONDS_PER_DAY};
use cpmm_lab::pde::{
    check_bounds_model1, check_bounds_model2, log_spaced, solve_model1, solve_model2, write_bundle, BoundReport, Convection, GridSpec,
    PicardConfig, SolvedFields, SolverConfig, TimeMesh,
};
use cpmm_lab::strategy::{riccati_a, solve_constant_zeta, ClosedFormStrategy, ControlParams, TimeGrid};

use crate::config::{
    optional_file, require_file, BacktestConfig, CompareConfig, ConvectionKind, EstimateConfig, Resolved, SimulateConfig,
    SolveConfig,
};
use crate::{overlay, overlay_opt, BacktestArgs, CompareArgs, EstimateArgs, Failure, Globals, SimulateArgs, SolveArgs};

const MS_PER_HOUR: f64 = 3_600_000.0;
/// Sup-norm tolerance of the degenerate-volatility Riccati check.
const RICCATI_TOL: f64 = 1e-4;

/// Output directory bookkeeping: echoed config, fingerprinted files and a
/// manifest of content hashes.
struct Outputs {
    dir: PathBuf,
    command: &'static str,
    seed: u64,
    fingerprint: String,
    files: Vec<(String, String)>,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    path: &'a str,
    sha256: &'a str,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    fingerprint: &'a str,
    files: Vec<ManifestEntry<'a>>,
}

impl Outputs {
    fn open<T: Serialize>(g: &Globals, resolved: &Resolved<T>) -> Result<Self, Failure> {
        fs::create_dir_all(&g.output).map_err(|e| Failure::Data(format!("{}: {e}", g.output.display())))?;
        let mut out = Self {
            dir: g.output.clone(),
            command: resolved.command,
            seed: resolved.seed,
            fingerprint: resolved.fingerprint(),
            files: Vec::new(),
        };
        out.write("config.toml", resolved.echo()?.into_bytes())?;
        info!(fingerprint = %out.fingerprint, dir = %out.dir.display(), "resolved configuration");
        Ok(out)
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<(), Failure> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        self.files.push((name.to_string(), hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    /// Records a file some library call already wrote under the output directory.
    fn record(&mut self, name: &str) -> Result<(), Failure> {
        let bytes = fs::read(self.dir.join(name))?;
        self.files.push((name.to_string(), hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), Failure> {
        let value = serde_json::to_value(body).map_err(|e| Failure::Data(e.to_string()))?;
        let mut map = serde_json::Map::new();
        map.insert("fingerprint".into(), self.fingerprint.clone().into());
        match value {
            serde_json::Value::Object(fields) => map.extend(fields),
            other => {
                map.insert("data".into(), other);
            }
        }
        let text = serde_json::to_string_pretty(&map).map_err(|e| Failure::Data(e.to_string()))?;
        self.write(name, text.into_bytes())
    }

    fn csv(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<(), Failure>) -> Result<(), Failure> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(name, buf)
    }

    fn finish(self) -> Result<(), Failure> {
        let manifest = Manifest {
            command: self.command,
            seed: self.seed,
            fingerprint: &self.fingerprint,
            files: self.files.iter().map(|(p, h)| ManifestEntry { path: p, sha256: h }).collect(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Data(e.to_string()))?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        println!("wrote {} files to {} (fingerprint {})", self.files.len(), self.dir.display(), &self.fingerprint[..16]);
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{name} must be positive, got {v}")))
    }
}

fn model(v: u8) -> Result<(), Failure> {
    if v == 1 || v == 2 {
        Ok(())
    } else {
        Err(Failure::Usage(format!("model must be 1 or 2, got {v}")))
    }
}

pub fn simulate(g: &Globals, mut cfg: SimulateConfig, a: SimulateArgs) -> Result<(), Failure> {
    overlay!(cfg, a; model, sigma, beta, gamma, varsigma, s0, z0, kappa, horizon, dt_seconds, paths, start_ms);
    cfg.events |= a.events;
    model(cfg.model)?;
    positive("dt_seconds", cfg.dt_seconds)?;
    if cfg.paths == 0 {
        return Err(Failure::Usage("paths must be >= 1".into()));
    }
    if cfg.events && cfg.model == 2 {
        return Err(Failure::Usage("event files need an oracle series; use --model 1".into()));
    }
    let m1 = Model1Params {
        sigma: cfg.sigma,
        beta: cfg.beta,
        gamma: cfg.gamma,
        s0: cfg.s0,
        z0: cfg.z0,
        horizon: cfg.horizon,
        kappa: cfg.kappa,
    };
    let m2 = Model2Params { gamma: cfg.gamma, varsigma: cfg.varsigma, z0: cfg.z0, kappa0: cfg.kappa, horizon: cfg.horizon };
    if cfg.model == 1 {
        m1.validate()?;
    } else {
        m2.validate()?;
    }
    let resolved = Resolved { command: "simulate", seed: g.seed, section: cfg.clone() };
    let mut out = Outputs::open(g, &resolved)?;
    let dt = cfg.dt_seconds / SECONDS_PER_DAY;
    for i in 0..cfg.paths {
        let seed = g.seed + i as u64;
        let path = if cfg.model == 1 { simulate_model1(&m1, dt, seed)? } else { simulate_model2(&m2, dt, seed)? };
        let suffix = if cfg.paths == 1 { String::new() } else { format!("_{i:04}") };
        out.csv(&format!("path{suffix}.csv"), |w| Ok(path.write_csv(w)?))?;
        if cfg.events {
            let ds = events_from_path(&path, cfg.start_ms)?;
            out.csv(&format!("swaps{suffix}.csv"), |w| Ok(write_swaps(&ds.swaps, w)?))?;
            out.csv(&format!("oracle{suffix}.csv"), |w| Ok(write_oracle(&ds.oracle, w)?))?;
        }
        info!(seed, nodes = path.len(), "simulated path");
    }
    println!("seed {}", g.seed);
    out.finish()
}

#[derive(Serialize)]
struct EstimateOut<'a> {
    #[serde(flatten)]
    estimation: &'a EstimationResult,
    volume_y: f64,
    input: &'a ParseReport,
}

pub fn estimate(g: &Globals, mut cfg: EstimateConfig, a: EstimateArgs) -> Result<(), Failure> {
    overlay_opt!(cfg, a; swaps, oracle, lp, start_ms, end_ms);
    let swaps = require_file("swaps", &cfg.swaps)?;
    let oracle = require_file("oracle", &cfg.oracle)?;
    let lp = optional_file("lp", &cfg.lp)?;
    let resolved = Resolved { command: "estimate", seed: g.seed, section: cfg.clone() };
    let ds = load_events(&swaps, lp.as_deref(), &oracle)?;
    let (first, last) = ds.span_ms().ok_or_else(|| Failure::Data("event files are empty".into()))?;
    let start = cfg.start_ms.unwrap_or(first);
    let end = cfg.end_ms.unwrap_or(last + 1);
    if end <= first || start > last {
        return Err(Failure::Data(format!("window [{start}, {end}) lies outside the data span [{first}, {last}]")));
    }
    if end <= start {
        return Err(Failure::Usage(format!("empty window [{start}, {end})")));
    }
    let liq = if ds.lp_events.is_empty() { None } else { Some(reconstruct_liquidity(&ds.lp_events, None)?) };
    let (est, volume) = estimate_window(&ds, liq.as_ref(), start, end)?;
    let mut out = Outputs::open(g, &resolved)?;
    out.json("estimation.json", &EstimateOut { estimation: &est, volume_y: volume, input: &ds.report })?;
    match est.beta_hat {
        Some(b) => println!("sigma {:.6} gamma {:.6} beta {:.4}", est.sigma_hat, est.gamma_hat, b),
        None => println!("sigma {:.6} gamma {:.6} beta undefined", est.sigma_hat, est.gamma_hat),
    }
    out.finish()
}

#[derive(Serialize)]
struct PicardSummary {
    steps: usize,
    max_iterations: usize,
    max_final_residual: f64,
    monotone_fraction: f64,
}

#[derive(Serialize)]
struct BoundsOut {
    passed: bool,
    skipped: Option<String>,
    report: Option<BoundReport>,
    picard: PicardSummary,
}

#[derive(Serialize)]
struct RiccatiCheck {
    sup_error: f64,
    tolerance: f64,
    passed: bool,
}

fn riccati_check(f: &SolvedFields, depth: impl Fn(f64) -> f64) -> RiccatiCheck {
    let p = &f.control;
    let mut sup = 0.0f64;
    for (k, &t) in f.times.iter().enumerate() {
        for (iw, &w) in f.w.iter().enumerate() {
            for (iz, &z) in f.z.iter().enumerate() {
                let exact = riccati_a(p.phi, p.alpha, p.eta * z.powf(1.5) / depth(w), p.horizon - t);
                sup = sup.max((f.theta2[f.index(k, iw, iz)] - exact).abs());
            }
        }
    }
    RiccatiCheck { sup_error: sup, tolerance: RICCATI_TOL, passed: sup <= RICCATI_TOL }
}

/// `(t=0)` speed table on 21 rates either side of `Z0` for inventories -100, 0, 100.
fn speed_table(fields: &SolvedFields, cfg: &SolveConfig, control: &ControlParams, w: &mut Vec<u8>) -> Result<(), Failure> {
    let axis: Vec<f64> = (0..21).map(|i| cfg.z0 * (0.95 + 0.005 * i as f64)).collect();
    let mut out = csv::Writer::from_writer(w);
    if cfg.model == 1 {
        let closed = ClosedFormStrategy::exact(*control, cfg.coefficient_steps)?;
        let s_axis: Vec<f64> = (0..21).map(|i| cfg.s0 * (0.95 + 0.005 * i as f64)).collect();
        out.write_record(["y_tilde", "z", "s", "numerical", "closed_form", "difference"]).map_err(csv_err)?;
        for y in [-100.0, 0.0, 100.0] {
            for &z in &axis {
                for &s in &s_axis {
                    let num = fields.speed(0.0, y, z, s)?;
                    let cf = closed.speed(0.0, y, z, s)?;
                    out.write_record([y, z, s, num, cf, num - cf].map(|v| v.to_string())).map_err(csv_err)?;
                }
            }
        }
    } else {
        out.write_record(["y_tilde", "z", "kappa", "numerical", "frozen_depth", "difference"]).map_err(csv_err)?;
        for y in [-100.0, 0.0, 100.0] {
            for &z in &axis {
                for kappa in [0.5 * cfg.kappa, cfg.kappa, 2.0 * cfg.kappa] {
                    let num = fields.speed(0.0, y, z, kappa)?;
                    let ez = control.eta * z.powf(1.5) / kappa;
                    let frozen = -riccati_a(control.phi, control.alpha, ez, control.horizon) / ez * y;
                    out.write_record([y, z, kappa, num, frozen, num - frozen].map(|v| v.to_string())).map_err(csv_err)?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Data(e.to_string())
}

pub fn solve(g: &Globals, mut cfg: SolveConfig, a: SolveArgs) -> Result<(), Failure> {
    overlay!(cfg, a; model, phi, alpha, eta, horizon, beta, gamma, sigma, varsigma, kappa, z0, s0, n_t, n_z, n_w,
        picard_max_iterations, picard_tolerance, picard_damping, theta, convection, snapshot_stride, coefficient_steps);
    cfg.closed_form_only |= a.closed_form_only;
    model(cfg.model)?;
    positive("z0", cfg.z0)?;
    positive("s0", cfg.s0)?;
    let control = ControlParams {
        phi: cfg.phi,
        alpha: cfg.alpha,
        eta: cfg.eta,
        horizon: cfg.horizon,
        beta: cfg.beta,
        gamma: cfg.gamma,
        sigma: cfg.sigma,
        kappa: cfg.kappa,
    };
    control.validate()?;
    let resolved = Resolved { command: "solve", seed: g.seed, section: cfg.clone() };
    let mut out = Outputs::open(g, &resolved)?;

    if cfg.model == 1 {
        let table = solve_constant_zeta(&control, control.zeta_at(cfg.z0), &TimeGrid::new(cfg.horizon, cfg.coefficient_steps)?)?;
        out.csv("coefficients.csv", |w| table.write_csv(w).map_err(csv_err))?;
    }
    if cfg.closed_form_only {
        if cfg.model == 2 {
            warn!("Model II has no closed-form coefficient table; nothing solved");
        }
        return out.finish();
    }

    let solver = SolverConfig {
        picard: PicardConfig { max_iterations: cfg.picard_max_iterations, tolerance: cfg.picard_tolerance, damping: cfg.picard_damping },
        theta: cfg.theta,
        convection: match cfg.convection {
            ConvectionKind::Central => Convection::Central,
            ConvectionKind::Upwind => Convection::Upwind,
            ConvectionKind::Hybrid => Convection::Hybrid,
        },
        snapshot_stride: cfg.snapshot_stride,
    };
    let w_axis = if cfg.model == 1 {
        log_spaced(0.5 * cfg.s0, 2.0 * cfg.s0, cfg.n_w)
    } else {
        log_spaced(0.25 * cfg.kappa, 4.0 * cfg.kappa, cfg.n_w)
    };
    let grid = GridSpec { n_t: cfg.n_t, z: log_spaced(0.5 * cfg.z0, 2.0 * cfg.z0, cfg.n_z), w: w_axis, time_mesh: TimeMesh::Auto };
    info!(model = cfg.model, n_t = cfg.n_t, n_z = cfg.n_z, n_w = cfg.n_w, "solving HJB fields");
    let (fields, report, skipped, degenerate) = if cfg.model == 1 {
        let fields = solve_model1(&control, &grid, &solver)?;
        let (report, skipped) = if control.phi > 0.0 {
            (Some(check_bounds_model1(&fields, &control)?), None)
        } else {
            (None, Some("the envelope needs phi > 0".to_string()))
        };
        let degenerate = (cfg.beta == 0.0 && cfg.gamma == 0.0 && cfg.sigma == 0.0).then(|| riccati_check(&fields, |_| control.kappa));
        (fields, report, skipped, degenerate)
    } else {
        let m2 = Model2Params { gamma: cfg.gamma, varsigma: cfg.varsigma, z0: cfg.z0, kappa0: cfg.kappa, horizon: cfg.horizon };
        let fields = solve_model2(&control, &m2, &grid, &solver)?;
        let report = check_bounds_model2(&fields);
        let degenerate = (cfg.gamma == 0.0 && cfg.varsigma == 0.0).then(|| riccati_check(&fields, |w| w));
        (fields, Some(report), None, degenerate)
    };

    write_bundle(&fields, &out.dir.join("fields"))?;
    for name in ["meta.json", "theta0.csv", "theta1.csv", "theta2.csv"] {
        out.record(&format!("fields/{name}"))?;
    }
    let d = &fields.diagnostics;
    let picard = PicardSummary {
        steps: d.iterations.len(),
        max_iterations: d.iterations.iter().copied().max().unwrap_or(0),
        max_final_residual: d.final_residuals.iter().copied().fold(0.0, f64::max),
        monotone_fraction: d.monotone_fraction(),
    };
    let passed = report.as_ref().is_none_or(|r| r.passed());
    if let Some(r) = &report {
        println!("bounds: {} ({} violations)", if r.passed() { "all pass" } else { "FAILED" }, r.total_violations());
    }
    out.json("bounds.json", &BoundsOut { passed, skipped, report, picard })?;
    if let Some(check) = degenerate {
        println!("riccati match: sup error {:.2e} ({})", check.sup_error, if check.passed { "pass" } else { "FAIL" });
        out.json("riccati_check.json", &check)?;
    }
    out.csv("speeds.csv", |w| speed_table(&fields, &cfg, &control, w))?;
    out.finish()
}

#[derive(Serialize)]
struct WindowOut<'a> {
    index: usize,
    start_ms: i64,
    estimation: &'a Option<EstimationResult>,
    reports: Vec<&'a cpmm_lab::backtest::ExecutionReport>,
}

#[derive(Serialize)]
struct CampaignOut<'a> {
    windows: usize,
    skipped: &'a [(usize, String)],
    input: &'a ParseReport,
    summary: &'a [cpmm_lab::backtest::StrategySummary],
}

fn hours_ms(name: &str, h: f64) -> Result<i64, Failure> {
    positive(name, h)?;
    Ok((h * MS_PER_HOUR).round() as i64)
}

fn keep(windows: &[WindowOutcome], keep: impl Fn(&str) -> bool) -> Vec<WindowOutcome> {
    windows
        .iter()
        .map(|w| WindowOutcome { reports: w.reports.iter().filter(|r| keep(&r.strategy)).cloned().collect(), ..w.clone() })
        .collect()
}

pub fn backtest(g: &Globals, mut cfg: BacktestConfig, a: BacktestArgs) -> Result<(), Failure> {
    overlay_opt!(cfg, a; swaps, oracle, lp);
    overlay!(cfg, a; in_sample_hours, horizon_hours, shift_hours, participation, phi, alpha, phi_speculative, gas_per_tx,
        amm_fee_bps, strategy);
    let swaps = require_file("swaps", &cfg.swaps)?;
    let oracle = require_file("oracle", &cfg.oracle)?;
    let lp = optional_file("lp", &cfg.lp)?;
    positive("participation", cfg.participation)?;
    let campaign = CampaignConfig {
        in_sample_ms: hours_ms("in_sample_hours", cfg.in_sample_hours)?,
        horizon_ms: hours_ms("horizon_hours", cfg.horizon_hours)?,
        shift_ms: hours_ms("shift_hours", cfg.shift_hours)?,
        participation: cfg.participation,
        phi: cfg.phi,
        alpha: cfg.alpha,
        phi_speculative: cfg.phi_speculative,
        fees: FeeModel { gas_per_tx: cfg.gas_per_tx, amm_fee_bps: cfg.amm_fee_bps },
    };
    campaign.fees.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let resolved = Resolved { command: "backtest", seed: g.seed, section: cfg.clone() };
    let ds = load_events(&swaps, lp.as_deref(), &oracle)?;
    let result = rolling_campaign(&ds, &campaign)?;
    let windows = keep(&result.windows, |name| cfg.strategy.keeps(name));
    let summary = summarise(&windows);

    let mut out = Outputs::open(g, &resolved)?;
    for w in &windows {
        let body = WindowOut { index: w.index, start_ms: w.start_ms, estimation: &w.estimation, reports: w.reports.iter().collect() };
        out.json(&format!("windows/window_{:04}.json", w.index), &body)?;
    }
    out.csv("campaign.csv", |w| Ok(write_summary_csv(&summary, w)?))?;
    out.json(
        "campaign.json",
        &CampaignOut { windows: windows.len(), skipped: &result.skipped, input: &ds.report, summary: &summary },
    )?;
    for s in &summary {
        println!("{:<13} windows {:>4}  gross {:>14.2} (se {:.2})  net {:>14.2}", s.strategy, s.windows, s.gross_mean, s.gross_se, s.net_mean);
    }
    if !result.skipped.is_empty() {
        warn!(skipped = result.skipped.len(), "some windows could not be run; see campaign.json");
    }
    out.finish()?;
    if windows.is_empty() {
        return Err(Failure::Data("no window could be run; see campaign.json".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct Gaps {
    closed_form_minus_twap: PairedGap,
    twap_minus_single_order: PairedGap,
    speculative_mean: f64,
    speculative_se: f64,
}

pub fn compare(g: &Globals, mut cfg: CompareConfig, a: CompareArgs) -> Result<(), Failure> {
    overlay!(cfg, a; windows, sigma, beta, gamma, s0, z0, kappa, horizon, dt_seconds, phi, alpha, phi_speculative, y0,
        gas_per_tx, amm_fee_bps);
    positive("dt_seconds", cfg.dt_seconds)?;
    if cfg.windows < 2 {
        return Err(Failure::Usage("compare needs at least 2 windows".into()));
    }
    let sc = SyntheticConfig {
        model: Model1Params {
            sigma: cfg.sigma,
            beta: cfg.beta,
            gamma: cfg.gamma,
            s0: cfg.s0,
            z0: cfg.z0,
            horizon: cfg.horizon,
            kappa: cfg.kappa,
        },
        dt: cfg.dt_seconds / SECONDS_PER_DAY,
        phi: cfg.phi,
        alpha: cfg.alpha,
        phi_speculative: cfg.phi_speculative,
        y0: cfg.y0,
        fees: FeeModel { gas_per_tx: cfg.gas_per_tx, amm_fee_bps: cfg.amm_fee_bps },
    };
    sc.model.validate()?;
    sc.control().validate()?;
    sc.fees.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let resolved = Resolved { command: "compare", seed: g.seed, section: cfg.clone() };
    info!(windows = cfg.windows, base_seed = g.seed, "synthetic comparison");
    let windows = synthetic_campaign(&sc, g.seed, cfg.windows)?;
    let summary = summarise(&windows);

    let mut out = Outputs::open(g, &resolved)?;
    out.csv("compare.csv", |w| Ok(write_summary_csv(&summary, w)?))?;
    out.csv("pnl.csv", |w| pnl_series(&windows, w))?;
    let spec = summary.iter().find(|s| s.strategy == "speculative").expect("speculative report present");
    let gaps = Gaps {
        closed_form_minus_twap: PairedGap::between(&windows, "closed_form", "twap"),
        twap_minus_single_order: PairedGap::between(&windows, "twap", "single_order"),
        speculative_mean: spec.gross_mean,
        speculative_se: spec.gross_se,
    };
    out.json("gaps.json", &gaps)?;
    for s in &summary {
        println!("{:<13} gross {:>14.2} (se {:.2})  net {:>14.2}  trades {:.1}", s.strategy, s.gross_mean, s.gross_se, s.net_mean, s.trades_mean);
    }
    println!(
        "closed_form - twap {:.1} SE, twap - single_order {:.1} SE",
        gaps.closed_form_minus_twap.z_score(),
        gaps.twap_minus_single_order.z_score()
    );
    out.finish()
}

/// Long-format per-window PnL for histograms.
fn pnl_series(windows: &[WindowOutcome], w: &mut Vec<u8>) -> Result<(), Failure> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["window", "strategy", "gross_pnl", "net_pnl", "fees", "trades"]).map_err(csv_err)?;
    for win in windows {
        for r in &win.reports {
            out.write_record([
                win.index.to_string(),
                r.strategy.clone(),
                r.gross_pnl.to_string(),
                r.net_pnl.to_string(),
                r.fees().to_string(),
                r.trade_count.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}
