use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpmm-lab")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn simulate_is_deterministic_and_echoes_config() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let args = ["simulate", "--model", "1", "--sigma", "0.045", "--beta", "657.9", "--gamma", "0.034", "--T", "0.083", "--seed", "7"];
    let first = ok(d, &[&args[..], &["--output", "a"]].concat());
    ok(d, &[&args[..], &["--output", "b"]].concat());
    assert_eq!(fs::read(d.join("a/path.csv")).unwrap(), fs::read(d.join("b/path.csv")).unwrap());
    assert!(String::from_utf8_lossy(&first.stdout).contains("seed 7"));
    let rows = csv_rows(&d.join("a/path.csv"));
    assert_eq!(rows[0], ["t", "S", "Z", "kappa"]);
    assert!(rows.len() > 500);
    let echoed = fs::read_to_string(d.join("a/config.toml")).unwrap();
    assert!(echoed.contains("seed = 7") && echoed.contains("sigma = 0.045"));
    let manifest = json(&d.join("a/manifest.json"));
    assert_eq!(manifest["fingerprint"], json(&d.join("b/manifest.json"))["fingerprint"]);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

#[test]
fn model2_without_depth_noise_has_constant_kappa() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["simulate", "--model", "2", "--varsigma", "0", "--kappa", "5e6", "--output", "m2"]);
    let rows = csv_rows(&tmp.path().join("m2/path.csv"));
    assert!(rows[1..].iter().all(|r| r[1].is_empty() && r[3] == "5000000"));
}

#[test]
fn flags_override_config_file() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), "seed = 3\n[simulate]\nsigma = 0.01\ngamma = 0.02\nhorizon = 0.01\n").unwrap();
    ok(d, &["--config", "run.toml", "simulate", "--gamma", "0.05", "--output", "o"]);
    let echoed: toml::Table = toml::from_str(&fs::read_to_string(d.join("o/config.toml")).unwrap()).unwrap();
    assert_eq!(echoed["seed"].as_integer(), Some(3));
    assert_eq!(echoed["simulate"]["sigma"].as_float(), Some(0.01));
    assert_eq!(echoed["simulate"]["gamma"].as_float(), Some(0.05));
    assert_eq!(echoed["simulate"]["beta"].as_float(), Some(657.9));

    fs::write(d.join("typo.toml"), "[simulate]\nsigmaa = 0.01\n").unwrap();
    assert_eq!(run(d, &["--config", "typo.toml", "simulate"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2_and_write_nothing() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let out = run(d, &["simulate", "--gamma=-0.1", "--output", "bad"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    assert!(!d.join("bad").exists());
    assert_eq!(run(d, &["estimate", "--swaps", "missing.csv", "--oracle", "missing.csv"]).status.code(), Some(2));
    assert_eq!(run(d, &["solve", "--model", "3"]).status.code(), Some(2));
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn estimate_recovers_simulated_parameters() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--T", "2", "--events", "--seed", "11", "--output", "ev"]);
    ok(d, &["estimate", "--swaps", "ev/swaps.csv", "--oracle", "ev/oracle.csv", "--output", "est"]);
    let e = json(&d.join("est/estimation.json"));
    let rel = |key: &str, truth: f64| (e[key].as_f64().unwrap() / truth - 1.0).abs();
    assert!(rel("sigma_hat", 0.045) < 0.03, "{e}");
    assert!(rel("gamma_hat", 0.034) < 0.03, "{e}");
    assert!(rel("beta_hat", 657.9) < 0.15, "{e}");
    assert_eq!(e["kappa0"].as_f64(), Some(22_561_783.0));
    assert_eq!(e["fingerprint"].as_str().unwrap().len(), 64);

    let out = run(d, &["estimate", "--swaps", "ev/swaps.csv", "--oracle", "ev/oracle.csv", "--start-ms", "999999999999", "--output", "x"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn constant_rate_fixture_has_no_mean_reversion() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let mut swaps = String::from("timestamp_ms,delta_y,delta_x,rate,depth\n");
    let mut oracle = String::from("timestamp_ms,rate\n");
    for k in 0..100 {
        swaps.push_str(&format!("{},0.1,-200,2000,1e7\n", 12_000 * k));
        oracle.push_str(&format!("{},2000\n", 12_000 * k));
    }
    fs::write(d.join("swaps.csv"), swaps).unwrap();
    fs::write(d.join("oracle.csv"), oracle).unwrap();
    ok(d, &["estimate", "--swaps", "swaps.csv", "--oracle", "oracle.csv", "--output", "est"]);
    let e = json(&d.join("est/estimation.json"));
    assert_eq!(e["sigma_hat"].as_f64(), Some(0.0));
    assert_eq!(e["gamma_hat"].as_f64(), Some(0.0));
    assert!(e["beta_hat"].is_null());
}

#[test]
fn solve_model2_bounds_pass() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["solve", "--model", "2", "--gamma", "0.1", "--varsigma", "0.5", "--n-z", "41", "--n-w", "41", "--n-t", "100", "--output", "m2"]);
    let b = json(&d.join("m2/bounds.json"));
    assert_eq!(b["passed"], true);
    assert!(b["picard"]["steps"].as_u64().unwrap() == 100);
    assert!(d.join("m2/fields/theta2.csv").is_file());
    assert!(!d.join("m2/coefficients.csv").exists());
}

#[test]
fn solve_model1_writes_comparison_and_bundle() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["solve", "--n-z", "61", "--n-w", "61", "--n-t", "100", "--coefficient-steps", "2000", "--output", "m1"]);
    assert_eq!(json(&d.join("m1/bounds.json"))["passed"], true);
    let rows = csv_rows(&d.join("m1/speeds.csv"));
    assert_eq!(rows[0], ["y_tilde", "z", "s", "numerical", "closed_form", "difference"]);
    assert_eq!(rows.len(), 1 + 3 * 21 * 21);
    let coeff = csv_rows(&d.join("m1/coefficients.csv"));
    assert_eq!(coeff.len(), 1 + 2001);
    let manifest = json(&d.join("m1/manifest.json"));
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(files.contains(&"fields/theta1.csv") && files.contains(&"speeds.csv"));
}

#[test]
fn degenerate_solve_matches_riccati() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["solve", "--beta", "0", "--gamma", "0", "--sigma", "0", "--n-t", "1000", "--n-w", "5", "--output", "deg"]);
    let r = json(&d.join("deg/riccati_check.json"));
    assert_eq!(r["passed"], true, "{r}");
    ok(d, &["solve", "--model", "2", "--gamma", "0", "--varsigma", "0", "--n-t", "1000", "--n-w", "5", "--output", "deg2"]);
    assert_eq!(json(&d.join("deg2/riccati_check.json"))["passed"], true);
}

#[test]
fn picard_failure_exits_4() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["solve", "--n-t", "3", "--n-z", "21", "--n-w", "21", "--picard-max-iterations", "1", "--output", "x"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Picard"));
}

#[test]
fn backtest_reports_and_layout() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    // 27 hours of data: exactly one 24 h + 2 h window
    ok(d, &["simulate", "--T", "1.125", "--events", "--seed", "2", "--output", "ev"]);
    let ev = ["--swaps", "ev/swaps.csv", "--oracle", "ev/oracle.csv"];
    ok(d, &[&["backtest", "--strategy", "liquidation", "--output", "one"][..], &ev[..]].concat());
    let w = json(&d.join("one/windows/window_0000.json"));
    assert_eq!(w["reports"].as_array().unwrap().len(), 1);
    assert_eq!(w["reports"][0]["strategy"], "closed_form");
    assert!(!d.join("one/windows/window_0001.json").exists());

    ok(d, &[&["backtest", "--output", "all"][..], &ev[..]].concat());
    let w = json(&d.join("all/windows/window_0000.json"));
    let names: Vec<&str> = w["reports"].as_array().unwrap().iter().map(|r| r["strategy"].as_str().unwrap()).collect();
    assert_eq!(names, ["closed_form", "twap", "single_order", "speculative"]);
    let rows = csv_rows(&d.join("all/campaign.csv"));
    assert_eq!(rows[0], ["strategy", "windows", "gross_avg_pnl", "gross_std", "avg_num_trades", "avg_fees", "net_avg_pnl"]);
    assert_eq!(rows.len(), 5);
}

#[test]
fn backtest_schema_errors_exit_3() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("swaps.csv"), "timestamp_ms,delta_y,delta_x,rate,depth\n1,0.1,-200,abc,1e7\n").unwrap();
    fs::write(d.join("oracle.csv"), "timestamp_ms,rate\n1,2000\n").unwrap();
    let out = run(d, &["backtest", "--swaps", "swaps.csv", "--oracle", "oracle.csv"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 2") && err.contains("rate"), "{err}");
}

#[test]
fn compare_is_deterministic_across_jobs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["compare", "--windows", "6", "--seed", "4", "--jobs", "1", "--output", "a"]);
    ok(d, &["compare", "--windows", "6", "--seed", "4", "--jobs", "3", "--output", "b"]);
    assert_eq!(fs::read(d.join("a/compare.csv")).unwrap(), fs::read(d.join("b/compare.csv")).unwrap());
    assert_eq!(fs::read(d.join("a/pnl.csv")).unwrap(), fs::read(d.join("b/pnl.csv")).unwrap());
    let gaps = json(&d.join("a/gaps.json"));
    assert_eq!(gaps["closed_form_minus_twap"]["n"], 6);
    assert_eq!(csv_rows(&d.join("a/pnl.csv")).len(), 1 + 6 * 4);
}
