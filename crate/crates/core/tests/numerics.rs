//! Cross-module numerical checks: PDE refinement, bundle persistence and
//! the closed-form lattice.

use cpmm_lab::pde::{log_spaced, read_bundle, solve_model1, solve_model2, write_bundle, GridSpec, SolverConfig, TimeMesh};
use cpmm_lab::dynamics::Model2Params;
use cpmm_lab::strategy::{ClosedFormStrategy, ControlParams, LatticeConfig};

fn grid(n: usize, n_t: usize) -> GridSpec {
    GridSpec { n_t, z: log_spaced(1000.0, 4000.0, n), w: log_spaced(1000.0, 4000.0, n), time_mesh: TimeMesh::Auto }
}

#[test]
fn model1_speed_settles_under_refinement() {
    let p = ControlParams::benchmark();
    let cfg = SolverConfig::default();
    let probes = [(100.0, 2000.0, 2000.0), (-100.0, 1950.0, 2040.0), (0.0, 2060.0, 1990.0), (50.0, 2100.0, 1900.0)];
    let speeds = |n: usize, n_t: usize| -> Vec<f64> {
        let f = solve_model1(&p, &grid(n, n_t), &cfg).unwrap();
        probes.iter().map(|&(y, z, s)| f.speed(0.0, y, z, s).unwrap()).collect()
    };
    let coarse = speeds(41, 50);
    let mid = speeds(81, 100);
    let fine = speeds(161, 200);
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let (e1, e2) = (gap(&coarse, &fine), gap(&mid, &fine));
    assert!(e2 < 0.5 * e1, "coarse {e1:.3e}, mid {e2:.3e}");
    let scale = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(e2 < 0.02 * scale, "mid {e2:.3e} vs scale {scale:.3e}");
}

#[test]
fn bundle_on_disk_reproduces_speeds() {
    let p = ControlParams::benchmark();
    let f = solve_model1(&p, &grid(31, 40), &SolverConfig { snapshot_stride: 4, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&f, dir.path()).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    assert_eq!(back.times, f.times);
    assert_eq!(back.theta2, f.theta2);
    for (t, y, z, s) in [(0.0, 10.0, 2000.0, 2000.0), (0.05, -3.0, 1500.0, 3000.0), (0.0999, 1.0, 3900.0, 1100.0)] {
        assert_eq!(back.speed(t, y, z, s).unwrap(), f.speed(t, y, z, s).unwrap());
    }
    assert!(f.speed(0.0, 1.0, 999.0, 2000.0).is_err());
}

#[test]
fn model2_bundle_keeps_depth_axis() {
    let p = ControlParams::benchmark();
    let m2 = Model2Params { gamma: 0.05, varsigma: 0.2, z0: 2000.0, kappa0: 1e7, horizon: p.horizon };
    let g = GridSpec { w: log_spaced(2.5e6, 4e7, 21), ..grid(21, 40) };
    let f = solve_model2(&p, &m2, &g, &SolverConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&f, dir.path()).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    assert_eq!(back.model2, Some(m2));
    assert_eq!(back.speed(0.0, 5.0, 2000.0, 1e7).unwrap(), f.speed(0.0, 5.0, 2000.0, 1e7).unwrap());
    // liquidation: positive inventory is sold
    assert!(f.speed(0.0, 5.0, 2000.0, 1e7).unwrap() > 0.0);
}

#[test]
fn lattice_strategy_tracks_exact_solves() {
    let p = ControlParams { beta: 657.9, gamma: 0.034, sigma: 0.045, kappa: 2.2e7, eta: 1.5e-4, horizon: 1.0 / 12.0, phi: 0.005, alpha: 10.0 };
    let exact = ClosedFormStrategy::exact(p, 4000).unwrap();
    let lattice = ClosedFormStrategy::with_lattice(p, LatticeConfig { time_steps: 4000, ..LatticeConfig::around(2690.0) }).unwrap();
    let mut worst = 0.0f64;
    for (t, y, z, s) in [(0.0, 1e4, 2690.0, 2700.0), (0.04, 5e3, 2650.0, 2600.0), (0.08, 100.0, 2712.3, 2690.0), (0.02, 0.0, 2600.0, 2800.0)] {
        let (a, b) = (exact.speed(t, y, z, s).unwrap(), lattice.speed(t, y, z, s).unwrap());
        worst = worst.max((a - b).abs() / a.abs().max(1.0));
    }
    assert!(worst < 1e-4, "{worst:.3e}");
    // outside the lattice the strategy falls back to a direct solve
    assert_eq!(lattice.speed(0.0, 10.0, 9000.0, 9000.0).unwrap(), exact.speed(0.0, 10.0, 9000.0, 9000.0).unwrap());
}
