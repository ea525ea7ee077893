//! Frozen reference values. Each was produced once by the brute-force oracle
//! (or the closed-form constant) and is checked against every solver here.

use satin_core::hqcgbd::{solve_slot_classical_gbd, solve_slot_multi_cut, SolverParams};
use satin_core::annealer::AnnealParams;
use satin_core::lyapunov::c_star;
use satin_core::oracle::{enumerate_optimal, OracleOptions};
use satin_core::scenario::sample_slot;
use satin_core::{NetworkConfig, QueueState};

/// `(t, backlog, Φ*)` on `tiny(3)` with `V = 100`.
const TINY: [(usize, [f64; 3], f64); 6] = [
    (0, [0.0, 0.0, 0.0], 52.35785085977323),
    (0, [2.0, 0.5, 1.0], 41.678918768706595),
    (1, [0.0, 0.0, 0.0], 47.39556289133135),
    (1, [2.0, 0.5, 1.0], 36.80722667253229),
    (2, [0.0, 0.0, 0.0], 54.2924189909649),
    (2, [2.0, 0.5, 1.0], 58.4023160874941),
];

const DOWNSIZED_T0: f64 = 978.7683199219478;
const DOWNSIZED_C_STAR: f64 = 48818.77702407617;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn queue(b: &[f64]) -> QueueState {
    QueueState {
        backlog: b.to_vec(),
        t: 0,
    }
}

#[test]
fn oracle_reproduces_frozen_tiny_optima() {
    let cfg = NetworkConfig::tiny(3);
    for (t, q, phi) in TINY {
        let slot = sample_slot(&cfg, t).served_view();
        let opts = OracleOptions {
            v: 100.0,
            ..OracleOptions::default()
        };
        let got = enumerate_optimal(&cfg, &slot, &queue(&q), &opts).unwrap().best_phi;
        assert!(close(got, phi, 1e-12), "t={t} q={q:?}: {got} vs {phi}");
    }
}

#[test]
fn classical_gbd_matches_frozen_optima() {
    let cfg = NetworkConfig::tiny(3);
    let mut p = SolverParams::default();
    p.control.epsilon = 1e-7;
    for (t, q, phi) in TINY {
        let slot = sample_slot(&cfg, t).served_view();
        let s = solve_slot_classical_gbd(&cfg, &slot, &queue(&q), &p).unwrap();
        assert!(close(s.objective(), phi, 1e-6), "t={t}: {} vs {phi}", s.objective());
    }
}

#[test]
fn sampled_multi_cut_matches_frozen_optima() {
    let cfg = NetworkConfig::tiny(3);
    let mut p = SolverParams {
        anneal: AnnealParams::quick(),
        ..SolverParams::default()
    };
    p.control.epsilon = 1e-6;
    for (t, q, phi) in TINY {
        let slot = sample_slot(&cfg, t).served_view();
        let s = solve_slot_multi_cut(&cfg, &slot, &queue(&q), &p).unwrap();
        assert!(close(s.objective(), phi, 1e-4), "t={t}: {} vs {phi}", s.objective());
    }
}

#[test]
fn downsized_slot_optimum_is_frozen() {
    let cfg = NetworkConfig::downsized();
    let slot = sample_slot(&cfg, 0).served_view();
    let q = queue(&[20.0, 20.0, 5.0, 0.0]);
    let opts = OracleOptions {
        v: 1000.0,
        ..OracleOptions::default()
    };
    let oracle = enumerate_optimal(&cfg, &slot, &q, &opts).unwrap();
    assert!(close(oracle.best_phi, DOWNSIZED_T0, 1e-12));
    let mut p = SolverParams::default();
    p.control.v = 1000.0;
    p.control.epsilon = 1e-7;
    let gbd = solve_slot_classical_gbd(&cfg, &slot, &q, &p).unwrap();
    assert!(close(gbd.objective(), DOWNSIZED_T0, 1e-6));
}

#[test]
fn downsized_c_star_is_frozen() {
    assert!(close(c_star(&NetworkConfig::downsized()), DOWNSIZED_C_STAR, 1e-12));
}
