use proptest::prelude::*;

use satin_core::baselines::{heuristic_slot, strongest_ap};
use satin_core::decision::Structure;
use satin_core::lyapunov::drift_penalty_value;
use satin_core::master::{encode_mu, ising_to_qubo, qubo_to_ising, MuEncoding, QuboModel};
use satin_core::oracle::{enumerate_optimal, OracleOptions};
use satin_core::scenario::sample_slot;
use satin_core::subproblem::{make_cut, solve_subproblem};
use satin_core::{Assignment, NetworkConfig, QueueState, SlotState};

fn tiny_slot(users: usize, seed: u64, t: usize) -> (NetworkConfig, SlotState) {
    let mut cfg = NetworkConfig::tiny(users);
    cfg.rng_seed = seed;
    let slot = sample_slot(&cfg, t).served_view();
    (cfg, slot)
}

fn pick(st: &Structure, codes: &[usize]) -> Assignment {
    let choices: Vec<_> = (0..st.users)
        .map(|u| {
            let o = st.choices(u);
            o[codes[u] % o.len()]
        })
        .collect();
    Assignment::from_choices(st.aps, &choices)
}

fn qubo_strategy(max_n: usize) -> impl Strategy<Value = QuboModel> {
    (1..=max_n).prop_flat_map(|n| {
        let pairs = n * (n + 1) / 2;
        (
            prop::collection::vec(-10.0f64..10.0, pairs),
            -5.0f64..5.0,
        )
            .prop_map(move |(coef, offset)| {
                let idx = (0..n).flat_map(|i| (i..n).map(move |j| (i, j)));
                QuboModel::from_terms(n, idx.zip(coef), offset)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queue_update_is_the_positive_part(
        q in prop::collection::vec(0.0f64..100.0, 1..6),
        seed in any::<u64>(),
    ) {
        let n = q.len();
        let e: Vec<f64> = (0..n).map(|i| ((seed >> (i * 7)) % 50) as f64 * 0.5).collect();
        let b: Vec<f64> = (0..n).map(|i| ((seed >> (i * 5 + 3)) % 20) as f64 + 0.5).collect();
        let state = QueueState { backlog: q.clone(), t: 0 };
        let next = state.update(&e, &b);
        for i in 0..n {
            prop_assert!(next.backlog[i] >= 0.0);
            prop_assert!(next.backlog[i] >= q[i] + e[i] - b[i] - 1e-12);
            prop_assert_eq!(next.backlog[i], (q[i] + e[i] - b[i]).max(0.0));
        }
        prop_assert_eq!(next.t, 1);
    }

    #[test]
    fn ising_round_trip_preserves_energy(q in qubo_strategy(8), code in any::<u32>()) {
        let n = q.num_vars;
        let bits: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
        let spins: Vec<i8> = bits.iter().map(|&b| if b { 1 } else { -1 }).collect();
        let ising = qubo_to_ising(&q);
        let e = q.energy(&bits);
        prop_assert!((ising.energy(&spins) - e).abs() <= 1e-9 * e.abs().max(1.0));
        let back = ising_to_qubo(&ising);
        prop_assert!((back.energy(&bits) - e).abs() <= 1e-9 * e.abs().max(1.0));
    }

    #[test]
    fn qubo_text_round_trip_is_exact(q in qubo_strategy(10)) {
        let back = QuboModel::from_text(&q.to_text()).unwrap();
        prop_assert_eq!(back.coefficient_map(), q.coefficient_map());
        prop_assert_eq!(back.offset, q.offset);
    }

    #[test]
    fn encoded_mu_lies_on_the_grid(
        int_bits in 0usize..6,
        frac_bits in 0usize..6,
        neg_bits in 0usize..4,
        code in any::<u32>(),
    ) {
        let enc = MuEncoding { int_bits, frac_bits, neg_bits };
        let w: Vec<bool> = (0..enc.len()).map(|i| code >> i & 1 == 1).collect();
        let mu = encode_mu(&w, &enc).unwrap();
        prop_assert!(mu >= enc.min_value() && mu <= enc.max_value());
        let steps = mu / enc.resolution();
        prop_assert_eq!(steps, steps.round());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn strongest_ap_ignores_uniform_gain_scaling(seed in any::<u64>(), t in 0usize..40, k in 1e-3f64..1e3) {
        let mut cfg = NetworkConfig::downsized();
        cfg.rng_seed = seed;
        let slot = sample_slot(&cfg, t).served_view();
        let mut scaled = slot.clone();
        for row in &mut scaled.gain {
            for g in row.iter_mut() {
                *g *= k;
            }
        }
        for u in 0..slot.users() {
            prop_assert_eq!(strongest_ap(&cfg, &slot, u), strongest_ap(&cfg, &scaled, u));
        }
    }

    #[test]
    fn subproblem_is_kkt_and_matches_the_evaluator(
        users in 1usize..4,
        seed in any::<u64>(),
        codes in prop::collection::vec(0usize..7, 3),
        q in prop::collection::vec(0.0f64..20.0, 3),
        v in 1.0f64..5000.0,
    ) {
        let (cfg, slot) = tiny_slot(users, seed, 0);
        let st = Structure::from_slot(&cfg, &slot);
        let a = pick(&st, &codes);
        let queue = QueueState { backlog: q, t: 0 };
        if let Ok(sol) = solve_subproblem(&cfg, &slot, &a, &queue, v) {
            prop_assert!(sol.kkt.max() <= 1e-7, "kkt {:?}", sol.kkt);
            let eval = drift_penalty_value(&cfg, &slot, &a, &sol.allocation, &queue, v).unwrap();
            prop_assert!((eval - sol.objective).abs() <= 1e-9 * eval.abs().max(1.0));
        }
    }

    #[test]
    fn cuts_underestimate_every_subproblem(
        seed in any::<u64>(),
        codes in prop::collection::vec(0usize..7, 2),
        q in prop::collection::vec(0.0f64..10.0, 3),
    ) {
        let (cfg, slot) = tiny_slot(2, seed, 1);
        let st = Structure::from_slot(&cfg, &slot);
        let queue = QueueState { backlog: q, t: 0 };
        let Ok(gen) = solve_subproblem(&cfg, &slot, &pick(&st, &codes), &queue, 50.0) else {
            return Ok(());
        };
        let cut = make_cut(&cfg, &slot, &gen).unwrap();
        prop_assert!((cut.evaluate(&gen.assignment) - gen.objective).abs() <= 1e-6 * gen.objective.abs().max(1.0));
        for i in 0..st.choices(0).len() {
            for j in 0..st.choices(1).len() {
                if let Ok(s) = solve_subproblem(&cfg, &slot, &pick(&st, &[i, j]), &queue, 50.0) {
                    prop_assert!(cut.evaluate(&s.assignment) <= s.objective + 1e-6 * s.objective.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn oracle_is_below_the_heuristic(seed in any::<u64>(), t in 0usize..20) {
        let (cfg, slot) = tiny_slot(3, seed, t);
        let queue = QueueState { backlog: vec![1.0, 1.0, 1.0], t: 0 };
        let oracle = enumerate_optimal(&cfg, &slot, &queue, &OracleOptions::default()).unwrap();
        let (a, alloc) = heuristic_slot(&cfg, &slot, seed);
        let phi = drift_penalty_value(&cfg, &slot, &a, &alloc, &queue, OracleOptions::default().v).unwrap();
        prop_assert!(oracle.best_phi <= phi + 1e-9 * phi.abs().max(1.0));
    }
}
