//! Brute-force reference optimum of one slot.
//!
//! The objective separates over APs once the assignment is fixed, so each AP's
//! optimal cost is computed once per member set and the enumeration only adds
//! cached terms.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{Assignment, Choice, Structure};
use crate::error::{SolveError, SubproblemError};
use crate::lyapunov::QueueState;
use crate::scenario::{NetworkConfig, SlotState};
use crate::subproblem::{solve_subproblem, solve_subproblem_energy_capped, solve_ap, SubproblemSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub v: f64,
    pub cap: u128,
    /// Keep the per-assignment table.
    pub table: bool,
    /// Add the hard per-slot energy cap.
    pub energy_cap: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            v: 100.0,
            cap: 1 << 20,
            table: false,
            energy_cap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub index: usize,
    pub choices: Vec<Option<Choice>>,
    /// `None` when the assignment fails a capacity or energy screen.
    pub phi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best: SubproblemSolution,
    pub best_phi: f64,
    /// Structurally feasible assignments visited.
    pub enumerated: usize,
    /// Of those, assignments skipped as capacity-infeasible.
    pub skipped: usize,
    pub table: Option<Vec<OracleRow>>,
}

impl OracleResult {
    pub fn table_csv(&self) -> Option<String> {
        let rows = self.table.as_ref()?;
        let mut out = String::from("index,assignment,phi\n");
        for r in rows {
            let desc: Vec<String> = r
                .choices
                .iter()
                .map(|c| match c {
                    None => "-".into(),
                    Some(c) => format!("{}{}", c.ap, if c.onboard { "e" } else { "c" }),
                })
                .collect();
            let phi = r.phi.map_or(String::from("infeasible"), |p| p.to_string());
            let _ = writeln!(out, "{},{},{}", r.index, desc.join(" "), phi);
        }
        Some(out)
    }
}

/// Optimal cost of every member subset of one AP, indexed in base 3 over the
/// users that can reach it (0 absent, 1 cloud, 2 onboard).
struct ApTable {
    users: Vec<usize>,
    cost: Vec<Option<f64>>,
}

impl ApTable {
    fn build(
        cfg: &NetworkConfig,
        slot: &SlotState,
        m: usize,
        queue: &QueueState,
        opts: &OracleOptions,
        st: &Structure,
    ) -> Result<Self, SolveError> {
        let users: Vec<usize> = (0..st.users).filter(|&u| st.available(u, m)).collect();
        let n = users.len();
        let size = 3usize.pow(n as u32);
        let q = queue.backlog[m];
        let cost = (0..size)
            .into_par_iter()
            .map(|code| {
                let mut c = code;
                let mut members = Vec::new();
                for &u in &users {
                    match c % 3 {
                        1 => members.push((u, false)),
                        2 => members.push((u, true)),
                        _ => {}
                    }
                    c /= 3;
                }
                if st.relay_only[m] && members.iter().any(|&(_, z)| z) {
                    return Ok(None);
                }
                match solve_ap(cfg, slot, m, &members, q, opts.v, opts.energy_cap) {
                    Ok(s) => Ok(Some(s.cost(opts.v, q))),
                    Err(SubproblemError::InfeasibleAssignment { .. }) => Ok(None),
                    Err(e) => Err(SolveError::from(e)),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ApTable { users, cost })
    }

    fn code(&self, a: &Assignment, m: usize) -> usize {
        self.users.iter().rev().fold(0, |acc, &u| {
            acc * 3
                + if !a.alpha(u, m) {
                    0
                } else if a.z(u, m) {
                    2
                } else {
                    1
                }
        })
    }
}

fn decode(index: usize, options: &[Vec<Option<Choice>>]) -> Vec<Option<Choice>> {
    // user 0 is the most significant digit
    let mut rest = index;
    let mut out = vec![None; options.len()];
    for u in (0..options.len()).rev() {
        let r = options[u].len();
        out[u] = options[u][rest % r];
        rest /= r;
    }
    out
}

/// Exact optimum of `Φ` over every feasible assignment of the slot.
pub fn enumerate_optimal(
    cfg: &NetworkConfig,
    slot: &SlotState,
    queue: &QueueState,
    opts: &OracleOptions,
) -> Result<OracleResult, SolveError> {
    if !slot.is_feasible() {
        return Err(SolveError::InfeasibleSlot(slot.unserved.clone()));
    }
    let st = Structure::from_slot(cfg, slot);
    let count = st.assignment_count();
    if count > opts.cap {
        return Err(SolveError::SizeCap { count, cap: opts.cap });
    }
    let tables = (0..st.aps)
        .map(|m| ApTable::build(cfg, slot, m, queue, opts, &st))
        .collect::<Result<Vec<_>, _>>()?;
    let budget_term: Vec<f64> = (0..st.aps)
        .map(|m| queue.backlog[m] * cfg.ap_profiles[m].energy_budget_j)
        .collect();
    let options: Vec<Vec<Option<Choice>>> = (0..st.users).map(|u| st.choices(u)).collect();
    let count = count as usize;
    let phi_of = |index: usize| -> (Vec<Option<Choice>>, Option<f64>) {
        let choices = decode(index, &options);
        let a = Assignment::from_choices(st.aps, &choices);
        let mut phi = 0.0;
        for (m, t) in tables.iter().enumerate() {
            match t.cost[t.code(&a, m)] {
                Some(c) => phi += c - budget_term[m],
                None => return (choices, None),
            }
        }
        (choices, Some(phi))
    };
    let (best_index, skipped, table) = if opts.table {
        let rows: Vec<OracleRow> = (0..count)
            .into_par_iter()
            .map(|index| {
                let (choices, phi) = phi_of(index);
                OracleRow { index, choices, phi }
            })
            .collect();
        let best = rows
            .iter()
            .filter_map(|r| r.phi.map(|p| (p, r.index)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let skipped = rows.iter().filter(|r| r.phi.is_none()).count();
        (best.map(|b| b.1), skipped, Some(rows))
    } else {
        let (best, skipped) = (0..count)
            .into_par_iter()
            .map(|index| match phi_of(index).1 {
                Some(p) => (Some((p, index)), 0usize),
                None => (None, 1),
            })
            .reduce(
                || (None, 0),
                |(a, sa), (b, sb)| {
                    let best = match (a, b) {
                        (Some(x), Some(y)) => Some(if (y.0, y.1) < (x.0, x.1) { y } else { x }),
                        (x, None) => x,
                        (None, y) => y,
                    };
                    (best, sa + sb)
                },
            );
        (best.map(|b| b.1), skipped, None)
    };
    let best_index = best_index.ok_or(SolveError::NoFeasibleAssignment)?;
    let a = Assignment::from_choices(st.aps, &decode(best_index, &options));
    let best = if opts.energy_cap {
        solve_subproblem_energy_capped(cfg, slot, &a, queue, opts.v)?
    } else {
        solve_subproblem(cfg, slot, &a, queue, opts.v)?
    };
    Ok(OracleResult {
        best_phi: best.objective,
        best,
        enumerated: count,
        skipped,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::sample_slot;

    fn slot_with(cfg: &NetworkConfig, avail: Vec<Vec<bool>>) -> SlotState {
        let mut slot = sample_slot(cfg, 0);
        slot.connectivity = avail;
        slot.unserved.clear();
        slot
    }

    #[test]
    fn row_counts_follow_tier_rules() {
        let cfg = NetworkConfig::tiny(1);
        let opts = OracleOptions {
            table: true,
            ..OracleOptions::default()
        };
        let q = QueueState::zeros(3);
        let one = enumerate_optimal(&cfg, &slot_with(&cfg, vec![vec![true, false, false]]), &q, &opts).unwrap();
        assert_eq!(one.table.as_ref().unwrap().len(), 2);
        let all = enumerate_optimal(&cfg, &slot_with(&cfg, vec![vec![true; 3]]), &q, &opts).unwrap();
        assert_eq!(all.enumerated, 5);
        let rows = all.table.unwrap();
        let min = rows.iter().filter_map(|r| r.phi).fold(f64::INFINITY, f64::min);
        assert_eq!(min, all.best_phi);
    }

    #[test]
    fn cached_sum_matches_full_solve_for_every_row() {
        let cfg = NetworkConfig::tiny(3);
        let slot = sample_slot(&cfg, 4).served_view();
        let q = QueueState {
            backlog: vec![2.0, 0.3, 1.0],
            t: 0,
        };
        let opts = OracleOptions {
            table: true,
            v: 30.0,
            ..OracleOptions::default()
        };
        let res = enumerate_optimal(&cfg, &slot, &q, &opts).unwrap();
        for row in res.table.unwrap() {
            let a = Assignment::from_choices(3, &row.choices);
            match (row.phi, solve_subproblem(&cfg, &slot, &a, &q, opts.v)) {
                (Some(p), Ok(s)) => assert_eq!(p, s.objective),
                (None, Err(_)) => {}
                (p, s) => panic!("row {}: {p:?} vs {:?}", row.index, s.map(|s| s.objective)),
            }
        }
    }

    #[test]
    fn size_cap_is_enforced() {
        let cfg = NetworkConfig::tiny(3);
        let slot = slot_with(&cfg, vec![vec![true; 3]; 3]);
        let opts = OracleOptions {
            cap: 10,
            ..OracleOptions::default()
        };
        assert!(matches!(
            enumerate_optimal(&cfg, &slot, &QueueState::zeros(3), &opts),
            Err(SolveError::SizeCap { count: 125, cap: 10 })
        ));
    }
}
