//! Comparison schemes: strongest-signal association with equal sharing, and a
//! per-slot delay minimizer under hard energy caps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{Allocation, Assignment};
use crate::error::SolveError;
use crate::hqcgbd::{solve_slot_classical_gbd, SolveTrace, SolverParams};
use crate::lyapunov::QueueState;
use crate::scenario::{NetworkConfig, SlotState};

/// Available AP with the largest `P_u g / σ²`, lowest index on ties.
pub fn strongest_ap(cfg: &NetworkConfig, slot: &SlotState, u: usize) -> Option<usize> {
    (0..slot.aps())
        .filter(|&m| slot.available(u, m))
        .fold(None, |best: Option<usize>, m| match best {
            Some(b) if cfg.snr(b, slot.gain[u][b]) >= cfg.snr(m, slot.gain[u][m]) => Some(b),
            _ => Some(m),
        })
}

/// Equal shares of `total` among `n` users inside `[lo, hi]`. Shares below
/// `lo` are raised to it; when `hi` binds, the leftover is simply unused.
fn equal_share(total: f64, n: usize, lo: f64, hi: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (total / n as f64).clamp(lo, hi)
}

/// Equal bandwidth to associated users and equal CPU to onboard users, with
/// delays at equality.
pub fn equal_allocation(cfg: &NetworkConfig, slot: &SlotState, a: &Assignment) -> Allocation {
    let (users, aps) = (slot.users(), slot.aps());
    let mut beta = vec![0.0; users * aps];
    let mut f = vec![0.0; users * aps];
    for (m, ap) in cfg.ap_profiles.iter().enumerate() {
        let members: Vec<usize> = (0..users).filter(|&u| a.alpha(u, m)).collect();
        let onboard: Vec<usize> = members.iter().copied().filter(|&u| a.z(u, m)).collect();
        let [blo, bhi] = ap.bandwidth_fraction_bounds;
        let [flo, fhi] = ap.cpu_bounds;
        let b = equal_share(1.0, members.len(), blo, bhi);
        let c = equal_share(ap.max_cpu_hz, onboard.len(), flo, fhi);
        for &u in &members {
            beta[u * aps + m] = b;
        }
        for &u in &onboard {
            f[u * aps + m] = c;
        }
    }
    Allocation::at_equality(cfg, slot, a, beta, f)
}

/// Strongest-signal association; every computing AP runs a uniformly random
/// largest subset of its users onboard such that their minimum frequencies fit
/// its CPU, and relays the rest to the cloud.
pub fn heuristic_slot(cfg: &NetworkConfig, slot: &SlotState, seed: u64) -> (Assignment, Allocation) {
    let (users, aps) = (slot.users(), slot.aps());
    let mut a = Assignment::empty(users, aps);
    for u in 0..users {
        if let Some(m) = strongest_ap(cfg, slot, u) {
            a.set(u, m, true, false);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(slot.t as u64);
    for (m, ap) in cfg.ap_profiles.iter().enumerate() {
        if !ap.tier.can_compute() {
            continue;
        }
        let mut members: Vec<usize> = (0..users).filter(|&u| a.alpha(u, m)).collect();
        members.shuffle(&mut rng);
        let fmin = ap.cpu_bounds[0];
        let quota = if fmin > 0.0 {
            (ap.max_cpu_hz / fmin).floor() as usize
        } else {
            members.len()
        };
        for &u in members.iter().take(quota) {
            a.set_z(u, m, true);
        }
    }
    let alloc = equal_allocation(cfg, slot, &a);
    (a, alloc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MyopicOutcome {
    pub assignment: Assignment,
    pub allocation: Allocation,
    /// `V·Σ O_u` of the returned decision; `None` after a fallback.
    pub objective: Option<f64>,
    pub trace: Option<SolveTrace>,
    /// No assignment met the per-slot energy caps; the all-cloud
    /// strongest-signal decision was used instead.
    pub fallback: bool,
}

/// Minimizes `V·Σ O_u` under the per-slot energy caps by classical GBD,
/// ignoring the virtual queues.
pub fn myopic_slot(cfg: &NetworkConfig, slot: &SlotState, params: &SolverParams) -> Result<MyopicOutcome, SolveError> {
    let p = SolverParams {
        energy_cap: true,
        ..params.clone()
    };
    let queue = QueueState::zeros(cfg.ap_count());
    match solve_slot_classical_gbd(cfg, slot, &queue, &p) {
        Ok(s) => Ok(MyopicOutcome {
            assignment: s.solution.assignment,
            allocation: s.solution.allocation,
            objective: Some(s.solution.objective),
            trace: Some(s.trace),
            fallback: false,
        }),
        Err(SolveError::NoFeasibleAssignment) => {
            let (users, aps) = (slot.users(), slot.aps());
            let mut a = Assignment::empty(users, aps);
            for u in 0..users {
                if let Some(m) = strongest_ap(cfg, slot, u) {
                    a.set(u, m, true, false);
                }
            }
            let allocation = equal_allocation(cfg, slot, &a);
            Ok(MyopicOutcome {
                assignment: a,
                allocation,
                objective: None,
                trace: None,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}
