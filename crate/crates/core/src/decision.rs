//! Binary and continuous decision variables of one slot, and the evaluation of
//! service delay and AP energy for a given decision.

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::scenario::{full_band_rate, NetworkConfig, SlotState, Tier};

/// Relative slack accepted when checking delay constraints at equality.
const DELAY_RTOL: f64 = 1e-9;
const BOX_TOL: f64 = 1e-12;

/// Where a user's task goes: the associated AP and whether that AP computes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Choice {
    pub ap: usize,
    pub onboard: bool,
}

/// Constraint families of the association/offloading decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// α ≤ A
    Connectivity,
    /// Σ_m α = 1
    Association,
    /// z = 0 on satellites
    RelayOnly,
    /// z ≤ α
    ComputeNeedsAssociation,
    /// μ ≥ cut_k(α, z)
    BendersCut,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub family: Family,
    pub user: Option<usize>,
    pub ap: Option<usize>,
    /// Index of the cut, for [`Family::BendersCut`].
    pub cut: Option<usize>,
}

/// Binary decisions α (association) and z (onboard compute), row-major `U×M`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    users: usize,
    aps: usize,
    alpha: Vec<bool>,
    z: Vec<bool>,
}

impl Assignment {
    pub fn empty(users: usize, aps: usize) -> Self {
        Assignment {
            users,
            aps,
            alpha: vec![false; users * aps],
            z: vec![false; users * aps],
        }
    }

    pub fn from_choices(aps: usize, choices: &[Option<Choice>]) -> Self {
        let mut a = Assignment::empty(choices.len(), aps);
        for (u, c) in choices.iter().enumerate() {
            if let Some(c) = c {
                a.set(u, c.ap, true, c.onboard);
            }
        }
        a
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn alpha(&self, u: usize, m: usize) -> bool {
        self.alpha[u * self.aps + m]
    }

    pub fn z(&self, u: usize, m: usize) -> bool {
        self.z[u * self.aps + m]
    }

    pub fn set(&mut self, u: usize, m: usize, alpha: bool, z: bool) {
        self.alpha[u * self.aps + m] = alpha;
        self.z[u * self.aps + m] = z;
    }

    pub fn set_alpha(&mut self, u: usize, m: usize, v: bool) {
        self.alpha[u * self.aps + m] = v;
    }

    pub fn set_z(&mut self, u: usize, m: usize, v: bool) {
        self.z[u * self.aps + m] = v;
    }

    /// The user's single association, if exactly one α is set.
    pub fn choice(&self, u: usize) -> Option<Choice> {
        let mut found = None;
        for m in 0..self.aps {
            if self.alpha(u, m) {
                if found.is_some() {
                    return None;
                }
                found = Some(Choice {
                    ap: m,
                    onboard: self.z(u, m),
                });
            }
        }
        found
    }

    pub fn choices(&self) -> Vec<Option<Choice>> {
        (0..self.users).map(|u| self.choice(u)).collect()
    }

    /// Structural violations against the slot. Users flagged unserved are
    /// exempt from the association equality.
    pub fn violations(&self, cfg: &NetworkConfig, slot: &SlotState) -> Vec<Violation> {
        Structure::from_slot(cfg, slot).violations(self)
    }

    pub fn is_feasible(&self, cfg: &NetworkConfig, slot: &SlotState) -> bool {
        self.violations(cfg, slot).is_empty()
    }
}

/// The parts of a slot that constrain the binaries: connectivity `A`, the
/// relay-only tier, and the users with no available AP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Structure {
    pub users: usize,
    pub aps: usize,
    /// Row-major `U×M` connectivity.
    pub available: Vec<bool>,
    /// Per AP: true when onboard compute is forbidden.
    pub relay_only: Vec<bool>,
    pub unserved: Vec<usize>,
}

impl Structure {
    pub fn from_slot(cfg: &NetworkConfig, slot: &SlotState) -> Self {
        let (users, aps) = (slot.users(), slot.aps());
        let mut available = Vec::with_capacity(users * aps);
        for u in 0..users {
            for m in 0..aps {
                available.push(slot.available(u, m));
            }
        }
        Structure {
            users,
            aps,
            available,
            relay_only: (0..aps).map(|m| cfg.tier(m) == Tier::Satellite).collect(),
            unserved: slot.unserved.clone(),
        }
    }

    pub fn available(&self, u: usize, m: usize) -> bool {
        self.available[u * self.aps + m]
    }

    /// Feasible choices of one user in lexicographic order (AP, then cloud
    /// before onboard). An unserved user has the single choice `None`.
    pub fn choices(&self, u: usize) -> Vec<Option<Choice>> {
        let mut out = Vec::new();
        for m in 0..self.aps {
            if !self.available(u, m) {
                continue;
            }
            out.push(Some(Choice { ap: m, onboard: false }));
            if !self.relay_only[m] {
                out.push(Some(Choice { ap: m, onboard: true }));
            }
        }
        if out.is_empty() {
            out.push(None);
        }
        out
    }

    /// Number of structurally feasible assignments (saturating).
    pub fn assignment_count(&self) -> u128 {
        (0..self.users).fold(1u128, |acc, u| acc.saturating_mul(self.choices(u).len() as u128))
    }

    pub fn violations(&self, a: &Assignment) -> Vec<Violation> {
        let mut out = Vec::new();
        let v = |family, u, m| Violation {
            family,
            user: Some(u),
            ap: m,
            cut: None,
        };
        for u in 0..self.users {
            let mut count = 0;
            for m in 0..self.aps {
                let al = a.alpha(u, m);
                let z = a.z(u, m);
                count += al as usize;
                if al && !self.available(u, m) {
                    out.push(v(Family::Connectivity, u, Some(m)));
                }
                if z && self.relay_only[m] {
                    out.push(v(Family::RelayOnly, u, Some(m)));
                }
                if z && !al {
                    out.push(v(Family::ComputeNeedsAssociation, u, Some(m)));
                }
            }
            let exempt = self.unserved.contains(&u) && count == 0;
            if count != 1 && !exempt {
                out.push(v(Family::Association, u, None));
            }
        }
        out.sort();
        out
    }
}

/// Continuous decisions, row-major `U×M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub users: usize,
    pub aps: usize,
    pub beta: Vec<f64>,
    pub f: Vec<f64>,
    pub tau_tx: Vec<f64>,
    pub tau_cp: Vec<f64>,
    pub tau_txc: Vec<f64>,
    pub tau_cpc: Vec<f64>,
}

impl Allocation {
    pub fn zeros(users: usize, aps: usize) -> Self {
        let n = users * aps;
        Allocation {
            users,
            aps,
            beta: vec![0.0; n],
            f: vec![0.0; n],
            tau_tx: vec![0.0; n],
            tau_cp: vec![0.0; n],
            tau_txc: vec![0.0; n],
            tau_cpc: vec![0.0; n],
        }
    }

    pub fn idx(&self, u: usize, m: usize) -> usize {
        u * self.aps + m
    }

    /// Builds the allocation from bandwidth fractions and CPU frequencies with
    /// every delay constraint tight.
    pub fn at_equality(
        cfg: &NetworkConfig,
        slot: &SlotState,
        assignment: &Assignment,
        beta: Vec<f64>,
        f: Vec<f64>,
    ) -> Self {
        let (users, aps) = (assignment.users(), assignment.aps());
        let mut alloc = Allocation::zeros(users, aps);
        alloc.beta = beta;
        alloc.f = f;
        for u in 0..users {
            let task = slot.tasks[u];
            for m in 0..aps {
                if !assignment.alpha(u, m) {
                    continue;
                }
                let i = alloc.idx(u, m);
                let ap = &cfg.ap_profiles[m];
                let rate = alloc.beta[i] * full_band_rate(cfg, slot, u, m);
                alloc.tau_tx[i] = task.data_bits / rate;
                if assignment.z(u, m) {
                    alloc.tau_cp[i] = task.cycles() / alloc.f[i];
                } else {
                    alloc.tau_txc[i] = task.data_bits / ap.backhaul_rate_bps;
                    alloc.tau_cpc[i] = task.cycles() / cfg.cloud_cpu_per_user_hz;
                }
            }
        }
        alloc
    }
}

/// Per-user delay and per-AP energy of a decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceReport {
    /// `O_u`, seconds.
    pub user_delay: Vec<f64>,
    /// `e^AP_{u,m}`, Joules, row-major `U×M`.
    pub energy: Vec<f64>,
    /// `Σ_u e^AP_{u,m}` per AP.
    pub ap_energy: Vec<f64>,
    pub total_delay: f64,
}

/// Evaluates `O_u` and `e^AP_{u,m} = P_m·τ^TXc + κ_m f² D C z` after checking
/// that the allocation respects every support, box, capacity and delay
/// constraint of the given assignment.
pub fn service_delay(
    cfg: &NetworkConfig,
    slot: &SlotState,
    assignment: &Assignment,
    alloc: &Allocation,
) -> Result<ServiceReport, ModelError> {
    let (users, aps) = (assignment.users(), assignment.aps());
    if users != slot.users() || aps != cfg.ap_count() || alloc.users != users || alloc.aps != aps
    {
        return Err(ModelError::Dimension {
            expected: format!("{}x{}", slot.users(), cfg.ap_count()),
            got: format!("assignment {users}x{aps}, allocation {}x{}", alloc.users, alloc.aps),
        });
    }
    let support = |u, m, reason: String| ModelError::Support {
        user: u,
        ap: m,
        reason,
    };
    let mut user_delay = vec![0.0; users];
    let mut energy = vec![0.0; users * aps];
    let mut ap_energy = vec![0.0; aps];
    let mut beta_sum = vec![0.0; aps];
    let mut f_sum = vec![0.0; aps];

    for u in 0..users {
        let task = slot.tasks[u];
        for m in 0..aps {
            let i = alloc.idx(u, m);
            let ap = &cfg.ap_profiles[m];
            let (a, z) = (assignment.alpha(u, m), assignment.z(u, m));
            let vals = [
                alloc.beta[i],
                alloc.f[i],
                alloc.tau_tx[i],
                alloc.tau_cp[i],
                alloc.tau_txc[i],
                alloc.tau_cpc[i],
            ];
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(support(u, m, "negative or non-finite value".into()));
            }
            if z && !a {
                return Err(support(u, m, "z = 1 without association".into()));
            }
            if z && !ap.tier.can_compute() {
                return Err(support(u, m, "onboard compute on a relay-only AP".into()));
            }
            if !a {
                if vals.iter().any(|v| *v > BOX_TOL) {
                    return Err(support(u, m, "resources allocated to an unassociated pair".into()));
                }
                continue;
            }
            let [bmin, bmax] = ap.bandwidth_fraction_bounds;
            if alloc.beta[i] < bmin - BOX_TOL || alloc.beta[i] > bmax + BOX_TOL {
                return Err(support(u, m, format!("β = {} outside [{bmin}, {bmax}]", alloc.beta[i])));
            }
            let rate = alloc.beta[i] * full_band_rate(cfg, slot, u, m);
            if alloc.tau_tx[i] * rate < task.data_bits * (1.0 - DELAY_RTOL) {
                return Err(support(u, m, "uplink delay constraint violated".into()));
            }
            if z {
                let [fmin, fmax] = ap.cpu_bounds;
                let fmax = fmax.min(ap.max_cpu_hz);
                let tol = BOX_TOL * fmax.max(1.0);
                if alloc.f[i] < fmin - tol || alloc.f[i] > fmax + tol {
                    return Err(support(u, m, format!("f = {} outside [{fmin}, {fmax}]", alloc.f[i])));
                }
                if alloc.tau_cp[i] * alloc.f[i] < task.cycles() * (1.0 - DELAY_RTOL) {
                    return Err(support(u, m, "onboard compute delay constraint violated".into()));
                }
            } else {
                if alloc.f[i] > BOX_TOL || alloc.tau_cp[i] > BOX_TOL {
                    return Err(support(u, m, "CPU allocated to a cloud-bound task".into()));
                }
                if alloc.tau_txc[i] * ap.backhaul_rate_bps < task.data_bits * (1.0 - DELAY_RTOL) {
                    return Err(support(u, m, "backhaul delay constraint violated".into()));
                }
                if alloc.tau_cpc[i] * cfg.cloud_cpu_per_user_hz < task.cycles() * (1.0 - DELAY_RTOL)
                {
                    return Err(support(u, m, "cloud compute delay constraint violated".into()));
                }
            }
            beta_sum[m] += alloc.beta[i];
            f_sum[m] += alloc.f[i];
            user_delay[u] += alloc.tau_tx[i] + alloc.tau_cp[i] + alloc.tau_txc[i] + alloc.tau_cpc[i];
            let compute = if z {
                ap.switched_capacitance * alloc.f[i] * alloc.f[i] * task.cycles()
            } else {
                0.0
            };
            let e = ap.tx_power_w() * alloc.tau_txc[i] + compute;
            energy[i] = e;
            ap_energy[m] += e;
        }
    }
    for m in 0..aps {
        if beta_sum[m] > 1.0 + 1e-9 {
            return Err(ModelError::Capacity {
                ap: m,
                reason: format!("Σβ = {}", beta_sum[m]),
            });
        }
        let cap = cfg.ap_profiles[m].max_cpu_hz;
        if f_sum[m] > cap * (1.0 + 1e-9) + 1e-3 {
            return Err(ModelError::Capacity {
                ap: m,
                reason: format!("Σf = {} > {cap}", f_sum[m]),
            });
        }
    }
    let total_delay = user_delay.iter().fold(0.0, |a, d| a + d);
    Ok(ServiceReport {
        user_delay,
        energy,
        ap_energy,
        total_delay,
    })
}
