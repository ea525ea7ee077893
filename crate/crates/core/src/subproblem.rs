//! Convex continuous subproblem for fixed binaries, its multipliers, and the
//! Benders cut built from them.
//!
//! For a fixed assignment the problem separates per AP into a bandwidth stage
//! (`min Σ w_u/β_u` over a box with `Σβ ≤ 1`) and a CPU stage
//! (`min Σ d_u/f_u + e_u f_u²` over a box with `Σf ≤ F_m`); cloud-bound tasks
//! have fixed delays. Both stages are solved by bisection on the capacity
//! multiplier with closed-form or scalar-Newton per-user responses. Delay
//! constraints are imposed at equality, so their multipliers equal the
//! objective weights of the delays.
//!
//! The cut is the Lagrangian dual function at the optimal multipliers: every
//! per-user term is minimized over its own box with the capacity prices fixed,
//! which leaves a function that is affine in `α`, `z` and `α·z`. By weak
//! duality it never exceeds the subproblem optimum at any feasible assignment,
//! and by strong duality it is tight at the generating assignment.

use serde::{Deserialize, Serialize};

use crate::decision::{Allocation, Assignment};
use crate::error::SubproblemError;
use crate::lyapunov::QueueState;
use crate::scenario::{full_band_rate, NetworkConfig, SlotState};

/// Relative bracket width at which multiplier bisection stops.
const BISECTION_RTOL: f64 = 1e-10;
/// Default acceptance bound on the KKT residual.
pub const KKT_TOL: f64 = 1e-7;

/// Best response `β(λ) = clip(sqrt(w/λ), lo, hi)` of `w/β + λβ`.
pub(crate) fn beta_response(w: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    if lambda <= 0.0 {
        return hi;
    }
    (w / lambda).sqrt().clamp(lo, hi)
}

/// `min_{β ∈ [lo, hi]} w/β + λβ`.
pub(crate) fn beta_value(w: f64, lambda: f64, lo: f64, hi: f64) -> f64 {
    let b = beta_response(w, lambda, lo, hi);
    w / b + lambda * b
}

/// Minimizer over `[lo, hi]` of `d/f + e f² + ν f` with `d, e, ν ≥ 0`.
///
/// The stationarity polynomial `2e f³ + ν f² − d` is convex and increasing on
/// `f > 0`, so Newton started from `hi` descends monotonically to the root.
pub(crate) fn cpu_response(d: f64, e: f64, nu: f64, lo: f64, hi: f64) -> f64 {
    let g = |f: f64| 2.0 * e * f * f * f + nu * f * f - d;
    if g(hi) <= 0.0 {
        return hi;
    }
    if g(lo) >= 0.0 {
        return lo;
    }
    let mut f = hi;
    for _ in 0..200 {
        let dg = 6.0 * e * f * f + 2.0 * nu * f;
        let step = g(f) / dg;
        let next = (f - step).max(lo);
        if (f - next).abs() <= 1e-15 * f {
            f = next;
            break;
        }
        f = next;
    }
    f
}

/// `min_{f ∈ [lo, hi]} d/f + e f² + ν f`.
pub(crate) fn cpu_value(d: f64, e: f64, nu: f64, lo: f64, hi: f64) -> f64 {
    let f = cpu_response(d, e, nu, lo, hi);
    d / f + e * f * f + nu * f
}

/// Smallest multiplier `p ≥ 0` with `load(p) ≤ cap`, for a nonincreasing
/// `load`. Returns `None` when even the saturated load `floor` exceeds `cap`.
fn smallest_feasible_multiplier(
    load: impl Fn(f64) -> f64,
    cap: f64,
    start: f64,
    floor: f64,
) -> Option<f64> {
    if load(0.0) <= cap {
        return Some(0.0);
    }
    if floor > cap {
        return None;
    }
    let mut hi = start.max(f64::MIN_POSITIVE);
    let mut grown = 0;
    while load(hi) > cap {
        hi *= 4.0;
        grown += 1;
        if grown > 2000 || !hi.is_finite() {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..2000 {
        if hi - lo <= BISECTION_RTOL * hi {
            break;
        }
        // geometric steps while the bracket spans decades, arithmetic after
        let mid = if lo > 0.0 && hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if load(mid) <= cap {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Weight `w = V·D/(B log2(1+SNR))` of `1/β` in the uplink delay term.
pub(crate) fn bandwidth_weight(cfg: &NetworkConfig, slot: &SlotState, u: usize, m: usize, v: f64) -> f64 {
    v * slot.tasks[u].data_bits / full_band_rate(cfg, slot, u, m)
}

/// Objective contribution of a cloud-bound task: delays plus the relay energy
/// priced at `price`.
pub(crate) fn cloud_cost(cfg: &NetworkConfig, slot: &SlotState, u: usize, m: usize, v: f64, price: f64) -> f64 {
    let ap = &cfg.ap_profiles[m];
    let task = slot.tasks[u];
    let relay = task.data_bits / ap.backhaul_rate_bps;
    v * (relay + task.cycles() / cfg.cloud_cpu_per_user_hz) + price * ap.tx_power_w() * relay
}

/// Multipliers of the retained constraint families. Per-AP vectors have length
/// `M`; per-pair vectors are row-major `U×M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    /// `Σ_u β ≤ 1`
    pub bandwidth: Vec<f64>,
    /// `Σ_u f ≤ F_m`
    pub cpu: Vec<f64>,
    /// Per-slot energy cap (only in the energy-capped variant).
    pub energy_cap: Vec<f64>,
    pub beta_lower: Vec<f64>,
    pub beta_upper: Vec<f64>,
    pub f_lower: Vec<f64>,
    pub f_upper: Vec<f64>,
    pub delay_tx: Vec<f64>,
    pub delay_cp: Vec<f64>,
    pub delay_txc: Vec<f64>,
    pub delay_cpc: Vec<f64>,
}

impl Duals {
    fn zeros(users: usize, aps: usize) -> Self {
        let n = users * aps;
        Duals {
            bandwidth: vec![0.0; aps],
            cpu: vec![0.0; aps],
            energy_cap: vec![0.0; aps],
            beta_lower: vec![0.0; n],
            beta_upper: vec![0.0; n],
            f_lower: vec![0.0; n],
            f_upper: vec![0.0; n],
            delay_tx: vec![0.0; n],
            delay_cp: vec![0.0; n],
            delay_txc: vec![0.0; n],
            delay_cpc: vec![0.0; n],
        }
    }

    pub fn all_nonnegative(&self) -> bool {
        [
            &self.bandwidth,
            &self.cpu,
            &self.energy_cap,
            &self.beta_lower,
            &self.beta_upper,
            &self.f_lower,
            &self.f_upper,
            &self.delay_tx,
            &self.delay_cp,
            &self.delay_txc,
            &self.delay_cpc,
        ]
        .iter()
        .all(|v| v.iter().all(|x| *x >= 0.0))
    }
}

/// Relative KKT residuals of a solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementary: f64,
    pub dual: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.complementary)
            .max(self.dual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub assignment: Assignment,
    pub allocation: Allocation,
    pub duals: Duals,
    /// `Φ` at the optimum, with the queue term `Σ Q_m (E_m − ē_m)`.
    pub objective: f64,
    pub ap_energy: Vec<f64>,
    pub kkt: KktResiduals,
    pub v: f64,
    pub queue: Vec<f64>,
    /// Energy price per AP used in the Lagrangian: `Q_m` plus any energy-cap
    /// multiplier.
    pub price: Vec<f64>,
}

/// One additive per-AP resource used to screen assignments before any solve:
/// the load of user `u` choosing AP `m` is `cloud[u·M+m]` or `onboard[u·M+m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResource {
    pub name: String,
    pub cap: Vec<f64>,
    pub cloud: Vec<f64>,
    pub onboard: Vec<f64>,
}

/// Necessary conditions for subproblem feasibility, checked on binaries only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub users: usize,
    pub aps: usize,
    pub resources: Vec<ScreenResource>,
}

impl Screen {
    /// Box minima against the bandwidth and CPU capacity sums.
    pub fn capacity(cfg: &NetworkConfig, slot: &SlotState) -> Self {
        let (users, aps) = (slot.users(), slot.aps());
        let mut bw = ScreenResource {
            name: "bandwidth".into(),
            cap: vec![1.0 + 1e-12; aps],
            cloud: vec![0.0; users * aps],
            onboard: vec![0.0; users * aps],
        };
        let mut cpu = ScreenResource {
            name: "cpu".into(),
            cap: cfg.ap_profiles.iter().map(|ap| ap.max_cpu_hz * (1.0 + 1e-12)).collect(),
            cloud: vec![0.0; users * aps],
            onboard: vec![0.0; users * aps],
        };
        for u in 0..users {
            for (m, ap) in cfg.ap_profiles.iter().enumerate() {
                let i = u * aps + m;
                bw.cloud[i] = ap.bandwidth_fraction_bounds[0];
                bw.onboard[i] = ap.bandwidth_fraction_bounds[0];
                cpu.onboard[i] = ap.cpu_bounds[0];
            }
        }
        Screen {
            users,
            aps,
            resources: vec![bw, cpu],
        }
    }

    /// Adds the per-slot energy cap: relay energy for cloud-bound tasks and
    /// the minimum-frequency compute energy for onboard tasks.
    pub fn with_energy_cap(mut self, cfg: &NetworkConfig, slot: &SlotState) -> Self {
        let (users, aps) = (self.users, self.aps);
        let mut energy = ScreenResource {
            name: "energy".into(),
            cap: cfg.ap_profiles.iter().map(|ap| ap.energy_budget_j * (1.0 + 1e-12)).collect(),
            cloud: vec![0.0; users * aps],
            onboard: vec![0.0; users * aps],
        };
        for u in 0..users {
            let task = slot.tasks[u];
            for (m, ap) in cfg.ap_profiles.iter().enumerate() {
                let i = u * aps + m;
                energy.cloud[i] = ap.tx_power_w() * task.data_bits / ap.backhaul_rate_bps;
                energy.onboard[i] = ap.switched_capacitance * ap.cpu_bounds[0].powi(2) * task.cycles();
            }
        }
        self.resources.push(energy);
        self
    }

    pub fn load(&self, r: usize, u: usize, m: usize, onboard: bool) -> f64 {
        let res = &self.resources[r];
        let i = u * self.aps + m;
        if onboard {
            res.onboard[i]
        } else {
            res.cloud[i]
        }
    }

    /// Name of the first resource whose cap is exceeded, if any.
    pub fn first_violation(&self, a: &Assignment) -> Option<(usize, &str)> {
        for res in &self.resources {
            let mut load = vec![0.0; self.aps];
            for u in 0..self.users {
                for m in 0..self.aps {
                    if a.alpha(u, m) {
                        let i = u * self.aps + m;
                        load[m] += if a.z(u, m) { res.onboard[i] } else { res.cloud[i] };
                    }
                }
            }
            if let Some(m) = (0..self.aps).find(|&m| load[m] > res.cap[m]) {
                return Some((m, res.name.as_str()));
            }
        }
        None
    }

    pub fn admits(&self, a: &Assignment) -> bool {
        self.first_violation(a).is_none()
    }
}

/// Rejects assignments whose box minima alone violate a capacity sum.
pub fn screen_capacity(
    cfg: &NetworkConfig,
    slot: &SlotState,
    assignment: &Assignment,
) -> Result<(), SubproblemError> {
    match Screen::capacity(cfg, slot).first_violation(assignment) {
        None => Ok(()),
        Some((ap, name)) => Err(SubproblemError::InfeasibleAssignment {
            ap,
            reason: format!("{name} minima exceed capacity"),
        }),
    }
}

/// Solves the subproblem of `Φ` for a fixed assignment.
pub fn solve_subproblem(
    cfg: &NetworkConfig,
    slot: &SlotState,
    assignment: &Assignment,
    queue: &QueueState,
    v: f64,
) -> Result<SubproblemSolution, SubproblemError> {
    solve_inner(cfg, slot, assignment, queue, v, false)
}

/// Variant with the hard per-slot energy cap `Σ_u e_{u,m} ≤ ē_m` on every AP,
/// enforced through one extra multiplier per AP that adds to the energy price.
pub fn solve_subproblem_energy_capped(
    cfg: &NetworkConfig,
    slot: &SlotState,
    assignment: &Assignment,
    queue: &QueueState,
    v: f64,
) -> Result<SubproblemSolution, SubproblemError> {
    solve_inner(cfg, slot, assignment, queue, v, true)
}

/// Optimal allocation of a single AP for a fixed set of associated users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSolution {
    pub ap: usize,
    /// `(user, onboard)` in increasing user order.
    pub members: Vec<(usize, bool)>,
    pub beta: Vec<f64>,
    /// CPU frequency per member; zero for cloud-bound members.
    pub f: Vec<f64>,
    pub lambda: f64,
    pub nu: f64,
    pub eta: f64,
    /// `Q_m + η`.
    pub price: f64,
    pub beta_lower: Vec<f64>,
    pub beta_upper: Vec<f64>,
    pub f_lower: Vec<f64>,
    pub f_upper: Vec<f64>,
    /// Unweighted sum of member delays (s).
    pub delay: f64,
    pub energy: f64,
    pub kkt: KktResiduals,
}

impl ApSolution {
    /// `V·delay + Q·energy`, this AP's share of `Φ` without the budget term.
    pub fn cost(&self, v: f64, backlog: f64) -> f64 {
        v * self.delay + backlog * self.energy
    }
}

/// Solves one AP's bandwidth and CPU stages. `members` lists the associated
/// users and whether each computes onboard.
pub fn solve_ap(
    cfg: &NetworkConfig,
    slot: &SlotState,
    m: usize,
    members: &[(usize, bool)],
    backlog: f64,
    v: f64,
    energy_cap: bool,
) -> Result<ApSolution, SubproblemError> {
    let ap = &cfg.ap_profiles[m];
    let [blo, bhi] = ap.bandwidth_fraction_bounds;
    let n = members.len();
    let mut sol = ApSolution {
        ap: m,
        members: members.to_vec(),
        beta: vec![0.0; n],
        f: vec![0.0; n],
        lambda: 0.0,
        nu: 0.0,
        eta: 0.0,
        price: backlog,
        beta_lower: vec![0.0; n],
        beta_upper: vec![0.0; n],
        f_lower: vec![0.0; n],
        f_upper: vec![0.0; n],
        delay: 0.0,
        energy: 0.0,
        kkt: KktResiduals::default(),
    };
    if n == 0 {
        return Ok(sol);
    }
    if members.iter().any(|&(_, z)| z) && !ap.tier.can_compute() {
        return Err(SubproblemError::InvalidAssignment(format!("onboard task at relay-only AP {m}")));
    }

    // bandwidth stage
    let w: Vec<f64> = members.iter().map(|&(u, _)| bandwidth_weight(cfg, slot, u, m, v)).collect();
    let start = w.iter().fold(0.0f64, |acc, &w| acc.max(w / blo.max(1e-6).powi(2)));
    let load = |lam: f64| -> f64 { w.iter().map(|&w| beta_response(w, lam, blo, bhi)).sum() };
    let lambda = smallest_feasible_multiplier(load, 1.0, start, n as f64 * blo).ok_or(
        SubproblemError::InfeasibleAssignment {
            ap: m,
            reason: "bandwidth minima exceed capacity".into(),
        },
    )?;
    sol.lambda = lambda;
    let mut sum = 0.0;
    for k in 0..n {
        let b = beta_response(w[k], lambda, blo, bhi);
        sol.beta[k] = b;
        sum += b;
        let grad = -w[k] / (b * b) + lambda;
        let scale = w[k] / (b * b) + lambda;
        if b <= blo * (1.0 + 1e-12) && grad > 0.0 {
            sol.beta_lower[k] = grad;
        }
        if b >= bhi * (1.0 - 1e-12) && grad < 0.0 {
            sol.beta_upper[k] = -grad;
        }
        let r = (grad - sol.beta_lower[k] + sol.beta_upper[k]).abs() / scale.max(f64::MIN_POSITIVE);
        sol.kkt.stationarity = sol.kkt.stationarity.max(r);
    }
    sol.kkt.primal = sol.kkt.primal.max(sum - 1.0);
    if lambda > 0.0 {
        sol.kkt.complementary = sol.kkt.complementary.max((1.0 - sum).abs());
    }

    // CPU stage, optionally nested in the energy-cap multiplier
    let onboard: Vec<usize> = (0..n).filter(|&k| members[k].1).collect();
    let relay_energy: f64 = members
        .iter()
        .filter(|&&(_, z)| !z)
        .map(|&(u, _)| ap.tx_power_w() * slot.tasks[u].data_bits / ap.backhaul_rate_bps)
        .sum();
    let (flo, fhi) = (ap.cpu_bounds[0], ap.cpu_upper());
    let d: Vec<f64> = onboard.iter().map(|&k| v * slot.tasks[members[k].0].cycles()).collect();
    let kc: Vec<f64> = onboard
        .iter()
        .map(|&k| ap.switched_capacitance * slot.tasks[members[k].0].cycles())
        .collect();
    let stage_at = |p: f64| -> Result<CpuStage, SubproblemError> {
        let e: Vec<f64> = kc.iter().map(|k| p * k).collect();
        solve_cpu_stage(&d, &e, flo, fhi, ap.max_cpu_hz, m)
    };
    let energy_of =
        |stage: &CpuStage| -> f64 { relay_energy + stage.f.iter().zip(&kc).map(|(f, k)| k * f * f).sum::<f64>() };

    let mut stage = stage_at(backlog)?;
    if energy_cap {
        let budget = ap.energy_budget_j;
        let floor = relay_energy + kc.iter().map(|k| k * flo * flo).sum::<f64>();
        if floor > budget * (1.0 + 1e-12) {
            return Err(SubproblemError::InfeasibleAssignment {
                ap: m,
                reason: format!("minimum energy {floor:.6} J exceeds the per-slot budget {budget} J"),
            });
        }
        if energy_of(&stage) > budget {
            let load = |eta: f64| -> f64 { stage_at(backlog + eta).map(|s| energy_of(&s)).unwrap_or(f64::INFINITY) };
            let eta = smallest_feasible_multiplier(load, budget, 1.0, floor).ok_or(
                SubproblemError::InfeasibleAssignment {
                    ap: m,
                    reason: "energy cap unreachable".into(),
                },
            )?;
            sol.eta = eta;
            sol.price = backlog + eta;
            stage = stage_at(sol.price)?;
            let used = energy_of(&stage);
            sol.kkt.primal = sol.kkt.primal.max((used - budget) / budget);
            if eta > 0.0 {
                sol.kkt.complementary = sol.kkt.complementary.max((1.0 - used / budget).abs());
            }
        }
    }
    sol.nu = stage.nu;
    let mut fsum = 0.0;
    for (j, &k) in onboard.iter().enumerate() {
        let fu = stage.f[j];
        sol.f[k] = fu;
        fsum += fu;
        let e = sol.price * kc[j];
        let grad = -d[j] / (fu * fu) + 2.0 * e * fu + stage.nu;
        let scale = d[j] / (fu * fu) + 2.0 * e * fu + stage.nu;
        if fu <= flo * (1.0 + 1e-12) && grad > 0.0 {
            sol.f_lower[k] = grad;
        }
        if fu >= fhi * (1.0 - 1e-12) && grad < 0.0 {
            sol.f_upper[k] = -grad;
        }
        let r = (grad - sol.f_lower[k] + sol.f_upper[k]).abs() / scale.max(f64::MIN_POSITIVE);
        sol.kkt.stationarity = sol.kkt.stationarity.max(r);
    }
    if !onboard.is_empty() {
        sol.kkt.primal = sol.kkt.primal.max((fsum - ap.max_cpu_hz) / ap.max_cpu_hz);
        if stage.nu > 0.0 {
            sol.kkt.complementary = sol.kkt.complementary.max((1.0 - fsum / ap.max_cpu_hz).abs());
        }
    }

    // delays at equality and AP energy
    for (k, &(u, z)) in members.iter().enumerate() {
        let task = slot.tasks[u];
        sol.delay += task.data_bits / (sol.beta[k] * full_band_rate(cfg, slot, u, m));
        if z {
            sol.delay += task.cycles() / sol.f[k];
            sol.energy += ap.switched_capacitance * sol.f[k] * sol.f[k] * task.cycles();
        } else {
            let relay = task.data_bits / ap.backhaul_rate_bps;
            sol.delay += relay + task.cycles() / cfg.cloud_cpu_per_user_hz;
            sol.energy += ap.tx_power_w() * relay;
        }
    }
    Ok(sol)
}

struct CpuStage {
    f: Vec<f64>,
    nu: f64,
}

fn solve_cpu_stage(d: &[f64], e: &[f64], lo: f64, hi: f64, cap: f64, m: usize) -> Result<CpuStage, SubproblemError> {
    if d.is_empty() {
        return Ok(CpuStage { f: Vec::new(), nu: 0.0 });
    }
    let load = |nu: f64| -> f64 { d.iter().zip(e).map(|(&d, &e)| cpu_response(d, e, nu, lo, hi)).sum() };
    let start = d.iter().fold(0.0f64, |acc, &d| acc.max(d / lo.max(1.0).powi(2)));
    let nu = smallest_feasible_multiplier(load, cap, start, d.len() as f64 * lo).ok_or(
        SubproblemError::InfeasibleAssignment {
            ap: m,
            reason: "CPU minima exceed capacity".into(),
        },
    )?;
    let f = d.iter().zip(e).map(|(&d, &e)| cpu_response(d, e, nu, lo, hi)).collect();
    Ok(CpuStage { f, nu })
}

/// Members of AP `m` under an assignment, in user order.
pub fn ap_members(assignment: &Assignment, m: usize) -> Vec<(usize, bool)> {
    (0..assignment.users())
        .filter(|&u| assignment.alpha(u, m))
        .map(|u| (u, assignment.z(u, m)))
        .collect()
}

fn solve_inner(
    cfg: &NetworkConfig,
    slot: &SlotState,
    assignment: &Assignment,
    queue: &QueueState,
    v: f64,
    energy_cap: bool,
) -> Result<SubproblemSolution, SubproblemError> {
    let violations = assignment.violations(cfg, slot);
    if !violations.is_empty() {
        return Err(SubproblemError::InvalidAssignment(format!("{violations:?}")));
    }
    screen_capacity(cfg, slot, assignment)?;
    let (users, aps) = (assignment.users(), assignment.aps());
    let per_ap: Vec<ApSolution> = (0..aps)
        .map(|m| {
            let members = ap_members(assignment, m);
            solve_ap(cfg, slot, m, &members, queue.backlog[m], v, energy_cap)
        })
        .collect::<Result<_, _>>()?;

    let mut beta = vec![0.0; users * aps];
    let mut f = vec![0.0; users * aps];
    let mut duals = Duals::zeros(users, aps);
    let mut kkt = KktResiduals::default();
    let mut price = queue.backlog.clone();
    let mut ap_energy = vec![0.0; aps];
    let mut objective = 0.0;
    for s in &per_ap {
        let m = s.ap;
        let ap = &cfg.ap_profiles[m];
        duals.bandwidth[m] = s.lambda;
        duals.cpu[m] = s.nu;
        duals.energy_cap[m] = s.eta;
        price[m] = s.price;
        ap_energy[m] = s.energy;
        objective += s.cost(v, queue.backlog[m]) - queue.backlog[m] * ap.energy_budget_j;
        kkt.stationarity = kkt.stationarity.max(s.kkt.stationarity);
        kkt.primal = kkt.primal.max(s.kkt.primal);
        kkt.complementary = kkt.complementary.max(s.kkt.complementary);
        for (k, &(u, z)) in s.members.iter().enumerate() {
            let i = u * aps + m;
            beta[i] = s.beta[k];
            f[i] = s.f[k];
            duals.beta_lower[i] = s.beta_lower[k];
            duals.beta_upper[i] = s.beta_upper[k];
            duals.f_lower[i] = s.f_lower[k];
            duals.f_upper[i] = s.f_upper[k];
            duals.delay_tx[i] = v;
            if z {
                duals.delay_cp[i] = v;
            } else {
                duals.delay_txc[i] = v + s.price * ap.tx_power_w();
                duals.delay_cpc[i] = v;
            }
        }
    }
    let allocation = Allocation::at_equality(cfg, slot, assignment, beta, f);
    kkt.dual = if duals.all_nonnegative() { 0.0 } else { 1.0 };
    Ok(SubproblemSolution {
        assignment: assignment.clone(),
        allocation,
        duals,
        objective,
        ap_energy,
        kkt,
        v,
        queue: queue.backlog.clone(),
        price,
    })
}

/// Optimality cut `μ ≥ c0 + Σ a α + Σ b z + Σ q α z`, row-major `U×M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BendersCut {
    pub users: usize,
    pub aps: usize,
    pub constant: f64,
    pub alpha: Vec<f64>,
    pub z: Vec<f64>,
    pub alpha_z: Vec<f64>,
    /// Assignment whose subproblem produced this cut.
    pub generator: Assignment,
    /// Subproblem optimum at the generator.
    pub generator_value: f64,
}

impl BendersCut {
    pub fn evaluate(&self, a: &Assignment) -> f64 {
        let mut v = self.constant;
        for u in 0..self.users {
            for m in 0..self.aps {
                let i = u * self.aps + m;
                let (al, z) = (a.alpha(u, m), a.z(u, m));
                if al {
                    v += self.alpha[i];
                }
                if z {
                    v += self.z[i];
                }
                if al && z {
                    v += self.alpha_z[i];
                }
            }
        }
        v
    }

    /// Contribution of a single user's choice (without the constant).
    pub fn user_term(&self, u: usize, m: usize, onboard: bool) -> f64 {
        let i = u * self.aps + m;
        if onboard {
            self.alpha[i] + self.z[i] + self.alpha_z[i]
        } else {
            self.alpha[i]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.constant.is_finite()
            && self.alpha.iter().chain(&self.z).chain(&self.alpha_z).all(|c| c.is_finite())
    }
}

/// Builds the Lagrangian optimality cut from a converged subproblem solution.
pub fn make_cut(
    cfg: &NetworkConfig,
    slot: &SlotState,
    sol: &SubproblemSolution,
) -> Result<BendersCut, SubproblemError> {
    if sol.kkt.max() > KKT_TOL {
        return Err(SubproblemError::Tolerance {
            residual: sol.kkt.max(),
            tolerance: KKT_TOL,
        });
    }
    let (users, aps) = (sol.assignment.users(), sol.assignment.aps());
    let v = sol.v;
    let mut constant = 0.0;
    for m in 0..aps {
        let ap = &cfg.ap_profiles[m];
        constant -= sol.price[m] * ap.energy_budget_j;
        constant -= sol.duals.bandwidth[m];
        constant -= sol.duals.cpu[m] * ap.max_cpu_hz;
    }
    let n = users * aps;
    let (mut alpha, mut z, mut alpha_z) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for u in 0..users {
        let task = slot.tasks[u];
        for m in 0..aps {
            if !slot.available(u, m) {
                continue;
            }
            let ap = &cfg.ap_profiles[m];
            let i = u * aps + m;
            let [blo, bhi] = ap.bandwidth_fraction_bounds;
            let w = bandwidth_weight(cfg, slot, u, m, v);
            if !w.is_finite() {
                continue;
            }
            let cloud = cloud_cost(cfg, slot, u, m, v, sol.price[m]);
            alpha[i] = beta_value(w, sol.duals.bandwidth[m], blo, bhi) + cloud;
            // z stays 0 on relay-only tiers, so the product term is dropped there
            if ap.tier.can_compute() {
                alpha_z[i] = -cloud;
                let d = v * task.cycles();
                let e = sol.price[m] * ap.switched_capacitance * task.cycles();
                z[i] = cpu_value(d, e, sol.duals.cpu[m], ap.cpu_bounds[0], ap.cpu_upper());
            }
        }
    }
    let cut = BendersCut {
        users,
        aps,
        constant,
        alpha,
        z,
        alpha_z,
        generator: sol.assignment.clone(),
        generator_value: sol.objective,
    };
    Ok(cut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::Choice;
    use crate::lyapunov::drift_penalty_value;
    use crate::scenario::sample_slot;

    fn open_slot(cfg: &NetworkConfig, t: usize) -> SlotState {
        let mut slot = sample_slot(cfg, t);
        for row in &mut slot.connectivity {
            row.fill(true);
        }
        slot.unserved.clear();
        slot
    }

    #[test]
    fn cpu_response_solves_cubic() {
        let (d, e, nu) = (3.0, 0.5, 0.25);
        let f = cpu_response(d, e, nu, 1e-3, 1e3);
        assert!((2.0 * e * f.powi(3) + nu * f * f - d).abs() < 1e-12);
        assert_eq!(cpu_response(1.0, 0.0, 0.0, 0.1, 2.0), 2.0);
        assert_eq!(cpu_response(0.0, 1.0, 0.0, 0.1, 2.0), 0.1);
    }

    #[test]
    fn single_user_zero_queue_uses_box_maxima() {
        let cfg = NetworkConfig::tiny(1);
        let slot = open_slot(&cfg, 0);
        let a = Assignment::from_choices(3, &[Some(Choice { ap: 0, onboard: true })]);
        let sol = solve_subproblem(&cfg, &slot, &a, &QueueState::zeros(3), 10.0).unwrap();
        assert_eq!(sol.allocation.beta[0], 1.0);
        assert_eq!(sol.allocation.f[0], cfg.ap_profiles[0].cpu_upper());
        assert!(sol.kkt.max() <= KKT_TOL);
    }

    #[test]
    fn interior_cpu_optimum_matches_grid_search() {
        let cfg = NetworkConfig::tiny(1);
        let slot = open_slot(&cfg, 0);
        let a = Assignment::from_choices(3, &[Some(Choice { ap: 0, onboard: true })]);
        let v = 10.0;
        let mut q = QueueState::zeros(3);
        q.backlog[0] = 2.0;
        let sol = solve_subproblem(&cfg, &slot, &a, &q, v).unwrap();
        let ap = &cfg.ap_profiles[0];
        let closed = (v / (2.0 * q.backlog[0] * ap.switched_capacitance)).cbrt();
        let (lo, hi) = (ap.cpu_bounds[0], ap.cpu_upper());
        assert!(closed > lo && closed < hi, "interior case expected, got {closed}");
        // independent grid search over [lo, hi] of V·DC/f + Q κ f² DC
        let dc = slot.tasks[0].cycles();
        let obj = |f: f64| v * dc / f + q.backlog[0] * ap.switched_capacitance * f * f * dc;
        let n = 1_000_000;
        let (mut best_f, mut best) = (lo, f64::INFINITY);
        for k in 0..=n {
            let f = lo + (hi - lo) * k as f64 / n as f64;
            let val = obj(f);
            if val < best {
                best = val;
                best_f = f;
            }
        }
        let got = sol.allocation.f[0];
        assert!((got - closed).abs() <= 1e-9 * closed);
        assert!((got - best_f).abs() <= 1e-4 * best_f, "grid {best_f} vs {got}");
    }

    #[test]
    fn symmetric_users_split_bandwidth() {
        let cfg = NetworkConfig::tiny(2);
        let mut slot = open_slot(&cfg, 0);
        slot.tasks[1] = slot.tasks[0];
        slot.gain[1] = slot.gain[0].clone();
        let a = Assignment::from_choices(
            3,
            &[
                Some(Choice { ap: 0, onboard: false }),
                Some(Choice { ap: 0, onboard: false }),
            ],
        );
        let sol = solve_subproblem(&cfg, &slot, &a, &QueueState::zeros(3), 1.0).unwrap();
        assert!((sol.allocation.beta[0] - 0.5).abs() < 1e-9);
        assert!((sol.allocation.beta[3] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn objective_matches_independent_evaluator_and_cut_is_tight() {
        let cfg = NetworkConfig::downsized();
        let slot = open_slot(&cfg, 4);
        let mut q = QueueState::zeros(4);
        q.backlog = vec![3.0, 0.5, 7.0, 1.0];
        let choices: Vec<Option<Choice>> = (0..6)
            .map(|u| Some(Choice { ap: u % 3, onboard: u % 2 == 0 }))
            .collect();
        let a = Assignment::from_choices(4, &choices);
        let sol = solve_subproblem(&cfg, &slot, &a, &q, 50.0).unwrap();
        let phi = drift_penalty_value(&cfg, &slot, &a, &sol.allocation, &q, 50.0).unwrap();
        assert!((phi - sol.objective).abs() <= 1e-9 * phi.abs().max(1.0));
        let cut = make_cut(&cfg, &slot, &sol).unwrap();
        let at = cut.evaluate(&a);
        assert!((at - sol.objective).abs() <= 1e-6 * sol.objective.abs().max(1.0));
    }

    #[test]
    fn zero_duals_leave_explicit_terms() {
        let cfg = NetworkConfig::tiny(1);
        let slot = open_slot(&cfg, 2);
        let a = Assignment::from_choices(3, &[Some(Choice { ap: 1, onboard: false })]);
        let sol = solve_subproblem(&cfg, &slot, &a, &QueueState::zeros(3), 5.0).unwrap();
        assert!(sol.duals.bandwidth.iter().chain(&sol.duals.cpu).all(|d| *d == 0.0));
        let cut = make_cut(&cfg, &slot, &sol).unwrap();
        // Q = 0 and no binding capacity: no constant term at all
        assert_eq!(cut.constant, 0.0);
        let cloud = cloud_cost(&cfg, &slot, 0, 1, 5.0, 0.0);
        let w = bandwidth_weight(&cfg, &slot, 0, 1, 5.0);
        assert!((cut.alpha[1] - (w / 1.0 + cloud)).abs() < 1e-12 * cut.alpha[1]);
        assert_eq!(cut.alpha_z[1], -cloud);
        let ap = &cfg.ap_profiles[1];
        let fmax = ap.cpu_upper();
        assert!((cut.z[1] - 5.0 * slot.tasks[0].cycles() / fmax).abs() < 1e-12 * cut.z[1]);
        assert_eq!(cut.alpha_z[2], 0.0);
    }

    #[test]
    fn infeasible_minima_rejected() {
        let mut cfg = NetworkConfig::tiny(3);
        cfg.ap_profiles[0].bandwidth_fraction_bounds = [0.5, 1.0];
        let slot = open_slot(&cfg, 0);
        let choices = vec![Some(Choice { ap: 0, onboard: false }); 3];
        let a = Assignment::from_choices(3, &choices);
        assert!(matches!(
            solve_subproblem(&cfg, &slot, &a, &QueueState::zeros(3), 1.0),
            Err(SubproblemError::InfeasibleAssignment { ap: 0, .. })
        ));
    }

    #[test]
    fn energy_cap_is_respected() {
        let mut cfg = NetworkConfig::tiny(2);
        cfg.ap_profiles[0].energy_budget_j = 1.0;
        let slot = open_slot(&cfg, 1);
        let choices = vec![Some(Choice { ap: 0, onboard: true }); 2];
        let a = Assignment::from_choices(3, &choices);
        let sol =
            solve_subproblem_energy_capped(&cfg, &slot, &a, &QueueState::zeros(3), 10.0).unwrap();
        assert!(sol.ap_energy[0] <= 1.0 + 1e-12, "{}", sol.ap_energy[0]);
        assert!(sol.duals.energy_cap[0] > 0.0);
        assert!(sol.kkt.max() <= KKT_TOL, "{:?}", sol.kkt);
        let cut = make_cut(&cfg, &slot, &sol).unwrap();
        assert!((cut.evaluate(&a) - sol.objective).abs() <= 1e-6 * sol.objective);
    }
}
