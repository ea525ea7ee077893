//! Benders loop for one slot: subproblem solves produce upper bounds and cuts,
//! the master (annealed QUBO or exact enumeration) proposes the next binaries.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annealer::{feasible_pool, AnnealParams, FeasiblePick, Sampler, SimulatedAnnealer};
use crate::decision::{Assignment, Choice, Family, Structure};
use crate::error::{MasterError, SolveError, SubproblemError};
use crate::lyapunov::{ControlParams, QueueState};
use crate::master::{compile_qubo, CompileOptions, MasterModel};
use crate::scenario::{NetworkConfig, SlotState};
use crate::subproblem::{
    make_cut, solve_subproblem, solve_subproblem_energy_capped, Screen, SubproblemSolution,
};

pub const TRACE_SCHEMA: &str = "# schema: satin-trace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub control: ControlParams,
    pub anneal: AnnealParams,
    /// Fraction bits of the epigraph encoding.
    pub frac_bits: usize,
    /// Structural penalty as a multiple of the scaled objective range.
    pub penalty_factor: f64,
    /// Tenfold penalty escalations allowed when no sample decodes feasibly.
    pub max_escalations: usize,
    /// Reads that must reproduce the best assignment before the gap test
    /// may stop the loop.
    pub min_reproductions: usize,
    /// Re-samples (each with doubled sweeps) after a detected sampler miss.
    pub sampler_retries: usize,
    /// Run a single-user local descent on the exact epigraph from every
    /// decoded sample before ranking.
    pub polish: bool,
    /// Cap on the feasible-assignment count for the exact master.
    pub exact_cap: u128,
    /// Enforce `Σ_u e_{u,m} ≤ ē_m` in every slot.
    pub energy_cap: bool,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            control: ControlParams::default(),
            anneal: AnnealParams::default(),
            frac_bits: 6,
            penalty_factor: 2.0,
            max_escalations: 3,
            min_reproductions: 3,
            sampler_retries: 3,
            polish: true,
            exact_cap: 1 << 20,
            energy_cap: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gap,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub ub: f64,
    pub lb: f64,
    pub gap: f64,
    pub cuts_added: usize,
    pub master_ms: f64,
    pub sub_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub penalty_escalations: usize,
    pub sampler_misses: usize,
}

impl SolveTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_gap(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.gap)
    }

    /// Checks UB nonincreasing, LB nondecreasing and the gap contract.
    pub fn is_monotone(&self, epsilon: f64) -> bool {
        let ok = self
            .records
            .windows(2)
            .all(|w| w[1].ub <= w[0].ub && w[1].lb >= w[0].lb);
        let gap_ok = self.termination != Termination::Gap || self.final_gap() <= epsilon;
        ok && gap_ok
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_SCHEMA}\niteration,ub,lb,gap,cuts,master_ms,sub_ms\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.3}",
                r.iteration, r.ub, r.lb, r.gap, r.cuts_added, r.master_ms, r.sub_ms
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSolution {
    /// Incumbent: the subproblem solution achieving the final upper bound.
    pub solution: SubproblemSolution,
    pub trace: SolveTrace,
    /// Master problem with every cut accumulated by the loop.
    pub master: MasterModel,
}

impl SlotSolution {
    pub fn assignment(&self) -> &Assignment {
        &self.solution.assignment
    }

    pub fn objective(&self) -> f64 {
        self.solution.objective
    }
}

/// `|UB − LB| / max(|UB|, 1e-9)`.
pub fn relative_gap(ub: f64, lb: f64) -> f64 {
    if !lb.is_finite() || !ub.is_finite() {
        return f64::INFINITY;
    }
    (ub - lb).abs() / ub.abs().max(1e-9)
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer over the concatenated parts
    let mut h = seed;
    for &p in parts {
        h = h.wrapping_add(p.wrapping_add(0x9E37_79B9_7F4A_7C15));
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Max-SNR association with onboard compute wherever the tier allows it,
/// repaired until the screen admits it: onboard tasks on an overloaded AP
/// fall back to the cloud first, then the weakest users move to their next
/// best AP. `None` if the repair runs out of moves.
pub fn initial_assignment(cfg: &NetworkConfig, slot: &SlotState, screen: &Screen) -> Option<Assignment> {
    let (users, aps) = (slot.users(), slot.aps());
    let snr = |u: usize, m: usize| cfg.snr(m, slot.gain[u][m]);
    let mut banned = vec![false; users * aps];
    let best_ap = |u: usize, banned: &[bool]| {
        (0..aps)
            .filter(|&m| slot.available(u, m) && !banned[u * aps + m])
            .fold(None, |best: Option<usize>, m| match best {
                Some(b) if snr(u, b) >= snr(u, m) => Some(b),
                _ => Some(m),
            })
    };
    let mut a = Assignment::empty(users, aps);
    for u in 0..users {
        if let Some(m) = best_ap(u, &banned) {
            a.set(u, m, true, cfg.tier(m).can_compute());
        }
    }
    for _ in 0..(2 * users * aps + 1) {
        let Some((m, name)) = screen.first_violation(&a) else {
            return Some(a);
        };
        let r = screen.resources.iter().position(|res| res.name == name)?;
        let members: Vec<usize> = (0..users).filter(|&u| a.alpha(u, m)).collect();
        let relief = |u: usize| screen.load(r, u, m, true) - screen.load(r, u, m, false);
        if let Some(&u) = members
            .iter()
            .filter(|&&u| a.z(u, m) && relief(u) > 0.0)
            .max_by(|&&x, &&y| relief(x).total_cmp(&relief(y)).then(y.cmp(&x)))
        {
            a.set_z(u, m, false);
            continue;
        }
        let mover = members
            .iter()
            .copied()
            .filter(|&u| {
                let mut b = banned.clone();
                b[u * aps + m] = true;
                best_ap(u, &b).is_some()
            })
            .min_by(|&x, &y| snr(x, m).total_cmp(&snr(y, m)).then(x.cmp(&y)))?;
        banned[mover * aps + m] = true;
        a.set(mover, m, false, false);
        let next = best_ap(mover, &banned)?;
        a.set(mover, next, true, cfg.tier(next).can_compute());
    }
    None
}

/// Uniformly random structurally feasible assignment accepted by the screen.
fn random_assignment(structure: &Structure, screen: &Screen, rng: &mut ChaCha8Rng) -> Option<Assignment> {
    let options: Vec<Vec<Option<Choice>>> = (0..structure.users).map(|u| structure.choices(u)).collect();
    for _ in 0..100 {
        let picks: Vec<Option<Choice>> = options
            .iter()
            .map(|o| o[rng.random_range(0..o.len())])
            .collect();
        let a = Assignment::from_choices(structure.aps, &picks);
        if screen.admits(&a) {
            return Some(a);
        }
    }
    None
}

enum Master<'a> {
    Exact,
    Sampled { rho: usize, sampler: Option<&'a dyn Sampler> },
}

struct MasterStep {
    next: Vec<Assignment>,
    lb: Option<f64>,
    confirmed: bool,
    escalations: usize,
    misses: usize,
}

struct Engine<'a> {
    cfg: &'a NetworkConfig,
    slot: &'a SlotState,
    queue: &'a QueueState,
    params: &'a SolverParams,
    screen: Screen,
    model: MasterModel,
}

impl Engine<'_> {
    fn subproblem(&self, a: &Assignment) -> Result<SubproblemSolution, SubproblemError> {
        let v = self.params.control.v;
        if self.params.energy_cap {
            solve_subproblem_energy_capped(self.cfg, self.slot, a, self.queue, v)
        } else {
            solve_subproblem(self.cfg, self.slot, a, self.queue, v)
        }
    }

    fn tolerance(ub: f64) -> f64 {
        1e-9 * ub.abs().max(1.0)
    }

    fn sampled_master(
        &self,
        ub: f64,
        rho: usize,
        sampler: Option<&dyn Sampler>,
        iteration: usize,
    ) -> Result<MasterStep, SolveError> {
        let p = self.params;
        let mut opts = CompileOptions::auto(&self.model, ub, p.frac_bits, p.penalty_factor);
        let mut misses = 0;
        for escalation in 0..=p.max_escalations {
            let q = match compile_qubo(&self.model, &opts) {
                Ok(q) => q,
                Err(MasterError::PenaltyOverflow { .. }) if escalation > 0 => break,
                Err(e) => return Err(e.into()),
            };
            let mut anneal = p.anneal.clone();
            let mut last: Option<MasterStep> = None;
            for retry in 0..=p.sampler_retries {
                let seed = mix(p.seed, &[iteration as u64, escalation as u64, retry as u64]);
                let samples = match sampler {
                    Some(s) => s.sample(&q, seed)?,
                    None => SimulatedAnnealer::new(anneal.clone()).sample(&q, seed)?,
                };
                let picks: Vec<FeasiblePick> =
                    feasible_pool(&samples, &q, usize::MAX, |a| self.screen.admits(a))?;
                if picks.is_empty() {
                    break;
                }
                // polish each decode on the exact epigraph, then merge and rank
                let mut polished: Vec<(Assignment, f64, usize)> = Vec::new();
                let mut index: HashMap<Vec<Option<Choice>>, usize> = HashMap::new();
                for pk in &picks {
                    let (a, value) = if p.polish {
                        self.model.local_descent(&pk.assignment, Some(&self.screen))
                    } else {
                        (pk.assignment.clone(), self.model.epigraph(&pk.assignment))
                    };
                    match index.get(&a.choices()) {
                        Some(&k) => polished[k].2 += pk.reads,
                        None => {
                            index.insert(a.choices(), polished.len());
                            polished.push((a, value, pk.reads));
                        }
                    }
                }
                polished.sort_by(|x, y| x.1.total_cmp(&y.1));
                polished.truncate(rho);
                let lb = polished[0].1;
                let confirmed = polished[0].2 >= p.min_reproductions;
                let next: Vec<Assignment> = polished.into_iter().map(|x| x.0).collect();
                let miss = lb > ub + Self::tolerance(ub);
                let step = MasterStep {
                    next,
                    lb: (!miss).then_some(lb),
                    confirmed,
                    escalations: escalation,
                    misses,
                };
                if !miss && confirmed {
                    return Ok(step);
                }
                misses += usize::from(miss);
                last = Some(MasterStep { misses, ..step });
                anneal.sweeps *= 2;
            }
            if let Some(step) = last {
                return Ok(step);
            }
            for family in [
                Family::Connectivity,
                Family::Association,
                Family::RelayOnly,
                Family::ComputeNeedsAssociation,
            ] {
                opts.penalties.scale(family, 10.0);
            }
        }
        Err(SolveError::NoFeasibleSample {
            escalations: p.max_escalations,
        })
    }

    fn run(mut self, master: Master<'_>) -> Result<SlotSolution, SolveError> {
        let p = self.params;
        p.control
            .validate()
            .map_err(SolveError::InvalidParams)?;
        if !self.slot.is_feasible() {
            return Err(SolveError::InfeasibleSlot(self.slot.unserved.clone()));
        }
        let init = initial_assignment(self.cfg, self.slot, &self.screen).ok_or(SolveError::NoFeasibleAssignment)?;
        let mut candidates = vec![init];
        if let Master::Sampled { rho, .. } = master {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(p.seed, &[u64::MAX]));
            for _ in 1..rho {
                if let Some(a) = random_assignment(&self.model.structure, &self.screen, &mut rng) {
                    candidates.push(a);
                }
            }
        }

        let mut evaluated: HashMap<Vec<Option<Choice>>, f64> = HashMap::new();
        let mut incumbent: Option<SubproblemSolution> = None;
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut records = Vec::new();
        let mut termination = Termination::MaxIterations;
        let (mut escalations, mut misses) = (0, 0);

        for iteration in 1..=p.control.max_iterations {
            let t0 = Instant::now();
            let mut fresh: Vec<Assignment> = Vec::new();
            for a in candidates.drain(..) {
                let key = a.choices();
                if !evaluated.contains_key(&key) && !fresh.iter().any(|b| b.choices() == key) {
                    fresh.push(a);
                }
            }
            let solved: Vec<Result<SubproblemSolution, SubproblemError>> =
                fresh.par_iter().map(|a| self.subproblem(a)).collect();
            let mut cuts_added = 0;
            for (a, res) in fresh.iter().zip(solved) {
                match res {
                    Ok(sol) => {
                        evaluated.insert(a.choices(), sol.objective);
                        self.model.add_cut(make_cut(self.cfg, self.slot, &sol)?)?;
                        cuts_added += 1;
                        if sol.objective < ub {
                            ub = sol.objective;
                            incumbent = Some(sol);
                        }
                    }
                    Err(SubproblemError::InfeasibleAssignment { .. }) => {
                        evaluated.insert(a.choices(), f64::INFINITY);
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let sub_ms = t0.elapsed().as_secs_f64() * 1e3;
            if incumbent.is_none() {
                return Err(SolveError::NoFeasibleAssignment);
            }

            let t1 = Instant::now();
            let step = match master {
                Master::Exact => {
                    let (a, mu) = self.model.solve_exact(Some(&self.screen), p.exact_cap)?;
                    MasterStep {
                        next: vec![a],
                        lb: Some(mu),
                        confirmed: true,
                        escalations: 0,
                        misses: 0,
                    }
                }
                Master::Sampled { rho, sampler } => self.sampled_master(ub, rho, sampler, iteration)?,
            };
            let master_ms = t1.elapsed().as_secs_f64() * 1e3;
            escalations += step.escalations;
            misses += step.misses;
            if let Some(cand) = step.lb {
                lb = lb.max(cand.min(ub));
            }
            let gap = relative_gap(ub, lb);
            records.push(IterationRecord {
                iteration,
                ub,
                lb,
                gap,
                cuts_added,
                master_ms,
                sub_ms,
            });
            if gap <= p.control.epsilon && step.confirmed {
                termination = Termination::Gap;
                break;
            }
            candidates = step.next;
        }
        Ok(SlotSolution {
            solution: incumbent.expect("incumbent set after the first iteration"),
            trace: SolveTrace {
                records,
                termination,
                penalty_escalations: escalations,
                sampler_misses: misses,
            },
            master: self.model,
        })
    }
}

fn engine<'a>(cfg: &'a NetworkConfig, slot: &'a SlotState, queue: &'a QueueState, params: &'a SolverParams) -> Engine<'a> {
    let mut screen = Screen::capacity(cfg, slot);
    if params.energy_cap {
        screen = screen.with_energy_cap(cfg, slot);
    }
    Engine {
        cfg,
        slot,
        queue,
        params,
        screen,
        model: MasterModel::new(Structure::from_slot(cfg, slot)),
    }
}

/// One cut per iteration from the best feasible master sample.
pub fn solve_slot_single_cut(
    cfg: &NetworkConfig,
    slot: &SlotState,
    queue: &QueueState,
    params: &SolverParams,
) -> Result<SlotSolution, SolveError> {
    engine(cfg, slot, queue, params).run(Master::Sampled { rho: 1, sampler: None })
}

/// Up to `params.control.cuts` cuts per iteration from the best distinct
/// feasible master samples.
pub fn solve_slot_multi_cut(
    cfg: &NetworkConfig,
    slot: &SlotState,
    queue: &QueueState,
    params: &SolverParams,
) -> Result<SlotSolution, SolveError> {
    engine(cfg, slot, queue, params).run(Master::Sampled {
        rho: params.control.cuts,
        sampler: None,
    })
}

/// Same loop with a caller-supplied sampler backend.
pub fn solve_slot_with_sampler(
    cfg: &NetworkConfig,
    slot: &SlotState,
    queue: &QueueState,
    params: &SolverParams,
    rho: usize,
    sampler: &dyn Sampler,
) -> Result<SlotSolution, SolveError> {
    engine(cfg, slot, queue, params).run(Master::Sampled {
        rho: rho.max(1),
        sampler: Some(sampler),
    })
}

/// Classical GBD with the master solved exactly by branch and bound.
pub fn solve_slot_classical_gbd(
    cfg: &NetworkConfig,
    slot: &SlotState,
    queue: &QueueState,
    params: &SolverParams,
) -> Result<SlotSolution, SolveError> {
    engine(cfg, slot, queue, params).run(Master::Exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::drift_penalty_value;
    use crate::scenario::sample_slot;

    fn instance(seed: u64) -> (NetworkConfig, SlotState, QueueState) {
        let mut cfg = NetworkConfig::tiny(3);
        cfg.rng_seed = seed;
        let slot = sample_slot(&cfg, 0).served_view();
        let q = QueueState {
            backlog: vec![1.0, 0.5, 0.2],
            t: 0,
        };
        (cfg, slot, q)
    }

    fn quick() -> SolverParams {
        SolverParams {
            anneal: AnnealParams {
                num_reads: 32,
                sweeps: 300,
                ..AnnealParams::default()
            },
            ..SolverParams::default()
        }
    }

    #[test]
    fn one_iteration_returns_initial_assignment() {
        let (cfg, slot, q) = instance(3);
        let mut p = quick();
        p.control.epsilon = 0.0;
        p.control.max_iterations = 1;
        let s = solve_slot_single_cut(&cfg, &slot, &q, &p).unwrap();
        let init = initial_assignment(&cfg, &slot, &Screen::capacity(&cfg, &slot)).unwrap();
        assert_eq!(s.trace.iterations(), 1);
        assert_eq!(s.trace.records[0].cuts_added, 1);
        assert_eq!(s.assignment(), &init);
    }

    #[test]
    fn incumbent_reevaluates_to_upper_bound() {
        let (cfg, slot, q) = instance(5);
        let p = quick();
        for s in [
            solve_slot_classical_gbd(&cfg, &slot, &q, &p).unwrap(),
            solve_slot_single_cut(&cfg, &slot, &q, &p).unwrap(),
        ] {
            let sol = &s.solution;
            let phi = drift_penalty_value(&cfg, &slot, &sol.assignment, &sol.allocation, &q, p.control.v).unwrap();
            let ub = s.trace.records.last().unwrap().ub;
            assert!((phi - ub).abs() <= 1e-9 * ub.abs().max(1.0), "{phi} vs {ub}");
            assert!(s.trace.is_monotone(p.control.epsilon));
        }
    }

    #[test]
    fn rho_one_matches_single_cut() {
        let (cfg, slot, q) = instance(8);
        let mut p = quick();
        p.control.cuts = 1;
        let a = solve_slot_single_cut(&cfg, &slot, &q, &p).unwrap();
        let b = solve_slot_multi_cut(&cfg, &slot, &q, &p).unwrap();
        assert_eq!(a.assignment(), b.assignment());
        let strip = |t: &SolveTrace| t.records.iter().map(|r| (r.ub, r.lb, r.cuts_added)).collect::<Vec<_>>();
        assert_eq!(strip(&a.trace), strip(&b.trace));
    }

    #[test]
    fn infeasible_slot_is_rejected() {
        let (cfg, mut slot, q) = instance(1);
        slot.connectivity[0].fill(false);
        slot.unserved = vec![0];
        assert!(matches!(
            solve_slot_classical_gbd(&cfg, &slot, &q, &quick()),
            Err(SolveError::InfeasibleSlot(u)) if u == vec![0]
        ));
    }

    #[test]
    fn single_feasible_assignment_converges_at_once() {
        let (cfg, mut slot, q) = instance(2);
        // every user sees only the satellite
        for row in &mut slot.connectivity {
            *row = vec![false, false, true];
        }
        let s = solve_slot_classical_gbd(&cfg, &slot, &q, &quick()).unwrap();
        assert_eq!(s.trace.iterations(), 1);
        assert_eq!(s.trace.termination, Termination::Gap);
    }

    #[test]
    fn trace_csv_has_schema_line() {
        let (cfg, slot, q) = instance(4);
        let s = solve_slot_classical_gbd(&cfg, &slot, &q, &quick()).unwrap();
        let csv = s.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(TRACE_SCHEMA));
        assert_eq!(lines.next(), Some("iteration,ub,lb,gap,cuts,master_ms,sub_ms"));
        assert_eq!(lines.count(), s.trace.iterations());
    }
}
