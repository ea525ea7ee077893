//! Multi-slot drivers: the online slot loop with queue updates, V sweeps, and
//! their CSV / JSON outputs.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{heuristic_slot, myopic_slot};
use crate::decision::service_delay;
use crate::error::SolveError;
use crate::hqcgbd::{solve_slot_classical_gbd, solve_slot_multi_cut, solve_slot_single_cut, SolverParams};
use crate::lyapunov::{c_star, QueueState};
use crate::scenario::{sample_slot, NetworkConfig};

pub const RUN_SCHEMA: &str = "# schema: satin-run/1";
pub const SWEEP_SCHEMA: &str = "# schema: satin-sweep/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Hqcgbd,
    HqcgbdMulti,
    Gbd,
    Heuristic,
    Myopic,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::Hqcgbd,
        Scheme::HqcgbdMulti,
        Scheme::Gbd,
        Scheme::Heuristic,
        Scheme::Myopic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Hqcgbd => "hqcgbd",
            Scheme::HqcgbdMulti => "hqcgbd-multi",
            Scheme::Gbd => "gbd",
            Scheme::Heuristic => "heuristic",
            Scheme::Myopic => "myopic",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`; expected one of hqcgbd, hqcgbd-multi, gbd, heuristic, myopic"))
    }
}

/// One slot of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    pub scheme: Scheme,
    /// `Σ_u O_u` over served users, seconds.
    pub total_delay: f64,
    /// Per-AP energy spent this slot, Joules.
    pub ap_energy: Vec<f64>,
    /// Per-AP virtual backlog after this slot's update, Joules.
    pub queue: Vec<f64>,
    pub iterations: usize,
    pub final_gap: f64,
    pub wall_ms: f64,
    pub seed: u64,
    /// Users with no available AP, left out of the slot.
    pub unserved: usize,
    /// The myopic scheme fell back to all-cloud.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub scheme: Scheme,
    pub slots: usize,
    pub seed: u64,
    pub solver: SolverParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub slots: usize,
    pub seed: u64,
    pub v: f64,
    pub config_hash: String,
    pub code_version: String,
    pub time_avg_delay: f64,
    pub time_avg_energy: Vec<f64>,
    pub energy_budgets: Vec<f64>,
    /// APs whose time-average energy exceeds their budget.
    pub avg_budget_violations: usize,
    /// `(slot, AP)` pairs whose slot energy exceeds the budget.
    pub slot_budget_violations: usize,
    pub unserved_user_slots: usize,
    pub fallbacks: usize,
    pub mean_iterations: f64,
    pub final_queue: Vec<f64>,
    pub c_star: f64,
    pub c_star_over_v: f64,
    pub wall_ms: f64,
}

/// SHA-256 of the configuration's canonical JSON.
pub fn config_hash(cfg: &NetworkConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn slot_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (t as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Runs the online controller (or a baseline) over `slots` slots.
pub fn simulate(cfg: &NetworkConfig, params: &SimParams) -> Result<(Vec<RunRecord>, RunSummary), SolveError> {
    let aps = cfg.ap_count();
    let budgets = cfg.energy_budgets();
    let mut queue = QueueState::zeros(aps);
    let mut records = Vec::with_capacity(params.slots);
    let started = Instant::now();
    for t in 0..params.slots {
        let raw = sample_slot(cfg, t);
        let unserved = raw.unserved.len();
        let slot = raw.served_view();
        let seed = slot_seed(params.seed, t);
        let solver = SolverParams {
            seed,
            ..params.solver.clone()
        };
        let t0 = Instant::now();
        let (assignment, allocation, iterations, final_gap, fallback) = match params.scheme {
            Scheme::Heuristic => {
                let (a, alloc) = heuristic_slot(cfg, &slot, seed);
                (a, alloc, 0, 0.0, false)
            }
            Scheme::Myopic => {
                let out = myopic_slot(cfg, &slot, &solver)?;
                let (it, gap) = out.trace.as_ref().map_or((0, 0.0), |t| (t.iterations(), t.final_gap()));
                (out.assignment, out.allocation, it, gap, out.fallback)
            }
            scheme => {
                let solve = match scheme {
                    Scheme::Hqcgbd => solve_slot_single_cut,
                    Scheme::HqcgbdMulti => solve_slot_multi_cut,
                    _ => solve_slot_classical_gbd,
                };
                let s = solve(cfg, &slot, &queue, &solver)?;
                let (it, gap) = (s.trace.iterations(), s.trace.final_gap());
                (s.solution.assignment, s.solution.allocation, it, gap, false)
            }
        };
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        let report = service_delay(cfg, &slot, &assignment, &allocation)?;
        queue = queue.update(&report.ap_energy, &budgets);
        records.push(RunRecord {
            t,
            scheme: params.scheme,
            total_delay: report.total_delay,
            ap_energy: report.ap_energy,
            queue: queue.backlog.clone(),
            iterations,
            final_gap,
            wall_ms,
            seed,
            unserved,
            fallback,
        });
    }
    let summary = summarize(cfg, params, &records, &queue, started.elapsed().as_secs_f64() * 1e3);
    Ok((records, summary))
}

fn summarize(
    cfg: &NetworkConfig,
    params: &SimParams,
    records: &[RunRecord],
    queue: &QueueState,
    wall_ms: f64,
) -> RunSummary {
    let aps = cfg.ap_count();
    let budgets = cfg.energy_budgets();
    let n = records.len();
    let denom = n.max(1) as f64;
    let mut avg_energy = vec![0.0; aps];
    let mut slot_violations = 0;
    for r in records {
        for m in 0..aps {
            avg_energy[m] += r.ap_energy[m] / denom;
            if r.ap_energy[m] > budgets[m] * (1.0 + 1e-9) {
                slot_violations += 1;
            }
        }
    }
    let v = params.solver.control.v;
    let cs = c_star(cfg);
    RunSummary {
        scheme: params.scheme,
        slots: n,
        seed: params.seed,
        v,
        config_hash: config_hash(cfg),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        time_avg_delay: records.iter().fold(0.0, |acc, r| acc + r.total_delay) / denom,
        avg_budget_violations: (0..aps).filter(|&m| n > 0 && avg_energy[m] > budgets[m]).count(),
        time_avg_energy: avg_energy,
        energy_budgets: budgets,
        slot_budget_violations: slot_violations,
        unserved_user_slots: records.iter().map(|r| r.unserved).sum(),
        fallbacks: records.iter().filter(|r| r.fallback).count(),
        mean_iterations: records.iter().fold(0.0, |acc, r| acc + r.iterations as f64) / denom,
        final_queue: queue.backlog.clone(),
        c_star: cs,
        c_star_over_v: if v > 0.0 { cs / v } else { f64::INFINITY },
        wall_ms,
    }
}

/// Run CSV. Wall-clock times are left out so that repeated runs are
/// byte-identical; see [`timing_csv`].
pub fn records_csv(records: &[RunRecord], aps: usize) -> String {
    let mut out = format!("{RUN_SCHEMA}\nt,scheme,seed,total_delay,iterations,final_gap,unserved,fallback");
    for m in 0..aps {
        let _ = write!(out, ",energy_{m}");
    }
    for m in 0..aps {
        let _ = write!(out, ",queue_{m}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t, r.scheme, r.seed, r.total_delay, r.iterations, r.final_gap, r.unserved, r.fallback
        );
        for e in r.ap_energy.iter().chain(&r.queue) {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
    }
    out
}

pub fn timing_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("t,scheme,wall_ms\n");
    for r in records {
        let _ = writeln!(out, "{},{},{:.3}", r.t, r.scheme, r.wall_ms);
    }
    out
}

/// Writes every file or none: contents go to temporary names first and are
/// renamed into place only after all writes succeed.
pub fn write_outputs(dir: &Path, files: &[(&str, String)]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    let result = (|| {
        for (name, body) in files {
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push(tmp.clone());
            std::fs::write(&tmp, body)?;
        }
        for (name, _) in files {
            std::fs::rename(dir.join(format!(".{name}.partial")), dir.join(name))?;
        }
        Ok(())
    })();
    if result.is_err() {
        for tmp in staged {
            let _ = std::fs::remove_file(tmp);
        }
    }
    result
}

pub fn write_run(dir: &Path, cfg: &NetworkConfig, records: &[RunRecord], summary: &RunSummary) -> std::io::Result<()> {
    let json = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    write_outputs(
        dir,
        &[
            ("run.csv", records_csv(records, cfg.ap_count())),
            ("timing.csv", timing_csv(records)),
            ("summary.json", json),
        ],
    )
}

/// One `(V, seed)` row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub v: f64,
    pub seed: u64,
    pub time_avg_delay: f64,
    pub time_avg_energy: Vec<f64>,
    pub total_energy: f64,
    pub c_star_over_v: f64,
}

impl SweepRow {
    fn from_summary(s: &RunSummary) -> Self {
        SweepRow {
            v: s.v,
            seed: s.seed,
            time_avg_delay: s.time_avg_delay,
            total_energy: s.time_avg_energy.iter().sum(),
            time_avg_energy: s.time_avg_energy.clone(),
            c_star_over_v: s.c_star_over_v,
        }
    }
}

/// Runs `simulate` for every `(V, seed)`; the seed drives both the channel
/// realization and the solver.
pub fn sweep_v(cfg: &NetworkConfig, vs: &[f64], seeds: &[u64], base: &SimParams) -> Result<Vec<SweepRow>, SolveError> {
    if vs.is_empty() {
        return Err(SolveError::InvalidParams("V list is empty".into()));
    }
    let mut rows = Vec::new();
    for &v in vs {
        for &seed in seeds {
            let cfg = NetworkConfig {
                rng_seed: seed,
                ..cfg.clone()
            };
            let mut params = base.clone();
            params.seed = seed;
            params.solver.control.v = v;
            let (_, summary) = simulate(&cfg, &params)?;
            rows.push(SweepRow::from_summary(&summary));
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let aps = rows.first().map_or(0, |r| r.time_avg_energy.len());
    let mut out = format!("{SWEEP_SCHEMA}\nv,seed,time_avg_delay,total_energy,c_star_over_v");
    for m in 0..aps {
        let _ = write!(out, ",energy_{m}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{},{},{}", r.v, r.seed, r.time_avg_delay, r.total_energy, r.c_star_over_v);
        for e in &r.time_avg_energy {
            let _ = write!(out, ",{e}");
        }
        out.push('\n');
    }
    out
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    /// `(V, median delay, median total energy)` in increasing `V`.
    pub medians: Vec<(f64, f64, f64)>,
    /// Adjacent pairs where the median delay rises with `V`.
    pub delay_inversions: usize,
    /// Adjacent pairs where the median total energy falls with `V`.
    pub energy_inversions: usize,
    pub pass: bool,
}

/// Median-aggregates rows per `V` and counts violations of "delay
/// nonincreasing, energy nondecreasing in `V`", allowing `allowed` of each.
pub fn trend_check(rows: &[SweepRow], allowed: usize) -> TrendReport {
    let mut vs: Vec<f64> = rows.iter().map(|r| r.v).collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    let medians: Vec<(f64, f64, f64)> = vs
        .iter()
        .map(|&v| {
            let mut d: Vec<f64> = rows.iter().filter(|r| r.v == v).map(|r| r.time_avg_delay).collect();
            let mut e: Vec<f64> = rows.iter().filter(|r| r.v == v).map(|r| r.total_energy).collect();
            (v, median(&mut d), median(&mut e))
        })
        .collect();
    let delay_inversions = medians.windows(2).filter(|w| w[1].1 > w[0].1).count();
    let energy_inversions = medians.windows(2).filter(|w| w[1].2 < w[0].2).count();
    TrendReport {
        pass: delay_inversions <= allowed && energy_inversions <= allowed,
        medians,
        delay_inversions,
        energy_inversions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(scheme: Scheme, slots: usize) -> SimParams {
        SimParams {
            scheme,
            slots,
            seed: 3,
            solver: SolverParams::default(),
        }
    }

    #[test]
    fn zero_slots_gives_header_only() {
        let cfg = NetworkConfig::tiny(2);
        let (records, summary) = simulate(&cfg, &params(Scheme::Heuristic, 0)).unwrap();
        assert!(records.is_empty());
        assert_eq!(summary.slots, 0);
        let csv = records_csv(&records, 3);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next(), Some(RUN_SCHEMA));
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("quantum".parse::<Scheme>().is_err());
    }

    #[test]
    fn repeated_runs_are_identical() {
        let cfg = NetworkConfig::tiny(3);
        let p = params(Scheme::Gbd, 4);
        let a = records_csv(&simulate(&cfg, &p).unwrap().0, 3);
        let b = records_csv(&simulate(&cfg, &p).unwrap().0, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn trend_check_counts_inversions() {
        let row = |v: f64, d: f64, e: f64| SweepRow {
            v,
            seed: 0,
            time_avg_delay: d,
            time_avg_energy: vec![e],
            total_energy: e,
            c_star_over_v: 0.0,
        };
        let rows = vec![row(1.0, 5.0, 1.0), row(2.0, 4.0, 2.0), row(3.0, 4.5, 3.0), row(4.0, 3.0, 2.5)];
        let r = trend_check(&rows, 1);
        assert_eq!((r.delay_inversions, r.energy_inversions), (1, 1));
        assert!(r.pass);
        assert!(!trend_check(&rows, 0).pass);
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = NetworkConfig::tiny(2);
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.rng_seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
