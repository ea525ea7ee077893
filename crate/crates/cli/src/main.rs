//! `satin`: experiment driver for the drift-plus-penalty offloading controller.
//!
//! Output verbosity is controlled by `SATIN_LOG` (`quiet`, `info`, `debug`);
//! everything else is a flag.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use satin_core::annealer::AnnealParams;
use satin_core::experiment::{self, Scheme, SimParams};
use satin_core::hqcgbd::{
    solve_slot_classical_gbd, solve_slot_multi_cut, solve_slot_single_cut, SolverParams,
};
use satin_core::master::{compile_qubo, CompileOptions, MasterModel};
use satin_core::oracle::{enumerate_optimal, OracleOptions};
use satin_core::scenario::sample_slot;
use satin_core::{ConfigError, NetworkConfig, QueueState, SlotState, SolveError};

#[derive(Parser)]
#[command(name = "satin", version, about = "Task offloading in satellite-aerial-terrestrial networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the slot loop of one scheme and write run.csv, timing.csv and summary.json.
    Simulate(SimulateArgs),
    /// Run every (V, seed) pair and write sweep.csv and trend.json.
    SweepV(SweepArgs),
    /// Solve one slot and write its convergence trace.
    SolveSlot(SolveSlotArgs),
    /// Enumerate every assignment of one slot and print the optimum.
    Oracle(OracleArgs),
    /// Compile a dumped master problem into a QUBO text file.
    ExportQubo(ExportArgs),
    /// Write a built-in scenario as JSON.
    Config(ConfigArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Reference,
    Downsized,
    Tiny,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario JSON; defaults to the built-in downsized scenario.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1000.0)]
    v: f64,
    /// Cuts per iteration for the multi-cut scheme.
    #[arg(long, default_value_t = 5)]
    cuts: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 50)]
    lmax: usize,
    /// Annealing reads per master solve.
    #[arg(long)]
    reads: Option<usize>,
    /// Sweeps per annealing read.
    #[arg(long)]
    sweeps: Option<usize>,
}

impl SolverArgs {
    fn params(&self, anneal: AnnealParams, seed: u64) -> SolverParams {
        let mut p = SolverParams {
            anneal,
            seed,
            ..SolverParams::default()
        };
        p.control.v = self.v;
        p.control.cuts = self.cuts;
        p.control.epsilon = self.eps;
        p.control.max_iterations = self.lmax;
        if let Some(r) = self.reads {
            p.anneal.num_reads = r;
        }
        if let Some(s) = self.sweeps {
            p.anneal.sweeps = s;
        }
        p
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "hqcgbd")]
    scheme: Scheme,
    #[arg(long, default_value_t = 500)]
    slots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "hqcgbd")]
    scheme: Scheme,
    #[arg(long, default_value_t = 200)]
    slots: usize,
    /// Comma-separated V values.
    #[arg(long = "v-list", value_delimiter = ',', default_value = "100,300,1000,3000,10000")]
    v_list: Vec<f64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    cuts: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 50)]
    lmax: usize,
    #[arg(long)]
    reads: Option<usize>,
    #[arg(long)]
    sweeps: Option<usize>,
    /// Trend inversions tolerated per series.
    #[arg(long, default_value_t = 1)]
    allowed_inversions: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct SlotArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Slot JSON as written by `--dump-slot`; otherwise slot `--t` is sampled.
    #[arg(long)]
    slot: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    t: usize,
    /// Comma-separated virtual queue backlogs, one per AP; zeros by default.
    #[arg(long, value_delimiter = ',')]
    queue: Option<Vec<f64>>,
}

#[derive(Args)]
struct SolveSlotArgs {
    #[command(flatten)]
    slot: SlotArgs,
    #[arg(long, default_value = "hqcgbd")]
    scheme: Scheme,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output directory for trace.csv, solution.json and master.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the solved slot as JSON.
    #[arg(long)]
    dump_slot: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    slot: SlotArgs,
    #[arg(long, default_value_t = 1000.0)]
    v: f64,
    /// Add the hard per-slot energy caps.
    #[arg(long)]
    energy_cap: bool,
    /// Write the per-assignment table as CSV.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// master.json written by `solve-slot --out`.
    #[arg(long)]
    master: PathBuf,
    #[arg(long, default_value_t = 6)]
    frac_bits: usize,
    #[arg(long, default_value_t = 2.0)]
    penalty_factor: f64,
    /// QUBO text path; a `.registry.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value = "downsized")]
    preset: Preset,
    /// Users for the tiny preset.
    #[arg(long, default_value_t = 3)]
    users: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Master problem plus the upper bound it was left at.
#[derive(Serialize, Deserialize)]
struct MasterDump {
    ub: f64,
    model: MasterModel,
}

enum Failure {
    Validation(String),
    Solver(String),
}

impl Failure {
    fn validation(e: impl Display) -> Self {
        Failure::Validation(e.to_string())
    }

    fn solver(e: impl Display) -> Self {
        Failure::Solver(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::validation(e)
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::InvalidParams(_) | SolveError::InfeasibleSlot(_) => Failure::validation(e),
            e => Failure::solver(e),
        }
    }
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
enum Level {
    Quiet,
    Info,
    Debug,
}

fn level() -> Level {
    match std::env::var("SATIN_LOG").as_deref() {
        Ok("quiet") | Ok("0") => Level::Quiet,
        Ok("debug") | Ok("2") => Level::Debug,
        _ => Level::Info,
    }
}

macro_rules! log {
    ($lvl:expr, $($arg:tt)*) => {
        if level() >= $lvl {
            eprintln!($($arg)*);
        }
    };
}

fn load_config(args: &ScenarioArgs) -> Result<NetworkConfig, Failure> {
    match &args.config {
        Some(p) => Ok(NetworkConfig::from_json_file(p)?),
        None => Ok(NetworkConfig::downsized()),
    }
}

fn load_slot(cfg: &NetworkConfig, args: &SlotArgs) -> Result<(SlotState, QueueState), Failure> {
    let slot = match &args.slot {
        Some(p) => SlotState::from_json_file(p)?,
        None => sample_slot(cfg, args.t).served_view(),
    };
    if slot.aps() != cfg.ap_count() {
        return Err(Failure::Validation(format!(
            "slot has {} APs but the scenario has {}",
            slot.aps(),
            cfg.ap_count()
        )));
    }
    let queue = match &args.queue {
        None => QueueState::zeros(cfg.ap_count()),
        Some(q) if q.len() == cfg.ap_count() && q.iter().all(|x| x.is_finite() && *x >= 0.0) => QueueState {
            backlog: q.clone(),
            t: slot.t,
        },
        Some(q) => {
            return Err(Failure::Validation(format!(
                "--queue needs {} non-negative values, got {:?}",
                cfg.ap_count(),
                q
            )))
        }
    };
    Ok((slot, queue))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Solver(format!("writing {}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.scenario)?;
    let params = SimParams {
        scheme: args.scheme,
        slots: args.slots,
        seed: args.seed,
        solver: args.solver.params(AnnealParams::quick(), args.seed),
    };
    log!(Level::Info, "simulating {} for {} slots (V = {})", args.scheme, args.slots, args.solver.v);
    let (records, summary) = experiment::simulate(&cfg, &params)?;
    experiment::write_run(&args.out, &cfg, &records, &summary).map_err(Failure::solver)?;
    println!(
        "{}: time-average delay {:.6} s, energy {:?} J, budgets {:?} J",
        summary.scheme, summary.time_avg_delay, summary.time_avg_energy, summary.energy_budgets
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.scenario)?;
    let solver = SolverArgs {
        v: args.v_list.first().copied().unwrap_or(0.0),
        cuts: args.cuts,
        eps: args.eps,
        lmax: args.lmax,
        reads: args.reads,
        sweeps: args.sweeps,
    };
    let base = SimParams {
        scheme: args.scheme,
        slots: args.slots,
        seed: 0,
        solver: solver.params(AnnealParams::quick(), 0),
    };
    log!(
        Level::Info,
        "sweeping {} V values x {} seeds with {}",
        args.v_list.len(),
        args.seeds.len(),
        args.scheme
    );
    let rows = experiment::sweep_v(&cfg, &args.v_list, &args.seeds, &base)?;
    let trend = experiment::trend_check(&rows, args.allowed_inversions);
    let json = serde_json::to_string_pretty(&trend).map_err(Failure::solver)?;
    experiment::write_outputs(
        &args.out,
        &[("sweep.csv", experiment::sweep_csv(&rows)), ("trend.json", json)],
    )
    .map_err(Failure::solver)?;
    println!("trend {}", if trend.pass { "PASS" } else { "FAIL" });
    Ok(())
}

fn solve_slot(args: SolveSlotArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.slot.scenario)?;
    let (slot, queue) = load_slot(&cfg, &args.slot)?;
    let params = args.solver.params(AnnealParams::default(), args.seed);
    let solve = match args.scheme {
        Scheme::Hqcgbd => solve_slot_single_cut,
        Scheme::HqcgbdMulti => solve_slot_multi_cut,
        Scheme::Gbd => solve_slot_classical_gbd,
        other => {
            return Err(Failure::Validation(format!(
                "solve-slot supports hqcgbd, hqcgbd-multi and gbd, not {other}"
            )))
        }
    };
    if let Some(p) = &args.dump_slot {
        write_file(p, &serde_json::to_string_pretty(&slot).map_err(Failure::solver)?)?;
    }
    let s = solve(&cfg, &slot, &queue, &params)?;
    for r in &s.trace.records {
        log!(Level::Debug, "iteration {}: UB {} LB {} gap {:e}", r.iteration, r.ub, r.lb, r.gap);
    }
    if let Some(dir) = &args.out {
        let ub = s.objective();
        let master = MasterDump {
            ub,
            model: s.master.clone(),
        };
        experiment::write_outputs(
            dir,
            &[
                ("trace.csv", s.trace.to_csv()),
                ("solution.json", serde_json::to_string_pretty(&s.solution).map_err(Failure::solver)?),
                ("master.json", serde_json::to_string(&master).map_err(Failure::solver)?),
            ],
        )
        .map_err(Failure::solver)?;
    }
    println!(
        "objective {} after {} iterations ({:?}, gap {:e})",
        s.objective(),
        s.trace.iterations(),
        s.trace.termination,
        s.trace.final_gap()
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.slot.scenario)?;
    let (slot, queue) = load_slot(&cfg, &args.slot)?;
    let opts = OracleOptions {
        v: args.v,
        table: args.table.is_some(),
        energy_cap: args.energy_cap,
        ..OracleOptions::default()
    };
    let res = enumerate_optimal(&cfg, &slot, &queue, &opts)?;
    if let (Some(p), Some(csv)) = (&args.table, res.table_csv()) {
        write_file(p, &csv)?;
    }
    log!(Level::Info, "{} assignments, {} capacity-infeasible", res.enumerated, res.skipped);
    println!("phi* {}", res.best_phi);
    Ok(())
}

fn export_qubo(args: ExportArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.master).map_err(Failure::validation)?;
    let dump: MasterDump = serde_json::from_str(&text).map_err(Failure::validation)?;
    if !dump.ub.is_finite() {
        return Err(Failure::Validation("master dump has a non-finite upper bound".into()));
    }
    let opts = CompileOptions::auto(&dump.model, dump.ub, args.frac_bits, args.penalty_factor);
    let q = compile_qubo(&dump.model, &opts).map_err(Failure::validation)?;
    q.export(&args.out).map_err(Failure::solver)?;
    println!("{} variables, {} terms", q.num_vars, q.terms.len());
    Ok(())
}

fn config(args: ConfigArgs) -> Result<(), Failure> {
    let mut cfg = match args.preset {
        Preset::Reference => NetworkConfig::reference(),
        Preset::Downsized => NetworkConfig::downsized(),
        Preset::Tiny => NetworkConfig::tiny(args.users),
    };
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    write_file(&args.out, &serde_json::to_string_pretty(&cfg).map_err(Failure::solver)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::SweepV(a) => sweep(a),
        Command::SolveSlot(a) => solve_slot(a),
        Command::Oracle(a) => oracle(a),
        Command::ExportQubo(a) => export_qubo(a),
        Command::Config(a) => config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            log!(Level::Quiet, "error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            log!(Level::Quiet, "error: {msg}");
            ExitCode::from(3)
        }
    }
}
