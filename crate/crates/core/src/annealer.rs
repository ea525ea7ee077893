//! Simulated-annealing sampler for QUBO models and the sampler interface the
//! orchestrator talks to.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{Assignment, Choice};
use crate::error::{MasterError, SolveError};
use crate::master::{decode_sample, QuboModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    pub num_reads: usize,
    pub sweeps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub seed: u64,
}

impl Default for AnnealParams {
    fn default() -> Self {
        AnnealParams {
            num_reads: 200,
            sweeps: 2000,
            beta_start: 0.1,
            beta_end: 10.0,
            seed: 0,
        }
    }
}

impl AnnealParams {
    /// Many short anneals. Inside the decomposition loop every decoded sample
    /// is polished on the exact epigraph afterwards, so diversity of starting
    /// points matters more than depth of each anneal.
    pub fn quick() -> Self {
        AnnealParams {
            num_reads: 64,
            sweeps: 10,
            ..AnnealParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), MasterError> {
        let bad = |reason: String| MasterError::Sampler(reason);
        if self.num_reads == 0 {
            return Err(bad("num_reads must be at least 1".into()));
        }
        if self.sweeps == 0 {
            return Err(bad("sweeps must be at least 1".into()));
        }
        if !(self.beta_start > 0.0 && self.beta_start < self.beta_end && self.beta_end.is_finite()) {
            return Err(bad(format!(
                "need 0 < beta_start < beta_end, got {} and {}",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    /// Geometric inverse-temperature ladder, one entry per sweep.
    pub fn schedule(&self) -> Vec<f64> {
        if self.sweeps == 1 {
            return vec![self.beta_end];
        }
        let ratio = (self.beta_end / self.beta_start).powf(1.0 / (self.sweeps - 1) as f64);
        (0..self.sweeps)
            .map(|s| self.beta_start * ratio.powi(s as i32))
            .collect()
    }

    /// Rescales the ladder to the model's energy scale: the hot end accepts the
    /// largest possible single flip with probability ½, the cold end accepts
    /// the smallest nonzero coefficient with probability 1%.
    pub fn scaled_to(&self, q: &QuboModel) -> Self {
        let mut reach = vec![0.0f64; q.num_vars];
        let mut smallest = f64::INFINITY;
        for &(i, j, c) in &q.terms {
            reach[i] += c.abs();
            if i != j {
                reach[j] += c.abs();
            }
            smallest = smallest.min(c.abs());
        }
        let largest = reach.iter().copied().fold(0.0, f64::max);
        if !(largest > 0.0 && smallest.is_finite()) {
            return self.clone();
        }
        let beta_start = std::f64::consts::LN_2 / largest;
        let beta_end = (100f64.ln() / smallest).max(beta_start * 10.0);
        AnnealParams {
            beta_start,
            beta_end,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub bits: Vec<bool>,
    pub energy: f64,
    pub read: usize,
}

/// Anything that returns low-energy bitstrings of a QUBO, sorted ascending by
/// energy and then by read index.
pub trait Sampler: Sync {
    fn sample(&self, q: &QuboModel, seed: u64) -> Result<Vec<Sample>, MasterError>;
}

/// Sparse adjacency form: diagonal `h` and symmetric neighbour lists.
struct Adjacency {
    h: Vec<f64>,
    nbrs: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    fn new(q: &QuboModel) -> Self {
        let mut h = vec![0.0; q.num_vars];
        let mut nbrs = vec![Vec::new(); q.num_vars];
        for &(i, j, c) in &q.terms {
            if i == j {
                h[i] += c;
            } else {
                nbrs[i].push((j, c));
                nbrs[j].push((i, c));
            }
        }
        Adjacency { h, nbrs }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimulatedAnnealer {
    pub params: AnnealParams,
}

impl SimulatedAnnealer {
    pub fn new(params: AnnealParams) -> Self {
        SimulatedAnnealer { params }
    }

    fn read(&self, adj: &Adjacency, schedule: &[f64], seed: u64, read: usize) -> Vec<bool> {
        let n = adj.h.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(read as u64);
        let mut x: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        // field[i] = ΔE of switching x_i from 0 to 1 given the others
        let mut field = adj.h.clone();
        for i in 0..n {
            if x[i] {
                for &(j, c) in &adj.nbrs[i] {
                    field[j] += c;
                }
            }
        }
        let flip = |x: &mut Vec<bool>, field: &mut Vec<f64>, i: usize| {
            x[i] = !x[i];
            let sign = if x[i] { 1.0 } else { -1.0 };
            for &(j, c) in &adj.nbrs[i] {
                field[j] += sign * c;
            }
        };
        for &beta in schedule {
            for i in 0..n {
                let delta = if x[i] { -field[i] } else { field[i] };
                if delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp() {
                    flip(&mut x, &mut field, i);
                }
            }
        }
        // zero-temperature quench to the nearest single-flip local minimum
        loop {
            let mut moved = false;
            for i in 0..n {
                let delta = if x[i] { -field[i] } else { field[i] };
                if delta < 0.0 {
                    flip(&mut x, &mut field, i);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        x
    }
}

fn sort_samples(samples: &mut [Sample]) {
    samples.sort_by(|a, b| a.energy.total_cmp(&b.energy).then(a.read.cmp(&b.read)));
}

impl Sampler for SimulatedAnnealer {
    fn sample(&self, q: &QuboModel, seed: u64) -> Result<Vec<Sample>, MasterError> {
        self.params.validate()?;
        if q.num_vars == 0 {
            return Err(MasterError::Sampler("empty QUBO".into()));
        }
        let adj = Adjacency::new(q);
        let schedule = self.params.schedule();
        let mut samples: Vec<Sample> = (0..self.params.num_reads)
            .into_par_iter()
            .map(|read| {
                let bits = self.read(&adj, &schedule, seed, read);
                // exact re-evaluation; incremental fields are never reported
                let energy = q.energy(&bits);
                Sample { bits, energy, read }
            })
            .collect();
        sort_samples(&mut samples);
        Ok(samples)
    }
}

/// Ground-truth backend: enumerates every bitstring and returns the `keep`
/// lowest, with the state code as read index.
#[derive(Debug, Clone)]
pub struct ExhaustiveSampler {
    pub keep: usize,
    pub max_vars: usize,
}

impl Default for ExhaustiveSampler {
    fn default() -> Self {
        ExhaustiveSampler { keep: 16, max_vars: 24 }
    }
}

impl Sampler for ExhaustiveSampler {
    fn sample(&self, q: &QuboModel, _seed: u64) -> Result<Vec<Sample>, MasterError> {
        let n = q.num_vars;
        if n == 0 || n > self.max_vars {
            return Err(MasterError::Sampler(format!(
                "exhaustive sampler handles 1..={} variables, got {n}",
                self.max_vars
            )));
        }
        let adj = Adjacency::new(q);
        // Gray-code walk with incremental fields
        let mut x = vec![false; n];
        let mut field = adj.h.clone();
        let mut energy = q.offset;
        let mut best: Vec<(f64, usize)> = vec![(energy, 0)];
        for k in 1usize..(1 << n) {
            let i = k.trailing_zeros() as usize;
            let delta = if x[i] { -field[i] } else { field[i] };
            energy += delta;
            x[i] = !x[i];
            let sign = if x[i] { 1.0 } else { -1.0 };
            for &(j, c) in &adj.nbrs[i] {
                field[j] += sign * c;
            }
            let code = k ^ (k >> 1);
            best.push((energy, code));
            if best.len() > 4 * self.keep.max(1) {
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(self.keep.max(1));
            }
        }
        let mut samples: Vec<Sample> = best
            .into_iter()
            .map(|(_, code)| {
                let bits: Vec<bool> = (0..n).map(|i| code >> i & 1 == 1).collect();
                Sample {
                    energy: q.energy(&bits),
                    bits,
                    read: code,
                }
            })
            .collect();
        sort_samples(&mut samples);
        samples.truncate(self.keep.max(1));
        Ok(samples)
    }
}

/// A distinct feasible decode from a sample pool.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasiblePick {
    pub assignment: Assignment,
    pub energy: f64,
    /// Decoded `μ̄` in objective units.
    pub mu_bar: f64,
    /// Number of samples in the pool that decode to this assignment.
    pub reads: usize,
}

/// Decodes samples in energy order, keeps feasible ones accepted by `admit`,
/// deduplicates by `(α, z)` and stops at `rho`.
pub fn feasible_pool(
    samples: &[Sample],
    q: &QuboModel,
    rho: usize,
    admit: impl Fn(&Assignment) -> bool,
) -> Result<Vec<FeasiblePick>, SolveError> {
    let mut picks: Vec<FeasiblePick> = Vec::new();
    let mut index: HashMap<Vec<Option<Choice>>, usize> = HashMap::new();
    for s in samples {
        let d = decode_sample(q, &s.bits)?;
        if !d.is_feasible() || !admit(&d.assignment) {
            continue;
        }
        let key = d.assignment.choices();
        match index.get(&key) {
            Some(&k) => picks[k].reads += 1,
            None => {
                index.insert(key, picks.len());
                picks.push(FeasiblePick {
                    assignment: d.assignment,
                    energy: s.energy,
                    mu_bar: d.mu_bar,
                    reads: 1,
                });
            }
        }
    }
    picks.truncate(rho);
    Ok(picks)
}

/// The up-to-`rho` lowest-energy distinct feasible assignments.
pub fn top_rho_feasible(samples: &[Sample], q: &QuboModel, rho: usize) -> Result<Vec<Assignment>, SolveError> {
    let picks = feasible_pool(samples, q, rho, |_| true)?;
    if picks.is_empty() {
        return Err(SolveError::NoFeasibleSample { escalations: 0 });
    }
    Ok(picks.into_iter().map(|p| p.assignment).collect())
}

pub fn write_samples_jsonl(samples: &[Sample], mut out: impl Write) -> Result<(), MasterError> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_samples_jsonl(input: impl BufRead) -> Result<Vec<Sample>, MasterError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Request body a hardware annealing service would receive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    /// QUBO in the text export format.
    pub qubo: String,
    pub num_reads: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub samples: Vec<Sample>,
}

/// Placeholder for a network-backed annealer. It builds the request but has
/// no transport, so sampling always fails.
#[derive(Debug, Clone)]
pub struct RemoteSampler {
    pub endpoint: String,
    pub num_reads: usize,
}

impl RemoteSampler {
    pub fn request(&self, q: &QuboModel, seed: u64) -> RemoteRequest {
        RemoteRequest {
            qubo: q.to_text(),
            num_reads: self.num_reads,
            seed,
        }
    }
}

impl Sampler for RemoteSampler {
    fn sample(&self, _q: &QuboModel, _seed: u64) -> Result<Vec<Sample>, MasterError> {
        Err(MasterError::Sampler(format!(
            "no transport configured for remote endpoint `{}`",
            self.endpoint
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SimulatedAnnealer {
        SimulatedAnnealer::new(AnnealParams {
            num_reads: 20,
            sweeps: 200,
            ..AnnealParams::default()
        })
    }

    #[test]
    fn single_variable_minimum() {
        let q = QuboModel::from_terms(1, [((0, 0), -1.0)], 0.0);
        let s = quick().sample(&q, 1).unwrap();
        assert_eq!(s[0].bits, vec![true]);
        assert_eq!(s[0].energy, -1.0);
    }

    #[test]
    fn two_variable_coupled_minimum() {
        let q = QuboModel::from_terms(2, [((0, 0), 1.0), ((1, 1), 1.0), ((0, 1), -3.0)], 0.0);
        let s = quick().sample(&q, 2).unwrap();
        assert_eq!(s[0].bits, vec![true, true]);
        assert_eq!(s[0].energy, -1.0);
        let ex = ExhaustiveSampler::default().sample(&q, 0).unwrap();
        assert_eq!(ex[0].bits, vec![true, true]);
        assert_eq!(ex.len(), 4);
    }

    #[test]
    fn output_is_sorted_and_deterministic() {
        let q = QuboModel::from_terms(3, [((0, 1), 2.0), ((1, 2), -1.0), ((0, 0), -0.5)], 1.0);
        let a = quick().sample(&q, 7).unwrap();
        let b = quick().sample(&q, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].energy < w[1].energy
            || (w[0].energy == w[1].energy && w[0].read < w[1].read)));
        for s in &a {
            assert!((s.energy - q.energy(&s.bits)).abs() <= 1e-9);
        }
    }

    #[test]
    fn schedule_is_geometric() {
        let p = AnnealParams {
            sweeps: 3,
            beta_start: 0.1,
            beta_end: 10.0,
            ..AnnealParams::default()
        };
        let s = p.schedule();
        assert_eq!(s.len(), 3);
        assert!((s[1] - 1.0).abs() < 1e-12 && (s[2] - 10.0).abs() < 1e-12);
        let bad = AnnealParams {
            beta_start: 2.0,
            beta_end: 1.0,
            ..p
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let samples = vec![
            Sample {
                bits: vec![true, false],
                energy: -0.25,
                read: 3,
            },
            Sample {
                bits: vec![false, false],
                energy: 1e-17,
                read: 0,
            },
        ];
        let mut buf = Vec::new();
        write_samples_jsonl(&samples, &mut buf).unwrap();
        assert_eq!(read_samples_jsonl(buf.as_slice()).unwrap(), samples);
    }

    #[test]
    fn remote_stub_refuses() {
        let q = QuboModel::from_terms(1, [((0, 0), -1.0)], 0.0);
        let r = RemoteSampler {
            endpoint: "qa://example".into(),
            num_reads: 10,
        };
        assert_eq!(r.request(&q, 4).num_reads, 10);
        assert!(matches!(r.sample(&q, 4), Err(MasterError::Sampler(_))));
    }
}
