//! Master problem over the binaries: the epigraph of the accumulated cuts, its
//! penalty QUBO with a binary-encoded epigraph variable, and the Ising form.
//!
//! Under `z ≤ α` the product `α·z` equals `z`, so every cut is affine in the
//! binaries once that identity is applied. The QUBO uses this linearized form;
//! states with `z = 1, α = 0` are priced by the compute-needs-association
//! penalty instead.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decision::{Assignment, Choice, Family, Structure, Violation};
use crate::error::{MasterError, SolveError};
use crate::subproblem::{BendersCut, Screen};

/// Bit widths of the binary expansion of the epigraph variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuEncoding {
    /// Positive integer bits `n̄₊`.
    pub int_bits: usize,
    /// Positive fraction bits `n₊`.
    pub frac_bits: usize,
    /// Negative integer bits `n̄₋`.
    pub neg_bits: usize,
}

impl Default for MuEncoding {
    fn default() -> Self {
        MuEncoding {
            int_bits: 14,
            frac_bits: 6,
            neg_bits: 8,
        }
    }
}

impl MuEncoding {
    /// Total bit count `N = 1 + n̄₊ + n₊ + n̄₋`.
    pub fn len(&self) -> usize {
        1 + self.int_bits + self.frac_bits + self.neg_bits
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn positive_bits(&self) -> usize {
        self.int_bits + self.frac_bits + 1
    }

    /// Signed weight of bit `i`.
    pub fn weight(&self, i: usize) -> f64 {
        let p = self.positive_bits();
        if i < p {
            2f64.powi(i as i32 - self.frac_bits as i32)
        } else {
            -2f64.powi((i - p) as i32)
        }
    }

    pub fn resolution(&self) -> f64 {
        2f64.powi(-(self.frac_bits as i32))
    }

    pub fn max_value(&self) -> f64 {
        2f64.powi(self.int_bits as i32 + 1) - self.resolution()
    }

    pub fn min_value(&self) -> f64 {
        -(2f64.powi(self.neg_bits as i32) - 1.0)
    }

    /// Narrowest encoding at `frac_bits` resolution whose positive range
    /// reaches `range`.
    pub fn covering(range: f64, frac_bits: usize, neg_bits: usize) -> Self {
        let mut enc = MuEncoding {
            int_bits: 0,
            frac_bits,
            neg_bits,
        };
        while enc.max_value() < range && enc.int_bits < 40 {
            enc.int_bits += 1;
        }
        enc
    }
}

/// `μ̄(w) = Σ_{i ≤ n̄₊+n₊} w_i 2^{i−n₊} − Σ_{j ≥ n₂} w_j 2^{j−n₂}`.
pub fn encode_mu(w: &[bool], enc: &MuEncoding) -> Result<f64, MasterError> {
    if w.len() != enc.len() {
        return Err(MasterError::LengthMismatch {
            expected: enc.len(),
            got: w.len(),
        });
    }
    Ok(w.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| enc.weight(i))
        .sum())
}

/// `min μ` subject to `μ ≥ cut_k(α, z)` for every accumulated cut and the
/// structural constraints of the slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterModel {
    pub structure: Structure,
    cuts: Vec<BendersCut>,
}

impl MasterModel {
    pub fn new(structure: Structure) -> Self {
        MasterModel {
            structure,
            cuts: Vec::new(),
        }
    }

    pub fn add_cut(&mut self, cut: BendersCut) -> Result<(), MasterError> {
        if !cut.is_finite() {
            return Err(MasterError::NonFinite { cut: self.cuts.len() });
        }
        let expected = self.structure.users * self.structure.aps;
        if cut.alpha.len() != expected {
            return Err(MasterError::LengthMismatch {
                expected,
                got: cut.alpha.len(),
            });
        }
        self.cuts.push(cut);
        Ok(())
    }

    pub fn cuts(&self) -> &[BendersCut] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cuts.is_empty()
    }

    /// `max_k cut_k(a)`: the smallest feasible `μ` for these binaries.
    pub fn epigraph(&self, a: &Assignment) -> f64 {
        self.cuts
            .iter()
            .map(|c| c.evaluate(a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn choice_term(cut: &BendersCut, u: usize, c: Option<Choice>) -> f64 {
        c.map_or(0.0, |c| cut.user_term(u, c.ap, c.onboard))
    }

    /// Minimum of one cut over structurally feasible assignments.
    pub fn cut_minimum(&self, k: usize) -> f64 {
        let cut = &self.cuts[k];
        cut.constant
            + (0..self.structure.users)
                .map(|u| {
                    self.structure
                        .choices(u)
                        .into_iter()
                        .map(|c| Self::choice_term(cut, u, c))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
    }

    /// `max_k min_x cut_k(x)`, a lower bound on the master optimum.
    pub fn floor(&self) -> f64 {
        (0..self.cuts.len())
            .map(|k| self.cut_minimum(k))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest magnitude among the coefficients of the linearized cuts.
    pub fn max_coefficient(&self) -> f64 {
        let mut out = 0.0f64;
        for cut in &self.cuts {
            for i in 0..cut.alpha.len() {
                out = out.max(cut.alpha[i].abs()).max((cut.z[i] + cut.alpha_z[i]).abs());
            }
        }
        out
    }

    /// Steepest descent over single-user choice changes on the exact epigraph,
    /// restricted to assignments the screen admits. Returns the local
    /// minimum and its epigraph value.
    pub fn local_descent(&self, start: &Assignment, screen: Option<&Screen>) -> (Assignment, f64) {
        let st = &self.structure;
        let options: Vec<Vec<Option<Choice>>> = (0..st.users).map(|u| st.choices(u)).collect();
        let mut current = start.choices();
        let mut sums: Vec<f64> = self
            .cuts
            .iter()
            .map(|cut| {
                cut.constant
                    + current
                        .iter()
                        .enumerate()
                        .map(|(u, &c)| Self::choice_term(cut, u, c))
                        .sum::<f64>()
            })
            .collect();
        let value = |sums: &[f64]| sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut best = value(&sums);
        loop {
            let mut step: Option<(usize, Option<Choice>, f64)> = None;
            for u in 0..st.users {
                for &c in &options[u] {
                    if c == current[u] {
                        continue;
                    }
                    let v = self
                        .cuts
                        .iter()
                        .zip(&sums)
                        .map(|(cut, s)| s - Self::choice_term(cut, u, current[u]) + Self::choice_term(cut, u, c))
                        .fold(f64::NEG_INFINITY, f64::max);
                    let bar = step.map_or(best, |s| s.2);
                    if v < bar - 1e-12 * bar.abs().max(1.0) {
                        if let Some(screen) = screen {
                            let mut trial = current.clone();
                            trial[u] = c;
                            if !screen.admits(&Assignment::from_choices(st.aps, &trial)) {
                                continue;
                            }
                        }
                        step = Some((u, c, v));
                    }
                }
            }
            let Some((u, c, v)) = step else { break };
            for (cut, s) in self.cuts.iter().zip(sums.iter_mut()) {
                *s += Self::choice_term(cut, u, c) - Self::choice_term(cut, u, current[u]);
            }
            current[u] = c;
            best = v;
        }
        let a = Assignment::from_choices(st.aps, &current);
        let exact = self.epigraph(&a);
        (a, exact)
    }

    /// Exact master optimum by depth-first branch and bound over per-user
    /// choices. The bound adds each remaining user's cheapest term per cut.
    pub fn solve_exact(&self, screen: Option<&Screen>, cap: u128) -> Result<(Assignment, f64), SolveError> {
        if self.cuts.is_empty() {
            return Err(MasterError::NoCuts.into());
        }
        let st = &self.structure;
        let count = st.assignment_count();
        if count > cap {
            return Err(SolveError::SizeCap { count, cap });
        }
        let users = st.users;
        let k_n = self.cuts.len();
        let choices: Vec<Vec<Option<Choice>>> = (0..users).map(|u| st.choices(u)).collect();
        // terms[u][c][k]
        let terms: Vec<Vec<Vec<f64>>> = (0..users)
            .map(|u| {
                choices[u]
                    .iter()
                    .map(|&c| self.cuts.iter().map(|cut| Self::choice_term(cut, u, c)).collect())
                    .collect()
            })
            .collect();
        let mut rem = vec![vec![0.0; k_n]; users + 1];
        for u in (0..users).rev() {
            for k in 0..k_n {
                let best = terms[u].iter().map(|t| t[k]).fold(f64::INFINITY, f64::min);
                rem[u][k] = rem[u + 1][k] + best;
            }
        }
        let mut search = Search {
            terms: &terms,
            rem: &rem,
            choices: &choices,
            screen,
            aps: st.aps,
            best: f64::INFINITY,
            best_path: None,
            path: vec![0; users],
            loads: screen.map_or(Vec::new(), |s| vec![vec![0.0; st.aps]; s.resources.len()]),
        };
        let partial: Vec<f64> = self.cuts.iter().map(|c| c.constant).collect();
        search.dfs(0, &partial);
        let path = search.best_path.ok_or(SolveError::NoFeasibleAssignment)?;
        let picks: Vec<Option<Choice>> = (0..users).map(|u| choices[u][path[u]]).collect();
        let a = Assignment::from_choices(st.aps, &picks);
        let value = self.epigraph(&a);
        Ok((a, value))
    }
}

struct Search<'a> {
    terms: &'a [Vec<Vec<f64>>],
    rem: &'a [Vec<f64>],
    choices: &'a [Vec<Option<Choice>>],
    screen: Option<&'a Screen>,
    aps: usize,
    best: f64,
    best_path: Option<Vec<usize>>,
    path: Vec<usize>,
    loads: Vec<Vec<f64>>,
}

impl Search<'_> {
    fn bound(&self, u: usize, partial: &[f64]) -> f64 {
        partial
            .iter()
            .zip(&self.rem[u])
            .map(|(p, r)| p + r)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn fits(&self, u: usize, c: Option<Choice>) -> bool {
        let (Some(screen), Some(c)) = (self.screen, c) else {
            return true;
        };
        (0..screen.resources.len()).all(|r| {
            self.loads[r][c.ap] + screen.load(r, u, c.ap, c.onboard) <= screen.resources[r].cap[c.ap]
        })
    }

    fn apply(&mut self, u: usize, c: Option<Choice>, sign: f64) {
        if let (Some(screen), Some(c)) = (self.screen, c) {
            for r in 0..screen.resources.len() {
                self.loads[r][c.ap] += sign * screen.load(r, u, c.ap, c.onboard);
            }
        }
    }

    fn dfs(&mut self, u: usize, partial: &[f64]) {
        let users = self.terms.len();
        if u == users {
            let value = partial.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if value < self.best {
                self.best = value;
                self.best_path = Some(self.path.clone());
            }
            return;
        }
        let mut order: Vec<(f64, usize, Vec<f64>)> = (0..self.choices[u].len())
            .map(|ci| {
                let next: Vec<f64> = partial.iter().zip(&self.terms[u][ci]).map(|(p, t)| p + t).collect();
                (self.bound(u + 1, &next), ci, next)
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (bound, ci, next) in order {
            if bound >= self.best {
                break;
            }
            let c = self.choices[u][ci];
            if !self.fits(u, c) {
                continue;
            }
            self.apply(u, c, 1.0);
            self.path[u] = ci;
            self.dfs(u + 1, &next);
            self.apply(u, c, -1.0);
        }
        let _ = self.aps;
    }
}

/// Penalty weights per constraint family, in scaled objective units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    /// `α ≤ A` where `A = 0`.
    pub connectivity: f64,
    /// `α ≤ A` where `A = 1`. The constraint never binds for binary `α`, so
    /// any positive weight keeps the minimizer unchanged.
    pub redundant_connectivity: f64,
    pub association: f64,
    pub relay_only: f64,
    pub compute: f64,
    pub cut: f64,
}

impl Penalties {
    pub fn uniform(z: f64) -> Self {
        Penalties {
            connectivity: z,
            redundant_connectivity: z,
            association: z,
            relay_only: z,
            compute: z,
            cut: z,
        }
    }

    /// Default rule: `factor × max(range, 1)` for the structural families, where
    /// `range` is the scaled width of the bound bracket and 1 is the largest
    /// scaled coefficient; the cut family is additionally held at
    /// `2^{n₊−1}` so the optimal `μ̄` stays within one resolution step of the
    /// tightest cut.
    pub fn for_range(range: f64, enc: &MuEncoding, factor: f64) -> Self {
        let base = factor * range.max(1.0);
        Penalties {
            connectivity: base,
            redundant_connectivity: enc.resolution(),
            association: base,
            relay_only: base,
            compute: base,
            cut: base.max(2f64.powi(enc.frac_bits as i32 - 1)),
        }
    }

    pub fn get(&self, family: Family) -> f64 {
        match family {
            Family::Connectivity => self.connectivity,
            Family::Association => self.association,
            Family::RelayOnly => self.relay_only,
            Family::ComputeNeedsAssociation => self.compute,
            Family::BendersCut => self.cut,
        }
    }

    pub fn scale(&mut self, family: Family, factor: f64) {
        match family {
            Family::Connectivity => self.connectivity *= factor,
            Family::Association => self.association *= factor,
            Family::RelayOnly => self.relay_only *= factor,
            Family::ComputeNeedsAssociation => self.compute *= factor,
            Family::BendersCut => self.cut *= factor,
        }
    }

    fn validate(&self) -> Result<(), MasterError> {
        for (family, value) in [
            ("connectivity", self.connectivity),
            ("redundant_connectivity", self.redundant_connectivity),
            ("association", self.association),
            ("relay_only", self.relay_only),
            ("compute", self.compute),
            ("cut", self.cut),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(MasterError::BadPenalty { family, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileOptions {
    pub encoding: MuEncoding,
    pub penalties: Penalties,
    /// Physical value of `μ̄ = 0`.
    pub mu_offset: f64,
    /// Physical size of one scaled unit.
    pub mu_unit: f64,
    /// Largest admissible coefficient magnitude.
    pub coefficient_cap: f64,
}

impl CompileOptions {
    /// Scales cut coefficients to unit max magnitude, anchors `μ̄ = 0` just
    /// below the cut floor, and sizes the integer bits to reach `upper`.
    pub fn auto(model: &MasterModel, upper: f64, frac_bits: usize, penalty_factor: f64) -> Self {
        let unit = {
            let c = model.max_coefficient();
            if c > 0.0 && c.is_finite() {
                c
            } else {
                1.0
            }
        };
        let res = 2f64.powi(-(frac_bits as i32));
        let floor = model.floor();
        let offset = floor - res * unit;
        let range = ((upper - offset) / unit).max(res);
        let encoding = MuEncoding::covering(range, frac_bits, 0);
        CompileOptions {
            encoding,
            penalties: Penalties::for_range(range, &encoding, penalty_factor),
            mu_offset: offset,
            mu_unit: unit,
            coefficient_cap: 1e12,
        }
    }
}

/// A cut in scaled units with the product term folded into `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledCut {
    pub constant: f64,
    pub alpha: Vec<f64>,
    pub z: Vec<f64>,
}

impl ScaledCut {
    pub fn evaluate(&self, a: &Assignment) -> f64 {
        let aps = a.aps();
        let mut v = self.constant;
        for u in 0..a.users() {
            for m in 0..aps {
                if a.alpha(u, m) {
                    v += self.alpha[u * aps + m];
                }
                if a.z(u, m) {
                    v += self.z[u * aps + m];
                }
            }
        }
        v
    }
}

/// Where each group of variables lives in a compiled master QUBO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasterLayout {
    pub structure: Structure,
    pub encoding: MuEncoding,
    pub mu_offset: f64,
    pub mu_unit: f64,
    pub penalties: Penalties,
    pub alpha_start: usize,
    pub z_start: usize,
    pub w_start: usize,
    /// `(user, ap, bit)` for each connectivity slack.
    pub s1: Vec<(usize, usize, usize)>,
    /// `(start, len)` of each cut's slack register.
    pub s2: Vec<(usize, usize)>,
    pub cuts: Vec<ScaledCut>,
}

impl MasterLayout {
    fn pair(&self, u: usize, m: usize) -> usize {
        u * self.structure.aps + m
    }

    pub fn alpha_bit(&self, u: usize, m: usize) -> usize {
        self.alpha_start + self.pair(u, m)
    }

    pub fn z_bit(&self, u: usize, m: usize) -> usize {
        self.z_start + self.pair(u, m)
    }

    pub fn assignment(&self, bits: &[bool]) -> Assignment {
        let st = &self.structure;
        let mut a = Assignment::empty(st.users, st.aps);
        for u in 0..st.users {
            for m in 0..st.aps {
                a.set(u, m, bits[self.alpha_bit(u, m)], bits[self.z_bit(u, m)]);
            }
        }
        a
    }

    pub fn mu_scaled(&self, bits: &[bool]) -> f64 {
        (0..self.encoding.len())
            .filter(|&i| bits[self.w_start + i])
            .map(|i| self.encoding.weight(i))
            .sum()
    }

    fn slack(&self, bits: &[bool], k: usize) -> f64 {
        let (start, len) = self.s2[k];
        (0..len)
            .filter(|&i| bits[start + i])
            .map(|i| 2f64.powi(i as i32 - self.encoding.frac_bits as i32))
            .sum()
    }

    pub fn to_physical(&self, scaled: f64) -> f64 {
        self.mu_offset + self.mu_unit * scaled
    }
}

/// Quadratic unconstrained binary model `E(x) = Σ_{i≤j} Q_ij x_i x_j + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuboModel {
    pub num_vars: usize,
    /// Upper-triangular terms `(i, j, Q_ij)` with `i ≤ j`, sorted, no zeros.
    pub terms: Vec<(usize, usize, f64)>,
    pub offset: f64,
    /// Variable name per bit index.
    pub registry: Vec<String>,
    pub layout: Option<MasterLayout>,
}

/// Adjacent registry file content of an exported QUBO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuboRegistry {
    pub names: Vec<String>,
    pub layout: Option<MasterLayout>,
}

impl QuboModel {
    pub fn from_terms(num_vars: usize, terms: impl IntoIterator<Item = ((usize, usize), f64)>, offset: f64) -> Self {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for ((i, j), c) in terms {
            let key = if i <= j { (i, j) } else { (j, i) };
            *map.entry(key).or_insert(0.0) += c;
        }
        QuboModel {
            num_vars,
            terms: map.into_iter().filter(|(_, c)| *c != 0.0).map(|((i, j), c)| (i, j, c)).collect(),
            offset,
            registry: (0..num_vars).map(|i| format!("x[{i}]")).collect(),
            layout: None,
        }
    }

    pub fn energy(&self, bits: &[bool]) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .filter(|(i, j, _)| bits[*i] && bits[*j])
                .map(|(_, _, c)| c)
                .sum::<f64>()
    }

    pub fn coefficient_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.terms.iter().map(|&(i, j, c)| ((i, j), c)).collect()
    }

    pub fn max_coefficient(&self) -> f64 {
        self.terms.iter().fold(0.0f64, |acc, t| acc.max(t.2.abs()))
    }

    /// Text form: `p qubo <num_vars> <num_terms> <offset>` then `i j coeff`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "p qubo {} {} {}", self.num_vars, self.terms.len(), self.offset);
        for (i, j, c) in &self.terms {
            let _ = writeln!(out, "{i} {j} {c}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MasterError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('c'));
        let fmt = |line: usize, reason: &str| MasterError::Format {
            line,
            reason: reason.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| fmt(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "p" || fields[1] != "qubo" {
            return Err(fmt(hl, "expected `p qubo <num_vars> <num_terms> <offset>`"));
        }
        let num_vars: usize = fields[2].parse().map_err(|_| fmt(hl, "bad variable count"))?;
        let num_terms: usize = fields[3].parse().map_err(|_| fmt(hl, "bad term count"))?;
        let offset: f64 = fields[4].parse().map_err(|_| fmt(hl, "bad offset"))?;
        let mut terms = Vec::with_capacity(num_terms);
        let mut last: Option<(usize, usize)> = None;
        for (n, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(fmt(n, "expected `i j coeff`"));
            }
            let i: usize = f[0].parse().map_err(|_| fmt(n, "bad index"))?;
            let j: usize = f[1].parse().map_err(|_| fmt(n, "bad index"))?;
            let c: f64 = f[2].parse().map_err(|_| fmt(n, "bad coefficient"))?;
            if i > j || j >= num_vars {
                return Err(fmt(n, "index out of range or below the diagonal"));
            }
            if last.is_some_and(|p| p >= (i, j)) {
                return Err(fmt(n, "terms not in strictly increasing order"));
            }
            last = Some((i, j));
            terms.push((i, j, c));
        }
        if terms.len() != num_terms {
            return Err(fmt(0, &format!("header declares {num_terms} terms, found {}", terms.len())));
        }
        Ok(QuboModel {
            num_vars,
            terms,
            offset,
            registry: (0..num_vars).map(|i| format!("x[{i}]")).collect(),
            layout: None,
        })
    }

    pub fn registry_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".registry.json");
        PathBuf::from(p)
    }

    /// Writes the text form to `path` and the registry next to it.
    pub fn export(&self, path: &Path) -> Result<(), MasterError> {
        std::fs::write(path, self.to_text())?;
        let reg = QuboRegistry {
            names: self.registry.clone(),
            layout: self.layout.clone(),
        };
        std::fs::write(Self::registry_path(path), serde_json::to_string_pretty(&reg)?)?;
        Ok(())
    }

    /// Reads a text QUBO and, when present, its adjacent registry.
    pub fn import(path: &Path) -> Result<Self, MasterError> {
        let mut q = Self::from_text(&std::fs::read_to_string(path)?)?;
        let reg_path = Self::registry_path(path);
        if reg_path.exists() {
            let reg: QuboRegistry = serde_json::from_str(&std::fs::read_to_string(reg_path)?)?;
            if reg.names.len() != q.num_vars {
                return Err(MasterError::LengthMismatch {
                    expected: q.num_vars,
                    got: reg.names.len(),
                });
            }
            q.registry = reg.names;
            q.layout = reg.layout;
        }
        Ok(q)
    }
}

#[derive(Default)]
struct Builder {
    terms: HashMap<(usize, usize), f64>,
    offset: f64,
}

impl Builder {
    fn add(&mut self, i: usize, j: usize, c: f64) {
        if c != 0.0 {
            let key = if i <= j { (i, j) } else { (j, i) };
            *self.terms.entry(key).or_insert(0.0) += c;
        }
    }

    /// Adds `ζ (c0 + Σ t_i x_i)²` using `x² = x`. Indices must be distinct.
    fn add_square(&mut self, zeta: f64, lin: &[(usize, f64)], c0: f64) {
        self.offset += zeta * c0 * c0;
        for (a, &(i, ti)) in lin.iter().enumerate() {
            self.add(i, i, zeta * (ti * ti + 2.0 * c0 * ti));
            for &(j, tj) in &lin[a + 1..] {
                self.add(i, j, 2.0 * zeta * ti * tj);
            }
        }
    }
}

/// Compiles the master into a penalty QUBO over `(α, z, w, s)`.
pub fn compile_qubo(model: &MasterModel, opts: &CompileOptions) -> Result<QuboModel, MasterError> {
    if model.is_empty() {
        return Err(MasterError::NoCuts);
    }
    opts.penalties.validate()?;
    if !(opts.mu_unit > 0.0 && opts.mu_unit.is_finite() && opts.mu_offset.is_finite()) {
        return Err(MasterError::NonFinite { cut: 0 });
    }
    let st = &model.structure;
    let (users, aps) = (st.users, st.aps);
    let pairs = users * aps;
    let enc = opts.encoding;
    let pen = opts.penalties;
    let res = enc.resolution();

    let cuts: Vec<ScaledCut> = model
        .cuts()
        .iter()
        .map(|c| ScaledCut {
            constant: (c.constant - opts.mu_offset) / opts.mu_unit,
            alpha: c.alpha.iter().map(|a| a / opts.mu_unit).collect(),
            z: (0..pairs)
                .map(|i| if st.relay_only[i % aps] { 0.0 } else { (c.z[i] + c.alpha_z[i]) / opts.mu_unit })
                .collect(),
        })
        .collect();
    for (k, c) in cuts.iter().enumerate() {
        if !c.constant.is_finite() || c.alpha.iter().chain(&c.z).any(|x| !x.is_finite()) {
            return Err(MasterError::NonFinite { cut: k });
        }
    }

    let mut registry = Vec::new();
    let alpha_start = 0;
    for u in 0..users {
        for m in 0..aps {
            registry.push(format!("alpha[{u},{m}]"));
        }
    }
    let z_start = registry.len();
    for u in 0..users {
        for m in 0..aps {
            registry.push(format!("z[{u},{m}]"));
        }
    }
    let w_start = registry.len();
    for i in 0..enc.len() {
        registry.push(format!("w[{i}]"));
    }
    let mut s1 = Vec::new();
    for u in 0..users {
        for m in 0..aps {
            if st.available(u, m) {
                s1.push((u, m, registry.len()));
                registry.push(format!("s1[{u},{m}]"));
            }
        }
    }
    let mut s2 = Vec::new();
    for (k, cut) in cuts.iter().enumerate() {
        // slack reaches from the cut's minimum to the top of the μ range
        let min_cut = cut.constant
            + (0..users)
                .map(|u| {
                    st.choices(u)
                        .into_iter()
                        .map(|c| {
                            c.map_or(0.0, |c| {
                                let i = u * aps + c.ap;
                                cut.alpha[i] + if c.onboard { cut.z[i] } else { 0.0 }
                            })
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>();
        let span = enc.max_value() - min_cut;
        let len = if span <= 0.0 {
            0
        } else {
            (span / res + 1.0).log2().ceil().max(0.0) as usize
        };
        s2.push((registry.len(), len));
        for i in 0..len {
            registry.push(format!("s2[{k},{i}]"));
        }
    }
    let layout = MasterLayout {
        structure: st.clone(),
        encoding: enc,
        mu_offset: opts.mu_offset,
        mu_unit: opts.mu_unit,
        penalties: pen,
        alpha_start,
        z_start,
        w_start,
        s1,
        s2,
        cuts,
    };

    let mut b = Builder::default();
    // objective μ̄(w)
    for i in 0..enc.len() {
        b.add(w_start + i, w_start + i, enc.weight(i));
    }
    // α ≤ A
    let mut s1_iter = layout.s1.iter().peekable();
    for u in 0..users {
        for m in 0..aps {
            let a = layout.alpha_bit(u, m);
            if st.available(u, m) {
                let &(_, _, s) = s1_iter.next().expect("slack per available pair");
                b.add_square(pen.redundant_connectivity, &[(a, 1.0), (s, 1.0)], -1.0);
            } else {
                b.add_square(pen.connectivity, &[(a, 1.0)], 0.0);
            }
        }
    }
    // Σ_m α = 1 for every user with an available AP
    for u in 0..users {
        if st.unserved.contains(&u) {
            continue;
        }
        let lin: Vec<(usize, f64)> = (0..aps).map(|m| (layout.alpha_bit(u, m), 1.0)).collect();
        b.add_square(pen.association, &lin, -1.0);
    }
    // z = 0 on relay-only tiers; (z − zα)² = z − zα elsewhere
    for u in 0..users {
        for m in 0..aps {
            let z = layout.z_bit(u, m);
            if st.relay_only[m] {
                b.add(z, z, pen.relay_only);
            } else {
                b.add(z, z, pen.compute);
                b.add(z, layout.alpha_bit(u, m), -pen.compute);
            }
        }
    }
    // cuts: ζ (L_k(α, z) − μ̄(w) + s_k)²
    for (k, cut) in layout.cuts.iter().enumerate() {
        let mut lin = Vec::new();
        for i in 0..pairs {
            if cut.alpha[i] != 0.0 {
                lin.push((alpha_start + i, cut.alpha[i]));
            }
            if cut.z[i] != 0.0 {
                lin.push((z_start + i, cut.z[i]));
            }
        }
        for i in 0..enc.len() {
            lin.push((w_start + i, -enc.weight(i)));
        }
        let (start, len) = layout.s2[k];
        for i in 0..len {
            lin.push((start + i, 2f64.powi(i as i32 - enc.frac_bits as i32)));
        }
        b.add_square(pen.cut, &lin, cut.constant);
    }

    let magnitude = b.terms.values().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if !magnitude.is_finite() || !b.offset.is_finite() {
        return Err(MasterError::NonFinite { cut: 0 });
    }
    if magnitude > opts.coefficient_cap {
        return Err(MasterError::PenaltyOverflow {
            magnitude,
            cap: opts.coefficient_cap,
        });
    }
    let mut q = QuboModel::from_terms(registry.len(), b.terms, b.offset);
    q.registry = registry;
    q.layout = Some(layout);
    Ok(q)
}

/// The penalized master objective evaluated term by term from its
/// definition, without the compiled coefficient matrix.
pub fn penalized_objective(q: &QuboModel, bits: &[bool]) -> Result<f64, MasterError> {
    let layout = q.layout.as_ref().ok_or(MasterError::NoCuts)?;
    if bits.len() != q.num_vars {
        return Err(MasterError::LengthMismatch {
            expected: q.num_vars,
            got: bits.len(),
        });
    }
    let st = &layout.structure;
    let pen = &layout.penalties;
    let x = |i: usize| -> f64 { if bits[i] { 1.0 } else { 0.0 } };
    let mu = layout.mu_scaled(bits);
    let mut e = mu;
    let mut s1 = layout.s1.iter();
    for u in 0..st.users {
        for m in 0..st.aps {
            let a = x(layout.alpha_bit(u, m));
            if st.available(u, m) {
                let s = x(s1.next().unwrap().2);
                e += pen.redundant_connectivity * (a - 1.0 + s).powi(2);
            } else {
                e += pen.connectivity * a * a;
            }
        }
    }
    for u in 0..st.users {
        if !st.unserved.contains(&u) {
            let sum: f64 = (0..st.aps).map(|m| x(layout.alpha_bit(u, m))).sum();
            e += pen.association * (sum - 1.0).powi(2);
        }
    }
    for u in 0..st.users {
        for m in 0..st.aps {
            let z = x(layout.z_bit(u, m));
            if st.relay_only[m] {
                e += pen.relay_only * z * z;
            } else {
                let a = x(layout.alpha_bit(u, m));
                e += pen.compute * (z - z * a).powi(2);
            }
        }
    }
    for (k, cut) in layout.cuts.iter().enumerate() {
        let mut l = cut.constant;
        for u in 0..st.users {
            for m in 0..st.aps {
                let i = u * st.aps + m;
                l += cut.alpha[i] * x(layout.alpha_bit(u, m)) + cut.z[i] * x(layout.z_bit(u, m));
            }
        }
        e += pen.cut * (l - mu + layout.slack(bits, k)).powi(2);
    }
    Ok(e)
}

/// A sample read back as binaries, epigraph value and constraint report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSample {
    pub assignment: Assignment,
    /// `μ̄(w)` in scaled units.
    pub mu_scaled: f64,
    /// `μ̄(w)` in objective units.
    pub mu_bar: f64,
    /// Structural violations of `(α, z)` followed by cuts that `μ̄` undershoots
    /// by more than one resolution step.
    pub violations: Vec<Violation>,
}

impl DecodedSample {
    /// True when the binaries satisfy every structural family. The epigraph
    /// variable can always be lifted to the largest cut, so cut undershoot
    /// does not disqualify a sample.
    pub fn is_feasible(&self) -> bool {
        self.violations.iter().all(|v| v.family == Family::BendersCut)
    }
}

pub fn decode_sample(q: &QuboModel, bits: &[bool]) -> Result<DecodedSample, MasterError> {
    let layout = q.layout.as_ref().ok_or(MasterError::NoCuts)?;
    if bits.len() != q.num_vars {
        return Err(MasterError::LengthMismatch {
            expected: q.num_vars,
            got: bits.len(),
        });
    }
    let assignment = layout.assignment(bits);
    let mu_scaled = layout.mu_scaled(bits);
    let mut violations = layout.structure.violations(&assignment);
    let tol = layout.encoding.resolution();
    for (k, cut) in layout.cuts.iter().enumerate() {
        if mu_scaled < cut.evaluate(&assignment) - tol {
            violations.push(Violation {
                family: Family::BendersCut,
                user: None,
                ap: None,
                cut: Some(k),
            });
        }
    }
    Ok(DecodedSample {
        assignment,
        mu_scaled,
        mu_bar: layout.to_physical(mu_scaled),
        violations,
    })
}

/// `E(s) = Σ h_i s_i + Σ_{i<j} J_ij s_i s_j + c` over spins `s ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    pub h: Vec<f64>,
    pub j: Vec<(usize, usize, f64)>,
    pub offset: f64,
}

impl IsingModel {
    pub fn energy(&self, spins: &[i8]) -> f64 {
        let s = |i: usize| spins[i] as f64;
        self.offset
            + self.h.iter().enumerate().map(|(i, h)| h * s(i)).sum::<f64>()
            + self.j.iter().map(|&(i, k, c)| c * s(i) * s(k)).sum::<f64>()
    }
}

/// Substitutes `x = (s + 1)/2`.
pub fn qubo_to_ising(q: &QuboModel) -> IsingModel {
    let mut h = vec![0.0; q.num_vars];
    let mut j = BTreeMap::new();
    let mut offset = q.offset;
    for &(a, b, c) in &q.terms {
        if a == b {
            h[a] += c / 2.0;
            offset += c / 2.0;
        } else {
            *j.entry((a, b)).or_insert(0.0) += c / 4.0;
            h[a] += c / 4.0;
            h[b] += c / 4.0;
            offset += c / 4.0;
        }
    }
    IsingModel {
        h,
        j: j.into_iter().map(|((a, b), c)| (a, b, c)).collect(),
        offset,
    }
}

/// Substitutes `s = 2x − 1`.
pub fn ising_to_qubo(m: &IsingModel) -> QuboModel {
    let mut terms = Vec::new();
    let mut offset = m.offset;
    for (i, &h) in m.h.iter().enumerate() {
        terms.push(((i, i), 2.0 * h));
        offset -= h;
    }
    for &(a, b, c) in &m.j {
        terms.push(((a, b), 4.0 * c));
        terms.push(((a, a), -2.0 * c));
        terms.push(((b, b), -2.0 * c));
        offset += c;
    }
    QuboModel::from_terms(m.h.len(), terms, offset)
}
