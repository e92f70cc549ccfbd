//! Convex decompositions of scaled fractional points into integral solutions.
//!
//! A fractional point is described by targets `t_e ≥ 0` over items (users on
//! one channel, or (user, channel count) pairs). Column generation finds
//! feasible integral columns and weights `λ` with `Σ λ_l g_l ≥ t` and
//! `Σ λ ≤ 1`; if the oracle cannot get `Σ λ` down to one the targets are
//! halved (the scaling `α` doubled) until it fits. Dominance is then turned
//! into equality by splitting entries and dropping items from one copy, the
//! remaining mass goes to the empty solution and the support is pruned.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exhaustive::{brute_force_optimum, BRUTE_FORCE_K_LIMIT, BRUTE_FORCE_N_LIMIT};
use crate::graph::{max_weight_independent, ConflictGraph, Ordering};
use crate::greedy::local_ratio_greedy;
use crate::instance::{Allocation, Instance};
use crate::lp::{build_count_lp, channel_column_violation, solve_packing_lp, CountSolution, PackingLp};
use crate::rng::{phase, SeedTree};
use crate::rounding::round_symmetric;
use crate::valuations::{SymmetricValuation, Valuation};

/// Largest number of doublings of `α` before giving up.
pub const MAX_DOUBLINGS: u32 = 10;
/// Slack on `Σ λ ≤ 1` before a doubling is taken.
const TOTAL_SLACK: f64 = 1e-9;
/// Pricing threshold: a column is added when its weight exceeds this.
const PRICE_SLACK: f64 = 1e-9;
const MAX_ITERATIONS: usize = 2000;
pub const SUM_TOL: f64 = 1e-9;
pub const MARGINAL_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entry<T> {
    pub lambda: f64,
    pub solution: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition<T> {
    pub entries: Vec<Entry<T>>,
    pub alpha_start: f64,
    pub alpha_achieved: f64,
    pub doublings: u32,
    pub columns_generated: usize,
}

impl<T> Decomposition<T> {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.lambda).sum()
    }

    /// Entry whose cumulative weight interval contains `u ∈ [0, 1)`.
    pub fn select(&self, u: f64) -> &T {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.lambda;
            if u < acc {
                return &e.solution;
            }
        }
        &self.entries.last().expect("decompositions are never empty").solution
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &T {
        self.select(rng.gen())
    }
}

/// Source of feasible columns for given item prices.
pub trait ColumnOracle {
    /// Feasible item sets; the best-priced one is used.
    fn columns(&mut self, prices: &[f64]) -> Result<Vec<Vec<usize>>>;
}

struct Master {
    /// Items with positive target, in increasing id.
    active: Vec<usize>,
    slot: BTreeMap<usize, usize>,
    columns: Vec<Vec<usize>>,
}

impl Master {
    fn restrict(&self, set: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = set.iter().copied().filter(|e| self.slot.contains_key(e)).collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    fn lp(&self, targets: &[f64]) -> PackingLp {
        let m = self.active.len();
        let mut lp = PackingLp::new(self.active.iter().map(|&e| targets[e]).collect());
        for (c, col) in self.columns.iter().enumerate() {
            let mut row = vec![0.0; m];
            for e in col {
                row[self.slot[e]] = 1.0;
            }
            lp.add_row(format!("col{c}"), row, 1.0);
        }
        lp
    }
}

/// Weights `λ` per column with `Σ λ_l g_l ≥ targets`.
fn column_generation(targets: &[f64], oracle: &mut dyn ColumnOracle) -> Result<(Vec<(f64, Vec<usize>)>, usize)> {
    let active: Vec<usize> = (0..targets.len()).filter(|&e| targets[e] > 0.0).collect();
    if active.is_empty() {
        return Ok((Vec::new(), 0));
    }
    let slot = active.iter().enumerate().map(|(s, &e)| (e, s)).collect();
    let mut master = Master {
        columns: active.iter().map(|&e| vec![e]).collect(),
        active,
        slot,
    };
    let mut generated = 0usize;
    for _ in 0..MAX_ITERATIONS {
        let sol = solve_packing_lp(&master.lp(targets), 1e-10)?;
        let mut prices = vec![0.0; targets.len()];
        for (s, &e) in master.active.iter().enumerate() {
            prices[e] = sol.x[s];
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        for col in oracle.columns(&prices)? {
            let col = master.restrict(&col);
            let value: f64 = col.iter().map(|&e| prices[e]).sum();
            let better = match &best {
                None => true,
                Some((bv, bc)) => value > *bv || (value == *bv && col < *bc),
            };
            if better {
                best = Some((value, col));
            }
        }
        match best {
            Some((value, col)) if value > 1.0 + PRICE_SLACK && !master.columns.contains(&col) => {
                master.columns.push(col);
                generated += 1;
            }
            _ => {
                let entries = master
                    .columns
                    .iter()
                    .zip(&sol.y)
                    .filter(|(_, &l)| l > 0.0)
                    .map(|(c, &l)| (l, c.clone()))
                    .collect();
                return Ok((entries, generated));
            }
        }
    }
    Err(Error::Decomposition(format!(
        "column generation did not settle within {MAX_ITERATIONS} iterations"
    )))
}

/// Everything after column generation: doubling, trimming to equality,
/// padding with the empty solution, merging and pruning.
fn finish<T: Clone>(
    mut entries: Vec<(f64, Vec<usize>, T)>,
    targets: &[f64],
    remove: impl Fn(&mut T, usize),
    empty: T,
) -> Result<(Vec<(f64, Vec<usize>, T)>, f64, u32)> {
    let mut targets = targets.to_vec();
    let total: f64 = entries.iter().map(|e| e.0).sum();
    let mut doublings = 0u32;
    let mut scale = 1.0;
    while total / scale > 1.0 + TOTAL_SLACK {
        doublings += 1;
        scale *= 2.0;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Decomposition(format!(
                "the oracle only covers the point with total weight {total}, beyond 2^{MAX_DOUBLINGS}"
            )));
        }
    }
    for e in &mut entries {
        e.0 /= scale;
    }
    for t in &mut targets {
        *t /= scale;
    }
    let total: f64 = entries.iter().map(|e| e.0).sum();
    if total > 1.0 {
        for e in &mut entries {
            e.0 /= total;
        }
    }

    // Trim every item down to its target.
    for (item, &target) in targets.iter().enumerate() {
        let mut excess: f64 = entries.iter().filter(|e| e.1.contains(&item)).map(|e| e.0).sum::<f64>() - target;
        let mut l = 0;
        while excess > 0.0 && l < entries.len() {
            if entries[l].1.contains(&item) {
                let take = entries[l].0.min(excess);
                let mut reduced = entries[l].clone();
                reduced.1.retain(|&e| e != item);
                remove(&mut reduced.2, item);
                if take >= entries[l].0 {
                    entries[l] = reduced;
                } else {
                    entries[l].0 -= take;
                    reduced.0 = take;
                    entries.push(reduced);
                }
                excess -= take;
            }
            l += 1;
        }
    }

    // Merge identical item sets and pad with the empty solution.
    let mut merged: BTreeMap<Vec<usize>, (f64, T)> = BTreeMap::new();
    for (lambda, set, sol) in entries {
        if lambda > 0.0 {
            merged.entry(set).and_modify(|e| e.0 += lambda).or_insert((lambda, sol));
        }
    }
    let total: f64 = merged.values().map(|e| e.0).sum();
    if total < 1.0 {
        merged
            .entry(Vec::new())
            .and_modify(|e| e.0 += 1.0 - total)
            .or_insert((1.0 - total, empty));
    }
    let mut entries: Vec<(f64, Vec<usize>, T)> = merged.into_iter().map(|(s, (l, t))| (l, s, t)).collect();
    prune(&mut entries);
    Ok((entries, scale, doublings))
}

/// Removes entries while keeping `Σ λ` and every marginal fixed, until the
/// support is at most the number of distinct items plus one.
fn prune<T>(entries: &mut Vec<(f64, Vec<usize>, T)>) {
    loop {
        let mut items: Vec<usize> = entries.iter().flat_map(|e| e.1.iter().copied()).collect();
        items.sort_unstable();
        items.dedup();
        let rows = items.len() + 1;
        if entries.len() <= rows {
            return;
        }
        let cols = rows + 1;
        let row_of: BTreeMap<usize, usize> = items.iter().enumerate().map(|(r, &e)| (e, r)).collect();
        let mut m = vec![vec![0.0; cols]; rows];
        for c in 0..cols {
            for e in &entries[c].1 {
                m[row_of[e]][c] = 1.0;
            }
            m[rows - 1][c] = 1.0;
        }
        let z = null_vector(m, cols);
        let mut theta = f64::INFINITY;
        let mut hit = 0;
        for (c, &zc) in z.iter().enumerate() {
            if zc > 1e-12 && entries[c].0 / zc < theta {
                theta = entries[c].0 / zc;
                hit = c;
            }
        }
        for (c, &zc) in z.iter().enumerate() {
            entries[c].0 -= theta * zc;
        }
        entries[hit].0 = 0.0;
        let mut c = 0;
        entries.retain(|e| {
            c += 1;
            e.0 > 1e-300 || c > cols
        });
        entries.retain(|e| e.0 > 0.0);
    }
}

/// A nonzero `z` with `M z = 0` for a matrix with more columns than rows,
/// normalized so that some entry is positive.
fn null_vector(mut m: Vec<Vec<f64>>, cols: usize) -> Vec<f64> {
    let rows = m.len();
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let p = (r..rows)
            .max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))
            .unwrap();
        if m[p][c].abs() < 1e-12 {
            continue;
        }
        m.swap(r, p);
        let pv = m[r][c];
        for x in &mut m[r] {
            *x /= pv;
        }
        for rr in 0..rows {
            if rr != r && m[rr][c] != 0.0 {
                let f = m[rr][c];
                let pivot_row = m[r].clone();
                for (x, p) in m[rr].iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let free = (0..cols)
        .find(|c| !pivot_cols.contains(c))
        .expect("more columns than rows");
    let mut z = vec![0.0; cols];
    z[free] = 1.0;
    for (row, &pc) in pivot_cols.iter().enumerate() {
        z[pc] = -m[row][free];
    }
    if z.iter().all(|&x| x <= 1e-12) {
        for x in &mut z {
            *x = -*x;
        }
    }
    z
}

/// Single-channel oracle: an independent set with large total weight.
pub trait ChannelOracle {
    fn propose(&self, g: &ConflictGraph, ord: &Ordering, weights: &[f64], seed: &SeedTree) -> Vec<usize>;
}

/// Local-ratio greedy on unweighted graphs; empty on weighted ones.
pub struct LocalRatioOracle;

impl ChannelOracle for LocalRatioOracle {
    fn propose(&self, g: &ConflictGraph, ord: &Ordering, weights: &[f64], _: &SeedTree) -> Vec<usize> {
        local_ratio_greedy(g, ord, weights).map(|t| t.set).unwrap_or_default()
    }
}

/// Heaviest-first greedy keeping the set independent.
pub struct WeightGreedyOracle;

impl ChannelOracle for WeightGreedyOracle {
    fn propose(&self, g: &ConflictGraph, _: &Ordering, weights: &[f64], _: &SeedTree) -> Vec<usize> {
        let mut users: Vec<usize> = (0..g.n()).filter(|&v| weights[v] > 0.0).collect();
        users.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        let mut set: Vec<usize> = Vec::new();
        for v in users {
            set.push(v);
            if !g.is_independent(&set) {
                set.pop();
            }
        }
        set.sort_unstable();
        set
    }
}

/// Exact maximum-weight independent set.
pub struct ExactOracle;

pub const EXACT_ORACLE_LIMIT: usize = 16;

impl ChannelOracle for ExactOracle {
    fn propose(&self, g: &ConflictGraph, _: &Ordering, weights: &[f64], _: &SeedTree) -> Vec<usize> {
        let all: Vec<usize> = (0..g.n()).collect();
        let mut set = max_weight_independent(g, &all, weights).1;
        set.sort_unstable();
        set
    }
}

/// Randomized `π`-order filter of a fractional column: keep `v` with
/// probability `x_v/(4ρ)`, drop it if the incoming `w̄` from kept earlier
/// users reaches 1/2, then drop every user whose total incoming `w` from the
/// kept set reaches one. The best of `samples` draws is proposed.
pub struct FilterOracle {
    pub x: Vec<f64>,
    pub rho: f64,
    pub samples: usize,
}

impl FilterOracle {
    pub fn draw<R: Rng>(&self, g: &ConflictGraph, ord: &Ordering, rng: &mut R) -> Vec<usize> {
        let denom = 4.0 * self.rho.max(0.25);
        let mut kept: Vec<usize> = Vec::new();
        for &v in ord.order() {
            if rng.gen::<f64>() < self.x[v] / denom {
                let load: f64 = kept.iter().map(|&u| g.sym(u, v)).sum();
                if load < 0.5 {
                    kept.push(v);
                }
            }
        }
        let survivors: Vec<usize> = kept.iter().copied().filter(|&v| g.incoming(&kept, v) < 1.0).collect();
        let mut out = survivors;
        out.sort_unstable();
        out
    }
}

impl ChannelOracle for FilterOracle {
    fn propose(&self, g: &ConflictGraph, ord: &Ordering, weights: &[f64], seed: &SeedTree) -> Vec<usize> {
        let mut best = Vec::new();
        let mut best_value = 0.0;
        for s in 0..self.samples {
            let mut rng = seed.child(s as u64).rng();
            let set = self.draw(g, ord, &mut rng);
            let value: f64 = set.iter().map(|&v| weights[v]).sum();
            if value > best_value {
                best_value = value;
                best = set;
            }
        }
        best
    }
}

/// Chooses oracles by graph type and size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleChoice {
    /// Local ratio, weight greedy and, for small graphs, the exact oracle.
    #[default]
    Auto,
    LocalRatio,
    Filter,
    Exact,
}

struct ChannelColumns<'a> {
    g: &'a ConflictGraph,
    ord: &'a Ordering,
    oracles: Vec<Box<dyn ChannelOracle + 'a>>,
    seed: SeedTree,
    calls: u64,
}

impl ColumnOracle for ChannelColumns<'_> {
    fn columns(&mut self, prices: &[f64]) -> Result<Vec<Vec<usize>>> {
        self.calls += 1;
        let seed = self.seed.child(self.calls);
        Ok(self
            .oracles
            .iter()
            .map(|o| o.propose(self.g, self.ord, prices, &seed))
            .collect())
    }
}

fn channel_oracles<'a>(
    g: &ConflictGraph,
    x: &[f64],
    rho: f64,
    choice: OracleChoice,
) -> Vec<Box<dyn ChannelOracle + 'a>> {
    let filter = || -> Box<dyn ChannelOracle + 'a> {
        Box::new(FilterOracle {
            x: x.to_vec(),
            rho,
            samples: 16,
        })
    };
    match choice {
        OracleChoice::LocalRatio => vec![Box::new(LocalRatioOracle)],
        OracleChoice::Filter => vec![filter()],
        OracleChoice::Exact => vec![Box::new(ExactOracle)],
        OracleChoice::Auto => {
            let mut v: Vec<Box<dyn ChannelOracle + 'a>> = vec![Box::new(WeightGreedyOracle)];
            if g.is_unweighted() {
                v.push(Box::new(LocalRatioOracle));
            } else {
                v.push(filter());
            }
            if g.n() <= EXACT_ORACLE_LIMIT {
                v.push(Box::new(ExactOracle));
            }
            v
        }
    }
}

/// Decomposes `x_col/α` into independent sets of one channel. `x_col` must
/// satisfy the interference rows for `ord.rho` and the unit box.
pub fn decompose_channel(
    g: &ConflictGraph,
    ord: &Ordering,
    x_col: &[f64],
    alpha_start: f64,
    choice: OracleChoice,
    seed: &SeedTree,
) -> Result<Decomposition<Vec<usize>>> {
    let n = g.n();
    if x_col.len() != n {
        return Err(Error::Domain(format!(
            "column has {} entries for {n} users",
            x_col.len()
        )));
    }
    if !(alpha_start.is_finite() && alpha_start >= 1.0) {
        return Err(Error::Parameter(format!(
            "alpha_start = {alpha_start} must be at least 1"
        )));
    }
    let violation = channel_column_violation(g, ord, ord.rho, x_col);
    if violation > 1e-9 {
        return Err(Error::Domain(format!(
            "column violates the channel constraints by {violation:e}"
        )));
    }
    let targets: Vec<f64> = x_col.iter().map(|&x| x.max(0.0) / alpha_start).collect();
    let mut columns = ChannelColumns {
        g,
        ord,
        oracles: channel_oracles(g, x_col, ord.rho, choice),
        seed: seed.child(phase::ORACLE),
        calls: 0,
    };
    let (entries, generated) = column_generation(&targets, &mut columns)?;
    let entries = entries.into_iter().map(|(l, s)| (l, s.clone(), s)).collect();
    let (entries, scale, doublings) = finish(
        entries,
        &targets,
        |s: &mut Vec<usize>, e| s.retain(|&v| v != e),
        Vec::new(),
    )?;
    let dec = Decomposition {
        entries: entries
            .into_iter()
            .map(|(lambda, _, solution)| Entry { lambda, solution })
            .collect(),
        alpha_start,
        alpha_achieved: alpha_start * scale,
        doublings,
        columns_generated: generated,
    };
    let report = verify_channel_decomposition(&dec, g, x_col);
    if !report.ok {
        return Err(Error::Decomposition(format!(
            "decomposition failed verification: {report:?}"
        )));
    }
    Ok(dec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub sum_error: f64,
    pub max_marginal_error: f64,
    pub infeasible_entries: usize,
    pub negative_weights: usize,
}

impl VerifyReport {
    fn new(sum: f64, marginal: f64, infeasible: usize, negative: usize) -> Self {
        let sum_error = (sum - 1.0).abs();
        VerifyReport {
            ok: sum_error <= SUM_TOL && marginal <= MARGINAL_TOL && infeasible == 0 && negative == 0,
            sum_error,
            max_marginal_error: marginal,
            infeasible_entries: infeasible,
            negative_weights: negative,
        }
    }
}

/// Checks `Σ λ = 1`, independence of every set and `Σ λ_l [v ∈ g_l] = x_v/α`.
pub fn verify_channel_decomposition(dec: &Decomposition<Vec<usize>>, g: &ConflictGraph, x_col: &[f64]) -> VerifyReport {
    let mut marg = vec![0.0; x_col.len()];
    let mut infeasible = 0;
    let mut out_of_range = false;
    for e in &dec.entries {
        if !g.is_independent(&e.solution) {
            infeasible += 1;
        }
        for &v in &e.solution {
            match marg.get_mut(v) {
                Some(m) => *m += e.lambda,
                None => out_of_range = true,
            }
        }
    }
    let worst = marg
        .iter()
        .zip(x_col)
        .map(|(m, x)| (m - x / dec.alpha_achieved).abs())
        .fold(if out_of_range { f64::INFINITY } else { 0.0 }, f64::max);
    let negative = dec.entries.iter().filter(|e| e.lambda < 0.0).count();
    VerifyReport::new(dec.total(), worst, infeasible, negative)
}

/// Settings of the count-form column oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountOracleConfig {
    /// Randomized rounding runs per pricing call.
    pub rounding_trials: usize,
    /// Use exact welfare maximization when the instance is small enough.
    pub exact_when_small: bool,
}

impl Default for CountOracleConfig {
    fn default() -> Self {
        CountOracleConfig {
            rounding_trials: 8,
            exact_when_small: true,
        }
    }
}

struct CountColumns<'a> {
    inst: &'a Instance,
    rho: f64,
    config: CountOracleConfig,
    seed: SeedTree,
    calls: u64,
    found: BTreeMap<Vec<usize>, Allocation>,
}

impl CountColumns<'_> {
    fn item(&self, v: usize, i: usize) -> usize {
        v * self.inst.k + i - 1
    }

    /// Keeps each user's most valuable count among those it can drop to.
    fn trim(&self, a: &Allocation, prices: &[f64]) -> Allocation {
        let mut out = a.clone();
        for (v, set) in out.sets.iter_mut().enumerate() {
            let mut best = 0;
            let mut best_price = 0.0;
            for i in 1..=set.len() {
                let p = prices[self.item(v, i)];
                if p > best_price {
                    best_price = p;
                    best = i;
                }
            }
            set.truncate(best);
        }
        out
    }

    fn column_of(&self, a: &Allocation) -> Vec<usize> {
        (0..a.n())
            .filter(|&v| !a.sets[v].is_empty())
            .map(|v| self.item(v, a.sets[v].len()))
            .collect()
    }
}

/// Heaviest-first greedy: each user takes the largest count whose lowest
/// compatible channels keep every channel independent.
fn greedy_counts(inst: &Instance, benefit: &[Vec<f64>]) -> Allocation {
    let n = inst.n();
    let k = inst.k;
    let mut users: Vec<usize> = (0..n).filter(|&v| benefit[v][k] > 0.0).collect();
    users.sort_by(|&a, &b| benefit[b][k].total_cmp(&benefit[a][k]).then(a.cmp(&b)));
    let mut alloc = Allocation::empty(n);
    for v in users {
        let usable: Vec<usize> = (0..k)
            .filter(|&j| {
                let mut users = alloc.channel_users(j);
                users.push(v);
                inst.graph.is_independent(&users)
            })
            .collect();
        let Some(i) = (1..=usable.len())
            .rev()
            .max_by(|&a, &b| benefit[v][a].total_cmp(&benefit[v][b]))
        else {
            continue;
        };
        if benefit[v][i] > 0.0 {
            alloc.sets[v] = usable[..i].to_vec();
        }
    }
    alloc
}

impl ColumnOracle for CountColumns<'_> {
    fn columns(&mut self, prices: &[f64]) -> Result<Vec<Vec<usize>>> {
        self.calls += 1;
        let n = self.inst.n();
        let k = self.inst.k;
        // Monotone envelope of the prices as symmetric benefits.
        let benefit: Vec<Vec<f64>> = (0..n)
            .map(|v| {
                let mut row = vec![0.0; k + 1];
                for i in 1..=k {
                    row[i] = f64::max(row[i - 1], prices[self.item(v, i)]);
                }
                row
            })
            .collect();
        let priced = Instance {
            graph: self.inst.graph.clone(),
            ordering: self.inst.ordering.clone(),
            k,
            valuations: benefit
                .iter()
                .map(|b| Valuation::Symmetric(SymmetricValuation { values: b.clone() }))
                .collect(),
        };
        let mut candidates = vec![greedy_counts(&priced, &benefit)];
        if self.config.exact_when_small && n <= BRUTE_FORCE_N_LIMIT && k <= BRUTE_FORCE_K_LIMIT {
            candidates.push(brute_force_optimum(&priced)?.0);
        } else {
            let lp = build_count_lp(&priced.graph, &priced.ordering, self.rho, k, &benefit);
            let x: CountSolution = lp.solve(1e-9)?;
            for t in 0..self.config.rounding_trials {
                let seed = self.seed.path(&[self.calls, t as u64]);
                candidates.push(round_symmetric(&priced, &x, self.rho, &seed)?);
            }
        }
        let mut cols = Vec::with_capacity(candidates.len());
        for a in candidates {
            let a = self.trim(&a, prices);
            let col = self.column_of(&a);
            self.found.entry(col.clone()).or_insert(a);
            cols.push(col);
        }
        Ok(cols)
    }
}

/// Decomposes `x/α` for a count-form LP point into feasible allocations:
/// the mass of allocations giving user `v` exactly `i` channels equals
/// `x_{v,i}/α`.
pub fn decompose_count_solution(
    inst: &Instance,
    x: &CountSolution,
    rho: f64,
    alpha_start: f64,
    config: CountOracleConfig,
    seed: &SeedTree,
) -> Result<Decomposition<Allocation>> {
    let n = inst.n();
    let k = inst.k;
    if x.x.len() != n || x.k() != k {
        return Err(Error::Domain("count solution shape does not match the instance".into()));
    }
    if !(alpha_start.is_finite() && alpha_start >= 1.0) {
        return Err(Error::Parameter(format!(
            "alpha_start = {alpha_start} must be at least 1"
        )));
    }
    let mut targets = vec![0.0; n * k];
    for v in 0..n {
        for i in 1..=k {
            targets[v * k + i - 1] = x.x[v][i].max(0.0) / alpha_start;
        }
    }
    let mut columns = CountColumns {
        inst,
        rho,
        config,
        seed: seed.child(phase::ORACLE),
        calls: 0,
        found: BTreeMap::new(),
    };
    let (entries, generated) = column_generation(&targets, &mut columns)?;
    let entries: Vec<(f64, Vec<usize>, Allocation)> = entries
        .into_iter()
        .map(|(l, col)| {
            let alloc = match columns.found.get(&col) {
                Some(a) => a.clone(),
                None => {
                    // initial singleton column: one user alone gets i channels
                    let mut a = Allocation::empty(n);
                    let (v, i) = (col[0] / k, col[0] % k + 1);
                    a.sets[v] = (0..i).collect();
                    a
                }
            };
            (l, col, alloc)
        })
        .collect();
    let (entries, scale, doublings) = finish(
        entries,
        &targets,
        |a: &mut Allocation, item| a.sets[item / k].clear(),
        Allocation::empty(n),
    )?;
    let dec = Decomposition {
        entries: entries
            .into_iter()
            .map(|(lambda, _, solution)| Entry { lambda, solution })
            .collect(),
        alpha_start,
        alpha_achieved: alpha_start * scale,
        doublings,
        columns_generated: generated,
    };
    let report = verify_count_decomposition(&dec, inst, x);
    if !report.ok {
        return Err(Error::Decomposition(format!(
            "decomposition failed verification: {report:?}"
        )));
    }
    Ok(dec)
}

/// Checks `Σ λ = 1`, feasibility of every allocation and
/// `Σ λ_l [|S_v| = i in g_l] = x_{v,i}/α`.
pub fn verify_count_decomposition(dec: &Decomposition<Allocation>, inst: &Instance, x: &CountSolution) -> VerifyReport {
    let n = inst.n();
    let k = inst.k;
    let mut marg = vec![vec![0.0; k + 1]; n];
    let mut infeasible = 0;
    for e in &dec.entries {
        if e.solution.n() != n || !e.solution.is_feasible(&inst.graph, k) {
            infeasible += 1;
            continue;
        }
        for v in 0..n {
            let i = e.solution.sets[v].len();
            if i > 0 {
                marg[v][i] += e.lambda;
            }
        }
    }
    let mut worst: f64 = 0.0;
    for v in 0..n {
        for i in 1..=k {
            worst = worst.max((marg[v][i] - x.x[v][i] / dec.alpha_achieved).abs());
        }
    }
    let negative = dec.entries.iter().filter(|e| e.lambda < 0.0).count();
    VerifyReport::new(dec.total(), worst, infeasible, negative)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_column_is_the_empty_set() {
        let g = ConflictGraph::unweighted(3, &[(0, 1)]).unwrap();
        let ord = Ordering::identity(3, 2.0);
        let dec = decompose_channel(&g, &ord, &[0.0; 3], 1.0, OracleChoice::Auto, &SeedTree::new(0)).unwrap();
        assert_eq!(dec.entries.len(), 1);
        assert_eq!(dec.entries[0].lambda, 1.0);
        assert!(dec.entries[0].solution.is_empty());
    }

    #[test]
    fn edgeless_halves() {
        let g = ConflictGraph::edgeless(3);
        let ord = Ordering::identity(3, 0.0);
        let x = [0.5, 0.5, 0.5];
        let dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(0)).unwrap();
        assert_eq!(dec.alpha_achieved, 1.0);
        assert!(verify_channel_decomposition(&dec, &g, &x).ok);
    }

    #[test]
    fn conflicting_pair_splits_evenly() {
        let g = ConflictGraph::unweighted(2, &[(0, 1)]).unwrap();
        let ord = Ordering::identity(2, 2.0);
        let x = [0.5, 0.5];
        let dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(0)).unwrap();
        assert_eq!(dec.alpha_achieved, 1.0);
        let mut sets: Vec<(Vec<usize>, f64)> = dec.entries.iter().map(|e| (e.solution.clone(), e.lambda)).collect();
        sets.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].0, vec![0]);
        assert_eq!(sets[1].0, vec![1]);
        assert!((sets[0].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn doubling_when_the_point_is_too_dense() {
        // a triangle with every user at 0.9 needs total weight 2
        let g = ConflictGraph::unweighted(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let ord = Ordering::identity(3, 4.0);
        let x = [0.9, 0.9, 0.2];
        let dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(0)).unwrap();
        assert_eq!(dec.doublings, 1);
        assert_eq!(dec.alpha_achieved, 2.0);
        assert!(verify_channel_decomposition(&dec, &g, &x).ok);
    }

    #[test]
    fn single_user_count_form() {
        let inst = Instance::new(
            ConflictGraph::edgeless(1),
            Ordering::identity(1, 0.0),
            2,
            vec![Valuation::Symmetric(SymmetricValuation {
                values: vec![0.0, 1.0, 3.0],
            })],
        )
        .unwrap();
        let mut x = CountSolution::zero(1, 2);
        x.x[0][2] = 1.0;
        let dec =
            decompose_count_solution(&inst, &x, 1.0, 4.0, CountOracleConfig::default(), &SeedTree::new(0)).unwrap();
        assert_eq!(dec.alpha_achieved, 4.0);
        let full: f64 = dec
            .entries
            .iter()
            .filter(|e| e.solution.sets[0].len() == 2)
            .map(|e| e.lambda)
            .sum();
        assert!((full - 0.25).abs() < 1e-12);
        assert!(verify_count_decomposition(&dec, &inst, &x).ok);
    }

    #[test]
    fn perturbed_weight_fails_verification() {
        let g = ConflictGraph::edgeless(2);
        let ord = Ordering::identity(2, 0.0);
        let x = [0.5, 0.25];
        let mut dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(0)).unwrap();
        dec.entries[0].lambda += 1e-3;
        let r = verify_channel_decomposition(&dec, &g, &x);
        assert!(!r.ok);
        assert!((r.sum_error - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn null_vector_is_in_the_kernel() {
        let m = vec![vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]];
        let z = null_vector(m.clone(), 3);
        for row in &m {
            let s: f64 = row.iter().zip(&z).map(|(a, b)| a * b).sum();
            assert!(s.abs() < 1e-12);
        }
        assert!(z.iter().any(|&x| x > 0.0));
    }
}
