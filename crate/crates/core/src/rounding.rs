//! Randomized rounding of the count-form LP into feasible allocations.
//!
//! Each half of the split LP solution first draws a demand `d_v` per user and
//! then turns the demands into channel sets: greedily on unweighted graphs,
//! and through the small-demand and large-demand allocators on weighted ones.

use rand::Rng;

use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance};
use crate::lp::CountSolution;
use crate::rng::{phase, SeedTree};

/// Splits `x` into the entries with `i ≤ threshold` and the rest.
pub fn split_solution(x: &[Vec<f64>], threshold: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let low = x
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, &v)| if i <= threshold { v } else { 0.0 })
                .collect()
        })
        .collect();
    let high = x
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(i, &v)| if i > threshold { v } else { 0.0 })
                .collect()
        })
        .collect();
    (low, high)
}

/// Draws `d = i` with probability `row[i] / denom`, otherwise `0`.
pub fn sample_demand<R: Rng>(row: &[f64], denom: f64, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        acc += x / denom;
        if u < acc {
            return i;
        }
    }
    0
}

fn check_probabilities(x: &[Vec<f64>], denom: f64) -> Result<()> {
    if !(denom > 0.0) {
        return Err(Error::Parameter(format!(
            "sampling denominator {denom} must be positive"
        )));
    }
    for (v, row) in x.iter().enumerate() {
        let mass: f64 = row.iter().skip(1).sum();
        if mass / denom > 1.0 + 1e-12 {
            return Err(Error::Parameter(format!(
                "user {v}: demand probabilities sum to {} > 1; rho is too small for this LP point",
                mass / denom
            )));
        }
    }
    Ok(())
}

fn demands(x: &[Vec<f64>], denom: f64, seed: &SeedTree, half: u64) -> Vec<usize> {
    (0..x.len())
        .map(|v| {
            let mut rng = seed.path(&[phase::DEMAND, half, v as u64]).rng();
            sample_demand(&x[v], denom, &mut rng)
        })
        .collect()
}

fn better(inst: &Instance, a: Allocation, b: Allocation) -> Allocation {
    if inst.welfare(&b) > inst.welfare(&a) {
        b
    } else {
        a
    }
}

/// Rounding for unweighted graphs with `ρ ≥ 1/4`: split at `⌊k/2⌋`, draw
/// `d_v = i` with probability `x_{v,i}/(4ρ)`, hand each user in increasing
/// `π` its lowest `d_v` channels not used by an earlier neighbor (or nothing
/// if too few are free) and return the better half.
pub fn round_unweighted(inst: &Instance, x: &CountSolution, rho: f64, seed: &SeedTree) -> Result<Allocation> {
    if !inst.graph.is_unweighted() {
        return Err(Error::Mode(
            "round_unweighted needs an unweighted conflict graph".into(),
        ));
    }
    let denom = 4.0 * rho;
    check_probabilities(&x.x, denom)?;
    let (x1, x2) = split_solution(&x.x, inst.k / 2);
    let mut best = Allocation::empty(inst.n());
    for (half, xl) in [(1u64, &x1), (2, &x2)] {
        let d = demands(xl, denom, seed, half);
        best = better(inst, best, greedy_channels(inst, &d));
    }
    Ok(best)
}

/// Gives each user in increasing `π` its lowest `d_v` channels not held by an
/// earlier neighbor, or nothing if fewer are free.
pub fn greedy_channels(inst: &Instance, d: &[usize]) -> Allocation {
    let g = &inst.graph;
    let mut alloc = Allocation::empty(inst.n());
    for &v in inst.ordering.order() {
        if d[v] == 0 {
            continue;
        }
        let mut blocked = vec![false; inst.k];
        for u in g.neighbors(v) {
            if inst.ordering.precedes(u, v) {
                for &j in &alloc.sets[u] {
                    blocked[j] = true;
                }
            }
        }
        let free: Vec<usize> = (0..inst.k).filter(|&j| !blocked[j]).collect();
        if free.len() >= d[v] {
            alloc.sets[v] = free[..d[v]].to_vec();
        }
    }
    alloc
}

/// Diagnostics of one run of a round-based allocator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundTrace {
    pub rounds: usize,
    pub round_welfare: Vec<f64>,
    /// Whether every round admitted more than half of the remaining demand.
    pub half_demand_admitted: bool,
    /// Largest incoming weight `Σ w(u, v)` any user saw on any channel in any round.
    pub max_incoming: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocated {
    pub allocation: Allocation,
    pub trace: RoundTrace,
}

/// Users with positive demand.
fn active(d: &[usize]) -> Vec<usize> {
    (0..d.len()).filter(|&v| d[v] > 0).collect()
}

/// Scans `remaining` in decreasing `π` and admits `u` while
/// `Σ_{v admitted} d_v·w̄(u, v) < k/32`.
fn admit(inst: &Instance, d: &[usize], remaining: &[usize]) -> Vec<usize> {
    let mut order = remaining.to_vec();
    order.sort_by_key(|&v| std::cmp::Reverse(inst.ordering.position(v)));
    let bound = inst.k as f64 / 32.0;
    let mut h: Vec<usize> = Vec::new();
    for u in order {
        let load: f64 = h.iter().map(|&v| d[v] as f64 * inst.graph.sym(u, v)).sum();
        if load < bound {
            h.push(u);
        }
    }
    h
}

fn demand_sum(d: &[usize], users: &[usize]) -> usize {
    users.iter().map(|&v| d[v]).sum()
}

fn max_incoming(inst: &Instance, a: &Allocation) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..inst.k {
        let users = a.channel_users(j);
        for &v in &users {
            worst = worst.max(inst.graph.incoming(&users, v));
        }
    }
    worst
}

fn check_small(inst: &Instance, d: &[usize]) -> Result<()> {
    for v in active(d) {
        if 8 * d[v] > inst.k {
            return Err(Error::Domain(format!("user {v} demands {} > k/8 channels", d[v])));
        }
    }
    check_zeroed(inst, d)
}

fn check_zeroed(inst: &Instance, d: &[usize]) -> Result<()> {
    let bound = inst.k as f64 / 32.0;
    for v in active(d) {
        let load = predecessor_load(inst, d, v);
        if load >= bound {
            return Err(Error::Domain(format!(
                "user {v} has predecessor load {load} ≥ k/32; apply the zeroing step first"
            )));
        }
    }
    Ok(())
}

/// `Σ_{π(u)<π(v)} d_u·w̄(u, v)`.
fn predecessor_load(inst: &Instance, d: &[usize], v: usize) -> f64 {
    (0..inst.n())
        .filter(|&u| u != v && inst.ordering.precedes(u, v))
        .map(|u| d[u] as f64 * inst.graph.sym(u, v))
        .sum()
}

/// Largest number of rounds the small-demand allocator may take.
pub fn small_round_cap(n: usize, k: usize) -> usize {
    let nk = (n * k).max(2) as f64;
    ((4.0 * nk.ln() / (4.0f64 / 3.0).ln()).ceil() as usize).max(1)
}

/// Allocator for demands of at most `k/8`: rounds of admission followed by
/// per-channel Bernoulli(8d/k) trials; a user keeps its lowest `d_v`
/// channels on which its trial succeeded and the incoming `w̄` from other
/// successful trials stays below one.
pub fn allocate_small(inst: &Instance, d: &[usize], seed: &SeedTree) -> Result<Allocated> {
    check_small(inst, d)?;
    let k = inst.k;
    let cap = small_round_cap(inst.n(), k);
    let mut remaining = active(d);
    let mut trace = RoundTrace {
        half_demand_admitted: true,
        ..RoundTrace::default()
    };
    let mut best = Allocation::empty(inst.n());
    let mut best_welfare = 0.0;
    while !remaining.is_empty() {
        if trace.rounds == cap {
            return Err(Error::RoundingFailure {
                rounds: cap,
                remaining: remaining.len(),
            });
        }
        let t = trace.rounds as u64;
        let h = admit(inst, d, &remaining);
        trace.half_demand_admitted &= 2 * demand_sum(d, &h) > demand_sum(d, &remaining);
        let trials: Vec<Vec<bool>> = h
            .iter()
            .map(|&u| {
                let p = 8.0 * d[u] as f64 / k as f64;
                let mut rng = seed.path(&[phase::ALLOCATE_SMALL, t, u as u64]).rng();
                (0..k).map(|_| rng.gen::<f64>() < p).collect()
            })
            .collect();
        let mut round = Allocation::empty(inst.n());
        for (a, &v) in h.iter().enumerate() {
            let good: Vec<usize> = (0..k)
                .filter(|&j| {
                    trials[a][j] && {
                        let load: f64 = h
                            .iter()
                            .enumerate()
                            .filter(|&(b, &u)| b != a && trials[b][j] && u != v)
                            .map(|(_, &u)| inst.graph.sym(u, v))
                            .sum();
                        load < 1.0
                    }
                })
                .collect();
            if good.len() >= d[v] {
                round.sets[v] = good[..d[v]].to_vec();
            }
        }
        remaining.retain(|&v| round.sets[v].is_empty());
        trace.max_incoming = trace.max_incoming.max(max_incoming(inst, &round));
        let w = inst.welfare(&round);
        trace.round_welfare.push(w);
        if w > best_welfare {
            best_welfare = w;
            best = round;
        }
        trace.rounds += 1;
    }
    Ok(Allocated {
        allocation: best,
        trace,
    })
}

/// Allocator for demands of at least `k/8`: each round admits users as in
/// [`allocate_small`] and gives every admitted user channels `0..d_v`.
pub fn allocate_large(inst: &Instance, d: &[usize]) -> Result<Allocated> {
    for v in active(d) {
        if 8 * d[v] < inst.k || d[v] > inst.k {
            return Err(Error::Domain(format!(
                "user {v} demands {} channels, outside [k/8, k]",
                d[v]
            )));
        }
    }
    check_zeroed(inst, d)?;
    let mut remaining = active(d);
    let mut trace = RoundTrace {
        half_demand_admitted: true,
        ..RoundTrace::default()
    };
    let mut best = Allocation::empty(inst.n());
    let mut best_welfare = 0.0;
    while !remaining.is_empty() {
        let h = admit(inst, d, &remaining);
        trace.half_demand_admitted &= 2 * demand_sum(d, &h) > demand_sum(d, &remaining);
        let mut round = Allocation::empty(inst.n());
        for &v in &h {
            round.sets[v] = (0..d[v]).collect();
        }
        remaining.retain(|v| !h.contains(v));
        trace.max_incoming = trace.max_incoming.max(max_incoming(inst, &round));
        let w = inst.welfare(&round);
        trace.round_welfare.push(w);
        if w > best_welfare {
            best_welfare = w;
            best = round;
        }
        trace.rounds += 1;
    }
    Ok(Allocated {
        allocation: best,
        trace,
    })
}

/// Demands of one half of the weighted rounding after the zeroing step:
/// draw `d_v = i` with probability `x_{v,i}/(64ρ)` in increasing `π` and
/// reset `d_v` to zero when `Σ_{π(u)<π(v)} d_u·w̄(u, v) ≥ k/32`.
pub fn weighted_demands(inst: &Instance, xl: &[Vec<f64>], rho: f64, seed: &SeedTree, half: u64) -> Result<Vec<usize>> {
    let denom = 64.0 * rho;
    check_probabilities(xl, denom)?;
    let mut d = demands(xl, denom, seed, half);
    let bound = inst.k as f64 / 32.0;
    for &v in inst.ordering.order() {
        if d[v] > 0 && predecessor_load(inst, &d, v) >= bound {
            d[v] = 0;
        }
    }
    Ok(d)
}

/// Diagnostics of [`round_weighted_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrace {
    pub small: RoundTrace,
    pub large: RoundTrace,
}

/// Rounding for weighted graphs: split at `⌊k/8⌋`, draw and zero demands,
/// run the small-demand allocator on the first half and the large-demand
/// allocator on the second, and return the better allocation.
pub fn round_weighted(inst: &Instance, x: &CountSolution, rho: f64, seed: &SeedTree) -> Result<Allocation> {
    Ok(round_weighted_traced(inst, x, rho, seed)?.0)
}

pub fn round_weighted_traced(
    inst: &Instance,
    x: &CountSolution,
    rho: f64,
    seed: &SeedTree,
) -> Result<(Allocation, WeightedTrace)> {
    let (x1, x2) = split_solution(&x.x, inst.k / 8);
    let d1 = weighted_demands(inst, &x1, rho, seed, 1)?;
    let d2 = weighted_demands(inst, &x2, rho, seed, 2)?;
    let small = allocate_small(inst, &d1, seed)?;
    let large = allocate_large(inst, &d2)?;
    let trace = WeightedTrace {
        small: small.trace,
        large: large.trace,
    };
    Ok((better(inst, small.allocation, large.allocation), trace))
}

/// Dispatches to the unweighted or weighted rounding.
pub fn round_symmetric(inst: &Instance, x: &CountSolution, rho: f64, seed: &SeedTree) -> Result<Allocation> {
    if inst.graph.is_unweighted() {
        round_unweighted(inst, x, rho, seed)
    } else {
        round_weighted(inst, x, rho, seed)
    }
}
