//! Expected-welfare maximization and rounding for matroid-rank-sum bidders.
//!
//! A channel-form point `x[v][j]` satisfies, per channel, the interference
//! rows `Σ_{π(u)<π(v)} w̄(u,v) x[u][j] ≤ ρ` and the unit box. Rounding gives
//! `v` channel `j` with probability exactly `1 − e^{−x[v][j]/(2α)}`, so the
//! expected welfare is a sum of lottery values and concave in `x`.

use std::f64::consts::E;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::decomposition::{decompose_channel, Decomposition, OracleChoice};
use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance};
use crate::lp::{build_single_channel_lp, channel_column_violation, solve_packing_lp, DEFAULT_GAP_TOL};
use crate::rng::{phase, SeedTree};
use crate::valuations::MrsValuation;

/// Deepest dyadic level the simulation will enter.
pub const MAX_LEVEL: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MidrConfig {
    pub alpha: f64,
    pub mu: f64,
    pub tol_gap: f64,
    #[serde(skip)]
    pub oracle: OracleChoice,
}

impl MidrConfig {
    /// Defaults for `inst`: the scaling from [`default_alpha`], the
    /// perturbation mass from [`default_mu`] and a certified gap of `1e-9`.
    pub fn for_instance(inst: &Instance) -> Self {
        MidrConfig {
            alpha: default_alpha(inst),
            mu: default_mu(inst.n(), inst.k),
            tol_gap: 1e-9,
            oracle: OracleChoice::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(Error::Parameter(format!("alpha = {} must be at least 1", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Parameter(format!("mu = {} must lie in [0, 1)", self.mu)));
        }
        if !(self.tol_gap.is_finite() && self.tol_gap > 0.0) {
            return Err(Error::Parameter(format!("tol_gap = {} must be positive", self.tol_gap)));
        }
        Ok(())
    }
}

/// Scaling at which every point of the channel polytope decomposes:
/// `max(1, ρ)` on unweighted graphs, `max(1, 4ρ⌈log2 n⌉)` on weighted ones.
pub fn default_alpha(inst: &Instance) -> f64 {
    let rho = inst.ordering.rho;
    if inst.graph.is_unweighted() {
        rho.max(1.0)
    } else {
        let log = (inst.n().max(2) as f64).log2().ceil();
        (4.0 * rho * log).max(1.0)
    }
}

/// `2^{-nk}`, clipped from below at `2^{-40}`.
pub fn default_mu(n: usize, k: usize) -> f64 {
    let exp = (n * k).min(40) as i32;
    2f64.powi(-exp)
}

/// Probability that rounding gives a user a channel it holds with weight `x`.
pub fn inclusion_probability(x: f64, alpha: f64) -> f64 {
    -(-x.max(0.0) / (2.0 * alpha)).exp_m1()
}

fn mrs_valuations(inst: &Instance) -> Result<Vec<&MrsValuation>> {
    inst.require_mrs()
}

fn check_shape(inst: &Instance, x: &[Vec<f64>]) -> Result<()> {
    if x.len() != inst.n() || x.iter().any(|r| r.len() != inst.k) {
        return Err(Error::Domain(format!(
            "channel point must be {} x {}",
            inst.n(),
            inst.k
        )));
    }
    Ok(())
}

/// `Σ_v E[b_v(S_v)]` under independent inclusion probabilities.
pub fn expected_welfare(inst: &Instance, x: &[Vec<f64>], alpha: f64) -> Result<f64> {
    let vals = mrs_valuations(inst)?;
    check_shape(inst, x)?;
    let mut total = 0.0;
    for (v, b) in vals.iter().enumerate() {
        let q: Vec<f64> = x[v].iter().map(|&xv| inclusion_probability(xv, alpha)).collect();
        total += b.lottery_value(&q)?;
    }
    Ok(total)
}

/// Expected value of every user under rounding followed by the
/// perturbation step with mass `mu`. These sum to the perturbed objective.
pub fn user_values(inst: &Instance, x: &[Vec<f64>], alpha: f64, mu: f64) -> Result<Vec<f64>> {
    let vals = mrs_valuations(inst)?;
    check_shape(inst, x)?;
    let n = inst.n();
    let k = inst.k;
    let mut q_sum = 0.0;
    let mut lottery = Vec::with_capacity(n);
    for (v, b) in vals.iter().enumerate() {
        let q: Vec<f64> = x[v].iter().map(|&xv| inclusion_probability(xv, alpha)).collect();
        q_sum += q.iter().sum::<f64>();
        lottery.push(b.lottery_value(&q)?);
    }
    let share = mu * q_sum / ((n * n * k) as f64);
    Ok(vals
        .iter()
        .zip(lottery)
        .map(|(b, l)| (1.0 - mu) * l + share * b.value(&(0..k).collect::<Vec<_>>()))
        .collect())
}

/// Perturbed objective `(1−μ)·Σ L_v + μ/(n²k)·(Σ q)·(Σ_v b_v([k]))`.
pub fn perturbed_welfare(inst: &Instance, x: &[Vec<f64>], alpha: f64, mu: f64) -> Result<f64> {
    Ok(user_values(inst, x, alpha, mu)?.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelSolution {
    pub x: Vec<Vec<f64>>,
    /// Perturbed objective at `x`.
    pub objective: f64,
    /// Certified bound on the distance of `objective` to the optimum.
    pub gap: f64,
    pub iterations: usize,
}

/// Interference row of one user: earlier users with positive `w̄`.
struct Row {
    terms: Vec<(usize, f64)>,
}

struct Problem<'a> {
    vals: Vec<&'a MrsValuation>,
    n: usize,
    k: usize,
    alpha: f64,
    mu: f64,
    rho: f64,
    rows: Vec<Row>,
    /// Coefficient of `Σ q` in the perturbed objective.
    spread: f64,
}

struct Local {
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.n * self.k
    }

    fn objective(&self, z: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for v in 0..self.n {
            let q: Vec<f64> = z[v * self.k..(v + 1) * self.k]
                .iter()
                .map(|&x| inclusion_probability(x, self.alpha))
                .collect();
            total += (1.0 - self.mu) * self.vals[v].lottery_value(&q)? + self.spread * q.iter().sum::<f64>();
        }
        Ok(total)
    }

    fn local(&self, z: &[f64], with_hessian: bool) -> Result<Local> {
        let (n, k, a2) = (self.n, self.k, 2.0 * self.alpha);
        let dim = self.dim();
        let mut grad = vec![0.0; dim];
        let mut hess = DMatrix::zeros(if with_hessian { dim } else { 0 }, if with_hessian { dim } else { 0 });
        for v in 0..n {
            let xs = &z[v * k..(v + 1) * k];
            let q: Vec<f64> = xs.iter().map(|&x| inclusion_probability(x, self.alpha)).collect();
            let d1: Vec<f64> = xs.iter().map(|&x| (-x.max(0.0) / a2).exp() / a2).collect();
            let gq = self.vals[v].lottery_gradient(&q)?;
            for j in 0..k {
                let outer = (1.0 - self.mu) * gq[j] + self.spread;
                grad[v * k + j] = outer * d1[j];
                if with_hessian {
                    hess[(v * k + j, v * k + j)] += -outer * d1[j] / a2;
                }
            }
            if with_hessian {
                let hq = self.vals[v].lottery_hessian(&q)?;
                for j in 0..k {
                    for l in 0..k {
                        if j != l {
                            hess[(v * k + j, v * k + l)] += (1.0 - self.mu) * hq[j * k + l] * d1[j] * d1[l];
                        }
                    }
                }
            }
        }
        Ok(Local { grad, hess })
    }

    /// Slacks of all inequalities; all positive inside the polytope.
    fn slacks(&self, z: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(2 * self.dim() + self.rows.len() * self.k);
        s.extend(z.iter().copied());
        s.extend(z.iter().map(|&x| 1.0 - x));
        for j in 0..self.k {
            for row in &self.rows {
                s.push(self.rho - row.terms.iter().map(|&(u, w)| w * z[u * self.k + j]).sum::<f64>());
            }
        }
        s
    }

    /// Change of every slack along `d`.
    fn slack_direction(&self, d: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(2 * self.dim() + self.rows.len() * self.k);
        s.extend(d.iter().copied());
        s.extend(d.iter().map(|&x| -x));
        for j in 0..self.k {
            for row in &self.rows {
                s.push(-row.terms.iter().map(|&(u, w)| w * d[u * self.k + j]).sum::<f64>());
            }
        }
        s
    }

    fn barrier_value(&self, z: &[f64], t: f64) -> Result<f64> {
        let s = self.slacks(z);
        if s.iter().any(|&x| x <= 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(t * self.objective(z)? + s.iter().map(|x| x.ln()).sum::<f64>())
    }

    /// Newton step for `t·F + Σ log s`; returns the direction and the
    /// squared Newton decrement.
    fn newton_step(&self, z: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let dim = self.dim();
        let k = self.k;
        let loc = self.local(z, true)?;
        let mut g: DVector<f64> = DVector::from_iterator(dim, loc.grad.iter().map(|x| t * x));
        let mut neg_h: DMatrix<f64> = -loc.hess * t;
        for i in 0..dim {
            let lo = z[i];
            let hi = 1.0 - z[i];
            g[i] += 1.0 / lo - 1.0 / hi;
            neg_h[(i, i)] += 1.0 / (lo * lo) + 1.0 / (hi * hi);
        }
        for j in 0..k {
            for row in &self.rows {
                let s = self.rho - row.terms.iter().map(|&(u, w)| w * z[u * k + j]).sum::<f64>();
                for &(u, wu) in &row.terms {
                    g[u * k + j] -= wu / s;
                    for &(y, wy) in &row.terms {
                        neg_h[(u * k + j, y * k + j)] += wu * wy / (s * s);
                    }
                }
            }
        }
        let chol = match neg_h.clone().cholesky() {
            Some(c) => c,
            None => {
                // concavity holds analytically; tiny negative curvature is round-off
                let shift = 1e-12 * (1.0 + neg_h.diagonal().amax());
                let mut shifted = neg_h;
                for i in 0..dim {
                    shifted[(i, i)] += shift;
                }
                shifted.cholesky().ok_or(Error::Optimization {
                    gap: f64::INFINITY,
                    iterations: 0,
                })?
            }
        };
        let d = chol.solve(&g);
        let dec = g.dot(&d);
        Ok((d.iter().copied().collect(), dec))
    }

    /// Frank-Wolfe gap `max_{s ∈ P} ∇F·(s − x)`, bounded from above by the
    /// dual bounds of the per-channel linear programs.
    fn certified_gap(&self, z: &[f64], inst: &Instance) -> Result<f64> {
        let loc = self.local(z, false)?;
        let mut gap = 0.0;
        for j in 0..self.k {
            let a: Vec<f64> = (0..self.n).map(|v| loc.grad[v * self.k + j].max(0.0)).collect();
            if a.iter().all(|&x| x == 0.0) {
                continue;
            }
            let lp = build_single_channel_lp(&inst.graph, &inst.ordering, self.rho, &a)?;
            let sol = solve_packing_lp(&lp, DEFAULT_GAP_TOL)?;
            let here: f64 = (0..self.n).map(|v| loc.grad[v * self.k + j] * z[v * self.k + j]).sum();
            gap += (sol.dual_bound - here).max(0.0);
        }
        Ok(gap)
    }
}

/// Maximizes the perturbed objective over the channel polytope with a
/// log-barrier Newton method and certifies the result with a Frank-Wolfe gap.
pub fn maximize_expected_welfare(inst: &Instance, config: &MidrConfig) -> Result<ChannelSolution> {
    config.validate()?;
    let vals = mrs_valuations(inst)?;
    let n = inst.n();
    let k = inst.k;
    let full: Vec<usize> = (0..k).collect();
    let total_full: f64 = vals.iter().map(|b| b.value(&full)).sum();
    if total_full == 0.0 || n == 0 || k == 0 {
        return Ok(ChannelSolution {
            x: vec![vec![0.0; k]; n],
            objective: 0.0,
            gap: 0.0,
            iterations: 0,
        });
    }
    let rho = inst.ordering.rho;
    let rows: Vec<Row> = (0..n)
        .map(|v| Row {
            terms: (0..n)
                .filter(|&u| u != v && inst.ordering.precedes(u, v) && inst.graph.sym(u, v) > 0.0)
                .map(|u| (u, inst.graph.sym(u, v)))
                .collect(),
        })
        .filter(|r| !r.terms.is_empty())
        .collect();
    let problem = Problem {
        vals,
        n,
        k,
        alpha: config.alpha,
        mu: config.mu,
        rho,
        spread: config.mu * total_full / ((n * n * k) as f64),
        rows,
    };
    let worst_row = problem
        .rows
        .iter()
        .map(|r| r.terms.iter().map(|t| t.1).sum::<f64>())
        .fold(0.0, f64::max);
    if worst_row > 0.0 && rho <= 0.0 {
        return Err(Error::Domain(
            "the ordering reports rho = 0 on a graph with edges".into(),
        ));
    }
    let start = if worst_row > 0.0 {
        0.5 * (rho / worst_row).min(1.0)
    } else {
        0.5
    };
    let mut z = vec![start; problem.dim()];
    let m = problem.slacks(&z).len() as f64;

    let mut t = 1.0 / total_full.max(1e-300);
    let target_t = 4.0 * m / config.tol_gap;
    let mut iterations = 0usize;
    loop {
        for _ in 0..200 {
            let (d, dec) = problem.newton_step(&z, t)?;
            iterations += 1;
            if dec / 2.0 <= 1e-11 {
                break;
            }
            let s = problem.slacks(&z);
            let ds = problem.slack_direction(&d);
            let mut step: f64 = 1.0;
            for (si, dsi) in s.iter().zip(&ds) {
                if *dsi < 0.0 {
                    step = step.min(0.99 * si / -dsi);
                }
            }
            let here = problem.barrier_value(&z, t)?;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + step * b).collect();
                let value = problem.barrier_value(&trial, t)?;
                if value >= here + 0.25 * step * dec {
                    z = trial;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if t >= target_t {
            break;
        }
        t = (t * 16.0).min(target_t);
    }
    let gap = problem.certified_gap(&z, inst)?;
    if gap > config.tol_gap {
        return Err(Error::Optimization { gap, iterations });
    }
    let x: Vec<Vec<f64>> = (0..n).map(|v| z[v * k..(v + 1) * k].to_vec()).collect();
    Ok(ChannelSolution {
        objective: problem.objective(&z)?,
        x,
        gap,
        iterations,
    })
}

/// Retention probability turning a tentative allocation with marginal
/// `(hi − lo)/α`-scaled weight into the increment `e^{−lo/(2α)} − e^{−hi/(2α)}`
/// of the inclusion probability. At `hi = lo` this is the limit `e^{−lo/(2α)}`.
pub fn retention_probability(lo: f64, hi: f64, alpha: f64) -> f64 {
    let a2 = 2.0 * alpha;
    let width = hi - lo;
    if width <= 0.0 {
        return (-lo / a2).exp();
    }
    // e^{-lo/a2} (1 - e^{-width/a2}) · a2 / width
    let p = (-lo / a2).exp() * -(-width / a2).exp_m1() * a2 / width;
    p.clamp(0.0, 1.0)
}

fn column(x: &[Vec<f64>], j: usize) -> Vec<f64> {
    x.iter().map(|row| row[j].max(0.0)).collect()
}

fn channel_decomposition(
    inst: &Instance,
    col: &[f64],
    alpha: f64,
    choice: OracleChoice,
    seed: &SeedTree,
    j: usize,
) -> Result<Decomposition<Vec<usize>>> {
    let dec = decompose_channel(&inst.graph, &inst.ordering, col, alpha, choice, seed)?;
    if dec.doublings > 0 {
        return Err(Error::Decomposition(format!(
            "channel {j} needs alpha = {} but the range is fixed at alpha = {alpha}",
            dec.alpha_achieved
        )));
    }
    Ok(dec)
}

/// Rounds a fixed channel point: per channel pick an independent set from a
/// decomposition of `x/α`, then retain each picked user with probability
/// `(1 − e^{−x/(2α)})/(x/α)`. Decompositions are computed once.
#[derive(Debug, Clone)]
pub struct ExactRounder {
    x: Vec<Vec<f64>>,
    alpha: f64,
    channels: Vec<Decomposition<Vec<usize>>>,
}

impl ExactRounder {
    pub fn new(inst: &Instance, x: &[Vec<f64>], alpha: f64, choice: OracleChoice, seed: &SeedTree) -> Result<Self> {
        check_shape(inst, x)?;
        let channels = (0..inst.k)
            .map(|j| {
                channel_decomposition(
                    inst,
                    &column(x, j),
                    alpha,
                    choice,
                    &seed.path(&[phase::DECOMPOSE, j as u64]),
                    j,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ExactRounder {
            x: x.to_vec(),
            alpha,
            channels,
        })
    }

    pub fn decompositions(&self) -> &[Decomposition<Vec<usize>>] {
        &self.channels
    }

    /// `1 − e^{−x[v][j]/(2α)}`.
    pub fn target_marginals(&self) -> Vec<Vec<f64>> {
        self.x
            .iter()
            .map(|r| r.iter().map(|&x| inclusion_probability(x, self.alpha)).collect())
            .collect()
    }

    pub fn sample(&self, seed: &SeedTree) -> Allocation {
        let n = self.x.len();
        let mut alloc = Allocation::empty(n);
        for (j, dec) in self.channels.iter().enumerate() {
            let mut rng = seed.path(&[phase::CHANNEL_TRIAL, j as u64]).rng();
            let set = dec.sample(&mut rng);
            let mut keep = seed.path(&[phase::RETAIN, j as u64]).rng();
            for &v in set {
                // (1 − e^{−x/2α})/(x/α)
                let p = 0.5 * retention_probability(0.0, self.x[v][j], self.alpha);
                if keep.gen::<f64>() < p {
                    alloc.sets[v].push(j);
                }
            }
        }
        alloc
    }
}

/// One draw of the exact rounding scheme for `x`.
pub fn round_exact(
    inst: &Instance,
    x: &[Vec<f64>],
    alpha: f64,
    choice: OracleChoice,
    seed: &SeedTree,
) -> Result<Allocation> {
    Ok(ExactRounder::new(inst, x, alpha, choice, seed)?.sample(seed))
}

/// Supplies points close to the optimum of the convex program.
pub trait DeltaEstimator {
    /// A point within `delta` of the optimum in every coordinate.
    fn estimate(&mut self, level: u32, delta: f64) -> Result<Vec<Vec<f64>>>;
}

/// Returns the same point at every level.
pub struct FixedEstimator(pub Vec<Vec<f64>>);

impl DeltaEstimator for FixedEstimator {
    fn estimate(&mut self, _: u32, _: f64) -> Result<Vec<Vec<f64>>> {
        Ok(self.0.clone())
    }
}

/// Solves the convex program once at the configured gap and serves that
/// point at every level. `certified_delta` is the coordinate distance to the
/// optimum implied by the gap and the strong concavity of the perturbation.
pub struct OptimizerEstimator<'a> {
    inst: &'a Instance,
    config: MidrConfig,
    solution: Option<ChannelSolution>,
    pub certified_delta: f64,
    pub deepest_level: u32,
}

impl<'a> OptimizerEstimator<'a> {
    pub fn new(inst: &'a Instance, config: MidrConfig) -> Self {
        OptimizerEstimator {
            inst,
            config,
            solution: None,
            certified_delta: f64::INFINITY,
            deepest_level: 0,
        }
    }

    pub fn solution(&self) -> Option<&ChannelSolution> {
        self.solution.as_ref()
    }

    /// Lower bound on the curvature of the perturbed objective on any line.
    pub fn strong_concavity(inst: &Instance, config: &MidrConfig) -> f64 {
        let n = inst.n() as f64;
        let k = inst.k as f64;
        let full: Vec<usize> = (0..inst.k).collect();
        let total: f64 = inst.valuations.iter().map(|b| b.value_unchecked(&full)).sum();
        config.mu / (n * n * k) / (E * (2.0 * config.alpha).powi(2)) * total
    }
}

impl DeltaEstimator for OptimizerEstimator<'_> {
    fn estimate(&mut self, level: u32, _delta: f64) -> Result<Vec<Vec<f64>>> {
        self.deepest_level = self.deepest_level.max(level);
        if self.solution.is_none() {
            let sol = maximize_expected_welfare(self.inst, &self.config)?;
            let curvature = Self::strong_concavity(self.inst, &self.config);
            self.certified_delta = if sol.gap == 0.0 {
                0.0
            } else if curvature > 0.0 {
                (2.0 * sol.gap / curvature).sqrt()
            } else {
                f64::INFINITY
            };
            self.solution = Some(sol);
        }
        Ok(self.solution.as_ref().unwrap().x.clone())
    }
}

/// Rounds the optimum of the convex program through estimates of growing
/// precision. Per channel a uniform `p` selects level `r` with probability
/// `2^{−r}`; level 1 samples a decomposition of the first lower envelope,
/// deeper levels sample a single user from the envelope increment.
pub struct DyadicSimulator<'a> {
    inst: &'a Instance,
    alpha: f64,
    choice: OracleChoice,
    estimator: &'a mut dyn DeltaEstimator,
    /// `envelopes[t]` is `y^t`; `envelopes[0] = 0`.
    envelopes: Vec<Vec<Vec<f64>>>,
    estimates: Vec<Vec<Vec<f64>>>,
    first_level: Vec<Option<Decomposition<Vec<usize>>>>,
    decompose_seed: SeedTree,
}

/// `1/(n·2^{t+1})`.
pub fn level_delta(n: usize, t: u32) -> f64 {
    1.0 / (n.max(1) as f64 * 2f64.powi(t as i32 + 1))
}

/// Level `r` selected by `p ∈ [0,1)`: the `r` with `1 − 2^{1−r} ≤ p < 1 − 2^{−r}`.
pub fn dyadic_level(p: f64) -> u32 {
    let mut r = 1;
    while r < MAX_LEVEL && p >= 1.0 - 2f64.powi(-(r as i32)) {
        r += 1;
    }
    r
}

impl<'a> DyadicSimulator<'a> {
    pub fn new(
        inst: &'a Instance,
        alpha: f64,
        choice: OracleChoice,
        estimator: &'a mut dyn DeltaEstimator,
        seed: &SeedTree,
    ) -> Self {
        let n = inst.n();
        let k = inst.k;
        DyadicSimulator {
            inst,
            alpha,
            choice,
            estimator,
            envelopes: vec![vec![vec![0.0; k]; n]],
            estimates: Vec::new(),
            first_level: vec![None; k],
            decompose_seed: seed.child(phase::DECOMPOSE),
        }
    }

    fn ensure_level(&mut self, r: u32) -> Result<()> {
        let n = self.inst.n();
        while (self.envelopes.len() as u32) <= r {
            let t = self.envelopes.len() as u32;
            let delta = level_delta(n, t);
            let x = self.estimator.estimate(t, delta)?;
            check_shape(self.inst, &x)?;
            if x.iter().flatten().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
                return Err(Error::Simulation(format!("estimate at level {t} leaves the unit box")));
            }
            if let Some(prev) = self.estimates.last() {
                let allowed = delta + level_delta(n, t - 1) + 1e-12;
                let moved = x
                    .iter()
                    .flatten()
                    .zip(prev.iter().flatten())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if moved > allowed {
                    return Err(Error::Simulation(format!(
                        "estimates at levels {} and {t} differ by {moved}, more than {allowed}",
                        t - 1
                    )));
                }
            }
            let prev = self.envelopes.last().unwrap();
            let y: Vec<Vec<f64>> = prev
                .iter()
                .zip(&x)
                .map(|(pr, xr)| pr.iter().zip(xr).map(|(&p, &e)| p.max(e - delta)).collect())
                .collect();
            self.envelopes.push(y);
            self.estimates.push(x);
        }
        Ok(())
    }

    /// `y^t`, available once level `t` has been reached.
    pub fn envelope(&self, t: usize) -> Option<&Vec<Vec<f64>>> {
        self.envelopes.get(t)
    }

    fn first_level(&mut self, j: usize) -> Result<&Decomposition<Vec<usize>>> {
        if self.first_level[j].is_none() {
            let col = column(&self.envelopes[1], j);
            let dec = channel_decomposition(
                self.inst,
                &col,
                self.alpha,
                self.choice,
                &self.decompose_seed.child(j as u64),
                j,
            )?;
            self.first_level[j] = Some(dec);
        }
        Ok(self.first_level[j].as_ref().unwrap())
    }

    pub fn sample(&mut self, seed: &SeedTree) -> Result<Allocation> {
        let n = self.inst.n();
        let k = self.inst.k;
        let mut alloc = Allocation::empty(n);
        for j in 0..k {
            let p: f64 = seed.path(&[phase::DYADIC, j as u64]).rng().gen();
            let r = dyadic_level(p);
            self.ensure_level(r)?;
            // offset of p inside the level's interval of length 2^{-r}
            let offset = p - (1.0 - 2f64.powi(1 - r as i32));
            let mass = 2f64.powi(-(r as i32));
            let u = (offset / mass).clamp(0.0, 1.0 - f64::EPSILON);
            let tentative: Vec<usize> = if r == 1 {
                self.first_level(j)?.select(u).clone()
            } else {
                let lo = &self.envelopes[r as usize - 1];
                let hi = &self.envelopes[r as usize];
                let weights: Vec<f64> = (0..n).map(|v| (hi[v][j] - lo[v][j]) / (2.0 * self.alpha)).collect();
                let total: f64 = weights.iter().sum();
                if total > mass * (1.0 + 1e-12) {
                    return Err(Error::Simulation(format!(
                        "level {r} increment on channel {j} has mass {total}, more than {mass}"
                    )));
                }
                let mut acc = 0.0;
                let target = u * mass;
                let mut pick = None;
                for (v, &w) in weights.iter().enumerate() {
                    acc += w;
                    if target < acc {
                        pick = Some(v);
                        break;
                    }
                }
                pick.into_iter().collect()
            };
            let lo = &self.envelopes[r as usize - 1];
            let hi = &self.envelopes[r as usize];
            let mut keep = seed.path(&[phase::RETAIN, j as u64]).rng();
            for v in tentative {
                let q = retention_probability(lo[v][j], hi[v][j], self.alpha);
                if keep.gen::<f64>() < q {
                    alloc.sets[v].push(j);
                }
            }
        }
        Ok(alloc)
    }
}

/// One draw of the dyadic simulation.
pub fn simulate_midr(
    inst: &Instance,
    alpha: f64,
    estimator: &mut dyn DeltaEstimator,
    choice: OracleChoice,
    seed: &SeedTree,
) -> Result<Allocation> {
    DyadicSimulator::new(inst, alpha, choice, estimator, seed).sample(seed)
}

/// With probability `mu` discards the allocation; then with probability
/// `Σ|S_v|/(nk)` of the discarded allocation a uniformly random user gets
/// every channel.
pub fn perturb_midr(inst: &Instance, alloc: &Allocation, mu: f64, seed: &SeedTree) -> Allocation {
    let n = inst.n();
    let k = inst.k;
    let mut rng = seed.child(phase::PERTURB).rng();
    if n == 0 || k == 0 || rng.gen::<f64>() >= mu {
        return alloc.clone();
    }
    let beta = alloc.total_channels() as f64 / (n * k) as f64;
    let mut out = Allocation::empty(n);
    if rng.gen::<f64>() < beta {
        let v = rng.gen_range(0..n);
        out.sets[v] = (0..k).collect();
    }
    out
}

/// Checks that `x` lies in the channel polytope up to `tol`.
pub fn channel_point_violation(inst: &Instance, x: &[Vec<f64>]) -> Result<f64> {
    check_shape(inst, x)?;
    Ok((0..inst.k)
        .map(|j| {
            let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
            channel_column_violation(&inst.graph, &inst.ordering, inst.ordering.rho, &col)
        })
        .fold(0.0, f64::max))
}
