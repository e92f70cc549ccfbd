//! Truthful-in-expectation mechanisms and probes for truthfulness and
//! monotonicity.

use rand::Rng;
use serde::Serialize;

use crate::decomposition::{decompose_count_solution, CountOracleConfig, Decomposition, OracleChoice};
use crate::error::{Error, Result};
pub use crate::exhaustive::brute_force_optimum;
use crate::graph::{ConflictGraph, Ordering};
use crate::instance::{Allocation, Instance};
use crate::lp::{build_symmetric_lp, CountSolution};
use crate::midr::{
    maximize_expected_welfare, perturb_midr, user_values, ChannelSolution, DyadicSimulator, ExactRounder,
    FixedEstimator, MidrConfig,
};
use crate::rng::{phase, SeedTree};
use crate::valuations::Valuation;

/// Settings of the scaled-VCG mechanism for symmetric valuations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaviSwamyConfig {
    /// Scaling of the LP point; [`default_ls_alpha`] when unset.
    pub alpha_start: Option<f64>,
    pub tol: f64,
    pub oracle: CountOracleConfig,
}

impl Default for LaviSwamyConfig {
    fn default() -> Self {
        LaviSwamyConfig {
            alpha_start: None,
            tol: 1e-9,
            oracle: CountOracleConfig::default(),
        }
    }
}

/// `max(1, 16ρ)` on unweighted graphs, `16ρ⌈log2(2nk)⌉` on weighted ones,
/// with `ρ` floored at 1.
pub fn default_ls_alpha(inst: &Instance) -> f64 {
    let rho = inst.rho_floor();
    if inst.graph.is_unweighted() {
        (16.0 * rho).max(1.0)
    } else {
        let log = ((2 * inst.n() * inst.k).max(2) as f64).log2().ceil();
        16.0 * rho * log
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoundingMode {
    /// Round the optimized point directly.
    Exact,
    /// Simulate exact rounding through dyadic estimates.
    #[default]
    Simulated,
}

/// Settings of the MIDR mechanism; unset fields take the instance defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MidrSettings {
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
    pub tol_gap: Option<f64>,
    pub rounding: RoundingMode,
    pub oracle: OracleChoice,
}

impl MidrSettings {
    pub fn config(&self, inst: &Instance) -> MidrConfig {
        let mut c = MidrConfig::for_instance(inst);
        if let Some(a) = self.alpha {
            c.alpha = a;
        }
        if let Some(m) = self.mu {
            c.mu = m;
        }
        if let Some(t) = self.tol_gap {
            c.tol_gap = t;
        }
        c.oracle = self.oracle;
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mechanism {
    LaviSwamy(LaviSwamyConfig),
    Midr(MidrSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub realized_welfare: f64,
    /// LP optimum, or the perturbed convex optimum for MIDR.
    pub relaxation_optimum: f64,
    pub alpha_start: f64,
    pub alpha_achieved: f64,
    pub doublings: u32,
    pub gap: f64,
    /// Payments before clipping at zero.
    pub raw_payments: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MechanismOutcome {
    pub allocation: Allocation,
    pub payments: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Fractional VCG for the count-form LP: the LP point, its optimum and
/// per-user payments `OPT(−v) − (OPT − own share of v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalVcg {
    pub rho: f64,
    pub solution: CountSolution,
    pub payments: Vec<f64>,
}

fn own_share(inst: &Instance, x: &CountSolution, v: usize) -> f64 {
    let b = inst.valuations[v].as_symmetric().expect("checked symmetric");
    (1..=inst.k).map(|i| b.of_count(i) * x.x[v][i]).sum()
}

pub fn fractional_vcg(inst: &Instance, tol: f64) -> Result<FractionalVcg> {
    inst.require_symmetric()?;
    let rho = inst.rho_floor();
    let solution = build_symmetric_lp(inst, rho)?.solve(tol)?;
    let payments = (0..inst.n())
        .map(|v| {
            let without = inst.with_report(v, inst.valuations[v].zero_like());
            let opt_without = build_symmetric_lp(&without, rho)?.solve(tol)?.objective;
            Ok(opt_without - (solution.objective - own_share(inst, &solution, v)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FractionalVcg {
        rho,
        solution,
        payments,
    })
}

/// Fractional VCG plus the decomposition of the scaled LP point.
#[derive(Debug, Clone)]
pub struct ScaledVcg {
    pub vcg: FractionalVcg,
    pub decomposition: Decomposition<Allocation>,
}

impl ScaledVcg {
    pub fn compute(inst: &Instance, config: &LaviSwamyConfig, seed: &SeedTree) -> Result<Self> {
        let vcg = fractional_vcg(inst, config.tol)?;
        let alpha = config.alpha_start.unwrap_or_else(|| default_ls_alpha(inst));
        let decomposition = decompose_count_solution(
            inst,
            &vcg.solution,
            vcg.rho,
            alpha,
            config.oracle,
            &seed.child(phase::DECOMPOSE),
        )?;
        Ok(ScaledVcg { vcg, decomposition })
    }

    /// Payment charged with every outcome: the fractional payment over the
    /// achieved scaling.
    pub fn payment(&self, v: usize) -> f64 {
        self.vcg.payments[v] / self.decomposition.alpha_achieved
    }

    /// Probability that `v` receives exactly `i` channels.
    pub fn count_probability(&self, v: usize, i: usize) -> f64 {
        self.vcg.solution.x[v][i] / self.decomposition.alpha_achieved
    }
}

pub fn lavi_swamy_mechanism(inst: &Instance, config: &LaviSwamyConfig, seed: &SeedTree) -> Result<MechanismOutcome> {
    let scaled = ScaledVcg::compute(inst, config, seed)?;
    let mut rng = seed.child(phase::CHANNEL_TRIAL).rng();
    let allocation = scaled.decomposition.sample(&mut rng).clone();
    let raw: Vec<f64> = (0..inst.n()).map(|v| scaled.payment(v)).collect();
    Ok(MechanismOutcome {
        diagnostics: Diagnostics {
            realized_welfare: inst.welfare(&allocation),
            relaxation_optimum: scaled.vcg.solution.objective,
            alpha_start: scaled.decomposition.alpha_start,
            alpha_achieved: scaled.decomposition.alpha_achieved,
            doublings: scaled.decomposition.doublings,
            gap: scaled.vcg.solution.gap,
            raw_payments: raw.clone(),
            seed: seed.key(),
        },
        payments: raw.iter().map(|p| p.max(0.0)).collect(),
        allocation,
    })
}

/// The optimized MIDR point and the VCG payments over the range.
#[derive(Debug, Clone)]
pub struct RangeVcg {
    pub config: MidrConfig,
    pub solution: ChannelSolution,
    pub raw_payments: Vec<f64>,
    /// Largest certified gap among the optimizations involved.
    pub gap: f64,
}

impl RangeVcg {
    pub fn compute(inst: &Instance, settings: &MidrSettings) -> Result<Self> {
        let config = settings.config(inst);
        let solution = maximize_expected_welfare(inst, &config)?;
        let values = user_values(inst, &solution.x, config.alpha, config.mu)?;
        let total: f64 = values.iter().sum();
        let mut gap = solution.gap;
        let mut raw_payments = Vec::with_capacity(inst.n());
        for v in 0..inst.n() {
            let without = inst.with_report(v, inst.valuations[v].zero_like());
            let best = maximize_expected_welfare(&without, &config)?;
            gap = gap.max(best.gap);
            raw_payments.push(best.objective - (total - values[v]));
        }
        Ok(RangeVcg {
            config,
            solution,
            raw_payments,
            gap,
        })
    }
}

pub fn midr_mechanism(inst: &Instance, settings: &MidrSettings, seed: &SeedTree) -> Result<MechanismOutcome> {
    let range = RangeVcg::compute(inst, settings)?;
    let config = range.config;
    let rounded = match settings.rounding {
        RoundingMode::Exact => {
            ExactRounder::new(inst, &range.solution.x, config.alpha, config.oracle, seed)?.sample(seed)
        }
        RoundingMode::Simulated => {
            let mut estimator = FixedEstimator(range.solution.x.clone());
            DyadicSimulator::new(inst, config.alpha, config.oracle, &mut estimator, seed).sample(seed)?
        }
    };
    let allocation = perturb_midr(inst, &rounded, config.mu, seed);
    Ok(MechanismOutcome {
        diagnostics: Diagnostics {
            realized_welfare: inst.welfare(&allocation),
            relaxation_optimum: range.solution.objective,
            alpha_start: config.alpha,
            alpha_achieved: config.alpha,
            doublings: 0,
            gap: range.gap,
            raw_payments: range.raw_payments.clone(),
            seed: seed.key(),
        },
        payments: range.raw_payments.iter().map(|p| p.max(0.0)).collect(),
        allocation,
    })
}

pub fn run_mechanism(mech: &Mechanism, inst: &Instance, seed: &SeedTree) -> Result<MechanismOutcome> {
    match mech {
        Mechanism::LaviSwamy(c) => lavi_swamy_mechanism(inst, c, seed),
        Mechanism::Midr(s) => midr_mechanism(inst, s, seed),
    }
}

/// Expected utility of a bidder with valuation `truth` when the reports are
/// `reported`, in closed form.
pub fn expected_utility(
    mech: &Mechanism,
    reported: &Instance,
    v: usize,
    truth: &Valuation,
    seed: &SeedTree,
) -> Result<f64> {
    match mech {
        Mechanism::LaviSwamy(c) => {
            let scaled = ScaledVcg::compute(reported, c, seed)?;
            let b = truth
                .as_symmetric()
                .ok_or_else(|| Error::Mode("scaled VCG needs a symmetric true valuation".into()))?;
            let value: f64 = (1..=reported.k)
                .map(|i| b.of_count(i) * scaled.count_probability(v, i))
                .sum();
            Ok(value - scaled.payment(v).max(0.0))
        }
        Mechanism::Midr(s) => {
            let range = RangeVcg::compute(reported, s)?;
            let true_inst = reported.with_report(v, truth.clone());
            let values = user_values(&true_inst, &range.solution.x, range.config.alpha, range.config.mu)?;
            Ok(values[v] - range.raw_payments[v].max(0.0))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum ProbeMode {
    Exact,
    Sampled { trials: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthfulnessReport {
    pub bidder: usize,
    pub truthful_utility: f64,
    /// Utility of truth minus utility of each misreport.
    pub deltas: Vec<f64>,
    /// Largest certified optimization gap seen, for tolerance accounting.
    pub gap: f64,
}

impl TruthfulnessReport {
    pub fn min_delta(&self) -> f64 {
        self.deltas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn sampled_utility(
    mech: &Mechanism,
    reported: &Instance,
    v: usize,
    truth: &Valuation,
    trials: usize,
    seed: &SeedTree,
) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..trials {
        let out = run_mechanism(mech, reported, &seed.path(&[phase::TRIAL, t as u64]))?;
        total += truth.value_unchecked(&out.allocation.sets[v]) - out.payments[v];
    }
    Ok(total / trials.max(1) as f64)
}

fn mechanism_gap(mech: &Mechanism, inst: &Instance) -> Result<f64> {
    Ok(match mech {
        Mechanism::LaviSwamy(c) => c.tol,
        Mechanism::Midr(s) => RangeVcg::compute(inst, s)?.gap,
    })
}

/// Compares the truthful utility of bidder `v` with its utility under each
/// misreport. Sampled mode reuses the same seeds for every report.
pub fn truthfulness_probe(
    mech: &Mechanism,
    inst: &Instance,
    v: usize,
    misreports: &[Valuation],
    mode: ProbeMode,
    seed: &SeedTree,
) -> Result<TruthfulnessReport> {
    if v >= inst.n() {
        return Err(Error::Domain(format!("bidder {v} out of range")));
    }
    let truth = inst.valuations[v].clone();
    let utility = |reported: &Instance| match mode {
        ProbeMode::Exact => expected_utility(mech, reported, v, &truth, seed),
        ProbeMode::Sampled { trials } => sampled_utility(mech, reported, v, &truth, trials, seed),
    };
    let truthful_utility = utility(inst)?;
    let mut deltas = Vec::with_capacity(misreports.len());
    for report in misreports {
        report.validate(inst.k)?;
        let reported = inst.with_report(v, report.clone());
        deltas.push(truthful_utility - utility(&reported)?);
    }
    Ok(TruthfulnessReport {
        bidder: v,
        truthful_utility,
        deltas,
        gap: mechanism_gap(mech, inst)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub monotone: bool,
    /// Bids `(low, high)` at which `v` wins with `low` but loses with `high`.
    pub witness: Option<(f64, f64)>,
}

/// Whether `v` keeps winning as its bid moves up the ascending `grid`.
pub fn monotonicity_probe<F>(
    algorithm: F,
    g: &ConflictGraph,
    ord: &Ordering,
    bids: &[f64],
    v: usize,
    grid: &[f64],
) -> Result<MonotonicityReport>
where
    F: Fn(&ConflictGraph, &Ordering, &[f64]) -> Result<Vec<usize>>,
{
    if v >= bids.len() {
        return Err(Error::Domain(format!("user {v} out of range")));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter("bid grid must be ascending".into()));
    }
    let mut wins = Vec::with_capacity(grid.len());
    for &b in grid {
        let mut probe = bids.to_vec();
        probe[v] = b;
        wins.push(algorithm(g, ord, &probe)?.contains(&v));
    }
    for lo in 0..grid.len() {
        if !wins[lo] {
            continue;
        }
        if let Some(hi) = (lo + 1..grid.len()).find(|&hi| !wins[hi]) {
            return Ok(MonotonicityReport {
                monotone: false,
                witness: Some((grid[lo], grid[hi])),
            });
        }
    }
    Ok(MonotonicityReport {
        monotone: true,
        witness: None,
    })
}

/// Misreports for probing: scalings of the truth, zero, and random
/// valuations of the same class.
pub fn misreport_grid<R: Rng>(truth: &Valuation, k: usize, count: usize, rng: &mut R) -> Vec<Valuation> {
    let mut out = Vec::with_capacity(count);
    let scales = [0.0, 0.25, 0.5, 0.9, 1.1, 1.5, 2.0, 4.0];
    for &c in scales.iter().take(count) {
        out.push(if c == 0.0 { truth.zero_like() } else { truth.scaled(c) });
    }
    while out.len() < count {
        let v = match truth {
            Valuation::Symmetric(_) => Valuation::Symmetric(crate::instance::random_symmetric(k, rng)),
            Valuation::Mrs(_) => Valuation::Mrs(crate::instance::random_mrs(k, rng)),
        };
        out.push(v);
    }
    out
}
