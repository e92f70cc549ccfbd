use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use spectrum_core::decomposition::{verify_channel_decomposition, verify_count_decomposition};
use spectrum_core::exhaustive::{BRUTE_FORCE_K_LIMIT, BRUTE_FORCE_N_LIMIT};
use spectrum_core::greedy::{local_ratio_greedy, monotone_greedy};
use spectrum_core::instance::ValuationClass;
use spectrum_core::mechanism::{
    misreport_grid, monotonicity_probe, truthfulness_probe, LaviSwamyConfig, Mechanism, ProbeMode, RoundingMode,
    ScaledVcg,
};
use spectrum_core::midr::{
    inclusion_probability, maximize_expected_welfare, DyadicSimulator, ExactRounder, FixedEstimator,
};
use spectrum_core::rng::{phase, SeedTree};
use spectrum_core::{fixtures, Error, Instance};

use crate::run::{midr_settings, prepare, trial_seed, Algorithm};
use crate::{emit, load_instance, usage, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Every applicable algorithm yields independent channel sets.
    Feasibility,
    /// Empirical allocation frequencies match their targets within 4σ.
    Marginals,
    /// The monotone greedy keeps every winner winning as its bid rises.
    Monotonicity,
    /// No misreport raises a bidder's expected utility beyond tolerance.
    Truthfulness,
    /// Decompositions sum to one, match their marginals and are feasible.
    Decomposition,
    /// Local-ratio greedy on the seven-user instance matches the golden table.
    GoldenFig1,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    /// Instance files; golden-fig1 uses both bundled bids when none are given.
    pub instances: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds per algorithm, samples for marginals, or misreports per bidder.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long)]
    pub alpha_start: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Compare marginals against targets computed with α multiplied by this factor.
    #[arg(long)]
    pub corrupt_alpha: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

const SIGMA_LIMIT: f64 = 4.0;

#[derive(Serialize)]
struct Report {
    suite: String,
    version: &'static str,
    seed: u64,
    pass: bool,
    instances: Vec<InstanceReport>,
}

#[derive(Serialize)]
struct InstanceReport {
    instance: String,
    pass: bool,
    metrics: Value,
}

pub fn execute(args: &VerifyArgs) -> anyhow::Result<u8> {
    if let Some(f) = args.corrupt_alpha {
        if !(f.is_finite() && f > 0.0) {
            return Err(usage(format!("--corrupt-alpha {f} must be positive")));
        }
    }
    let mut inputs: Vec<(String, Instance)> = Vec::new();
    for path in &args.instances {
        inputs.push((path.display().to_string(), load_instance(path)?));
    }
    if inputs.is_empty() {
        if args.suite != Suite::GoldenFig1 {
            return Err(usage("no instance files given"));
        }
        for x in [3.0, 4.0] {
            inputs.push((format!("figure1(x={x})"), fixtures::instance(x)?));
        }
    }
    let mut reports = Vec::with_capacity(inputs.len());
    for (name, inst) in &inputs {
        let (pass, metrics) = match args.suite {
            Suite::Feasibility => feasibility(inst, args)?,
            Suite::Marginals => marginals(inst, args)?,
            Suite::Monotonicity => monotonicity(inst)?,
            Suite::Truthfulness => truthfulness(inst, args)?,
            Suite::Decomposition => decomposition(inst, args)?,
            Suite::GoldenFig1 => golden(inst),
        };
        reports.push(InstanceReport {
            instance: name.clone(),
            pass,
            metrics,
        });
    }
    let report = Report {
        suite: args
            .suite
            .to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_string(),
        version: VERSION,
        seed: args.seed,
        pass: reports.iter().all(|r| r.pass),
        instances: reports,
    };
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(args.out.as_ref(), &text)?;
    Ok(if report.pass { 0 } else { 1 })
}

/// Algorithms whose preconditions the instance meets.
pub fn applicable(inst: &Instance) -> Vec<Algorithm> {
    let mut out = Vec::new();
    let unweighted = inst.graph.is_unweighted();
    match inst.class() {
        ValuationClass::Symmetric => {
            if unweighted {
                out.push(Algorithm::Alg1);
            }
            out.extend([Algorithm::Alg2, Algorithm::LaviSwamy]);
            if unweighted && inst.k == 1 {
                out.extend([Algorithm::LocalRatio, Algorithm::MonotoneGreedy]);
            }
        }
        ValuationClass::Mrs => out.extend([Algorithm::Midr, Algorithm::MidrExact]),
        ValuationClass::Mixed => {}
    }
    if inst.n() <= BRUTE_FORCE_N_LIMIT && inst.k <= BRUTE_FORCE_K_LIMIT {
        out.push(Algorithm::BruteForce);
    }
    out
}

fn feasibility(inst: &Instance, args: &VerifyArgs) -> anyhow::Result<(bool, Value)> {
    let trials = args.trials.unwrap_or(10);
    let mut per = serde_json::Map::new();
    let mut total = 0;
    for alg in applicable(inst) {
        let prepared = prepare(alg, inst, args.seed, args.tol, args.alpha_start, args.mu)?;
        let runs = prepared.allocations(inst, args.seed, trials)?;
        let violations = runs.iter().filter(|(a, _)| !a.is_feasible(&inst.graph, inst.k)).count();
        total += violations;
        per.insert(alg.name(), json!({ "runs": runs.len(), "violations": violations }));
    }
    Ok((total == 0, json!({ "violations": total, "algorithms": per })))
}

/// Distance of an empirical frequency from `p` in standard errors.
pub fn sigma_distance(freq: f64, p: f64, samples: usize) -> f64 {
    let se = (p * (1.0 - p) / samples as f64).sqrt();
    let diff = (freq - p).abs();
    if se > 0.0 {
        diff / se
    } else if diff <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

struct Worst {
    z: f64,
    cell: Value,
}

impl Worst {
    fn new() -> Self {
        Worst {
            z: 0.0,
            cell: Value::Null,
        }
    }

    fn update(&mut self, z: f64, cell: impl FnOnce() -> Value) {
        if z > self.z || (self.cell.is_null() && z >= self.z) {
            self.z = z;
            self.cell = cell();
        }
    }

    fn value(&self) -> Value {
        json!({
            "max_sigma_distance": if self.z.is_finite() { json!(self.z) } else { json!("inf") },
            "worst_cell": self.cell,
        })
    }
}

fn marginals(inst: &Instance, args: &VerifyArgs) -> anyhow::Result<(bool, Value)> {
    let samples = args.trials.unwrap_or(20_000).max(1);
    let factor = args.corrupt_alpha.unwrap_or(1.0);
    let n = inst.n();
    let k = inst.k;
    match inst.class() {
        ValuationClass::Symmetric => {
            let config = LaviSwamyConfig {
                alpha_start: args.alpha_start,
                tol: args.tol,
                ..LaviSwamyConfig::default()
            };
            let scaled = ScaledVcg::compute(inst, &config, &SeedTree::new(args.seed))?;
            let counts: Vec<Vec<usize>> = (0..samples)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_seed(args.seed, t).child(phase::CHANNEL_TRIAL).rng();
                    scaled
                        .decomposition
                        .sample(&mut rng)
                        .sets
                        .iter()
                        .map(Vec::len)
                        .collect()
                })
                .collect();
            let alpha = scaled.decomposition.alpha_achieved * factor;
            let mut worst = Worst::new();
            for v in 0..n {
                for i in 1..=k {
                    let p = scaled.vcg.solution.x[v][i] / alpha;
                    let freq = counts.iter().filter(|c| c[v] == i).count() as f64 / samples as f64;
                    let z = sigma_distance(freq, p, samples);
                    worst.update(z, || json!({ "user": v, "count": i, "empirical": freq, "target": p }));
                }
            }
            let mut m = worst.value();
            m["alpha"] = json!(alpha);
            m["samples"] = json!(samples);
            Ok((worst.z <= SIGMA_LIMIT, m))
        }
        ValuationClass::Mrs => {
            let settings = midr_settings(args.tol, args.alpha_start, args.mu, RoundingMode::Exact);
            let config = settings.config(inst);
            let x = maximize_expected_welfare(inst, &config)?.x;
            let base = SeedTree::new(args.seed);
            let rounder = ExactRounder::new(inst, &x, config.alpha, config.oracle, &base)?;
            let exact: Vec<_> = (0..samples)
                .into_par_iter()
                .map(|t| rounder.sample(&trial_seed(args.seed, t)))
                .collect();
            let mut estimator = FixedEstimator(x.clone());
            let mut sim = DyadicSimulator::new(inst, config.alpha, config.oracle, &mut estimator, &base);
            let simulated = (0..samples)
                .map(|t| sim.sample(&trial_seed(args.seed, t)))
                .collect::<Result<Vec<_>, Error>>()?;
            let alpha = config.alpha * factor;
            let mut worst = Worst::new();
            for (mode, draws) in [("exact", &exact), ("simulated", &simulated)] {
                for v in 0..n {
                    for j in 0..k {
                        let p = inclusion_probability(x[v][j], alpha);
                        let hits = draws.iter().filter(|a| a.sets[v].contains(&j)).count();
                        let freq = hits as f64 / samples as f64;
                        let z = sigma_distance(freq, p, samples);
                        worst.update(
                            z,
                            || json!({ "mode": mode, "user": v, "channel": j, "empirical": freq, "target": p }),
                        );
                    }
                }
            }
            let mut m = worst.value();
            m["alpha"] = json!(alpha);
            m["samples"] = json!(samples);
            Ok((worst.z <= SIGMA_LIMIT, m))
        }
        ValuationClass::Mixed => Err(Error::Mode("marginal checks need a single valuation class".into()).into()),
    }
}

fn single_channel_bids(inst: &Instance) -> anyhow::Result<Vec<f64>> {
    if inst.k != 1 {
        return Err(Error::Mode(format!("monotonicity needs one channel, the instance has {}", inst.k)).into());
    }
    Ok(inst.require_symmetric()?.iter().map(|s| s.of_count(1)).collect())
}

fn monotonicity(inst: &Instance) -> anyhow::Result<(bool, Value)> {
    let bids = single_channel_bids(inst)?;
    let top = bids.iter().copied().fold(0.0, f64::max);
    let mut grid: Vec<f64> = vec![0.0, 2.0 * top + 1.0];
    for &b in &bids {
        grid.extend([b, b + 0.5, (b - 0.5).max(0.0)]);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let g = &inst.graph;
    let ord = &inst.ordering;
    let lr = |g: &_, o: &_, b: &[f64]| local_ratio_greedy(g, o, b).map(|t| t.set);
    let mut violations = Vec::new();
    let mut lr_witnesses = Vec::new();
    for v in 0..inst.n() {
        let mono = monotonicity_probe(monotone_greedy::<f64>, g, ord, &bids, v, &grid)?;
        if let Some((lo, hi)) = mono.witness {
            violations.push(json!({ "user": v, "wins_at": lo, "loses_at": hi }));
        }
        if let Some((lo, hi)) = monotonicity_probe(lr, g, ord, &bids, v, &grid)?.witness {
            lr_witnesses.push(json!({ "user": v, "wins_at": lo, "loses_at": hi }));
        }
    }
    Ok((
        violations.is_empty(),
        json!({
            "grid_points": grid.len(),
            "monotone_greedy_violations": violations,
            "local_ratio_witnesses": lr_witnesses,
        }),
    ))
}

fn truthfulness(inst: &Instance, args: &VerifyArgs) -> anyhow::Result<(bool, Value)> {
    let count = args.trials.unwrap_or(20);
    let mech = match inst.class() {
        ValuationClass::Symmetric => Mechanism::LaviSwamy(LaviSwamyConfig {
            alpha_start: args.alpha_start,
            tol: args.tol,
            ..LaviSwamyConfig::default()
        }),
        ValuationClass::Mrs => Mechanism::Midr(midr_settings(args.tol, args.alpha_start, args.mu, RoundingMode::Exact)),
        ValuationClass::Mixed => {
            return Err(Error::Mode("truthfulness probes need a single valuation class".into()).into())
        }
    };
    let threshold = -(2.0 * args.tol + 1e-9);
    let base = SeedTree::new(args.seed);
    let reports = (0..inst.n())
        .into_par_iter()
        .map(|v| {
            let mut rng = base.path(&[phase::ORACLE, v as u64]).rng();
            let misreports = misreport_grid(&inst.valuations[v], inst.k, count, &mut rng);
            truthfulness_probe(&mech, inst, v, &misreports, ProbeMode::Exact, &base)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut worst = (f64::INFINITY, 0usize, 0usize);
    for r in &reports {
        for (i, &d) in r.deltas.iter().enumerate() {
            if d < worst.0 {
                worst = (d, r.bidder, i);
            }
        }
    }
    let gap = reports.iter().map(|r| r.gap).fold(0.0, f64::max);
    let probes: usize = reports.iter().map(|r| r.deltas.len()).sum();
    let min = if worst.0.is_finite() {
        json!(worst.0)
    } else {
        Value::Null
    };
    Ok((
        worst.0 >= threshold,
        json!({
            "probes": probes,
            "min_delta": min,
            "worst_bidder": worst.1,
            "worst_report": worst.2,
            "threshold": threshold,
            "gap": gap,
        }),
    ))
}

fn decomposition(inst: &Instance, args: &VerifyArgs) -> anyhow::Result<(bool, Value)> {
    let base = SeedTree::new(args.seed);
    match inst.class() {
        ValuationClass::Symmetric => {
            let config = LaviSwamyConfig {
                alpha_start: args.alpha_start,
                tol: args.tol,
                ..LaviSwamyConfig::default()
            };
            let scaled = ScaledVcg::compute(inst, &config, &base)?;
            let dec = &scaled.decomposition;
            let r = verify_count_decomposition(dec, inst, &scaled.vcg.solution);
            Ok((
                r.ok,
                json!({
                    "report": r,
                    "entries": dec.entries.len(),
                    "alpha_start": dec.alpha_start,
                    "alpha_achieved": dec.alpha_achieved,
                    "doublings": dec.doublings,
                }),
            ))
        }
        ValuationClass::Mrs => {
            let settings = midr_settings(args.tol, args.alpha_start, args.mu, RoundingMode::Exact);
            let config = settings.config(inst);
            let x = maximize_expected_welfare(inst, &config)?.x;
            let rounder = ExactRounder::new(inst, &x, config.alpha, config.oracle, &base)?;
            let mut channels = Vec::new();
            let mut ok = true;
            for (j, dec) in rounder.decompositions().iter().enumerate() {
                let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
                let r = verify_channel_decomposition(dec, &inst.graph, &col);
                ok &= r.ok;
                channels.push(json!({
                    "channel": j,
                    "report": r,
                    "entries": dec.entries.len(),
                    "alpha_achieved": dec.alpha_achieved,
                }));
            }
            Ok((ok, json!({ "alpha": config.alpha, "channels": channels })))
        }
        ValuationClass::Mixed => Err(Error::Mode("decompositions need a single valuation class".into()).into()),
    }
}

/// Selected users and doubled first-pass residuals for the two bids of the varying user.
const GOLDEN: [(i64, [usize; 4], usize, [i64; 7]); 2] = [
    (3, [1, 2, 3, 6], 4, [-1, 8, 8, 2, 6, 6, 6]),
    (4, [0, 4, 0, 0], 2, [1, 6, 6, 2, 8, 4, 8]),
];

fn golden(inst: &Instance) -> (bool, Value) {
    let fail = |why: &str| (false, json!({ "reason": why }));
    if inst.k != 1 || inst.graph != fixtures::graph() || inst.ordering.order() != fixtures::ordering().order() {
        return fail("not the figure-1 graph with one channel");
    }
    let Ok(vals) = inst.require_symmetric() else {
        return fail("valuations are not symmetric");
    };
    let bids: Vec<f64> = vals.iter().map(|s| s.of_count(1)).collect();
    if bids[..6] != fixtures::FIXED_BIDS {
        return fail("fixed bids differ from the figure-1 bids");
    }
    let Some(&(x, set, len, residual)) = GOLDEN.iter().find(|g| g.0 as f64 == bids[fixtures::VARYING_USER]) else {
        return fail("varying bid has no golden entry");
    };
    // doubled bids are integers, so the comparison is exact
    let doubled: Vec<i64> = bids.iter().map(|b| (2.0 * b) as i64).collect();
    let trace = local_ratio_greedy(&inst.graph, &inst.ordering, &doubled).expect("fixture graph is unweighted");
    let set_ok = trace.set == set[..len];
    let residual_ok = trace.residual == residual;
    let halves = |r: &[i64]| r.iter().map(|&d| d as f64 / 2.0).collect::<Vec<f64>>();
    (
        set_ok && residual_ok,
        json!({
            "x": x,
            "set": trace.set,
            "expected_set": &set[..len],
            "residuals": halves(&trace.residual),
            "expected_residuals": halves(&residual),
            "set_match": set_ok,
            "residual_match": residual_ok,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_distance_edges() {
        assert_eq!(sigma_distance(0.0, 0.0, 10), 0.0);
        assert_eq!(sigma_distance(0.1, 0.0, 10), f64::INFINITY);
        assert!((sigma_distance(0.6, 0.5, 100) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn golden_table_holds_for_both_bids() {
        for x in [3.0, 4.0] {
            let (pass, m) = golden(&fixtures::instance(x).unwrap());
            assert!(pass, "{m}");
        }
        let (pass, _) = golden(&fixtures::instance(5.0).unwrap());
        assert!(!pass);
    }
}
