//! Acceptance suite: one line per criterion, nonzero exit on any failure.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::Rational64;
use rand::Rng;
use rayon::prelude::*;
use spectrum_core::decomposition::{
    decompose_channel, decompose_count_solution, verify_channel_decomposition, CountOracleConfig, OracleChoice,
};
use spectrum_core::exhaustive::brute_force_optimum;
use spectrum_core::fixtures;
use spectrum_core::generators::PhysicalParams;
use spectrum_core::generators::{best_ordering, random_graph as raw_graph};
use spectrum_core::graph::{exact_rho, ConflictGraph, Ordering};
use spectrum_core::greedy::{local_ratio_greedy, monotone_greedy};
use spectrum_core::instance::{
    random_instance, random_mrs, Allocation, GraphKind, Instance, InstanceSpec, ValuationClass,
};
use spectrum_core::lp::{build_single_channel_lp, build_symmetric_lp, solve_packing_lp};
use spectrum_core::mechanism::{
    default_ls_alpha, misreport_grid, monotonicity_probe, truthfulness_probe, LaviSwamyConfig, Mechanism, MidrSettings,
    ProbeMode, RoundingMode,
};
use spectrum_core::midr::{
    inclusion_probability, maximize_expected_welfare, perturb_midr, DyadicSimulator, ExactRounder, FixedEstimator,
    MidrConfig,
};
use spectrum_core::rng::SeedTree;
use spectrum_core::rounding::{allocate_large, round_unweighted, round_weighted, round_weighted_traced};

type Check = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn r(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

fn golden() -> Check {
    let bids = |x: i64| vec![r(23, 2), r(7, 1), r(7, 1), r(7, 1), r(6, 1), r(6, 1), r(x, 1)];
    let table = [
        (
            3,
            vec![1, 2, 3, 6],
            vec![r(-1, 2), r(4, 1), r(4, 1), r(1, 1), r(3, 1), r(3, 1), r(3, 1)],
        ),
        (
            4,
            vec![0, 4],
            vec![r(1, 2), r(3, 1), r(3, 1), r(1, 1), r(4, 1), r(2, 1), r(4, 1)],
        ),
    ];
    let (g, ord) = (fixtures::graph(), fixtures::ordering());
    for (x, set, residual) in table {
        let t = local_ratio_greedy(&g, &ord, &bids(x)).map_err(err)?;
        ensure(t.set == set, || format!("x={x}: set {:?}, expected {set:?}", t.set))?;
        ensure(t.residual == residual, || format!("x={x}: residuals {:?}", t.residual))?;
    }
    Ok("sets {2,3,4,7} at x=3 and {1,5} at x=4 with all residuals exact".into())
}

fn witness() -> Check {
    let (g, ord) = (fixtures::graph(), fixtures::ordering());
    let bids = fixtures::bids(3.0);
    let v = fixtures::VARYING_USER;
    let lr = |g: &ConflictGraph, o: &Ordering, b: &[f64]| local_ratio_greedy(g, o, b).map(|t| t.set);
    let a = monotonicity_probe(lr, &g, &ord, &bids, v, &[3.0, 4.0]).map_err(err)?;
    ensure(!a.monotone, || "local-ratio greedy showed no violation".into())?;
    let b = monotonicity_probe(monotone_greedy::<f64>, &g, &ord, &bids, v, &[3.0, 4.0]).map_err(err)?;
    ensure(b.monotone, || format!("monotone greedy violated at {:?}", b.witness))?;
    Ok(format!(
        "local-ratio witness {:?}; monotone greedy clean",
        a.witness.unwrap()
    ))
}

fn graph_kind(i: u64) -> GraphKind {
    match i % 4 {
        0 => GraphKind::Unweighted { p: 0.4 },
        1 => GraphKind::Weighted {
            p: 0.5,
            max_weight: 0.9,
        },
        2 => GraphKind::Protocol { side: 6.0, radius: 2.0 },
        _ => GraphKind::Physical {
            side: 8.0,
            params: PhysicalParams {
                pathloss_exponent: 3.0,
                sinr_threshold: 1.0,
                noise: 0.0,
            },
        },
    }
}

fn fuzz_instance(i: u64) -> Instance {
    let mut rng = SeedTree::new(0xF00D).child(i).rng();
    let spec = InstanceSpec {
        n: rng.gen_range(1..=12),
        k: rng.gen_range(1..=8),
        graph: graph_kind(i),
        class: if i % 3 == 2 {
            ValuationClass::Mrs
        } else {
            ValuationClass::Symmetric
        },
    };
    random_instance(&spec, i).expect("generator parameters are valid")
}

/// Allocations of every applicable algorithm for ten seeds.
fn all_allocations(inst: &Instance, i: u64) -> Result<Vec<(&'static str, Allocation)>, String> {
    let mut out = Vec::new();
    let seeds: Vec<SeedTree> = (0..10).map(|s| SeedTree::new(i).child(s)).collect();
    if inst.k <= 3 {
        out.push(("brute-force", brute_force_optimum(inst).map_err(err)?.0));
    }
    match inst.class() {
        ValuationClass::Symmetric => {
            let rho = inst.rho_floor();
            let x = build_symmetric_lp(inst, rho).map_err(err)?.solve(1e-9).map_err(err)?;
            let dec = decompose_count_solution(
                inst,
                &x,
                rho,
                default_ls_alpha(inst),
                CountOracleConfig::default(),
                &SeedTree::new(i),
            )
            .map_err(err)?;
            for s in &seeds {
                if inst.graph.is_unweighted() {
                    out.push(("alg1", round_unweighted(inst, &x, rho, s).map_err(err)?));
                }
                out.push(("alg2", round_weighted(inst, &x, rho, s).map_err(err)?));
                out.push(("lavi-swamy", dec.sample(&mut s.rng()).clone()));
            }
            if inst.k == 1 && inst.graph.is_unweighted() {
                let bids: Vec<f64> = inst
                    .require_symmetric()
                    .map_err(err)?
                    .iter()
                    .map(|b| b.of_count(1))
                    .collect();
                for set in [
                    local_ratio_greedy(&inst.graph, &inst.ordering, &bids).map_err(err)?.set,
                    monotone_greedy(&inst.graph, &inst.ordering, &bids).map_err(err)?,
                ] {
                    let mut a = Allocation::empty(inst.n());
                    for v in set {
                        a.sets[v].push(0);
                    }
                    out.push(("greedy", a));
                }
            }
        }
        ValuationClass::Mrs => {
            let config = MidrConfig::for_instance(inst);
            let x = maximize_expected_welfare(inst, &config).map_err(err)?.x;
            let base = SeedTree::new(i);
            let rounder = ExactRounder::new(inst, &x, config.alpha, config.oracle, &base).map_err(err)?;
            let mut est = FixedEstimator(x.clone());
            let mut sim = DyadicSimulator::new(inst, config.alpha, config.oracle, &mut est, &base);
            for s in &seeds {
                out.push(("midr-exact", perturb_midr(inst, &rounder.sample(s), config.mu, s)));
                out.push(("midr", perturb_midr(inst, &sim.sample(s).map_err(err)?, config.mu, s)));
            }
        }
        ValuationClass::Mixed => unreachable!("corpus has no mixed instances"),
    }
    Ok(out)
}

fn feasibility() -> Check {
    let results: Vec<Result<(usize, usize), String>> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let inst = fuzz_instance(i);
            let allocs = all_allocations(&inst, i).map_err(|e| format!("instance {i}: {e}"))?;
            let bad = allocs
                .iter()
                .filter(|(_, a)| !a.is_feasible(&inst.graph, inst.k))
                .count();
            Ok((allocs.len(), bad))
        })
        .collect();
    let mut runs = 0;
    let mut bad = 0;
    for res in results {
        let (a, b) = res?;
        runs += a;
        bad += b;
    }
    ensure(bad == 0, || format!("{bad} infeasible allocations out of {runs}"))?;
    Ok(format!("1000 instances, {runs} allocations, 0 violations"))
}

fn welfare_bound() -> Check {
    let lines: Vec<Result<(f64, f64), String>> = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeedTree::new(0xA11).child(i).rng();
            let spec = InstanceSpec {
                n: rng.gen_range(2..=10),
                k: [2, 4, 8][i as usize % 3],
                graph: GraphKind::Unweighted {
                    p: rng.gen_range(0.2..0.7),
                },
                class: ValuationClass::Symmetric,
            };
            let inst = random_instance(&spec, 500 + i).map_err(err)?;
            let rho = inst.rho_floor();
            let x = build_symmetric_lp(&inst, rho).map_err(err)?.solve(1e-9).map_err(err)?;
            let trials = 2000;
            let w: Vec<f64> = (0..trials)
                .map(|t| round_unweighted(&inst, &x, rho, &SeedTree::new(i).child(t)).map(|a| inst.welfare(&a)))
                .collect::<Result<_, _>>()
                .map_err(err)?;
            let mean = w.iter().sum::<f64>() / trials as f64;
            let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials as f64 - 1.0);
            let bound = x.objective / (16.0 * rho) - 3.0 * (var / trials as f64).sqrt();
            if mean >= bound {
                Ok((mean, x.objective / (16.0 * rho)))
            } else {
                Err(format!("instance {i}: mean {mean} < bound {bound}"))
            }
        })
        .collect();
    let mut worst = f64::INFINITY;
    for l in lines {
        let (mean, target) = l?;
        if target > 0.0 {
            worst = worst.min(mean / target);
        }
    }
    Ok(format!("50 instances; smallest mean/(LP/16ρ) = {worst:.2}"))
}

fn allocate_large_structure() -> Check {
    let cases: Vec<Result<(f64, usize, f64), String>> = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeedTree::new(0xB16).child(i).rng();
            let inst = random_instance(
                &InstanceSpec {
                    n: rng.gen_range(1..=12),
                    k: rng.gen_range(1..=32),
                    graph: graph_kind(1 + 2 * (i % 2)),
                    class: ValuationClass::Symmetric,
                },
                i,
            )
            .map_err(err)?;
            let (n, k) = (inst.n(), inst.k);
            let mut traces = Vec::new();
            let lo = k.div_ceil(8).max(1);
            let mut d: Vec<usize> = (0..n)
                .map(|_| if rng.gen_bool(0.7) { rng.gen_range(lo..=k) } else { 0 })
                .collect();
            for &v in inst.ordering.order() {
                let load: f64 = (0..n)
                    .filter(|&u| u != v && inst.ordering.precedes(u, v))
                    .map(|u| d[u] as f64 * inst.graph.sym(u, v))
                    .sum();
                if d[v] > 0 && load >= k as f64 / 32.0 {
                    d[v] = 0;
                }
            }
            traces.push(allocate_large(&inst, &d).map_err(err)?.trace);
            let x = build_symmetric_lp(&inst, inst.rho_floor())
                .map_err(err)?
                .solve(1e-9)
                .map_err(err)?;
            for s in 0..5 {
                let (_, t) =
                    round_weighted_traced(&inst, &x, inst.rho_floor(), &SeedTree::new(i).child(s)).map_err(err)?;
                traces.push(t.large);
            }
            let cap = 4.0 * ((n as f64).log2() + (k as f64).log2()) + 8.0;
            let incoming = traces.iter().map(|t| t.max_incoming).fold(0.0, f64::max);
            let rounds = traces.iter().map(|t| t.rounds).max().unwrap_or(0);
            Ok((incoming, rounds, cap))
        })
        .collect();
    let mut worst_in: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    let mut over_quarter = 0;
    let mut over_cap = 0;
    for c in cases {
        let (inc, rounds, cap) = c?;
        worst_in = worst_in.max(inc);
        worst_ratio = worst_ratio.max(rounds as f64 / cap);
        over_quarter += (inc >= 0.25) as usize;
        over_cap += (rounds as f64 > cap) as usize;
    }
    let detail = format!(
        "max incoming {worst_in:.4} ({over_quarter} cases ≥ 1/4); max rounds/cap {worst_ratio:.3} ({over_cap} over cap)"
    );
    ensure(over_quarter == 0 && over_cap == 0, || detail.clone())?;
    Ok(detail)
}

/// A point of the single-channel polytope: an LP vertex or a scaled random point.
fn channel_point(g: &ConflictGraph, ord: &Ordering, seed: u64) -> Vec<f64> {
    let mut rng = SeedTree::new(seed).child(1).rng();
    let n = g.n();
    if rng.gen_bool(0.5) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let lp = build_single_channel_lp(g, ord, ord.rho, &a).expect("valid LP");
        solve_packing_lp(&lp, 1e-9)
            .expect("bounded LP")
            .x
            .iter()
            .map(|x| x.clamp(0.0, 1.0))
            .collect()
    } else {
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let worst = (0..n)
            .map(|v| {
                (0..n)
                    .filter(|&u| ord.precedes(u, v))
                    .map(|u| g.sym(u, v) * x[u])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        let scale = if worst > ord.rho { ord.rho / worst } else { 1.0 };
        x.iter().map(|v| v * scale * (1.0 - 1e-12)).collect()
    }
}

fn decomposition() -> Check {
    let results: Vec<Result<(f64, usize, usize), String>> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeedTree::new(0xDEC).child(i).rng();
            let weighted = i % 3 == 0;
            let n = rng.gen_range(2..=9);
            let g = raw_graph(n, rng.gen_range(0.2..0.7), weighted.then_some(0.9), i).map_err(err)?;
            let ord = if weighted {
                best_ordering(&g, (0..n).collect()).map_err(err)?
            } else {
                let (rho, order) = exact_rho(&g).map_err(err)?;
                Ordering::from_order(order, rho).map_err(err)?
            };
            let x = channel_point(&g, &ord, i);
            let dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(i)).map_err(err)?;
            let rep = verify_channel_decomposition(&dec, &g, &x);
            ensure(rep.ok, || format!("point {i}: {rep:?}"))?;
            let mut alpha_checked = 0;
            if !weighted && g.has_edges() {
                ensure(dec.alpha_achieved <= ord.rho, || {
                    format!("point {i}: alpha {} > rho {}", dec.alpha_achieved, ord.rho)
                })?;
                alpha_checked = 1;
            }
            let samples = 100_000;
            let mut counts = vec![0usize; n];
            let mut srng = SeedTree::new(i).child(2).rng();
            for _ in 0..samples {
                for &v in dec.sample(&mut srng) {
                    counts[v] += 1;
                }
            }
            let mut worst: f64 = 0.0;
            for v in 0..n {
                let p = x[v] / dec.alpha_achieved;
                let f = counts[v] as f64 / samples as f64;
                let sd = (p * (1.0 - p) / samples as f64).sqrt();
                let z = if sd > 0.0 {
                    (f - p).abs() / sd
                } else if (f - p).abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(z);
            }
            ensure(worst <= 4.0, || format!("point {i}: sampled marginal {worst:.2}σ away"))?;
            Ok((worst, alpha_checked, rep.infeasible_entries))
        })
        .collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for res in results {
        let (z, a, _) = res?;
        worst = worst.max(z);
        checked += a;
    }
    Ok(format!(
        "200 points verified; worst sampled deviation {worst:.2}σ; alpha ≤ exact ρ on {checked} unweighted points"
    ))
}

fn midr_law() -> Check {
    let results: Vec<Result<f64, String>> = (0..20u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeedTree::new(0x31D).child(i).rng();
            let inst = random_instance(
                &InstanceSpec {
                    n: rng.gen_range(2..=6),
                    k: rng.gen_range(1..=4),
                    graph: if i % 2 == 0 {
                        GraphKind::Unweighted { p: 0.5 }
                    } else {
                        GraphKind::Weighted {
                            p: 0.5,
                            max_weight: 0.8,
                        }
                    },
                    class: ValuationClass::Mrs,
                },
                700 + i,
            )
            .map_err(err)?;
            let (n, k) = (inst.n(), inst.k);
            let config = MidrConfig::for_instance(&inst);
            let x = maximize_expected_welfare(&inst, &config).map_err(err)?.x;
            let base = SeedTree::new(i);
            let rounder = ExactRounder::new(&inst, &x, config.alpha, OracleChoice::Auto, &base).map_err(err)?;
            let mut est = FixedEstimator(x.clone());
            let mut sim = DyadicSimulator::new(&inst, config.alpha, OracleChoice::Auto, &mut est, &base);
            let runs = 100_000;
            let mut exact = vec![vec![0usize; k]; n];
            let mut simulated = vec![vec![0usize; k]; n];
            for t in 0..runs {
                let s = SeedTree::new(i).child(t);
                for (v, set) in rounder.sample(&s).sets.iter().enumerate() {
                    for &j in set {
                        exact[v][j] += 1;
                    }
                }
                for (v, set) in sim.sample(&s).map_err(err)?.sets.iter().enumerate() {
                    for &j in set {
                        simulated[v][j] += 1;
                    }
                }
            }
            let mut worst: f64 = 0.0;
            for (mode, counts) in [("exact", &exact), ("simulated", &simulated)] {
                for v in 0..n {
                    for j in 0..k {
                        let p = inclusion_probability(x[v][j], config.alpha);
                        let f = counts[v][j] as f64 / runs as f64;
                        let sd = (p * (1.0 - p) / runs as f64).sqrt();
                        let z = if sd > 0.0 {
                            (f - p).abs() / sd
                        } else if f == p {
                            0.0
                        } else {
                            f64::INFINITY
                        };
                        ensure(z <= 4.0, || {
                            format!("instance {i} {mode} ({v},{j}): {f} vs {p} ({z:.2}σ)")
                        })?;
                        worst = worst.max(z);
                    }
                }
            }
            Ok(worst)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for r in results {
        worst = worst.max(r?);
    }
    Ok(format!(
        "20 instances × 2 modes × 10^5 runs; worst deviation {worst:.2}σ"
    ))
}

fn concavity() -> Check {
    let mut worst_second = f64::NEG_INFINITY;
    let mut worst_rel: f64 = 0.0;
    for i in 0..100u64 {
        let mut rng = SeedTree::new(0xC0C).child(i).rng();
        let k = rng.gen_range(1..=6);
        let b = random_mrs(k, &mut rng);
        let g = |x: &[f64]| -> f64 {
            let q: Vec<f64> = x.iter().map(|&v| 1.0 - (-v).exp()).collect();
            b.lottery_value(&q).expect("valid lottery")
        };
        let a: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 3.0).collect();
        let c: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 3.0).collect();
        let at = |t: f64| -> Vec<f64> { a.iter().zip(&c).map(|(x, y)| x + t * (y - x)).collect() };
        for step in 1..20 {
            let s = step as f64 / 20.0;
            let h = 0.02;
            let second = g(&at(s - h)) + g(&at(s + h)) - 2.0 * g(&at(s));
            worst_second = worst_second.max(second);
            ensure(second <= 1e-8, || format!("segment {i}: second difference {second:e}"))?;
        }
        let q: Vec<f64> = (0..k).map(|_| 0.05 + 0.9 * rng.gen::<f64>()).collect();
        let grad = b.lottery_gradient(&q).map_err(err)?;
        for j in 0..k {
            let h = 1e-5;
            let mut up = q.clone();
            let mut down = q.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (b.lottery_value(&up).map_err(err)? - b.lottery_value(&down).map_err(err)?) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / fd.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            ensure(rel <= 1e-5, || {
                format!("case {i} channel {j}: gradient {} vs {fd}", grad[j])
            })?;
        }
    }
    Ok(format!(
        "max second difference {worst_second:.1e}; max relative gradient error {worst_rel:.1e}"
    ))
}

fn truthfulness() -> Check {
    let tol = 1e-9;
    let threshold = -(2.0 * tol + 1e-9);
    let results: Vec<Result<(f64, usize), String>> = (0..10u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeedTree::new(0x7E0).child(i).rng();
            let symmetric = i < 5;
            let inst = random_instance(
                &InstanceSpec {
                    n: rng.gen_range(2..=4),
                    k: rng.gen_range(1..=3),
                    graph: if i % 2 == 0 {
                        GraphKind::Unweighted { p: 0.6 }
                    } else {
                        GraphKind::Weighted {
                            p: 0.6,
                            max_weight: 0.9,
                        }
                    },
                    class: if symmetric {
                        ValuationClass::Symmetric
                    } else {
                        ValuationClass::Mrs
                    },
                },
                900 + i,
            )
            .map_err(err)?;
            let mech = if symmetric {
                Mechanism::LaviSwamy(LaviSwamyConfig {
                    tol,
                    ..LaviSwamyConfig::default()
                })
            } else {
                Mechanism::Midr(MidrSettings {
                    tol_gap: Some(tol),
                    rounding: RoundingMode::Exact,
                    ..MidrSettings::default()
                })
            };
            let mut worst = f64::INFINITY;
            let mut probes = 0;
            for v in 0..inst.n() {
                let lies = misreport_grid(&inst.valuations[v], inst.k, 20, &mut rng);
                let rep =
                    truthfulness_probe(&mech, &inst, v, &lies, ProbeMode::Exact, &SeedTree::new(i)).map_err(err)?;
                probes += rep.deltas.len();
                worst = worst.min(rep.min_delta());
                ensure(rep.min_delta() >= threshold, || {
                    format!("instance {i} bidder {v}: delta {:e}", rep.min_delta())
                })?;
            }
            Ok((worst, probes))
        })
        .collect();
    let mut worst = f64::INFINITY;
    let mut probes = 0;
    for r in results {
        let (w, p) = r?;
        worst = worst.min(w);
        probes += p;
    }
    Ok(format!(
        "{probes} misreports; smallest utility delta {worst:.3e} (threshold {threshold:.1e})"
    ))
}

fn greedy_ratios() -> Check {
    let results: Vec<Result<usize, String>> = (0..600u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeedTree::new(0x6EE).child(i).rng();
            let n = rng.gen_range(1..=9);
            let g = raw_graph(n, rng.gen_range(0.1..0.8), None, i).map_err(err)?;
            let (rho, order) = exact_rho(&g).map_err(err)?;
            let ord = Ordering::from_order(order, rho).map_err(err)?;
            let bids: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 20.0).round() / 2.0).collect();
            let inst = Instance::new(
                g.clone(),
                ord.clone(),
                1,
                bids.iter()
                    .map(|&b| {
                        spectrum_core::Valuation::Symmetric(spectrum_core::valuations::SymmetricValuation {
                            values: vec![0.0, b],
                        })
                    })
                    .collect(),
            )
            .map_err(err)?;
            let opt = brute_force_optimum(&inst).map_err(err)?.1;
            let rho = rho.max(1.0);
            let worth = |set: &[usize]| set.iter().map(|&v| bids[v]).sum::<f64>();
            let mono = worth(&monotone_greedy(&g, &ord, &bids).map_err(err)?);
            let lr = worth(&local_ratio_greedy(&g, &ord, &bids).map_err(err)?.set);
            let eps = 1e-9 * opt.max(1.0);
            ensure(mono + eps >= opt / (2.0 * rho * (n as f64).log2() + rho), || {
                format!("instance {i}: monotone {mono}, opt {opt}, ρ {rho}")
            })?;
            ensure(lr + eps >= opt / rho, || {
                format!("instance {i}: local ratio {lr}, opt {opt}, ρ {rho}")
            })?;
            Ok(1)
        })
        .collect();
    let mut count = 0;
    for r in results {
        count += r?;
    }
    Ok(format!("{count} instances with exact ρ, 0 violations"))
}

fn spectrum(args: &[&str], threads: &str) -> Result<(i32, Vec<u8>), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_spectrum"))
        .args(args)
        .env("SPECTRUM_THREADS", threads)
        .output()
        .map_err(err)?;
    Ok((o.status.code().unwrap_or(-1), o.stdout))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let fixture = |name: &str| {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures")
            .join(name)
            .to_str()
            .unwrap()
            .to_string()
    };
    let (sym, weighted, mrs, single) = (p("sym.json"), p("w.json"), p("mrs.json"), fixture("figure1_x3.json"));
    let mut commands: Vec<Vec<String>> = Vec::new();
    let gen = |model: &str, n: &str, extra: &[&str], out: &str| -> Vec<String> {
        let mut v: Vec<String> = ["generate", model, "--seed", "5", "--n", n, "--k", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v.extend(["--out".to_string(), out.to_string()]);
        v
    };
    commands.push(gen("random-graph", "6", &[], &sym));
    commands.push(gen("random-graph", "6", &["--max-weight", "0.7"], &weighted));
    commands.push(gen("random-graph", "4", &["--class", "mrs"], &mrs));
    commands.push(gen("protocol", "6", &["--class", "mixed"], &p("proto.json")));
    commands.push(gen("physical", "6", &[], &p("phys.json")));
    commands.push(vec!["generate".into(), "figure1".into(), "--x".into(), "3".into()]);
    let run = |alg: &str, inst: &str| -> Vec<String> {
        ["run", alg, inst, "--seed", "3", "--trials", "25"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    for alg in ["alg1", "alg2", "lavi-swamy", "brute-force"] {
        commands.push(run(alg, &sym));
    }
    commands.push(run("alg2", &weighted));
    for alg in ["midr", "midr-exact"] {
        commands.push(run(alg, &mrs));
    }
    for alg in ["local-ratio", "monotone-greedy"] {
        commands.push(run(alg, &single));
    }
    let verify = |suite: &str, inst: &str, extra: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = ["verify", suite, inst, "--seed", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    commands.push(verify("feasibility", &sym, &["--trials", "3"]));
    commands.push(verify("marginals", &mrs, &["--trials", "500"]));
    commands.push(verify("marginals", &sym, &["--trials", "500"]));
    commands.push(verify("monotonicity", &single, &[]));
    commands.push(verify("truthfulness", &sym, &["--trials", "4"]));
    commands.push(verify("decomposition", &mrs, &[]));
    commands.push(verify("golden-fig1", &single, &[]));
    let mut checked = 0;
    for cmd in &commands {
        let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        let out_file = args.iter().position(|&a| a == "--out").map(|i| args[i + 1].to_string());
        let first = spectrum(&args, "1")?;
        ensure(first.0 == 0, || format!("`{}` exited with {}", args.join(" "), first.0))?;
        let first_file = out_file.as_ref().map(std::fs::read).transpose().map_err(err)?;
        let second = spectrum(&args, "4")?;
        let second_file = out_file.as_ref().map(std::fs::read).transpose().map_err(err)?;
        ensure(first == second && first_file == second_file, || {
            format!("`{}` differs between runs", args.join(" "))
        })?;
        checked += 1;
    }
    Ok(format!(
        "{checked} commands byte-identical across reruns with 1 and 4 threads"
    ))
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "figure-1 golden tests",
            limit: Some(Duration::from_secs(1)),
            run: golden,
        },
        Criterion {
            id: 2,
            name: "non-monotonicity witness",
            limit: None,
            run: witness,
        },
        Criterion {
            id: 3,
            name: "feasibility fuzz",
            limit: Some(Duration::from_secs(120)),
            run: feasibility,
        },
        Criterion {
            id: 4,
            name: "unweighted rounding welfare bound",
            limit: Some(Duration::from_secs(300)),
            run: welfare_bound,
        },
        Criterion {
            id: 5,
            name: "large-demand allocator structure",
            limit: None,
            run: allocate_large_structure,
        },
        Criterion {
            id: 6,
            name: "decomposition correctness",
            limit: None,
            run: decomposition,
        },
        Criterion {
            id: 7,
            name: "MIDR marginal law",
            limit: Some(Duration::from_secs(600)),
            run: midr_law,
        },
        Criterion {
            id: 8,
            name: "concavity and gradients",
            limit: None,
            run: concavity,
        },
        Criterion {
            id: 9,
            name: "truthfulness-in-expectation probes",
            limit: None,
            run: truthfulness,
        },
        Criterion {
            id: 10,
            name: "greedy ratio bounds",
            limit: None,
            run: greedy_ratios,
        },
        Criterion {
            id: 11,
            name: "CLI determinism",
            limit: None,
            run: determinism,
        },
    ];
    let start = Instant::now();
    let mut failures = 0;
    for c in &criteria {
        let clock = Instant::now();
        let outcome = (c.run)();
        let took = clock.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if took > limit => Err(format!("took {took:.1?}, limit {limit:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failures += outcome.is_err() as usize;
        println!("{tag} {:>2} {} [{took:.2?}]: {detail}", c.id, c.name);
    }
    let total = start.elapsed();
    let limit = Duration::from_secs(15 * 60);
    let ok = total <= limit;
    failures += !ok as usize;
    println!(
        "{} 12 full suite runtime [{total:.2?}]: limit {limit:?}",
        if ok { "PASS" } else { "FAIL" }
    );
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
