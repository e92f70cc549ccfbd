use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectrum_core::decomposition::{
    decompose_channel, decompose_count_solution, verify_channel_decomposition, verify_count_decomposition,
    CountOracleConfig, OracleChoice,
};
use spectrum_core::generators::{best_ordering, random_graph};
use spectrum_core::graph::{exact_rho, ConflictGraph, Ordering};
use spectrum_core::instance::{random_instance, GraphKind, InstanceSpec, ValuationClass};
use spectrum_core::lp::{build_single_channel_lp, build_symmetric_lp, solve_packing_lp};
use spectrum_core::mechanism::default_ls_alpha;
use spectrum_core::rng::SeedTree;

/// A point of the single-channel polytope: an LP vertex or a scaled random point.
fn channel_point(g: &ConflictGraph, ord: &Ordering, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = g.n();
    if rng.gen_bool(0.5) {
        let a: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let lp = build_single_channel_lp(g, ord, ord.rho, &a).unwrap();
        solve_packing_lp(&lp, 1e-9)
            .unwrap()
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

fn random_channel_case(seed: u64, weighted: bool) -> (ConflictGraph, Ordering) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=9);
    let g = random_graph(n, rng.gen_range(0.2..0.7), weighted.then_some(0.9), seed).unwrap();
    let ord = best_ordering(&g, (0..n).collect()).unwrap();
    (g, ord)
}

#[test]
fn fuzzed_channel_points_decompose() {
    for seed in 0..60 {
        let weighted = seed % 3 == 0;
        let (g, ord) = random_channel_case(seed, weighted);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let x = channel_point(&g, &ord, &mut rng);
        let dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(seed)).unwrap();
        let report = verify_channel_decomposition(&dec, &g, &x);
        assert!(report.ok, "seed {seed}: {report:?}");
        assert!(dec.entries.len() <= g.n() + 1);
        if !weighted && g.has_edges() {
            let (rho, _) = exact_rho(&g).unwrap();
            assert!(
                dec.alpha_achieved <= rho,
                "seed {seed}: alpha {} > rho {rho}",
                dec.alpha_achieved
            );
        }
    }
}

#[test]
fn sampled_marginals_match() {
    for seed in 0..5 {
        let (g, ord) = random_channel_case(100 + seed, seed % 2 == 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = channel_point(&g, &ord, &mut rng);
        let dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(seed)).unwrap();
        let trials = 50_000;
        let mut counts = vec![0usize; g.n()];
        for _ in 0..trials {
            for &v in dec.sample(&mut rng) {
                counts[v] += 1;
            }
        }
        for v in 0..g.n() {
            let p = x[v] / dec.alpha_achieved;
            let sigma = (p * (1.0 - p) / trials as f64).sqrt();
            let f = counts[v] as f64 / trials as f64;
            assert!((f - p).abs() <= 4.0 * sigma + 1e-12, "seed {seed} user {v}: {f} vs {p}");
        }
    }
}

#[test]
fn every_oracle_choice_verifies() {
    let (g, ord) = random_channel_case(7, true);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = channel_point(&g, &ord, &mut rng);
    for choice in [OracleChoice::Auto, OracleChoice::Filter, OracleChoice::Exact] {
        let dec = decompose_channel(&g, &ord, &x, 1.0, choice, &SeedTree::new(1)).unwrap();
        assert!(verify_channel_decomposition(&dec, &g, &x).ok, "{choice:?}");
    }
}

#[test]
fn count_form_points_decompose() {
    for seed in 0..12 {
        let spec = InstanceSpec {
            n: 3 + seed as usize % 5,
            k: 1 + seed as usize % 3,
            graph: if seed % 2 == 0 {
                GraphKind::Unweighted { p: 0.5 }
            } else {
                GraphKind::Weighted {
                    p: 0.5,
                    max_weight: 0.8,
                }
            },
            class: ValuationClass::Symmetric,
        };
        let inst = random_instance(&spec, seed).unwrap();
        let rho = inst.rho_floor();
        let x = build_symmetric_lp(&inst, rho).unwrap().solve(1e-9).unwrap();
        let dec = decompose_count_solution(
            &inst,
            &x,
            rho,
            default_ls_alpha(&inst),
            CountOracleConfig::default(),
            &SeedTree::new(seed),
        )
        .unwrap();
        let report = verify_count_decomposition(&dec, &inst, &x);
        assert!(report.ok, "seed {seed}: {report:?}");
        assert_eq!(dec.doublings, 0, "seed {seed}");
    }
}

#[test]
fn corrupted_weights_fail() {
    let (g, ord) = random_channel_case(3, false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = channel_point(&g, &ord, &mut rng);
    let mut dec = decompose_channel(&g, &ord, &x, 1.0, OracleChoice::Auto, &SeedTree::new(0)).unwrap();
    let last = dec.entries.len() - 1;
    dec.entries[last].lambda += 1e-3;
    let report = verify_channel_decomposition(&dec, &g, &x);
    assert!(!report.ok);
    assert!((report.sum_error - 1e-3).abs() < 1e-9);
}
