use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use spectrum_core::exhaustive::brute_force_optimum;
use spectrum_core::greedy::{local_ratio_greedy, monotone_greedy};
use spectrum_core::lp::build_symmetric_lp;
use spectrum_core::mechanism::{LaviSwamyConfig, MidrSettings, RangeVcg, RoundingMode, ScaledVcg};
use spectrum_core::midr::{perturb_midr, DyadicSimulator, ExactRounder, FixedEstimator};
use spectrum_core::rng::{phase, SeedTree};
use spectrum_core::rounding::{round_unweighted, round_weighted};
use spectrum_core::{Allocation, Error, Instance};

use crate::output::mean_sd;
use crate::{emit, load_instance, usage, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algorithm {
    /// LP rounding for unweighted graphs.
    Alg1,
    /// LP rounding for weighted graphs.
    Alg2,
    /// Scaled-VCG mechanism for symmetric bidders.
    LaviSwamy,
    /// MIDR mechanism with simulated rounding.
    Midr,
    /// MIDR mechanism rounding the optimum directly.
    MidrExact,
    /// Local-ratio greedy, one channel.
    LocalRatio,
    /// Monotone greedy, one channel.
    MonotoneGreedy,
    /// Exact welfare maximization.
    BruteForce,
}

impl Algorithm {
    pub fn name(self) -> String {
        self.to_possible_value()
            .expect("no skipped variants")
            .get_name()
            .to_string()
    }
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(value_enum)]
    pub algorithm: Algorithm,
    pub instance: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Solver tolerance; the certified gap for MIDR.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Scaling of the Lavi-Swamy decomposition, or the MIDR range parameter.
    #[arg(long)]
    pub alpha_start: Option<f64>,
    /// Perturbation probability of MIDR.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Fill the runtime column; makes the output depend on the machine.
    #[arg(long)]
    pub timing: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-trial seed shared by every command.
pub fn trial_seed(seed: u64, t: usize) -> SeedTree {
    SeedTree::new(seed).path(&[phase::TRIAL, t as u64])
}

struct Trial {
    allocation: Allocation,
    millis: f64,
}

/// Everything computed once before the trials.
pub struct Prepared {
    pub relaxation: Option<f64>,
    pub payments: Option<Vec<f64>>,
    sampler: Sampler,
}

enum Sampler {
    Alg1 {
        x: spectrum_core::lp::CountSolution,
        rho: f64,
    },
    Alg2 {
        x: spectrum_core::lp::CountSolution,
        rho: f64,
    },
    LaviSwamy(Box<ScaledVcg>),
    MidrExact {
        rounder: ExactRounder,
        mu: f64,
    },
    MidrSimulated {
        x: Vec<Vec<f64>>,
        alpha: f64,
        mu: f64,
        oracle: spectrum_core::decomposition::OracleChoice,
        base: SeedTree,
    },
    Fixed(Allocation),
}

fn single_channel_bids(inst: &Instance) -> anyhow::Result<Vec<f64>> {
    if inst.k != 1 {
        return Err(Error::Mode(format!(
            "the greedy algorithms need one channel, the instance has {}",
            inst.k
        ))
        .into());
    }
    Ok(inst.require_symmetric()?.iter().map(|s| s.of_count(1)).collect())
}

fn check_params(args_tol: f64, alpha: Option<f64>, mu: Option<f64>) -> anyhow::Result<()> {
    if !(args_tol.is_finite() && args_tol > 0.0) {
        return Err(usage(format!("--tol {args_tol} must be positive")));
    }
    if let Some(a) = alpha {
        if !(a.is_finite() && a >= 1.0) {
            return Err(usage(format!("--alpha-start {a} must be at least 1")));
        }
    }
    if let Some(m) = mu {
        if !(0.0..=1.0).contains(&m) {
            return Err(usage(format!("--mu {m} is outside [0, 1]")));
        }
    }
    Ok(())
}

pub fn midr_settings(tol: f64, alpha: Option<f64>, mu: Option<f64>, rounding: RoundingMode) -> MidrSettings {
    MidrSettings {
        alpha,
        mu,
        tol_gap: Some(tol),
        rounding,
        ..MidrSettings::default()
    }
}

pub fn prepare(
    alg: Algorithm,
    inst: &Instance,
    seed: u64,
    tol: f64,
    alpha: Option<f64>,
    mu: Option<f64>,
) -> anyhow::Result<Prepared> {
    check_params(tol, alpha, mu)?;
    let base = SeedTree::new(seed);
    let fixed = |a: Allocation| Prepared {
        relaxation: None,
        payments: None,
        sampler: Sampler::Fixed(a),
    };
    Ok(match alg {
        Algorithm::Alg1 | Algorithm::Alg2 => {
            if alg == Algorithm::Alg1 && !inst.graph.is_unweighted() {
                return Err(Error::Mode("alg1 needs an unweighted conflict graph".into()).into());
            }
            let rho = inst.rho_floor();
            let x = build_symmetric_lp(inst, rho)?.solve(tol)?;
            let relaxation = Some(x.objective);
            let sampler = if alg == Algorithm::Alg1 {
                Sampler::Alg1 { x, rho }
            } else {
                Sampler::Alg2 { x, rho }
            };
            Prepared {
                relaxation,
                payments: None,
                sampler,
            }
        }
        Algorithm::LaviSwamy => {
            let config = LaviSwamyConfig {
                alpha_start: alpha,
                tol,
                ..LaviSwamyConfig::default()
            };
            let scaled = ScaledVcg::compute(inst, &config, &base)?;
            Prepared {
                relaxation: Some(scaled.vcg.solution.objective),
                payments: Some((0..inst.n()).map(|v| scaled.payment(v).max(0.0)).collect()),
                sampler: Sampler::LaviSwamy(Box::new(scaled)),
            }
        }
        Algorithm::Midr | Algorithm::MidrExact => {
            inst.require_mrs()?;
            let rounding = if alg == Algorithm::Midr {
                RoundingMode::Simulated
            } else {
                RoundingMode::Exact
            };
            let settings = midr_settings(tol, alpha, mu, rounding);
            let range = RangeVcg::compute(inst, &settings)?;
            let c = range.config;
            let sampler = match rounding {
                RoundingMode::Exact => Sampler::MidrExact {
                    rounder: ExactRounder::new(inst, &range.solution.x, c.alpha, c.oracle, &base)?,
                    mu: c.mu,
                },
                RoundingMode::Simulated => Sampler::MidrSimulated {
                    x: range.solution.x.clone(),
                    alpha: c.alpha,
                    mu: c.mu,
                    oracle: c.oracle,
                    base,
                },
            };
            Prepared {
                relaxation: Some(range.solution.objective),
                payments: Some(range.raw_payments.iter().map(|p| p.max(0.0)).collect()),
                sampler,
            }
        }
        Algorithm::LocalRatio | Algorithm::MonotoneGreedy => {
            let bids = single_channel_bids(inst)?;
            let set = if alg == Algorithm::LocalRatio {
                local_ratio_greedy(&inst.graph, &inst.ordering, &bids)?.set
            } else {
                monotone_greedy(&inst.graph, &inst.ordering, &bids)?
            };
            let mut a = Allocation::empty(inst.n());
            for v in set {
                a.sets[v].push(0);
            }
            fixed(a)
        }
        Algorithm::BruteForce => {
            let (a, w) = brute_force_optimum(inst)?;
            let mut p = fixed(a);
            p.relaxation = Some(w);
            p
        }
    })
}

impl Prepared {
    /// Allocations of trials `0..trials`, in order and independent of the thread count.
    pub fn allocations(&self, inst: &Instance, seed: u64, trials: usize) -> anyhow::Result<Vec<(Allocation, f64)>> {
        let out: anyhow::Result<Vec<Trial>> = match &self.sampler {
            Sampler::MidrSimulated {
                x,
                alpha,
                mu,
                oracle,
                base,
            } => {
                let chunk = trials.div_ceil(rayon::current_num_threads()).max(1);
                let starts: Vec<usize> = (0..trials).step_by(chunk).collect();
                let parts = starts
                    .par_iter()
                    .map(|&start| {
                        let mut estimator = FixedEstimator(x.clone());
                        let mut sim = DyadicSimulator::new(inst, *alpha, *oracle, &mut estimator, base);
                        (start..(start + chunk).min(trials))
                            .map(|t| {
                                let clock = Instant::now();
                                let s = trial_seed(seed, t);
                                let a = perturb_midr(inst, &sim.sample(&s)?, *mu, &s);
                                Ok(Trial {
                                    allocation: a,
                                    millis: clock.elapsed().as_secs_f64() * 1e3,
                                })
                            })
                            .collect::<anyhow::Result<Vec<Trial>>>()
                    })
                    .collect::<anyhow::Result<Vec<Vec<Trial>>>>()?;
                Ok(parts.into_iter().flatten().collect())
            }
            sampler => (0..trials)
                .into_par_iter()
                .map(|t| {
                    let clock = Instant::now();
                    let s = trial_seed(seed, t);
                    let allocation = match sampler {
                        Sampler::Alg1 { x, rho } => round_unweighted(inst, x, *rho, &s)?,
                        Sampler::Alg2 { x, rho } => round_weighted(inst, x, *rho, &s)?,
                        Sampler::LaviSwamy(scaled) => scaled
                            .decomposition
                            .sample(&mut s.child(phase::CHANNEL_TRIAL).rng())
                            .clone(),
                        Sampler::MidrExact { rounder, mu } => perturb_midr(inst, &rounder.sample(&s), *mu, &s),
                        Sampler::Fixed(a) => a.clone(),
                        Sampler::MidrSimulated { .. } => unreachable!("handled above"),
                    };
                    Ok(Trial {
                        allocation,
                        millis: clock.elapsed().as_secs_f64() * 1e3,
                    })
                })
                .collect(),
        };
        Ok(out?.into_iter().map(|t| (t.allocation, t.millis)).collect())
    }
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn execute(args: &RunArgs) -> anyhow::Result<u8> {
    let inst = load_instance(&args.instance)?;
    let prepared = prepare(args.algorithm, &inst, args.seed, args.tol, args.alpha_start, args.mu)?;
    let trials = prepared.allocations(&inst, args.seed, args.trials)?;
    let n = inst.n();
    let mut csv = String::new();
    writeln!(
        csv,
        "# spectrum {VERSION} algorithm={} seed={} trials={} tol={}",
        args.algorithm.name(),
        args.seed,
        args.trials,
        args.tol
    )?;
    let mut header = "trial,welfare,feasible,runtime_ms,relaxation".to_string();
    if prepared.payments.is_some() {
        for v in 0..n {
            write!(header, ",payment_{v}")?;
        }
    }
    writeln!(csv, "{header}")?;
    let payment_cells: String = prepared
        .payments
        .as_ref()
        .map(|p| p.iter().map(|x| format!(",{x}")).collect())
        .unwrap_or_default();
    let relaxation = cell(prepared.relaxation);
    let mut welfare = Vec::with_capacity(trials.len());
    let mut runtimes = Vec::with_capacity(trials.len());
    let mut feasible = 0usize;
    for (t, (a, millis)) in trials.iter().enumerate() {
        let w = inst.welfare(a);
        let ok = a.is_feasible(&inst.graph, inst.k);
        feasible += ok as usize;
        welfare.push(w);
        runtimes.push(*millis);
        let runtime = if args.timing {
            format!("{millis:.3}")
        } else {
            String::new()
        };
        writeln!(csv, "{t},{w},{ok},{runtime},{relaxation}{payment_cells}")?;
    }
    let (mean, sd) = mean_sd(&welfare);
    let (rt_mean, rt_sd) = mean_sd(&runtimes);
    let timing = |x: f64| if args.timing { format!("{x:.3}") } else { String::new() };
    let share = feasible as f64 / trials.len().max(1) as f64;
    writeln!(
        csv,
        "mean,{mean},{share},{},{relaxation}{payment_cells}",
        timing(rt_mean)
    )?;
    let blanks = ",".repeat(prepared.payments.as_ref().map_or(0, Vec::len));
    writeln!(csv, "sd,{sd},,{},{blanks}", timing(rt_sd))?;
    emit(args.out.as_ref(), &csv)?;
    Ok(0)
}
