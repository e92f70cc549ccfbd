use std::path::PathBuf;

use clap::{Args, ValueEnum};
use spectrum_core::generators::{physical_model, protocol_model, Link, PhysicalParams, Point};
use spectrum_core::instance::{random_graph, random_valuation, GraphKind, ValuationClass};
use spectrum_core::rng::SeedTree;
use spectrum_core::{fixtures, Instance};

use crate::{emit, usage, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    /// Unit-disk conflicts between uniform points.
    Protocol,
    /// SINR affectance between random links.
    Physical,
    /// Erdős–Rényi graph, weighted when `--max-weight` is given.
    RandomGraph,
    /// The seven-user single-channel instance with varying bid `--x`.
    Figure1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Class {
    Symmetric,
    Mrs,
    Mixed,
}

impl From<Class> for ValuationClass {
    fn from(c: Class) -> Self {
        match c {
            Class::Symmetric => ValuationClass::Symmetric,
            Class::Mrs => ValuationClass::Mrs,
            Class::Mixed => ValuationClass::Mixed,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub model: Model,
    /// Number of users; ignored with `--geometry`.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Class::Symmetric)]
    pub class: Class,
    /// Edge probability of random graphs.
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
    #[arg(long)]
    pub max_weight: Option<f64>,
    /// Side of the square holding points and links.
    #[arg(long, default_value_t = 10.0)]
    pub side: f64,
    /// Interference radius of the protocol model.
    #[arg(long, default_value_t = 2.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 3.0)]
    pub pathloss: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sinr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// JSON file with explicit points `[[x, y], ...]` (protocol) or links
    /// `[{"sender": [x, y], "receiver": [x, y]}, ...]` (physical).
    #[arg(long)]
    pub geometry: Option<PathBuf>,
    /// Bid of the varying user in the figure-1 instance.
    #[arg(long, default_value_t = 4.0)]
    pub x: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check(args: &GenerateArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if args.geometry.is_none() && args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(0.0..=1.0).contains(&args.p) {
        return Err(usage(format!("--p {} is outside [0, 1]", args.p)));
    }
    if !(args.side.is_finite() && args.side > 0.0) {
        return Err(usage(format!("--side {} must be positive", args.side)));
    }
    if !(args.radius.is_finite() && args.radius >= 0.0) {
        return Err(usage(format!("--radius {} must be nonnegative", args.radius)));
    }
    if let Some(w) = args.max_weight {
        if !(w.is_finite() && w > 0.0) {
            return Err(usage(format!("--max-weight {w} must be positive")));
        }
    }
    if !args.x.is_finite() {
        return Err(usage("--x must be finite"));
    }
    if args.geometry.is_some() && !matches!(args.model, Model::Protocol | Model::Physical) {
        return Err(usage("--geometry applies to the protocol and physical models only"));
    }
    Ok(())
}

fn read_geometry<T: serde::de::DeserializeOwned>(path: &PathBuf) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("bad geometry in {}: {e}", path.display())))
}

pub fn build(args: &GenerateArgs) -> anyhow::Result<Instance> {
    check(args)?;
    let params = PhysicalParams {
        pathloss_exponent: args.pathloss,
        sinr_threshold: args.sinr,
        noise: args.noise,
    };
    let parts = match (args.model, &args.geometry) {
        (Model::Figure1, _) => return fixtures::instance(args.x).map_err(|e| usage(e.to_string())),
        (Model::Protocol, Some(path)) => protocol_model(&read_geometry::<Vec<Point>>(path)?, args.radius),
        (Model::Physical, Some(path)) => physical_model(&read_geometry::<Vec<Link>>(path)?, &params),
        (Model::Protocol, None) => random_graph(
            GraphKind::Protocol {
                side: args.side,
                radius: args.radius,
            },
            args.n,
            args.seed,
        ),
        (Model::Physical, None) => random_graph(
            GraphKind::Physical {
                side: args.side,
                params,
            },
            args.n,
            args.seed,
        ),
        (Model::RandomGraph, None) => {
            let kind = match args.max_weight {
                Some(max_weight) => GraphKind::Weighted { p: args.p, max_weight },
                None => GraphKind::Unweighted { p: args.p },
            };
            random_graph(kind, args.n, args.seed)
        }
        (Model::RandomGraph, Some(_)) => unreachable!("rejected by check"),
    };
    let (graph, ordering) = parts.map_err(|e| usage(e.to_string()))?;
    let mut rng = SeedTree::new(args.seed).child(17).rng();
    let valuations = (0..graph.n())
        .map(|_| random_valuation(args.class.into(), args.k, &mut rng))
        .collect();
    Instance::new(graph, ordering, args.k, valuations).map_err(|e| usage(e.to_string()))
}

pub fn to_json_text(inst: &Instance, model: &str, seed: u64) -> anyhow::Result<String> {
    let mut j = inst.to_json();
    j.meta.insert("model".into(), model.into());
    j.meta.insert("seed".into(), seed.into());
    j.meta.insert("version".into(), VERSION.into());
    let mut text = serde_json::to_string_pretty(&j)?;
    text.push('\n');
    Ok(text)
}

pub fn execute(args: &GenerateArgs) -> anyhow::Result<u8> {
    let inst = build(args)?;
    let model = args
        .model
        .to_possible_value()
        .expect("no skipped variants")
        .get_name()
        .to_string();
    emit(args.out.as_ref(), &to_json_text(&inst, &model, args.seed)?)?;
    Ok(0)
}
