//! Auction instances, allocations, their JSON schema and random instance generation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{self, best_ordering, Link, PhysicalParams};
use crate::graph::{ConflictGraph, Ordering};
use crate::rng::SeedTree;
use crate::valuations::{MrsTerm, MrsValuation, Rank, SymmetricValuation, Valuation};

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: ConflictGraph,
    pub ordering: Ordering,
    pub k: usize,
    pub valuations: Vec<Valuation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValuationClass {
    Symmetric,
    Mrs,
    Mixed,
}

impl Instance {
    pub fn new(graph: ConflictGraph, ordering: Ordering, k: usize, valuations: Vec<Valuation>) -> Result<Self> {
        let inst = Instance {
            graph,
            ordering,
            k,
            valuations,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.n();
        if self.ordering.len() != n {
            return Err(Error::Domain(format!(
                "ordering covers {} users, graph has {n}",
                self.ordering.len()
            )));
        }
        if self.valuations.len() != n {
            return Err(Error::Domain(format!(
                "{} valuations for {n} users",
                self.valuations.len()
            )));
        }
        if self.k == 0 {
            return Err(Error::Domain("at least one channel is required".into()));
        }
        for v in &self.valuations {
            v.validate(self.k)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn class(&self) -> ValuationClass {
        let sym = self.valuations.iter().filter(|v| v.as_symmetric().is_some()).count();
        if sym == self.valuations.len() {
            ValuationClass::Symmetric
        } else if sym == 0 {
            ValuationClass::Mrs
        } else {
            ValuationClass::Mixed
        }
    }

    pub fn require_symmetric(&self) -> Result<Vec<&SymmetricValuation>> {
        self.valuations
            .iter()
            .enumerate()
            .map(|(v, val)| {
                val.as_symmetric()
                    .ok_or_else(|| Error::Mode(format!("user {v} does not have a symmetric valuation")))
            })
            .collect()
    }

    pub fn require_mrs(&self) -> Result<Vec<&MrsValuation>> {
        self.valuations
            .iter()
            .enumerate()
            .map(|(v, val)| {
                val.as_mrs()
                    .ok_or_else(|| Error::Mode(format!("user {v} does not have a matroid-rank-sum valuation")))
            })
            .collect()
    }

    /// `ρ` used by the count-form pipeline: the claimed bound, floored at 1.
    pub fn rho_floor(&self) -> f64 {
        self.ordering.rho.max(1.0)
    }

    pub fn welfare(&self, a: &Allocation) -> f64 {
        a.sets
            .iter()
            .zip(&self.valuations)
            .map(|(s, v)| v.value_unchecked(s))
            .sum()
    }

    /// Copy with user `v` reporting `report` instead.
    pub fn with_report(&self, v: usize, report: Valuation) -> Instance {
        let mut out = self.clone();
        out.valuations[v] = report;
        out
    }

    pub fn to_json(&self) -> InstanceJson {
        InstanceJson {
            k: self.k,
            graph: GraphJson::from_parts(&self.graph, &self.ordering),
            valuations: self.valuations.clone(),
            meta: BTreeMap::new(),
        }
    }

    pub fn from_json(j: &InstanceJson) -> Result<Instance> {
        let (graph, ordering) = j.graph.to_parts()?;
        Instance::new(graph, ordering, j.k, j.valuations.clone())
    }

    pub fn from_json_str(s: &str) -> Result<Instance> {
        Instance::from_json(&serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeJson {
    pub from: usize,
    pub to: usize,
    pub w: f64,
}

/// Graph file: omitted edges have weight 0; `pi[v]` is the 0-based position of `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphJson {
    pub n: usize,
    pub unweighted: bool,
    pub edges: Vec<EdgeJson>,
    pub pi: Vec<usize>,
    pub rho: f64,
    #[serde(default)]
    pub rho_verified: bool,
}

impl GraphJson {
    pub fn from_parts(g: &ConflictGraph, ord: &Ordering) -> GraphJson {
        GraphJson {
            n: g.n(),
            unweighted: g.is_unweighted(),
            edges: g.edges().map(|(from, to, w)| EdgeJson { from, to, w }).collect(),
            pi: ord.positions().to_vec(),
            rho: ord.rho,
            rho_verified: ord.verified,
        }
    }

    pub fn to_parts(&self) -> Result<(ConflictGraph, Ordering)> {
        let n = self.n;
        let mut w = vec![0.0; n * n];
        for e in &self.edges {
            if e.from >= n || e.to >= n {
                return Err(Error::Domain(format!(
                    "edge ({}, {}) out of range for n = {n}",
                    e.from, e.to
                )));
            }
            w[e.from * n + e.to] = e.w;
        }
        let g = ConflictGraph::from_matrix(n, w, self.unweighted)?;
        let mut ord = Ordering::from_positions(self.pi.clone(), self.rho)?;
        ord.verified = self.rho_verified;
        Ok((g, ord))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceJson {
    pub k: usize,
    pub graph: GraphJson,
    pub valuations: Vec<Valuation>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Channel sets per user; channel lists are sorted and duplicate-free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Allocation {
    pub sets: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn empty(n: usize) -> Self {
        Allocation {
            sets: vec![Vec::new(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.sets.len()
    }

    /// Users holding channel `j`.
    pub fn channel_users(&self, j: usize) -> Vec<usize> {
        (0..self.sets.len()).filter(|&v| self.sets[v].contains(&j)).collect()
    }

    /// Channels (below `k`) whose users are not independent.
    pub fn violations(&self, g: &ConflictGraph, k: usize) -> Vec<usize> {
        (0..k).filter(|&j| !g.is_independent(&self.channel_users(j))).collect()
    }

    pub fn is_feasible(&self, g: &ConflictGraph, k: usize) -> bool {
        let in_range = self.sets.iter().flatten().all(|&j| j < k);
        in_range && self.violations(g, k).is_empty()
    }

    pub fn total_channels(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphKind {
    /// Random unweighted graph with edge probability `p`.
    Unweighted { p: f64 },
    /// Random directed weights in `[0, max_weight)` present with probability `p`.
    Weighted { p: f64, max_weight: f64 },
    /// Unit-disk graph of uniform points in a square.
    Protocol { side: f64, radius: f64 },
    /// SINR affectance graph of random links.
    Physical { side: f64, params: PhysicalParams },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceSpec {
    pub n: usize,
    pub k: usize,
    pub graph: GraphKind,
    pub class: ValuationClass,
}

/// Nondecreasing benefits with random increments (some zero), `b(0) = 0`.
pub fn random_symmetric<R: Rng>(k: usize, rng: &mut R) -> SymmetricValuation {
    let mut values = vec![0.0];
    let mut acc = 0.0;
    for _ in 0..k {
        if rng.gen::<f64>() < 0.8 {
            acc += (rng.gen::<f64>() * 10.0 * 8.0).round() / 8.0;
        }
        values.push(acc);
    }
    SymmetricValuation { values }
}

/// One to three terms with random uniform, partition and coverage descriptors.
pub fn random_mrs<R: Rng>(k: usize, rng: &mut R) -> MrsValuation {
    let terms = rng.gen_range(1..=3);
    let mut out = Vec::with_capacity(terms);
    for _ in 0..terms {
        let w = (rng.gen::<f64>() * 10.0 * 8.0).round() / 8.0;
        let rank = match rng.gen_range(0..3) {
            0 => Rank::Uniform {
                r: rng.gen_range(1..=k),
            },
            1 => {
                let nb = rng.gen_range(1..=k);
                let mut blocks = vec![Vec::new(); nb];
                for j in 0..k {
                    // some channels are loops
                    if rng.gen::<f64>() < 0.85 {
                        blocks[rng.gen_range(0..nb)].push(j);
                    }
                }
                blocks.retain(|b| !b.is_empty());
                let caps = blocks.iter().map(|b| rng.gen_range(1..=b.len())).collect();
                Rank::Partition { blocks, caps }
            }
            _ => {
                let m = k + 2;
                let sets = (0..k)
                    .map(|_| (0..m).filter(|_| rng.gen::<f64>() < 0.4).collect())
                    .collect();
                let element_weights = Some((0..m).map(|_| (rng.gen::<f64>() * 4.0 * 8.0).round() / 8.0).collect());
                Rank::Coverage { sets, element_weights }
            }
        };
        out.push(MrsTerm { w, rank });
    }
    MrsValuation { terms: out }
}

pub fn random_valuation<R: Rng>(class: ValuationClass, k: usize, rng: &mut R) -> Valuation {
    let sym = match class {
        ValuationClass::Symmetric => true,
        ValuationClass::Mrs => false,
        ValuationClass::Mixed => rng.gen(),
    };
    if sym {
        Valuation::Symmetric(random_symmetric(k, rng))
    } else {
        Valuation::Mrs(random_mrs(k, rng))
    }
}

/// Random graph of the requested kind with its ordering; ties the geometric
/// models to their own orderings and picks the best ordering otherwise.
pub fn random_graph(kind: GraphKind, n: usize, seed: u64) -> Result<(ConflictGraph, Ordering)> {
    match kind {
        GraphKind::Unweighted { p } => {
            let g = generators::random_graph(n, p, None, seed)?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&v| (g.neighbors(v).count(), v));
            let ord = best_ordering(&g, order)?;
            Ok((g, ord))
        }
        GraphKind::Weighted { p, max_weight } => {
            let g = generators::random_graph(n, p, Some(max_weight), seed)?;
            let ord = best_ordering(&g, (0..n).collect())?;
            Ok((g, ord))
        }
        GraphKind::Protocol { side, radius } => {
            let points = generators::random_points(n, side, seed);
            generators::protocol_model(&points, radius)
        }
        GraphKind::Physical { side, params } => {
            let links: Vec<Link> = generators::random_links(n, side, 0.5, 1.5, seed);
            generators::physical_model(&links, &params)
        }
    }
}

pub fn random_instance(spec: &InstanceSpec, seed: u64) -> Result<Instance> {
    let (graph, ordering) = random_graph(spec.graph, spec.n, seed)?;
    let mut rng = SeedTree::new(seed).child(17).rng();
    let valuations = (0..spec.n)
        .map(|_| random_valuation(spec.class, spec.k, &mut rng))
        .collect();
    Instance::new(graph, ordering, spec.k, valuations)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let spec = InstanceSpec {
            n: 5,
            k: 3,
            graph: GraphKind::Weighted {
                p: 0.5,
                max_weight: 0.7,
            },
            class: ValuationClass::Mixed,
        };
        let inst = random_instance(&spec, 4).unwrap();
        let text = serde_json::to_string(&inst.to_json()).unwrap();
        let back = Instance::from_json_str(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn validation_catches_mismatches() {
        let g = ConflictGraph::edgeless(2);
        let val = Valuation::Symmetric(SymmetricValuation::new(vec![0.0, 1.0]).unwrap());
        assert!(Instance::new(g.clone(), Ordering::identity(2, 0.0), 1, vec![val.clone()]).is_err());
        assert!(Instance::new(g.clone(), Ordering::identity(2, 0.0), 2, vec![val.clone(), val.clone()]).is_err());
        assert!(Instance::new(g, Ordering::identity(2, 0.0), 1, vec![val.clone(), val]).is_ok());
    }

    #[test]
    fn allocation_feasibility() {
        let g = ConflictGraph::unweighted(2, &[(0, 1)]).unwrap();
        let a = Allocation {
            sets: vec![vec![0], vec![1]],
        };
        assert!(a.is_feasible(&g, 2));
        let b = Allocation {
            sets: vec![vec![0, 1], vec![1]],
        };
        assert_eq!(b.violations(&g, 2), vec![1]);
        assert!(!a.is_feasible(&g, 1));
    }

    #[test]
    fn random_instances_are_valid_for_every_kind() {
        let kinds = [
            GraphKind::Unweighted { p: 0.3 },
            GraphKind::Weighted {
                p: 0.4,
                max_weight: 0.8,
            },
            GraphKind::Protocol { side: 3.0, radius: 1.0 },
            GraphKind::Physical {
                side: 6.0,
                params: PhysicalParams {
                    pathloss_exponent: 3.0,
                    sinr_threshold: 1.0,
                    noise: 0.0,
                },
            },
        ];
        for kind in kinds {
            for class in [ValuationClass::Symmetric, ValuationClass::Mrs] {
                let spec = InstanceSpec {
                    n: 7,
                    k: 3,
                    graph: kind,
                    class,
                };
                let inst = random_instance(&spec, 11).unwrap();
                assert!(inst.ordering.verified);
                assert_eq!(inst.class(), class);
            }
        }
    }
}
