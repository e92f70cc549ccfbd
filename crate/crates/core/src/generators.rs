//! Conflict-graph generators for the protocol and physical interference models
//! plus Erdős–Rényi style random graphs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{exact_rho, rho_of_ordering, ConflictGraph, Ordering, RhoMode, EXACT_RHO_ORDERING_LIMIT};
use crate::rng::SeedTree;

pub type Point = (f64, f64);

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Measures `ρ` for a fixed ordering, exactly when the graph is small enough.
pub fn measured_ordering(g: &ConflictGraph, order: Vec<usize>) -> Result<Ordering> {
    let mut ord = Ordering::from_order(order, 0.0)?;
    if g.n() <= EXACT_RHO_ORDERING_LIMIT {
        ord.verify(g)?;
    } else {
        ord.rho = rho_of_ordering(g, &ord, RhoMode::BoundOnly)?;
        ord.verified = true;
    }
    Ok(ord)
}

/// Ordering with the smallest `ρ` for tiny graphs, otherwise `fallback`.
pub fn best_ordering(g: &ConflictGraph, fallback: Vec<usize>) -> Result<Ordering> {
    if g.n() <= crate::graph::EXACT_RHO_LIMIT {
        let (_, order) = exact_rho(g)?;
        return measured_ordering(g, order);
    }
    measured_ordering(g, fallback)
}

/// Unit-disk conflicts: users conflict when their points are at most
/// `radius` apart. Ordered by nondecreasing degree, ties by index.
pub fn protocol_model(points: &[Point], radius: f64) -> Result<(ConflictGraph, Ordering)> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Domain(format!("conflict radius {radius} must be positive")));
    }
    let n = points.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let d = dist(points[u], points[v]);
            if d == 0.0 {
                return Err(Error::Domain(format!("points {u} and {v} coincide")));
            }
            if d <= radius {
                edges.push((u, v));
            }
        }
    }
    let g = ConflictGraph::unweighted(n, &edges)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| (g.neighbors(v).count(), v));
    let ord = measured_ordering(&g, order)?;
    Ok((g, ord))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub sender: Point,
    pub receiver: Point,
}

impl Link {
    pub fn length(&self) -> f64 {
        dist(self.sender, self.receiver)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub pathloss_exponent: f64,
    pub sinr_threshold: f64,
    pub noise: f64,
}

impl PhysicalParams {
    fn validate(&self) -> Result<()> {
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 2.0) {
            return Err(Error::Domain(format!(
                "path-loss exponent {} must exceed 2",
                self.pathloss_exponent
            )));
        }
        if !(self.sinr_threshold.is_finite() && self.sinr_threshold > 0.0) {
            return Err(Error::Domain(format!(
                "SINR threshold {} must be positive",
                self.sinr_threshold
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Domain(format!("noise {} must be nonnegative", self.noise)));
        }
        Ok(())
    }
}

/// Received power at `at` from a unit-power transmitter at `from`.
fn gain(from: Point, at: Point, a: f64) -> f64 {
    dist(from, at).powf(-a)
}

/// Direct SINR check with unit powers: every link in `set` reaches
/// `signal / (interference + noise) > β`.
pub fn sinr_feasible(links: &[Link], params: &PhysicalParams, set: &[usize]) -> bool {
    let a = params.pathloss_exponent;
    set.iter().all(|&v| {
        let signal = gain(links[v].sender, links[v].receiver, a);
        let interference: f64 = set
            .iter()
            .filter(|&&u| u != v)
            .map(|&u| gain(links[u].sender, links[v].receiver, a))
            .sum();
        signal / (interference + params.noise) > params.sinr_threshold
    })
}

/// Affectance graph of the SINR model with unit powers. `w(u, v)` is the
/// interference of `u` at the receiver of `v` relative to the slack
/// `signal_v / β − noise`, clamped at 1.
pub fn physical_model(links: &[Link], params: &PhysicalParams) -> Result<(ConflictGraph, Ordering)> {
    params.validate()?;
    let n = links.len();
    let a = params.pathloss_exponent;
    let beta = params.sinr_threshold;
    let mut slack = Vec::with_capacity(n);
    for (v, link) in links.iter().enumerate() {
        if link.length() == 0.0 {
            return Err(Error::Domain(format!("link {v} has zero length")));
        }
        let signal = gain(link.sender, link.receiver, a);
        let s = signal - beta * params.noise;
        if !(s > 0.0) {
            return Err(Error::Domain(format!(
                "link {v} is infeasible even without interference"
            )));
        }
        slack.push(s);
    }
    let mut w = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..n {
            if u != v {
                let raw = beta * gain(links[u].sender, links[v].receiver, a) / slack[v];
                w[u * n + v] = if raw.is_finite() { raw.min(1.0) } else { 1.0 };
            }
        }
    }
    let g = ConflictGraph::from_matrix(n, w, false)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| links[x].length().total_cmp(&links[y].length()).then(x.cmp(&y)));
    let ord = measured_ordering(&g, order)?;
    Ok((g, ord))
}

/// Uniform points in a `side × side` square.
pub fn random_points(n: usize, side: f64, seed: u64) -> Vec<Point> {
    let mut rng = SeedTree::new(seed).child(1).rng();
    (0..n)
        .map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side))
        .collect()
}

/// Links with uniform senders and receivers at a uniform distance in
/// `[min_len, max_len]` in a random direction.
pub fn random_links(n: usize, side: f64, min_len: f64, max_len: f64, seed: u64) -> Vec<Link> {
    let mut rng = SeedTree::new(seed).child(2).rng();
    (0..n)
        .map(|_| {
            let s = (rng.gen::<f64>() * side, rng.gen::<f64>() * side);
            let len = min_len + (max_len - min_len) * rng.gen::<f64>();
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            Link {
                sender: s,
                receiver: (s.0 + len * phi.cos(), s.1 + len * phi.sin()),
            }
        })
        .collect()
}

/// Random graph: each unordered pair is an edge with probability `p`. In the
/// weighted variant each ordered pair independently gets a weight uniform in
/// `[0, max_weight)` with probability `p`.
pub fn random_graph(n: usize, p: f64, weighted: Option<f64>, seed: u64) -> Result<ConflictGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = SeedTree::new(seed).child(3).rng();
    match weighted {
        None => {
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.gen::<f64>() < p {
                        edges.push((u, v));
                    }
                }
            }
            ConflictGraph::unweighted(n, &edges)
        }
        Some(max_weight) => {
            if !(max_weight.is_finite() && max_weight > 0.0) {
                return Err(Error::Domain(format!("maximum weight {max_weight} must be positive")));
            }
            let mut edges = Vec::new();
            for u in 0..n {
                for v in 0..n {
                    if u != v && rng.gen::<f64>() < p {
                        edges.push((u, v, max_weight * rng.gen::<f64>()));
                    }
                }
            }
            ConflictGraph::weighted(n, &edges)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PhysicalParams {
        PhysicalParams {
            pathloss_exponent: 3.0,
            sinr_threshold: 1.5,
            noise: 0.01,
        }
    }

    #[test]
    fn protocol_examples() {
        let (g, ord) = protocol_model(&[(0.0, 0.0)], 1.0).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(ord.rho, 0.0);
        let (g, _) = protocol_model(&[(0.0, 0.0), (2.0, 0.0)], 1.0).unwrap();
        assert!(!g.has_edges());
        let (g, ord) = protocol_model(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], 1.0).unwrap();
        assert_eq!(g, ConflictGraph::unweighted(3, &[(0, 1), (1, 2)]).unwrap());
        // endpoints (degree 1) first, then the middle vertex
        assert_eq!(ord.order(), &[0, 2, 1]);
        assert_eq!(ord.rho, 4.0);
        assert!(matches!(
            protocol_model(&[(0.0, 0.0), (0.0, 0.0)], 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn physical_examples() {
        let one = [Link {
            sender: (0.0, 0.0),
            receiver: (1.0, 0.0),
        }];
        let (g, ord) = physical_model(&one, &params()).unwrap();
        assert!(g.is_independent(&[0]));
        assert_eq!(ord.rho, 0.0);

        let far = [
            one[0],
            Link {
                sender: (1e4, 0.0),
                receiver: (1e4 + 1.0, 0.0),
            },
        ];
        let (g, _) = physical_model(&far, &params()).unwrap();
        assert!(g.weight(0, 1) < 1e-9 && g.weight(1, 0) < 1e-9);
        assert!(g.is_independent(&[0, 1]));

        let co = [one[0], one[0]];
        let (g, _) = physical_model(&co, &params()).unwrap();
        assert!(g.weight(0, 1) >= 1.0 && g.weight(1, 0) >= 1.0);
        assert!(!g.is_independent(&[0, 1]));

        let zero = [Link {
            sender: (1.0, 1.0),
            receiver: (1.0, 1.0),
        }];
        assert!(matches!(physical_model(&zero, &params()), Err(Error::Domain(_))));
    }

    #[test]
    fn physical_independence_matches_sinr() {
        for seed in 0..40 {
            let links = random_links(8, 10.0, 0.5, 2.0, seed);
            let (g, _) = physical_model(&links, &params()).unwrap();
            for mask in 0u32..256 {
                let set: Vec<usize> = (0..8).filter(|&v| mask & (1 << v) != 0).collect();
                assert_eq!(
                    g.is_independent(&set),
                    sinr_feasible(&links, &params(), &set),
                    "seed {seed} set {set:?}"
                );
            }
        }
    }

    #[test]
    fn physical_ordering_by_length() {
        let links = random_links(6, 10.0, 0.5, 2.0, 3);
        let (_, ord) = physical_model(&links, &params()).unwrap();
        for pair in ord.order().windows(2) {
            assert!(links[pair[0]].length() <= links[pair[1]].length());
        }
    }

    #[test]
    fn random_graph_is_deterministic() {
        assert_eq!(
            random_graph(8, 0.4, None, 5).unwrap(),
            random_graph(8, 0.4, None, 5).unwrap()
        );
        let g = random_graph(8, 0.4, Some(0.6), 5).unwrap();
        assert!(!g.is_unweighted());
        assert!(g.edges().all(|(_, _, w)| w < 0.6));
    }
}
