//! The seven-user single-channel instance on which the local-ratio greedy is
//! not monotone. User `v` sits at position `v` of the ordering, so user `0` is
//! the first one and user `6` is the one whose bid `x` varies.

use crate::error::Result;
use crate::graph::{ConflictGraph, Ordering};
use crate::instance::Instance;
use crate::valuations::{SymmetricValuation, Valuation};

/// Edges between 1-based ordering positions.
pub const EDGES_BY_POSITION: [(usize, usize); 10] = [
    (7, 6),
    (7, 1),
    (6, 5),
    (6, 4),
    (5, 4),
    (5, 3),
    (5, 2),
    (4, 1),
    (3, 1),
    (2, 1),
];

/// Bids of positions 1 through 6; position 7 bids `x`.
pub const FIXED_BIDS: [f64; 6] = [11.5, 7.0, 7.0, 7.0, 6.0, 6.0];

/// The user that varies its bid.
pub const VARYING_USER: usize = 6;

pub fn graph() -> ConflictGraph {
    let edges: Vec<(usize, usize)> = EDGES_BY_POSITION.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
    ConflictGraph::unweighted(7, &edges).expect("fixture edges are valid")
}

pub fn ordering() -> Ordering {
    let mut ord = Ordering::identity(7, 0.0);
    ord.verify(&graph()).expect("fixture is small");
    ord
}

pub fn bids(x: f64) -> Vec<f64> {
    let mut b = FIXED_BIDS.to_vec();
    b.push(x);
    b
}

/// One channel, each user valuing it at its bid.
pub fn instance(x: f64) -> Result<Instance> {
    let valuations = bids(x)
        .into_iter()
        .map(|b| Valuation::Symmetric(SymmetricValuation { values: vec![0.0, b] }))
        .collect();
    Instance::new(graph(), ordering(), 1, valuations)
}
