//! Conflict graphs, vertex orderings and the inductive independence number.
//!
//! A conflict graph is a complete directed graph over `n` users where
//! `w(u, v)` is the interference `u` causes at `v` when both share a
//! channel. A user set is independent when every member receives total
//! incoming weight strictly below one from the other members.

use crate::error::{Error, Result};

/// Largest graph for which [`rho_of_ordering`] runs its exact search.
pub const EXACT_RHO_ORDERING_LIMIT: usize = 20;
/// Largest graph for which [`exact_rho`] minimizes over all orderings.
pub const EXACT_RHO_LIMIT: usize = 9;

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictGraph {
    n: usize,
    /// Row-major `w[u * n + v]`.
    w: Vec<f64>,
    unweighted: bool,
}

impl ConflictGraph {
    /// Graph without any interference.
    pub fn edgeless(n: usize) -> Self {
        ConflictGraph {
            n,
            w: vec![0.0; n * n],
            unweighted: true,
        }
    }

    /// Classical undirected graph: every listed pair gets weight one in both directions.
    pub fn unweighted(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = ConflictGraph::edgeless(n);
        for &(u, v) in edges {
            g.check_pair(u, v)?;
            g.w[u * n + v] = 1.0;
            g.w[v * n + u] = 1.0;
        }
        Ok(g)
    }

    /// Directed weighted graph; unlisted pairs have weight zero.
    pub fn weighted(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut w = vec![0.0; n * n];
        for &(u, v, x) in edges {
            if u >= n || v >= n {
                return Err(Error::Domain(format!("edge ({u}, {v}) out of range for n = {n}")));
            }
            w[u * n + v] = x;
        }
        ConflictGraph::from_matrix(n, w, false)
    }

    /// Builds a graph from a dense row-major matrix, validating the invariants.
    pub fn from_matrix(n: usize, w: Vec<f64>, unweighted: bool) -> Result<Self> {
        if w.len() != n * n {
            return Err(Error::Domain(format!(
                "weight matrix has {} entries, expected {}",
                w.len(),
                n * n
            )));
        }
        for u in 0..n {
            if w[u * n + u] != 0.0 {
                return Err(Error::Domain(format!("self-interference w({u},{u}) must be 0")));
            }
            for v in 0..n {
                let x = w[u * n + v];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::Domain(format!(
                        "weight w({u},{v}) = {x} is not a finite nonnegative number"
                    )));
                }
                if unweighted && (x != 0.0 && x != 1.0 || x != w[v * n + u]) {
                    return Err(Error::Domain(format!(
                        "unweighted graphs need symmetric 0/1 weights, found w({u},{v}) = {x}"
                    )));
                }
            }
        }
        Ok(ConflictGraph { n, w, unweighted })
    }

    fn check_pair(&self, u: usize, v: usize) -> Result<()> {
        if u >= self.n || v >= self.n {
            return Err(Error::Domain(format!(
                "pair ({u}, {v}) out of range for n = {}",
                self.n
            )));
        }
        if u == v {
            return Err(Error::Domain(format!("self pair ({u}, {u})")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_unweighted(&self) -> bool {
        self.unweighted
    }

    /// Interference `w(u, v)` that `u` causes at `v`.
    #[inline]
    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.w[u * self.n + v]
    }

    /// `w(u, v) + w(v, u)`, zero on the diagonal.
    #[inline]
    pub fn sym(&self, u: usize, v: usize) -> f64 {
        self.w[u * self.n + v] + self.w[v * self.n + u]
    }

    /// Symmetric weight of two distinct users.
    pub fn symmetric_weight(&self, u: usize, v: usize) -> Result<f64> {
        self.check_pair(u, v)?;
        Ok(self.sym(u, v))
    }

    /// Total interference at `v` from the members of `set` other than `v`.
    pub fn incoming(&self, set: &[usize], v: usize) -> f64 {
        set.iter().filter(|&&u| u != v).map(|&u| self.weight(u, v)).sum()
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter().all(|&v| self.incoming(set, v) < 1.0)
    }

    /// Users `u` with `w̄(u, v) ≥ 1`; for unweighted graphs these are the neighbors.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&u| u != v && self.sym(u, v) >= 1.0)
    }

    /// Directed edges with positive weight as `(from, to, w)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |u| {
            (0..self.n).filter_map(move |v| {
                let x = self.weight(u, v);
                (x > 0.0).then_some((u, v, x))
            })
        })
    }

    pub fn has_edges(&self) -> bool {
        self.w.iter().any(|&x| x > 0.0)
    }

    /// Sub-graph induced by `keep` (in that order).
    pub fn induced(&self, keep: &[usize]) -> ConflictGraph {
        let m = keep.len();
        let mut w = vec![0.0; m * m];
        for (a, &u) in keep.iter().enumerate() {
            for (b, &v) in keep.iter().enumerate() {
                w[a * m + b] = self.weight(u, v);
            }
        }
        ConflictGraph {
            n: m,
            w,
            unweighted: self.unweighted,
        }
    }
}

/// Vertex ordering `π` together with the claimed inductive independence bound `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    order: Vec<usize>,
    position: Vec<usize>,
    pub rho: f64,
    /// Set when `rho` was checked against [`rho_of_ordering`].
    pub verified: bool,
}

impl Ordering {
    /// `order[i]` is the vertex at position `i`.
    pub fn from_order(order: Vec<usize>, rho: f64) -> Result<Self> {
        let n = order.len();
        let mut position = vec![usize::MAX; n];
        for (i, &v) in order.iter().enumerate() {
            if v >= n || position[v] != usize::MAX {
                return Err(Error::Domain(format!("ordering {order:?} is not a permutation")));
            }
            position[v] = i;
        }
        Ordering::checked(order, position, rho)
    }

    /// `position[v]` is the 0-based rank of vertex `v`.
    pub fn from_positions(position: Vec<usize>, rho: f64) -> Result<Self> {
        let n = position.len();
        let mut order = vec![usize::MAX; n];
        for (v, &p) in position.iter().enumerate() {
            if p >= n || order[p] != usize::MAX {
                return Err(Error::Domain(format!("positions {position:?} are not a permutation")));
            }
            order[p] = v;
        }
        Ordering::checked(order, position, rho)
    }

    fn checked(order: Vec<usize>, position: Vec<usize>, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::Domain(format!("rho = {rho} must be finite and nonnegative")));
        }
        Ok(Ordering {
            order,
            position,
            rho,
            verified: false,
        })
    }

    pub fn identity(n: usize, rho: f64) -> Self {
        Ordering {
            order: (0..n).collect(),
            position: (0..n).collect(),
            rho,
            verified: false,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Vertices in increasing `π`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn positions(&self) -> &[usize] {
        &self.position
    }

    #[inline]
    pub fn position(&self, v: usize) -> usize {
        self.position[v]
    }

    #[inline]
    pub fn precedes(&self, u: usize, v: usize) -> bool {
        self.position[u] < self.position[v]
    }

    /// Same permutation with a different `ρ` claim.
    pub fn with_rho(&self, rho: f64) -> Ordering {
        Ordering {
            rho,
            verified: false,
            ..self.clone()
        }
    }

    /// Re-measures `ρ` for this permutation and stores it as a verified claim.
    pub fn verify(&mut self, g: &ConflictGraph) -> Result<f64> {
        let rho = rho_of_ordering(g, self, RhoMode::Exact)?;
        self.rho = rho;
        self.verified = true;
        Ok(rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoMode {
    /// Branch-and-bound over independent sets; guarded by [`EXACT_RHO_ORDERING_LIMIT`].
    Exact,
    /// Cheap upper bound valid for any size.
    BoundOnly,
}

/// Maximum `Σ_{u∈M} weights[u]` over independent `M ⊆ candidates`.
///
/// Only candidates with positive weight matter: dropping members keeps a set
/// independent and never lowers the sum of the others.
pub fn max_weight_independent(g: &ConflictGraph, candidates: &[usize], weights: &[f64]) -> (f64, Vec<usize>) {
    let mut items: Vec<usize> = candidates.iter().copied().filter(|&u| weights[u] > 0.0).collect();
    items.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    let mut suffix = vec![0.0; items.len() + 1];
    for i in (0..items.len()).rev() {
        suffix[i] = suffix[i + 1] + weights[items[i]];
    }
    let mut search = Mwis {
        g,
        items: &items,
        weights,
        suffix: &suffix,
        best: 0.0,
        best_set: Vec::new(),
        current: Vec::new(),
    };
    let inc = vec![0.0; g.n()];
    search.branch(0, 0.0, &inc);
    (search.best, search.best_set)
}

struct Mwis<'a> {
    g: &'a ConflictGraph,
    items: &'a [usize],
    weights: &'a [f64],
    suffix: &'a [f64],
    best: f64,
    best_set: Vec<usize>,
    current: Vec<usize>,
}

impl Mwis<'_> {
    fn branch(&mut self, i: usize, value: f64, inc: &[f64]) {
        if value > self.best {
            self.best = value;
            self.best_set = self.current.clone();
        }
        if i == self.items.len() || value + self.suffix[i] <= self.best {
            return;
        }
        let c = self.items[i];
        let fits = inc[c] < 1.0 && self.current.iter().all(|&m| inc[m] + self.g.weight(c, m) < 1.0);
        if fits {
            let mut next = inc.to_vec();
            for (x, slot) in next.iter_mut().enumerate() {
                *slot += self.g.weight(c, x);
            }
            self.current.push(c);
            self.branch(i + 1, value + self.weights[c], &next);
            self.current.pop();
        }
        self.branch(i + 1, value, inc);
    }
}

/// Largest incoming symmetric weight at `v` from an independent subset of `earlier`.
fn incoming_from_independent(g: &ConflictGraph, v: usize, earlier: &[usize]) -> f64 {
    let weights: Vec<f64> = (0..g.n()).map(|u| if u == v { 0.0 } else { g.sym(u, v) }).collect();
    max_weight_independent(g, earlier, &weights).0
}

/// `ρ` witnessed by a fixed ordering: the worst incoming symmetric weight any
/// vertex receives from an independent set of earlier vertices.
pub fn rho_of_ordering(g: &ConflictGraph, ord: &Ordering, mode: RhoMode) -> Result<f64> {
    let n = g.n();
    if ord.len() != n {
        return Err(Error::Domain(format!(
            "ordering has {} vertices, graph has {n}",
            ord.len()
        )));
    }
    if mode == RhoMode::Exact && n > EXACT_RHO_ORDERING_LIMIT {
        return Err(Error::Size {
            what: "vertices for exact rho_of_ordering",
            actual: n,
            limit: EXACT_RHO_ORDERING_LIMIT,
        });
    }
    let mut rho: f64 = 0.0;
    for (p, &v) in ord.order().iter().enumerate() {
        let earlier = &ord.order()[..p];
        let value = match mode {
            RhoMode::Exact => incoming_from_independent(g, v, earlier),
            RhoMode::BoundOnly => bound_incoming(g, v, earlier),
        };
        rho = rho.max(value);
    }
    Ok(rho)
}

/// Upper bound on the incoming weight from an independent earlier set: every
/// earlier vertex counts at most once, and in an unweighted graph an
/// independent set holds at most one vertex per earlier clique found greedily.
fn bound_incoming(g: &ConflictGraph, v: usize, earlier: &[usize]) -> f64 {
    let total: f64 = earlier.iter().map(|&u| g.sym(u, v)).sum();
    if !g.is_unweighted() {
        return total;
    }
    // Greedy clique cover of the earlier neighbors.
    let mut left: Vec<usize> = earlier.iter().copied().filter(|&u| g.sym(u, v) > 0.0).collect();
    let mut cliques = 0usize;
    while let Some(seed) = left.pop() {
        let mut clique = vec![seed];
        left.retain(|&u| {
            if clique.iter().all(|&c| g.sym(u, c) > 0.0) {
                clique.push(u);
                false
            } else {
                true
            }
        });
        cliques += 1;
    }
    total.min(2.0 * cliques as f64)
}

/// Exact inductive independence number with a witnessing order (`order[i]`
/// is the vertex at position `i`).
///
/// The worst incoming weight at `v` depends only on the *set* of vertices
/// before it, so the minimum over all `n!` orderings is a dynamic program over
/// subsets: `best[S] = min_{v∈S} max(best[S∖v], f(v, S∖v))` with `v` last.
pub fn exact_rho(g: &ConflictGraph) -> Result<(f64, Vec<usize>)> {
    let n = g.n();
    if n > EXACT_RHO_LIMIT {
        return Err(Error::Size {
            what: "vertices for exact_rho",
            actual: n,
            limit: EXACT_RHO_LIMIT,
        });
    }
    let full = (1usize << n) - 1;
    let mut best = vec![f64::INFINITY; full + 1];
    let mut last = vec![usize::MAX; full + 1];
    best[0] = 0.0;
    for s in 1..=full {
        for v in (0..n).rev() {
            if s & (1 << v) == 0 {
                continue;
            }
            let rest = s & !(1 << v);
            let earlier: Vec<usize> = (0..n).filter(|&u| rest & (1 << u) != 0).collect();
            let cost = best[rest].max(incoming_from_independent(g, v, &earlier));
            if cost < best[s] {
                best[s] = cost;
                last[s] = v;
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut s = full;
    while s != 0 {
        let v = last[s];
        order.push(v);
        s &= !(1 << v);
    }
    order.reverse();
    Ok((best[full], order))
}

/// Neighbors of `v` that precede it in `π` (unweighted graphs only).
pub fn earlier_neighbors(g: &ConflictGraph, ord: &Ordering, v: usize) -> Result<Vec<usize>> {
    if !g.is_unweighted() {
        return Err(Error::Mode("earlier_neighbors is defined for unweighted graphs".into()));
    }
    Ok(g.neighbors(v).filter(|&u| ord.precedes(u, v)).collect())
}
