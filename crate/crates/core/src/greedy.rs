//! Single-channel maximum-weight independent set greedies on unweighted graphs.
//!
//! Both routines are generic over the bid type so golden tests can run them in
//! exact rational arithmetic.

use num_traits::Num;

use crate::error::{Error, Result};
use crate::graph::{ConflictGraph, Ordering};

fn require_unweighted(g: &ConflictGraph) -> Result<()> {
    if g.is_unweighted() {
        Ok(())
    } else {
        Err(Error::Mode(
            "the greedy algorithms need an unweighted conflict graph".into(),
        ))
    }
}

/// Output of [`local_ratio_greedy`] with the first-pass residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRatioTrace<T> {
    /// Selected users in increasing `π`.
    pub set: Vec<usize>,
    /// Value of each user at the moment the first pass reached it.
    pub residual: Vec<T>,
}

/// Local-ratio greedy. The first pass walks users in decreasing `π`; a user
/// whose current value is positive subtracts it from every earlier neighbor,
/// a user at or below zero is dropped. The second pass walks the survivors in
/// increasing `π` and keeps each one without a kept neighbor.
pub fn local_ratio_greedy<T>(g: &ConflictGraph, ord: &Ordering, bids: &[T]) -> Result<LocalRatioTrace<T>>
where
    T: Num + Copy + PartialOrd,
{
    require_unweighted(g)?;
    let n = g.n();
    let mut current = bids.to_vec();
    let mut residual = bids.to_vec();
    let mut alive = vec![false; n];
    for &v in ord.order().iter().rev() {
        let value = current[v];
        residual[v] = value;
        if value <= T::zero() {
            continue;
        }
        alive[v] = true;
        for u in g.neighbors(v) {
            if ord.precedes(u, v) {
                current[u] = current[u] - value;
            }
        }
    }
    let set = greedy_in_order(g, ord.order().iter().copied().filter(|&v| alive[v]));
    Ok(LocalRatioTrace { set, residual })
}

/// Adds users in the given sequence whenever no neighbor was added before.
fn greedy_in_order(g: &ConflictGraph, users: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut taken = vec![false; g.n()];
    let mut set = Vec::new();
    for v in users {
        if !g.neighbors(v).any(|u| taken[u]) {
            taken[v] = true;
            set.push(v);
        }
    }
    set
}

/// Monotone greedy: for each prefix of the users sorted by descending bid
/// (ties by ascending `π`) run the plain greedy in increasing `π`, and return
/// the prefix solution of largest bid sum (ties to the shorter prefix, the
/// empty set unless some prefix has positive welfare).
pub fn monotone_greedy<T>(g: &ConflictGraph, ord: &Ordering, bids: &[T]) -> Result<Vec<usize>>
where
    T: Num + Copy + PartialOrd,
{
    require_unweighted(g)?;
    let n = g.n();
    let mut sorted: Vec<usize> = (0..n).collect();
    sorted.sort_by(|&a, &b| {
        bids[b]
            .partial_cmp(&bids[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ord.position(a).cmp(&ord.position(b)))
    });
    let mut best = Vec::new();
    let mut best_value = T::zero();
    let mut member = vec![false; n];
    for &v in &sorted {
        member[v] = true;
        let set = greedy_in_order(g, ord.order().iter().copied().filter(|&u| member[u]));
        let value = set.iter().fold(T::zero(), |acc, &u| acc + bids[u]);
        if value > best_value {
            best_value = value;
            best = set;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edgeless_takes_positive_bids() {
        let g = ConflictGraph::edgeless(4);
        let ord = Ordering::identity(4, 0.0);
        let bids = [1.0, 0.0, 2.0, 3.0];
        assert_eq!(local_ratio_greedy(&g, &ord, &bids).unwrap().set, vec![0, 2, 3]);
        assert_eq!(monotone_greedy(&g, &ord, &bids).unwrap(), vec![0, 2, 3]);
    }

    #[test]
    fn single_vertex() {
        let g = ConflictGraph::edgeless(1);
        let ord = Ordering::identity(1, 0.0);
        assert_eq!(monotone_greedy(&g, &ord, &[2.0]).unwrap(), vec![0]);
        assert!(monotone_greedy(&g, &ord, &[0.0]).unwrap().is_empty());
    }

    #[test]
    fn rejects_weighted_graphs() {
        let g = ConflictGraph::weighted(2, &[(0, 1, 0.5)]).unwrap();
        let ord = Ordering::identity(2, 0.5);
        assert!(matches!(local_ratio_greedy(&g, &ord, &[1.0, 1.0]), Err(Error::Mode(_))));
        assert!(matches!(monotone_greedy(&g, &ord, &[1.0, 1.0]), Err(Error::Mode(_))));
    }

    #[test]
    fn path_prefers_heavy_middle() {
        let g = ConflictGraph::unweighted(3, &[(0, 1), (1, 2)]).unwrap();
        let ord = Ordering::identity(3, 4.0);
        let bids = [1, 5, 1];
        assert_eq!(local_ratio_greedy(&g, &ord, &bids).unwrap().set, vec![1]);
        assert_eq!(monotone_greedy(&g, &ord, &bids).unwrap(), vec![1]);
    }
}
