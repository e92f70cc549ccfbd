//! Exact welfare maximization by branch and bound, for small instances.

use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance};

pub const BRUTE_FORCE_N_LIMIT: usize = 12;
pub const BRUTE_FORCE_K_LIMIT: usize = 3;

/// Maximum-welfare feasible allocation. Users are assigned channel subsets
/// one at a time while per-channel incoming weights are tracked, and a
/// branch is cut once even the full value of every remaining user cannot
/// beat the incumbent.
pub fn brute_force_optimum(inst: &Instance) -> Result<(Allocation, f64)> {
    let n = inst.n();
    let k = inst.k;
    if n > BRUTE_FORCE_N_LIMIT {
        return Err(Error::Size {
            what: "users for brute_force_optimum",
            actual: n,
            limit: BRUTE_FORCE_N_LIMIT,
        });
    }
    if k > BRUTE_FORCE_K_LIMIT {
        return Err(Error::Size {
            what: "channels for brute_force_optimum",
            actual: k,
            limit: BRUTE_FORCE_K_LIMIT,
        });
    }
    // Per user: subsets as bitmasks with their values, best first.
    let options: Vec<Vec<(u32, f64)>> = (0..n)
        .map(|v| {
            let mut opts: Vec<(u32, f64)> = (0..1u32 << k)
                .map(|mask| {
                    let set: Vec<usize> = (0..k).filter(|&j| mask & (1 << j) != 0).collect();
                    (mask, inst.valuations[v].value_unchecked(&set))
                })
                .collect();
            opts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            opts
        })
        .collect();
    let mut suffix = vec![0.0; n + 1];
    for v in (0..n).rev() {
        suffix[v] = suffix[v + 1] + options[v][0].1;
    }
    let mut search = Search {
        inst,
        options: &options,
        suffix: &suffix,
        masks: vec![0; n],
        best_masks: vec![0; n],
        best: 0.0,
        incoming: vec![vec![0.0; n]; k],
    };
    search.branch(0, 0.0);
    let sets = search
        .best_masks
        .iter()
        .map(|&m| (0..k).filter(|&j| m & (1 << j) != 0).collect())
        .collect();
    Ok((Allocation { sets }, search.best))
}

struct Search<'a> {
    inst: &'a Instance,
    options: &'a [Vec<(u32, f64)>],
    suffix: &'a [f64],
    masks: Vec<u32>,
    best_masks: Vec<u32>,
    best: f64,
    /// `incoming[j][x]`: weight at `x` from the users already placed on channel `j`.
    incoming: Vec<Vec<f64>>,
}

impl Search<'_> {
    fn fits(&self, v: usize, mask: u32) -> bool {
        let g = &self.inst.graph;
        (0..self.inst.k).filter(|&j| mask & (1 << j) != 0).all(|j| {
            self.incoming[j][v] < 1.0
                && (0..v)
                    .filter(|&u| self.masks[u] & (1 << j) != 0)
                    .all(|u| self.incoming[j][u] + g.weight(v, u) < 1.0)
        })
    }

    fn place(&mut self, v: usize, mask: u32, sign: f64) {
        let n = self.inst.n();
        for j in 0..self.inst.k {
            if mask & (1 << j) != 0 {
                for x in 0..n {
                    self.incoming[j][x] += sign * self.inst.graph.weight(v, x);
                }
            }
        }
    }

    fn branch(&mut self, v: usize, value: f64) {
        if value > self.best {
            self.best = value;
            self.best_masks.copy_from_slice(&self.masks);
        }
        if v == self.masks.len() || value + self.suffix[v] <= self.best {
            return;
        }
        for &(mask, worth) in &self.options[v] {
            if value + worth + self.suffix[v + 1] <= self.best {
                // options are sorted, so no later one can do better
                break;
            }
            if mask == 0 || !self.fits(v, mask) {
                continue;
            }
            let saved: Vec<Vec<f64>> = self.incoming.clone();
            self.place(v, mask, 1.0);
            self.masks[v] = mask;
            self.branch(v + 1, value + worth);
            self.masks[v] = 0;
            self.incoming = saved;
        }
        self.branch(v + 1, value);
    }
}
