//! Packing linear programs `max cᵀx s.t. Ax ≤ b, x ≥ 0` with `b ≥ 0`, solved by
//! a dense primal simplex and certified by a repaired dual solution.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{ConflictGraph, Ordering};
use crate::instance::Instance;

/// Row tolerance used by [`check_lp_feasible`].
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Nonnegativity tolerance used by [`check_lp_feasible`].
pub const NONNEG_TOL: f64 = 1e-12;
pub const DEFAULT_GAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PackingLp {
    pub c: Vec<f64>,
    /// Dense rows of `A`.
    pub rows: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub var_names: Vec<String>,
    pub row_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Dual-feasible multipliers, one per row.
    pub y: Vec<f64>,
    pub objective: f64,
    /// `bᵀy`, an upper bound on the optimum.
    pub dual_bound: f64,
    /// `bᵀy − cᵀx`, clamped at zero.
    pub gap: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub worst_violation: f64,
    /// Row index of the worst violation, or `None` for a sign violation.
    pub worst_row: Option<usize>,
}

impl PackingLp {
    pub fn new(c: Vec<f64>) -> Self {
        let var_names = (0..c.len()).map(|j| format!("x{j}")).collect();
        PackingLp {
            c,
            rows: Vec::new(),
            b: Vec::new(),
            var_names,
            row_names: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, name: impl Into<String>, coeffs: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coeffs.len(), self.c.len());
        self.rows.push(coeffs);
        self.b.push(rhs);
        self.row_names.push(name.into());
    }

    fn validate(&self) -> Result<()> {
        let nv = self.num_vars();
        if self.c.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("objective has a non-finite coefficient".into()));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != nv {
                return Err(Error::Domain(format!(
                    "row {r} has {} coefficients, expected {nv}",
                    row.len()
                )));
            }
            if row.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return Err(Error::Domain(format!(
                    "row {r} has a negative or non-finite coefficient"
                )));
            }
            if !(self.b[r].is_finite() && self.b[r] >= 0.0) {
                return Err(Error::Domain(format!("row {r} has right-hand side {}", self.b[r])));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    pub fn row_activity(&self, r: usize, x: &[f64]) -> f64 {
        self.rows[r].iter().zip(x).map(|(a, x)| a * x).sum()
    }

    /// Text in CPLEX LP format.
    pub fn to_lp_format(&self) -> String {
        let mut s = String::from("\\ packing LP\nMaximize\n obj:");
        let term = |s: &mut String, coef: f64, name: &str, first: bool| {
            if coef < 0.0 {
                let _ = write!(s, " - {} {}", -coef, name);
            } else if first {
                let _ = write!(s, " {coef} {name}");
            } else {
                let _ = write!(s, " + {coef} {name}");
            }
        };
        let mut first = true;
        for (j, &c) in self.c.iter().enumerate() {
            if c != 0.0 {
                term(&mut s, c, &self.var_names[j], first);
                first = false;
            }
        }
        if first {
            let _ = write!(s, " 0 {}", self.var_names.first().map_or("x0", String::as_str));
        }
        s.push_str("\nSubject To\n");
        for (r, row) in self.rows.iter().enumerate() {
            let _ = write!(s, " {}:", self.row_names[r]);
            let mut first = true;
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 {
                    term(&mut s, a, &self.var_names[j], first);
                    first = false;
                }
            }
            if first {
                let _ = write!(s, " 0 {}", self.var_names[0]);
            }
            let _ = writeln!(s, " <= {}", self.b[r]);
        }
        s.push_str("End\n");
        s
    }
}

/// Checks `Ax ≤ b + 1e−9` and `x ≥ −1e−12`.
pub fn check_lp_feasible(lp: &PackingLp, x: &[f64]) -> Result<FeasibilityReport> {
    if x.len() != lp.num_vars() {
        return Err(Error::Domain(format!(
            "point has {} entries, LP has {} variables",
            x.len(),
            lp.num_vars()
        )));
    }
    let mut report = FeasibilityReport {
        feasible: true,
        worst_violation: 0.0,
        worst_row: None,
    };
    for &xj in x {
        if -xj > report.worst_violation {
            report.worst_violation = -xj;
            report.worst_row = None;
        }
        if xj < -NONNEG_TOL {
            report.feasible = false;
        }
    }
    for r in 0..lp.num_rows() {
        let excess = lp.row_activity(r, x) - lp.b[r];
        if excess > report.worst_violation {
            report.worst_violation = excess;
            report.worst_row = Some(r);
        }
        if excess > FEASIBILITY_TOL {
            report.feasible = false;
        }
    }
    Ok(report)
}

/// Solves the packing LP to an absolute gap of `tol · max(1, |optimum|)`.
pub fn solve_packing_lp(lp: &PackingLp, tol: f64) -> Result<LpSolution> {
    lp.validate()?;
    let nv = lp.num_vars();
    let m = lp.num_rows();
    if nv == 0 {
        return Ok(LpSolution {
            x: Vec::new(),
            y: vec![0.0; m],
            objective: 0.0,
            dual_bound: 0.0,
            gap: 0.0,
            iterations: 0,
        });
    }
    let mut tab = Tableau::new(lp);
    let iterations = tab.run()?;
    let (x, y) = refine(lp, &tab.basis);
    let objective = lp.objective(&x);
    let dual_bound: f64 = lp.b.iter().zip(&y).map(|(b, y)| b * y).sum();
    let gap = (dual_bound - objective).max(0.0);
    let report = check_lp_feasible(lp, &x)?;
    if !report.feasible {
        return Err(Error::Solver(format!(
            "primal point violates the constraints by {:e} (row {:?})",
            report.worst_violation, report.worst_row
        )));
    }
    if gap > tol * objective.abs().max(1.0) {
        return Err(Error::Solver(format!(
            "duality gap {gap:e} exceeds tolerance after {iterations} pivots (primal {objective}, dual {dual_bound})"
        )));
    }
    Ok(LpSolution {
        x,
        y,
        objective,
        dual_bound,
        gap,
        iterations,
    })
}

struct Tableau {
    m: usize,
    /// Columns: structural variables then one slack per row, then the right-hand side.
    width: usize,
    t: Vec<f64>,
    /// Reduced costs `c_j − c_Bᵀ B⁻¹ A_j` for every column.
    reduced: Vec<f64>,
    basis: Vec<usize>,
    cost_tol: f64,
}

const PIVOT_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

impl Tableau {
    fn new(lp: &PackingLp) -> Self {
        let nv = lp.num_vars();
        let m = lp.num_rows();
        let width = nv + m + 1;
        let mut t = vec![0.0; m * width];
        for r in 0..m {
            t[r * width..r * width + nv].copy_from_slice(&lp.rows[r]);
            t[r * width + nv + r] = 1.0;
            t[r * width + width - 1] = lp.b[r];
        }
        let mut reduced = vec![0.0; nv + m];
        reduced[..nv].copy_from_slice(&lp.c);
        let scale = lp.c.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        Tableau {
            m,
            width,
            t,
            reduced,
            basis: (nv..nv + m).collect(),
            cost_tol: 1e-11 * scale,
        }
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn run(&mut self) -> Result<usize> {
        let mut stall = 0usize;
        let mut last_obj = f64::NEG_INFINITY;
        let mut obj = 0.0;
        for it in 0..MAX_PIVOTS {
            let bland = stall > 50;
            let entering = if bland {
                (0..self.reduced.len()).find(|&j| self.reduced[j] > self.cost_tol)
            } else {
                let mut best = None;
                let mut best_val = self.cost_tol;
                for (j, &r) in self.reduced.iter().enumerate() {
                    if r > best_val {
                        best_val = r;
                        best = Some(j);
                    }
                }
                best
            };
            let Some(e) = entering else {
                return Ok(it);
            };
            let rhs = self.width - 1;
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.m {
                let a = self.at(r, e);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, rhs).max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            ratio < best_ratio - 1e-15 || (ratio <= best_ratio + 1e-15 && self.basis[r] < self.basis[l])
                        }
                    };
                    if better {
                        best_ratio = ratio;
                        leave = Some(r);
                    }
                }
            }
            let Some(l) = leave else {
                return Err(Error::Solver(format!("LP is unbounded along column {e}")));
            };
            obj += self.reduced[e] * best_ratio;
            if obj > last_obj + 1e-14 {
                stall = 0;
                last_obj = obj;
            } else {
                stall += 1;
            }
            self.pivot(l, e);
        }
        Err(Error::Solver(format!("simplex exceeded {MAX_PIVOTS} pivots")))
    }

    fn pivot(&mut self, l: usize, e: usize) {
        let w = self.width;
        let p = self.at(l, e);
        for c in 0..w {
            self.t[l * w + c] /= p;
        }
        self.t[l * w + e] = 1.0;
        let pivot_row: Vec<f64> = self.t[l * w..(l + 1) * w].to_vec();
        for r in 0..self.m {
            if r == l {
                continue;
            }
            let f = self.t[r * w + e];
            if f != 0.0 {
                for (c, &pv) in pivot_row.iter().enumerate() {
                    if pv != 0.0 {
                        self.t[r * w + c] -= f * pv;
                    }
                }
                self.t[r * w + e] = 0.0;
            }
        }
        let f = self.reduced[e];
        for (c, red) in self.reduced.iter_mut().enumerate() {
            *red -= f * pivot_row[c];
        }
        self.reduced[e] = 0.0;
        self.basis[l] = e;
    }
}

/// Recomputes the basic solution and duals from the original data, then
/// repairs the duals into exact dual feasibility.
fn refine(lp: &PackingLp, basis: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let nv = lp.num_vars();
    let m = lp.num_rows();
    let column = |j: usize, r: usize| {
        if j < nv {
            lp.rows[r][j]
        } else if j - nv == r {
            1.0
        } else {
            0.0
        }
    };
    let bmat = DMatrix::from_fn(m, m, |r, c| column(basis[c], r));
    let lu_t = bmat.transpose().lu();
    let lu = bmat.lu();
    let mut x = vec![0.0; nv];
    let mut y = vec![0.0; m];
    if let Some(xb) = lu.solve(&DVector::from_column_slice(&lp.b)) {
        for (pos, &j) in basis.iter().enumerate() {
            if j < nv {
                x[j] = xb[pos].max(0.0);
            }
        }
    }
    let cb = DVector::from_iterator(m, basis.iter().map(|&j| if j < nv { lp.c[j] } else { 0.0 }));
    if let Some(yv) = lu_t.solve(&cb) {
        for r in 0..m {
            y[r] = yv[r].max(0.0);
        }
    }
    // Scale the primal back inside any row it overshoots through rounding.
    let mut shrink: f64 = 1.0;
    for r in 0..m {
        let act = lp.row_activity(r, &x);
        if act > lp.b[r] {
            shrink = shrink.min(if lp.b[r] > 0.0 { lp.b[r] / act } else { 0.0 });
        }
    }
    if shrink < 1.0 {
        for xj in &mut x {
            *xj *= shrink;
        }
        // rows with b = 0 need their variables exactly zero
        for r in 0..m {
            if lp.b[r] == 0.0 {
                for j in 0..nv {
                    if lp.rows[r][j] > 0.0 {
                        x[j] = 0.0;
                    }
                }
            }
        }
    }
    // Cover every column's cost with the cheapest row.
    for j in 0..nv {
        let covered: f64 = (0..m).map(|r| lp.rows[r][j] * y[r]).sum();
        let deficit = lp.c[j] - covered;
        if deficit > 0.0 {
            let best = (0..m)
                .filter(|&r| lp.rows[r][j] > 0.0)
                .min_by(|&r, &s| (lp.b[r] / lp.rows[r][j]).total_cmp(&(lp.b[s] / lp.rows[s][j])));
            if let Some(r) = best {
                y[r] += deficit / lp.rows[r][j];
            }
        }
    }
    (x, y)
}

/// Count-form LP over variables `x_{v,i}` (`i = 1..k`) at index `v·k + i − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountLp {
    pub lp: PackingLp,
    pub n: usize,
    pub k: usize,
    pub rho: f64,
}

impl CountLp {
    pub fn index(&self, v: usize, i: usize) -> usize {
        v * self.k + i - 1
    }

    /// Reshapes a flat solution into `x[v][i]` with `x[v][0] = 0`.
    pub fn reshape(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|v| {
                let mut row = vec![0.0];
                row.extend_from_slice(&flat[v * self.k..(v + 1) * self.k]);
                row
            })
            .collect()
    }
}

/// Count-form LP with an arbitrary benefit table `benefit[v][i]` (`i = 0..=k`,
/// entry 0 ignored): interference rows `Σ_{π(u)<π(v)} Σ_i i·w̄(u,v)·x_{u,i} ≤ ρk`
/// and `Σ_i x_{v,i} ≤ 1`.
pub fn build_count_lp(g: &ConflictGraph, ord: &Ordering, rho: f64, k: usize, benefit: &[Vec<f64>]) -> CountLp {
    let n = g.n();
    let mut c = vec![0.0; n * k];
    let mut names = Vec::with_capacity(n * k);
    for v in 0..n {
        for i in 1..=k {
            c[v * k + i - 1] = benefit[v][i];
            names.push(format!("x_{v}_{i}"));
        }
    }
    let mut lp = PackingLp::new(c);
    lp.var_names = names;
    for v in 0..n {
        let mut row = vec![0.0; n * k];
        let mut any = false;
        for u in 0..n {
            let wb = g.sym(u, v);
            if u != v && ord.precedes(u, v) && wb > 0.0 {
                any = true;
                for i in 1..=k {
                    row[u * k + i - 1] = i as f64 * wb;
                }
            }
        }
        if any {
            lp.add_row(format!("interference_{v}"), row, rho * k as f64);
        }
    }
    for v in 0..n {
        let mut row = vec![0.0; n * k];
        for i in 1..=k {
            row[v * k + i - 1] = 1.0;
        }
        lp.add_row(format!("assign_{v}"), row, 1.0);
    }
    CountLp { lp, n, k, rho }
}

/// Solution of a count-form LP; `x[v][i]` for `i = 0..=k` with `x[v][0] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSolution {
    pub x: Vec<Vec<f64>>,
    pub objective: f64,
    pub gap: f64,
}

impl CountSolution {
    pub fn zero(n: usize, k: usize) -> Self {
        CountSolution {
            x: vec![vec![0.0; k + 1]; n],
            objective: 0.0,
            gap: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.x.first().map_or(0, |r| r.len() - 1)
    }
}

impl CountLp {
    pub fn solve(&self, tol: f64) -> Result<CountSolution> {
        let sol = solve_packing_lp(&self.lp, tol)?;
        Ok(CountSolution {
            x: self.reshape(&sol.x),
            objective: sol.objective,
            gap: sol.gap,
        })
    }
}

/// The count-form LP for symmetric bidders.
pub fn build_symmetric_lp(inst: &Instance, rho: f64) -> Result<CountLp> {
    let vals = inst.require_symmetric()?;
    let benefit: Vec<Vec<f64>> = vals.iter().map(|s| s.values.clone()).collect();
    Ok(build_count_lp(&inst.graph, &inst.ordering, rho, inst.k, &benefit))
}

/// Single-channel LP: `max Σ a_v x_v` s.t. `Σ_{π(u)<π(v)} w̄(u,v) x_u ≤ ρ` and `x ≤ 1`.
pub fn build_single_channel_lp(g: &ConflictGraph, ord: &Ordering, rho: f64, a: &[f64]) -> Result<PackingLp> {
    let n = g.n();
    if a.len() != n {
        return Err(Error::Domain(format!("{} weights for {n} users", a.len())));
    }
    if let Some(x) = a.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Domain(format!("user weight {x} must be finite and nonnegative")));
    }
    let mut lp = PackingLp::new(a.to_vec());
    lp.var_names = (0..n).map(|v| format!("x_{v}")).collect();
    for v in 0..n {
        let row: Vec<f64> = (0..n)
            .map(|u| if u != v && ord.precedes(u, v) { g.sym(u, v) } else { 0.0 })
            .collect();
        if row.iter().any(|&x| x > 0.0) {
            lp.add_row(format!("interference_{v}"), row, rho);
        }
    }
    for v in 0..n {
        let mut row = vec![0.0; n];
        row[v] = 1.0;
        lp.add_row(format!("box_{v}"), row, 1.0);
    }
    Ok(lp)
}

/// Worst violation of the channel-form constraints for a column `x_{·,j}`:
/// interference rows against `ρ + 1e−9` and the box `[0, 1]` against `1e−12`.
pub fn channel_column_violation(g: &ConflictGraph, ord: &Ordering, rho: f64, x: &[f64]) -> f64 {
    let n = g.n();
    let mut worst: f64 = 0.0;
    for v in 0..n {
        let load: f64 = (0..n)
            .filter(|&u| u != v && ord.precedes(u, v))
            .map(|u| g.sym(u, v) * x[u])
            .sum();
        worst = worst.max(load - rho);
        worst = worst.max(-x[v]).max(x[v] - 1.0);
    }
    worst
}
