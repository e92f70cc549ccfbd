//! Bidder valuations over channel subsets and their lottery values.
//!
//! Channels are `0..k`. A symmetric valuation depends only on how many
//! channels a bidder gets; a matroid-rank-sum (MRS) valuation is a weighted
//! sum of matroid rank functions given by explicit descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest channel count accepted by the lottery-value routines.
pub const LOTTERY_K_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Valuation {
    Symmetric(SymmetricValuation),
    Mrs(MrsValuation),
}

/// `values[i]` is the benefit of receiving exactly `i` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricValuation {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsValuation {
    pub terms: Vec<MrsTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrsTerm {
    pub w: f64,
    pub rank: Rank,
}

/// Matroid rank descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Rank {
    /// `min(r, |T|)`.
    Uniform { r: usize },
    /// `Σ_b min(caps[b], |T ∩ blocks[b]|)`; channels outside every block are loops.
    Partition { blocks: Vec<Vec<usize>>, caps: Vec<usize> },
    /// Weighted coverage: channel `j` covers the elements `sets[j]`, and the
    /// value of `T` is the total weight of covered elements. This is a sum of
    /// rank-one partition matroids, one per element, over the channels
    /// covering it. Missing weights default to one.
    Coverage {
        sets: Vec<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        element_weights: Option<Vec<f64>>,
    },
}

fn check_weight(x: f64, what: &str) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} {x} must be finite and nonnegative")))
    }
}

fn check_channels(t: &[usize], k: usize) -> Result<()> {
    match t.iter().find(|&&j| j >= k) {
        Some(j) => Err(Error::Domain(format!("channel {j} out of range for k = {k}"))),
        None => Ok(()),
    }
}

impl SymmetricValuation {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = SymmetricValuation { values };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.first() != Some(&0.0) {
            return Err(Error::Domain("symmetric valuation needs b(0) = 0".into()));
        }
        for (i, &x) in self.values.iter().enumerate() {
            check_weight(x, "benefit")?;
            if i > 0 && x < self.values[i - 1] {
                return Err(Error::Domain(format!("symmetric valuation decreases at {i} channels")));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.values.len() - 1
    }

    pub fn of_count(&self, i: usize) -> f64 {
        self.values[i]
    }
}

impl Rank {
    /// Number of elements of a coverage descriptor.
    fn coverage_elements(sets: &[Vec<usize>], weights: &Option<Vec<f64>>) -> usize {
        let implied = sets.iter().flatten().map(|&e| e + 1).max().unwrap_or(0);
        weights.as_ref().map_or(implied, |w| w.len().max(implied))
    }

    fn validate(&self, k: usize) -> Result<()> {
        match self {
            Rank::Uniform { .. } => Ok(()),
            Rank::Partition { blocks, caps } => {
                if blocks.len() != caps.len() {
                    return Err(Error::Domain("partition matroid needs one cap per block".into()));
                }
                let mut seen = vec![false; k];
                for block in blocks {
                    check_channels(block, k)?;
                    for &j in block {
                        if std::mem::replace(&mut seen[j], true) {
                            return Err(Error::Domain(format!("channel {j} lies in two partition blocks")));
                        }
                    }
                }
                Ok(())
            }
            Rank::Coverage { sets, element_weights } => {
                if sets.len() != k {
                    return Err(Error::Domain(format!(
                        "coverage needs one set per channel, got {} for k = {k}",
                        sets.len()
                    )));
                }
                if let Some(w) = element_weights {
                    for &x in w {
                        check_weight(x, "element weight")?;
                    }
                    if let Some(e) = sets.iter().flatten().find(|&&e| e >= w.len()) {
                        return Err(Error::Domain(format!("element {e} has no weight")));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, t: &[usize]) -> f64 {
        match self {
            Rank::Uniform { r } => t.len().min(*r) as f64,
            Rank::Partition { blocks, caps } => blocks
                .iter()
                .zip(caps)
                .map(|(b, &c)| b.iter().filter(|j| t.contains(j)).count().min(c) as f64)
                .sum(),
            Rank::Coverage { sets, element_weights } => {
                let m = Rank::coverage_elements(sets, element_weights);
                let mut covered = vec![false; m];
                for &j in t {
                    for &e in &sets[j] {
                        covered[e] = true;
                    }
                }
                (0..m)
                    .filter(|&e| covered[e])
                    .map(|e| element_weights.as_ref().map_or(1.0, |w| w[e]))
                    .sum()
            }
        }
    }

    /// Channels covering each element of a coverage descriptor.
    fn covering_channels(sets: &[Vec<usize>], weights: &Option<Vec<f64>>) -> Vec<(f64, Vec<usize>)> {
        let m = Rank::coverage_elements(sets, weights);
        let mut cover = vec![Vec::new(); m];
        for (j, set) in sets.iter().enumerate() {
            for &e in set {
                cover[e].push(j);
            }
        }
        cover
            .into_iter()
            .enumerate()
            .map(|(e, c)| (weights.as_ref().map_or(1.0, |w| w[e]), c))
            .collect()
    }

    /// `E[rank(T)]` for `T` containing each channel independently with probability `q[j]`.
    fn lottery(&self, q: &[f64]) -> f64 {
        match self {
            Rank::Uniform { r } => {
                let all: Vec<usize> = (0..q.len()).collect();
                expected_capped(&poisson_binomial(q, &all), *r)
            }
            Rank::Partition { blocks, caps } => blocks
                .iter()
                .zip(caps)
                .map(|(b, &c)| expected_capped(&poisson_binomial(q, b), c))
                .sum(),
            Rank::Coverage { sets, element_weights } => Rank::covering_channels(sets, element_weights)
                .iter()
                .map(|(w, c)| w * (1.0 - c.iter().map(|&j| 1.0 - q[j]).product::<f64>()))
                .sum(),
        }
    }

    fn add_gradient(&self, q: &[f64], scale: f64, out: &mut [f64]) {
        match self {
            Rank::Uniform { r } => {
                let all: Vec<usize> = (0..q.len()).collect();
                block_gradient(q, &all, *r, scale, out);
            }
            Rank::Partition { blocks, caps } => {
                for (b, &c) in blocks.iter().zip(caps) {
                    block_gradient(q, b, c, scale, out);
                }
            }
            Rank::Coverage { sets, element_weights } => {
                for (w, c) in Rank::covering_channels(sets, element_weights) {
                    for &j in &c {
                        let others: f64 = c.iter().filter(|&&i| i != j).map(|&i| 1.0 - q[i]).product();
                        out[j] += scale * w * others;
                    }
                }
            }
        }
    }

    /// Adds `scale · ∂²/∂q_i∂q_j` into the row-major `k × k` matrix `out`.
    fn add_hessian(&self, q: &[f64], scale: f64, out: &mut [f64]) {
        let k = q.len();
        match self {
            Rank::Uniform { r } => {
                let all: Vec<usize> = (0..k).collect();
                block_hessian(q, &all, *r, scale, out);
            }
            Rank::Partition { blocks, caps } => {
                for (b, &c) in blocks.iter().zip(caps) {
                    block_hessian(q, b, c, scale, out);
                }
            }
            Rank::Coverage { sets, element_weights } => {
                for (w, c) in Rank::covering_channels(sets, element_weights) {
                    for &i in &c {
                        for &j in &c {
                            if i != j {
                                let others: f64 =
                                    c.iter().filter(|&&l| l != i && l != j).map(|&l| 1.0 - q[l]).product();
                                out[i * k + j] -= scale * w * others;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Distribution of the number of successes among `channels` with success probabilities `q`.
fn poisson_binomial(q: &[f64], channels: &[usize]) -> Vec<f64> {
    let mut pmf = vec![0.0; channels.len() + 1];
    pmf[0] = 1.0;
    for (m, &j) in channels.iter().enumerate() {
        let p = q[j];
        for c in (0..=m + 1).rev() {
            let stay = if c <= m { pmf[c] * (1.0 - p) } else { 0.0 };
            let step = if c > 0 { pmf[c - 1] * p } else { 0.0 };
            pmf[c] = stay + step;
        }
    }
    pmf
}

fn expected_capped(pmf: &[f64], cap: usize) -> f64 {
    pmf.iter().enumerate().map(|(c, p)| p * c.min(cap) as f64).sum()
}

/// `∂/∂q_j E[min(cap, X)] = Pr[X_{−j} < cap]` for `j` in the block.
fn block_gradient(q: &[f64], block: &[usize], cap: usize, scale: f64, out: &mut [f64]) {
    if cap == 0 {
        return;
    }
    for &j in block {
        let rest: Vec<usize> = block.iter().copied().filter(|&i| i != j).collect();
        let pmf = poisson_binomial(q, &rest);
        out[j] += scale * pmf.iter().take(cap).sum::<f64>();
    }
}

/// `∂²/∂q_i∂q_j E[min(cap, X)] = −Pr[X_{−ij} = cap − 1]` for distinct `i, j` in the block.
fn block_hessian(q: &[f64], block: &[usize], cap: usize, scale: f64, out: &mut [f64]) {
    if cap == 0 {
        return;
    }
    let k = q.len();
    for (a, &i) in block.iter().enumerate() {
        for &j in &block[a + 1..] {
            let rest: Vec<usize> = block.iter().copied().filter(|&l| l != i && l != j).collect();
            let pmf = poisson_binomial(q, &rest);
            let h = scale * pmf.get(cap - 1).copied().unwrap_or(0.0);
            out[i * k + j] -= h;
            out[j * k + i] -= h;
        }
    }
}

impl MrsValuation {
    pub fn validate(&self, k: usize) -> Result<()> {
        for term in &self.terms {
            check_weight(term.w, "term weight")?;
            term.rank.validate(k)?;
        }
        Ok(())
    }

    fn check_q(&self, q: &[f64]) -> Result<()> {
        if q.len() > LOTTERY_K_LIMIT {
            return Err(Error::Size {
                what: "channels for lottery evaluation",
                actual: q.len(),
                limit: LOTTERY_K_LIMIT,
            });
        }
        match q.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            Some(p) => Err(Error::Domain(format!("inclusion probability {p} outside [0, 1]"))),
            None => Ok(()),
        }
    }

    pub fn value(&self, t: &[usize]) -> f64 {
        self.terms.iter().map(|term| term.w * term.rank.value(t)).sum()
    }

    /// Expected value of a random set including channel `j` independently with probability `q[j]`.
    pub fn lottery_value(&self, q: &[f64]) -> Result<f64> {
        self.check_q(q)?;
        Ok(self.terms.iter().map(|term| term.w * term.rank.lottery(q)).sum())
    }

    /// Partial derivatives of [`Self::lottery_value`]; the lottery value is
    /// multilinear, so component `j` is `E[b(T ∪ j)] − E[b(T ∖ j)]`.
    pub fn lottery_gradient(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_q(q)?;
        let mut out = vec![0.0; q.len()];
        for term in &self.terms {
            term.rank.add_gradient(q, term.w, &mut out);
        }
        Ok(out)
    }

    /// Row-major Hessian of [`Self::lottery_value`]; the diagonal is zero.
    pub fn lottery_hessian(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_q(q)?;
        let mut out = vec![0.0; q.len() * q.len()];
        for term in &self.terms {
            term.rank.add_hessian(q, term.w, &mut out);
        }
        Ok(out)
    }
}

impl Valuation {
    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            Valuation::Symmetric(s) => {
                s.validate()?;
                if s.k() != k {
                    return Err(Error::Domain(format!(
                        "symmetric valuation lists {} channel counts, instance has k = {k}",
                        s.k()
                    )));
                }
                Ok(())
            }
            Valuation::Mrs(m) => m.validate(k),
        }
    }

    /// `b(T)`; `T` must list distinct channels below `k`.
    pub fn value(&self, t: &[usize], k: usize) -> Result<f64> {
        check_channels(t, k)?;
        Ok(self.value_unchecked(t))
    }

    pub(crate) fn value_unchecked(&self, t: &[usize]) -> f64 {
        match self {
            Valuation::Symmetric(s) => s.of_count(t.len()),
            Valuation::Mrs(m) => m.value(t),
        }
    }

    /// Value of all `k` channels.
    pub fn full_value(&self, k: usize) -> f64 {
        let all: Vec<usize> = (0..k).collect();
        self.value_unchecked(&all)
    }

    pub fn as_symmetric(&self) -> Option<&SymmetricValuation> {
        match self {
            Valuation::Symmetric(s) => Some(s),
            Valuation::Mrs(_) => None,
        }
    }

    pub fn as_mrs(&self) -> Option<&MrsValuation> {
        match self {
            Valuation::Mrs(m) => Some(m),
            Valuation::Symmetric(_) => None,
        }
    }

    /// Same valuation multiplied by `c ≥ 0`.
    pub fn scaled(&self, c: f64) -> Valuation {
        match self {
            Valuation::Symmetric(s) => Valuation::Symmetric(SymmetricValuation {
                values: s.values.iter().map(|x| x * c).collect(),
            }),
            Valuation::Mrs(m) => Valuation::Mrs(MrsValuation {
                terms: m
                    .terms
                    .iter()
                    .map(|t| MrsTerm {
                        w: t.w * c,
                        rank: t.rank.clone(),
                    })
                    .collect(),
            }),
        }
    }

    pub fn zero_like(&self) -> Valuation {
        self.scaled(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(w: f64, r: usize) -> MrsValuation {
        MrsValuation {
            terms: vec![MrsTerm {
                w,
                rank: Rank::Uniform { r },
            }],
        }
    }

    #[test]
    fn value_examples() {
        let v = Valuation::Mrs(uniform(5.0, 1));
        assert_eq!(v.value(&[], 2).unwrap(), 0.0);
        assert_eq!(v.value(&[0, 1], 2).unwrap(), 5.0);
        let cov = Valuation::Mrs(MrsValuation {
            terms: vec![MrsTerm {
                w: 1.0,
                rank: Rank::Coverage {
                    sets: vec![vec![0, 1], vec![1, 2]],
                    element_weights: None,
                },
            }],
        });
        assert_eq!(cov.value(&[0, 1], 2).unwrap(), 3.0);
        assert!(matches!(cov.value(&[2], 2), Err(Error::Domain(_))));
        let sym = Valuation::Symmetric(SymmetricValuation::new(vec![0.0, 2.0, 3.0]).unwrap());
        assert_eq!(sym.value(&[1], 2).unwrap(), 2.0);
        assert_eq!(sym.full_value(2), 3.0);
    }

    #[test]
    fn lottery_examples() {
        let v = uniform(1.0, 1);
        assert_eq!(v.lottery_value(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(v.lottery_value(&[1.0, 1.0]).unwrap(), 1.0);
        assert!((v.lottery_value(&[0.5, 0.5]).unwrap() - 0.75).abs() < 1e-15);
        assert!(matches!(v.lottery_value(&[0.0; 21]), Err(Error::Size { .. })));
        assert!(matches!(v.lottery_value(&[1.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn gradient_examples() {
        let v = uniform(1.0, 1);
        assert_eq!(v.lottery_gradient(&[0.3]).unwrap(), vec![1.0]);
        let full = uniform(1.0, 3);
        assert_eq!(full.lottery_gradient(&[1.0, 1.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn validation() {
        assert!(SymmetricValuation::new(vec![1.0, 2.0]).is_err());
        assert!(SymmetricValuation::new(vec![0.0, 2.0, 1.0]).is_err());
        let bad = MrsValuation {
            terms: vec![MrsTerm {
                w: 1.0,
                rank: Rank::Partition {
                    blocks: vec![vec![0, 1], vec![1]],
                    caps: vec![1, 1],
                },
            }],
        };
        assert!(bad.validate(2).is_err());
        let neg = uniform(-1.0, 1);
        assert!(neg.validate(2).is_err());
    }

    #[test]
    fn json_shape() {
        let v = Valuation::Mrs(uniform(2.0, 1));
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(
            s,
            r#"{"type":"mrs","terms":[{"w":2.0,"rank":{"kind":"uniform","r":1}}]}"#
        );
        let sym: Valuation = serde_json::from_str(r#"{"type":"symmetric","values":[0,1,2]}"#).unwrap();
        assert_eq!(sym.as_symmetric().unwrap().k(), 2);
    }
}
