use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of the state dimensions into contiguous factors, plus each
/// factor's Markov blanket.
///
/// `blanket_factors[a]` always contains `a` itself; `blankets[a]` is the
/// sorted union of the dimensions of those factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorLayout {
    factors: Vec<Range<usize>>,
    blanket_factors: Vec<Vec<usize>>,
    blankets: Vec<Vec<usize>>,
    total_dim: usize,
}

impl FactorLayout {
    /// Builds a layout from factor sizes (laid out contiguously in order) and
    /// factor-level neighbor sets. Neighbor relations must be symmetric.
    pub fn new(factor_sizes: &[usize], neighbors: &[BTreeSet<usize>]) -> Result<Self> {
        if factor_sizes.is_empty() {
            return Err(Error::InvalidLayout("no factors".into()));
        }
        if neighbors.len() != factor_sizes.len() {
            return Err(Error::InvalidLayout(format!(
                "{} neighbor sets for {} factors",
                neighbors.len(),
                factor_sizes.len()
            )));
        }
        let mut factors = Vec::with_capacity(factor_sizes.len());
        let mut start = 0;
        for (a, &size) in factor_sizes.iter().enumerate() {
            if size == 0 {
                return Err(Error::InvalidLayout(format!("factor {a} is empty")));
            }
            factors.push(start..start + size);
            start += size;
        }
        let count = factors.len();
        let mut blanket_factors = Vec::with_capacity(count);
        for (a, set) in neighbors.iter().enumerate() {
            let mut members = set.clone();
            members.insert(a);
            for &b in &members {
                if b >= count {
                    return Err(Error::InvalidLayout(format!(
                        "factor {a} lists unknown neighbor {b}"
                    )));
                }
                if b != a && !neighbors[b].contains(&a) {
                    return Err(Error::InvalidLayout(format!(
                        "blanket asymmetry: {b} neighbors {a} but not vice versa"
                    )));
                }
            }
            blanket_factors.push(members.into_iter().collect::<Vec<_>>());
        }
        let blankets = blanket_factors
            .iter()
            .map(|members: &Vec<usize>| members.iter().flat_map(|&b| factors[b].clone()).collect())
            .collect();
        Ok(FactorLayout {
            factors,
            blanket_factors,
            blankets,
            total_dim: start,
        })
    }

    /// One factor spanning every dimension.
    pub fn single(total_dim: usize) -> Result<Self> {
        Self::new(&[total_dim], &[BTreeSet::new()])
    }

    /// One factor per dimension, all mutually in each other's blanket.
    pub fn fully_connected(factor_sizes: &[usize]) -> Result<Self> {
        let d = factor_sizes.len();
        let neighbors: Vec<BTreeSet<usize>> = (0..d)
            .map(|a| (0..d).filter(|&b| b != a).collect())
            .collect();
        Self::new(factor_sizes, &neighbors)
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, a: usize) -> Range<usize> {
        self.factors[a].clone()
    }

    pub fn factors(&self) -> &[Range<usize>] {
        &self.factors
    }

    /// Dimension indices `S_a` (own dims plus Markov blanket), ascending.
    pub fn blanket(&self, a: usize) -> &[usize] {
        &self.blankets[a]
    }

    /// Factor indices whose dimensions make up `S_a`, ascending, including `a`.
    pub fn blanket_factors(&self, a: usize) -> &[usize] {
        &self.blanket_factors[a]
    }

    pub fn in_blanket(&self, a: usize, b: usize) -> bool {
        self.blanket_factors[a].binary_search(&b).is_ok()
    }

    /// Factor pairs `(a, b)` with `a <= b` whose blankets overlap, i.e. the
    /// pairs whose Hessian blocks can be nonzero.
    pub fn coupled_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for a in 0..self.factors.len() {
            for &b in &self.blanket_factors[a] {
                if b >= a {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    /// The factor owning dimension `d`.
    pub fn factor_of(&self, d: usize) -> Option<usize> {
        if d >= self.total_dim {
            return None;
        }
        Some(self.factors.partition_point(|r| r.end <= d))
    }

    pub(crate) fn check_factor(&self, a: usize) -> Result<()> {
        if a < self.factors.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "factor index {a} out of range ({} factors)",
                self.factors.len()
            )))
        }
    }

    pub(crate) fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.total_dim {
            return Err(Error::DimensionMismatch {
                expected: self.total_dim,
                got: x.len(),
            });
        }
        crate::error::ensure_finite(x, "state vector")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets(v: &[&[usize]]) -> Vec<BTreeSet<usize>> {
        v.iter().map(|s| s.iter().copied().collect()).collect()
    }

    #[test]
    fn blankets_include_own_dims() {
        let layout = FactorLayout::new(&[2, 1, 2], &sets(&[&[1], &[0], &[]])).unwrap();
        assert_eq!(layout.total_dim(), 5);
        assert_eq!(layout.blanket(0), &[0, 1, 2]);
        assert_eq!(layout.blanket(2), &[3, 4]);
        assert_eq!(layout.coupled_pairs(), vec![(0, 0), (0, 1), (1, 1), (2, 2)]);
        assert_eq!(layout.factor_of(4), Some(2));
        assert_eq!(layout.factor_of(2), Some(1));
        assert_eq!(layout.factor_of(5), None);
    }

    #[test]
    fn rejects_asymmetric_and_empty() {
        assert!(FactorLayout::new(&[1, 1], &sets(&[&[1], &[]])).is_err());
        assert!(FactorLayout::new(&[1, 0], &sets(&[&[], &[]])).is_err());
        assert!(FactorLayout::new(&[], &[]).is_err());
    }
}
