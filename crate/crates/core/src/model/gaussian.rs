use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FactorLayout, TargetModel, LN_2PI};
use crate::error::{Error, Result};
use crate::samples::SampleMatrix;

/// Multivariate normal target `N(mean, covariance)`.
///
/// The default layout has one 1-D factor per dimension, with blankets read off
/// the sparsity pattern of the precision matrix.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    layout: FactorLayout,
}

impl GaussianTarget {
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariance.nrows(),
            });
        }
        crate::error::ensure_finite(&mean, "mean")?;
        crate::error::ensure_finite(covariance.as_slice(), "covariance")?;
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?;
        let mut precision = chol.inverse();
        // exact symmetry
        for r in 0..d {
            for c in r + 1..d {
                let v = 0.5 * (precision[(r, c)] + precision[(c, r)]);
                precision[(r, c)] = v;
                precision[(c, r)] = v;
            }
        }
        let log_det_cov: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_norm = -0.5 * (d as f64 * LN_2PI + log_det_cov);

        let neighbors: Vec<BTreeSet<usize>> = (0..d)
            .map(|r| {
                (0..d)
                    .filter(|&c| c != r && precision[(r, c)] != 0.0)
                    .collect()
            })
            .collect();
        let layout = FactorLayout::new(&vec![1; d], &neighbors)?;
        Ok(GaussianTarget {
            mean: DVector::from_vec(mean),
            covariance,
            precision,
            log_norm,
            layout,
        })
    }

    /// Replaces the factor layout. Every nonzero precision entry must couple
    /// factors that share a blanket.
    pub fn with_layout(mut self, layout: FactorLayout) -> Result<Self> {
        let d = self.mean.len();
        if layout.total_dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: layout.total_dim(),
            });
        }
        for r in 0..d {
            for c in 0..d {
                let (a, b) = (layout.factor_of(r).unwrap(), layout.factor_of(c).unwrap());
                if self.precision[(r, c)] != 0.0 && !layout.in_blanket(a, b) {
                    return Err(Error::InvalidLayout(format!(
                        "precision couples dims {r} and {c} across non-blanket factors {a}, {b}"
                    )));
                }
            }
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    /// `count` i.i.d. draws `mean + L z` with `L L^T = covariance`.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleMatrix> {
        let d = self.mean.len();
        let l = self
            .covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("covariance is not positive definite"))?
            .l();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(count * d);
        let mut z = DVector::zeros(d);
        for _ in 0..count {
            for v in z.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let x = &self.mean + &l * &z;
            data.extend(x.iter());
        }
        SampleMatrix::from_vec(count, d, data)
    }
}

impl TargetModel for GaussianTarget {
    fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_density_and_gradient(x).map(|(lp, _)| lp)
    }

    fn log_density_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.layout.check_point(x)?;
        let diff = DVector::from_column_slice(x) - &self.mean;
        let pd = &self.precision * &diff;
        let lp = self.log_norm - 0.5 * diff.dot(&pd);
        Ok((lp, (-pd).data.into()))
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.layout.check_point(x)?;
        Ok(-&self.precision)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fd;

    #[test]
    fn standard_normal_at_mode() {
        let t = GaussianTarget::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
        let (lp, g) = t.log_density_and_gradient(&[0.0]).unwrap();
        assert!((lp - (-0.918_938_533_204_672_8)).abs() < 1e-14);
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, -0.2, 0.0, -0.2, 0.5]);
        let t = GaussianTarget::new(vec![1.0, -1.0, 0.5], cov).unwrap();
        let x = [0.3, 0.2, -0.4];
        let g = t.log_density_and_gradient(&x).unwrap().1;
        let g_fd = fd::gradient(&t, &x, 1e-4);
        for (a, b) in g.iter().zip(&g_fd) {
            assert!(fd::rel_err(*a, *b, 1e-8) < 1e-8);
        }
        // tridiagonal-ish precision is dense after inversion of this covariance
        assert_eq!(t.layout().num_factors(), 3);
    }

    #[test]
    fn rejects_layout_that_hides_coupling() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let t = GaussianTarget::new(vec![0.0, 0.0], cov).unwrap();
        let split = FactorLayout::new(&[1, 1], &[BTreeSet::new(), BTreeSet::new()]).unwrap();
        assert!(t.clone().with_layout(split).is_err());
        assert!(t.with_layout(FactorLayout::single(2).unwrap()).is_ok());
    }

    #[test]
    fn exact_draws_match_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
        let t = GaussianTarget::new(vec![1.0, -1.0], cov).unwrap();
        let s = t.sample(200_000, 3).unwrap();
        let m = s.column_means();
        let c = s.covariance();
        assert!((m[0] - 1.0).abs() < 0.01 && (m[1] + 1.0).abs() < 0.015);
        assert!(
            (c[0] - 1.0).abs() < 0.02 && (c[1] - 0.6).abs() < 0.02 && (c[3] - 2.0).abs() < 0.04
        );
        assert_eq!(t.sample(5, 1).unwrap(), t.sample(5, 1).unwrap());
    }
}
