//! RBF kernels: the global kernel, its blanket-restricted local family, and
//! median-heuristic lengthscale selection.
//!
//! The parameterization is `k(x, y) = exp(-|x - y|^2 / (2 l^2))`.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::FactorLayout;
use crate::samples::SampleMatrix;

/// RBF kernel with a fixed lengthscale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Rbf {
    lengthscale: f64,
}

impl TryFrom<f64> for Rbf {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Rbf::new(v)
    }
}

impl From<Rbf> for f64 {
    fn from(k: Rbf) -> f64 {
        k.lengthscale
    }
}

impl Rbf {
    pub fn new(lengthscale: f64) -> Result<Self> {
        if lengthscale > 0.0 && lengthscale.is_finite() {
            Ok(Rbf { lengthscale })
        } else {
            Err(Error::invalid(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )))
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// `-1 / l^2`, the factor turning `(x - y) * k` into `grad_x k`.
    #[inline]
    pub(crate) fn grad_scale(&self) -> f64 {
        -1.0 / (self.lengthscale * self.lengthscale)
    }

    #[inline]
    pub(crate) fn from_sq_dist(&self, sq: f64) -> f64 {
        (-sq / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Kernel value without input validation.
    #[inline]
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.from_sq_dist(sq_dist(x, y))
    }

    /// Kernel value and its gradient with respect to `x`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        ensure_finite(x, "kernel input")?;
        ensure_finite(y, "kernel input")?;
        let k = self.value(x, y);
        let s = self.grad_scale() * k;
        Ok((k, x.iter().zip(y).map(|(a, b)| s * (a - b)).collect()))
    }
}

#[inline]
pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Value and gradients of one local kernel `k_a(x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalKernelEval {
    pub value: f64,
    /// `grad_x k_a` restricted to the factor's own dimensions `C_a`.
    pub grad_own: Vec<f64>,
    /// `grad_x k_a` over the blanket dimensions `S_a`, in `blanket(a)` order.
    pub grad_blanket: Vec<f64>,
}

/// One RBF kernel per factor, each reading only the factor's blanket
/// coordinates. All factors share one lengthscale.
#[derive(Clone, Debug)]
pub struct LocalKernelFamily {
    kernel: Rbf,
    layout: FactorLayout,
}

impl LocalKernelFamily {
    pub fn new(kernel: Rbf, layout: FactorLayout) -> Self {
        LocalKernelFamily { kernel, layout }
    }

    pub fn kernel(&self) -> Rbf {
        self.kernel
    }

    pub fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    /// `|x - y|^2` over the blanket coordinates of factor `a`.
    #[inline]
    pub(crate) fn blanket_sq_dist(&self, a: usize, x: &[f64], y: &[f64]) -> f64 {
        self.layout
            .blanket(a)
            .iter()
            .map(|&d| (x[d] - y[d]) * (x[d] - y[d]))
            .sum()
    }

    /// Local kernel values `k_a(x, y)` for every factor, from per-dimension
    /// squared differences.
    pub(crate) fn values_from_sq_diffs(&self, sq: &[f64], out: &mut [f64]) {
        for (a, slot) in out.iter_mut().enumerate() {
            let s: f64 = self.layout.blanket(a).iter().map(|&d| sq[d]).sum();
            *slot = self.kernel.from_sq_dist(s);
        }
    }

    pub fn value(&self, a: usize, x: &[f64], y: &[f64]) -> f64 {
        self.kernel.from_sq_dist(self.blanket_sq_dist(a, x, y))
    }

    pub fn eval(&self, a: usize, x: &[f64], y: &[f64]) -> Result<LocalKernelEval> {
        self.layout.check_factor(a)?;
        self.layout.check_point(x)?;
        self.layout.check_point(y)?;
        let value = self.value(a, x, y);
        let s = self.kernel.grad_scale() * value;
        Ok(LocalKernelEval {
            value,
            grad_own: self.layout.factor(a).map(|d| s * (x[d] - y[d])).collect(),
            grad_blanket: self
                .layout
                .blanket(a)
                .iter()
                .map(|&d| s * (x[d] - y[d]))
                .collect(),
        })
    }
}

/// Row count above which the median heuristic works on a seeded subsample.
pub const MEDIAN_SUBSAMPLE_ROWS: usize = 10_000;

/// Pair count above which the median is found by bucketed selection instead
/// of materializing every distance.
const MEDIAN_DIRECT_PAIRS: usize = 2_000_000;

/// Median of the pairwise Euclidean distances over all unordered pairs of
/// distinct rows (the mean of the two middle values for an even count).
pub fn median_heuristic(sample: &SampleMatrix, seed: u64) -> Result<Rbf> {
    if sample.rows() < 2 {
        return Err(Error::DegenerateSample(
            "median heuristic needs at least two rows",
        ));
    }
    ensure_finite(sample.as_slice(), "sample")?;
    let sub;
    let sample = if sample.rows() > MEDIAN_SUBSAMPLE_ROWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample_indices(&mut rng, sample.rows(), MEDIAN_SUBSAMPLE_ROWS).into_vec();
        idx.sort_unstable();
        sub = sample.select_rows(&idx);
        &sub
    } else {
        sample
    };
    let n = sample.rows();
    let pairs = n * (n - 1) / 2;
    let median = if pairs <= MEDIAN_DIRECT_PAIRS {
        let mut d = Vec::with_capacity(pairs);
        for i in 0..n {
            for j in i + 1..n {
                d.push(sq_dist(sample.row(i), sample.row(j)).sqrt());
            }
        }
        median_of(&mut d)
    } else {
        bucketed_pair_median(sample)
    };
    if median > 0.0 {
        Rbf::new(median)
    } else if pairwise_all_zero(sample) {
        Err(Error::DegenerateSample("all rows are identical"))
    } else {
        // More than half the pairs coincide; fall back to the smallest
        // nonzero distance so the kernel stays usable.
        let mut min = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let d = sq_dist(sample.row(i), sample.row(j)).sqrt();
                if d > 0.0 && d < min {
                    min = d;
                }
            }
        }
        Rbf::new(min)
    }
}

fn pairwise_all_zero(sample: &SampleMatrix) -> bool {
    let first = sample.row(0);
    sample.iter_rows().all(|r| r == first)
}

fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Exact median of all pairwise distances without storing them: a histogram
/// pass locates the bucket(s) holding the middle order statistics, a second
/// pass collects just those values.
fn bucketed_pair_median(sample: &SampleMatrix) -> f64 {
    const BUCKETS: usize = 1 << 16;
    let n = sample.rows();
    let pairs = n * (n - 1) / 2;
    let row_pairs = |i: usize| (i + 1..n).map(move |j| sq_dist(sample.row(i), sample.row(j)));
    let max_sq = (0..n)
        .into_par_iter()
        .map(|i| row_pairs(i).fold(0.0, f64::max))
        .reduce(|| 0.0, f64::max);
    if max_sq == 0.0 {
        return 0.0;
    }
    let bucket = |sq: f64| (((sq / max_sq) * BUCKETS as f64) as usize).min(BUCKETS - 1);
    let counts = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = vec![0usize; BUCKETS];
            for sq in row_pairs(i) {
                c[bucket(sq)] += 1;
            }
            c
        })
        .reduce(
            || vec![0usize; BUCKETS],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let ranks: Vec<usize> = if pairs % 2 == 1 {
        vec![pairs / 2]
    } else {
        vec![pairs / 2 - 1, pairs / 2]
    };
    let mut picked = Vec::with_capacity(2);
    for &rank in &ranks {
        let mut seen = 0;
        for (b, &c) in counts.iter().enumerate() {
            if seen + c > rank {
                picked.push((b, rank - seen));
                break;
            }
            seen += c;
        }
    }
    let mut values = Vec::with_capacity(picked.len());
    for &(b, offset) in &picked {
        let mut members: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| row_pairs(i).filter(move |&sq| bucket(sq) == b))
            .collect();
        let (_, v, _) = members.select_nth_unstable_by(offset, f64::total_cmp);
        values.push(v.sqrt());
    }
    values.iter().sum::<f64>() / values.len() as f64
}
