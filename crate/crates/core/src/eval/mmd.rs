use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, Rbf};
use crate::parallel::map_indexed;
use crate::samples::SampleMatrix;

/// Ground-truth samples above this many rows are subsampled before MMD.
pub const GROUND_TRUTH_CAP: usize = 20_000;

/// `(1 / (|a| |b|)) sum_i sum_j k(a_i, b_j)`; rows of `a` in parallel, each
/// row summed in order, row sums reduced in order.
fn mean_kernel(a: &SampleMatrix, b: &SampleMatrix, kernel: Rbf) -> f64 {
    let rows = map_indexed(a.rows(), |i| {
        let x = a.row(i);
        b.iter_rows().map(|y| kernel.value(x, y)).sum::<f64>()
    });
    rows.iter().sum::<f64>() / (a.rows() as f64 * b.rows() as f64)
}

fn check_pair(x: &SampleMatrix, y: &SampleMatrix) -> Result<()> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::invalid("MMD needs non-empty samples"));
    }
    if x.cols() != y.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    Ok(())
}

/// Biased squared MMD with diagonal terms included:
///
/// ```text
/// 1/n^2 sum k(x_i, x_j) + 1/m^2 sum k(y_i, y_j) - 2/(nm) sum k(x_i, y_j)
/// ```
///
/// The cross term is averaged over both orientations so the result is
/// exactly symmetric in its arguments.
pub fn mmd(x: &SampleMatrix, y: &SampleMatrix, kernel: Rbf) -> Result<f64> {
    check_pair(x, y)?;
    let own = mean_kernel(x, x, kernel) + mean_kernel(y, y, kernel);
    Ok(own - (mean_kernel(x, y, kernel) + mean_kernel(y, x, kernel)))
}

/// Ground truth prepared for repeated MMD evaluations: subsampled, with the
/// median-heuristic kernel and its self term cached.
#[derive(Clone, Debug)]
pub struct MmdReference {
    sample: SampleMatrix,
    kernel: Rbf,
    self_term: f64,
    pub original_rows: usize,
    pub seed: u64,
}

/// What a reference was built from, for metric reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdReferenceInfo {
    pub lengthscale: f64,
    pub ground_truth_rows: usize,
    pub ground_truth_used: usize,
    pub seed: u64,
}

impl MmdReference {
    /// Lengthscale from the median heuristic on `ground_truth`.
    pub fn new(ground_truth: &SampleMatrix, seed: u64) -> Result<Self> {
        let kernel = median_heuristic(ground_truth, seed)?;
        Self::with_kernel(ground_truth, kernel, seed)
    }

    pub fn with_kernel(ground_truth: &SampleMatrix, kernel: Rbf, seed: u64) -> Result<Self> {
        if ground_truth.rows() == 0 {
            return Err(Error::invalid("empty ground-truth sample"));
        }
        let sample = if ground_truth.rows() > GROUND_TRUTH_CAP {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let mut idx = rand::seq::index::sample(&mut rng, ground_truth.rows(), GROUND_TRUTH_CAP)
                .into_vec();
            idx.sort_unstable();
            ground_truth.select_rows(&idx)
        } else {
            ground_truth.clone()
        };
        let self_term = mean_kernel(&sample, &sample, kernel);
        Ok(MmdReference {
            sample,
            kernel,
            self_term,
            original_rows: ground_truth.rows(),
            seed,
        })
    }

    pub fn kernel(&self) -> Rbf {
        self.kernel
    }

    pub fn sample(&self) -> &SampleMatrix {
        &self.sample
    }

    pub fn info(&self) -> MmdReferenceInfo {
        MmdReferenceInfo {
            lengthscale: self.kernel.lengthscale(),
            ground_truth_rows: self.original_rows,
            ground_truth_used: self.sample.rows(),
            seed: self.seed,
        }
    }

    /// Same value as `mmd(x, reference_sample, kernel)`.
    pub fn mmd(&self, x: &SampleMatrix) -> Result<f64> {
        check_pair(x, &self.sample)?;
        let own = mean_kernel(x, x, self.kernel) + self.self_term;
        Ok(own
            - (mean_kernel(x, &self.sample, self.kernel)
                + mean_kernel(&self.sample, x, self.kernel)))
    }
}
