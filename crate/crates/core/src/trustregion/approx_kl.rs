//! Nyström estimate of `KL(q || p)` up to a constant: the empirical cross
//! term plus a kernel entropy estimate from the eigenvalues of `K / n` on a
//! random subset.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::Rbf;
use crate::model::TargetModel;
use crate::parallel::try_map_indexed;
use crate::stein::ParticleSet;

/// Eigenvalues at or below this are dropped from the entropy sum.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Nyström size used by the KL-driven trust region: `max(1, floor(n / 10))`.
pub fn nystrom_size(n: usize) -> usize {
    (n / 10).max(1)
}

/// Uniform subset of `m` distinct indices out of `n`.
pub fn nystrom_subset(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "Nyström size {m} must lie in 1..={n}"
        )));
    }
    Ok(rand::seq::index::sample(rng, n, m).into_vec())
}

/// `sum lambda log lambda` over the eigenvalues of `K / n` on `subset`.
pub fn nystrom_entropy_term(particles: &ParticleSet, subset: &[usize], kernel: Rbf) -> Result<f64> {
    let n = particles.len() as f64;
    let m = subset.len();
    if let Some(&bad) = subset.iter().find(|&&i| i >= particles.len()) {
        return Err(Error::invalid(format!("subset index {bad} out of range")));
    }
    let k = DMatrix::from_fn(m, m, |r, c| {
        kernel.value(particles.position(subset[r]), particles.position(subset[c])) / n
    });
    let eig = SymmetricEigen::new(k);
    Ok(eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > EIGENVALUE_FLOOR)
        .map(|&l| l * l.ln())
        .sum())
}

/// `-(1/n) sum_i log p(x_i)` over every particle, summed in index order.
pub fn mean_negative_log_density(particles: &ParticleSet, target: &dyn TargetModel) -> Result<f64> {
    particles.check_against(target)?;
    let lp = try_map_indexed(particles.len(), |i| {
        target.log_density(particles.position(i))
    })?;
    Ok(-lp.iter().sum::<f64>() / particles.len() as f64)
}

/// Approx-KL on `subset` given `log p` at every particle.
pub(crate) fn approx_kl_from_log_density(
    particles: &ParticleSet,
    log_density: &[f64],
    subset: &[usize],
    kernel: Rbf,
) -> Result<f64> {
    let h = nystrom_entropy_term(particles, subset, kernel)?;
    Ok(-log_density.iter().sum::<f64>() / particles.len() as f64 + h)
}

/// Approx-KL on a caller-chosen subset.
pub fn approx_kl_on_subset(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    subset: &[usize],
    kernel: Rbf,
) -> Result<f64> {
    let h = nystrom_entropy_term(particles, subset, kernel)?;
    Ok(mean_negative_log_density(particles, target)? + h)
}

/// Approx-KL with a fresh uniform subset of size `nystrom_size`.
pub fn approx_kl(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    nystrom_size: usize,
    kernel: Rbf,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subset = nystrom_subset(particles.len(), nystrom_size, &mut rng)?;
    approx_kl_on_subset(particles, target, &subset, kernel)
}
