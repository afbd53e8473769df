use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::model::TargetModel;
use crate::parallel::try_map_indexed;
use crate::samples::SampleMatrix;

/// Random-walk Metropolis settings. `chain_length` counts post-burn-in
/// steps; every `thinning`-th post-burn-in state is kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetropolisConfig {
    pub chain_length: usize,
    pub proposal_scale: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct MetropolisOutput {
    pub samples: SampleMatrix,
    pub acceptance_rate: f64,
}

/// Metropolis acceptance rule for a log-density ratio and a uniform draw.
pub fn accept(log_ratio: f64, uniform: f64) -> bool {
    log_ratio >= 0.0 || uniform.ln() < log_ratio
}

fn chain(
    target: &dyn TargetModel,
    config: &MetropolisConfig,
    initial: &[f64],
    stream: u64,
) -> Result<MetropolisOutput> {
    if !(config.proposal_scale > 0.0 && config.proposal_scale.is_finite()) {
        return Err(Error::invalid("proposal scale must be positive"));
    }
    if config.thinning == 0 {
        return Err(Error::invalid("thinning must be at least 1"));
    }
    if initial.len() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            got: initial.len(),
        });
    }
    ensure_finite(initial, "initial state")?;
    let mut x = initial.to_vec();
    let mut lp = target.log_density(&x)?;
    if !lp.is_finite() {
        return Err(Error::NonFinite("log-density at the initial state"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let d = x.len();
    let mut kept = Vec::with_capacity(config.chain_length / config.thinning * d);
    let mut accepted = 0usize;
    let total = config.burn_in + config.chain_length;
    let mut proposal = vec![0.0; d];
    for step in 0..total {
        for (p, xi) in proposal.iter_mut().zip(&x) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = xi + config.proposal_scale * z;
        }
        let lp_new = match target.log_density(&proposal) {
            Ok(v) => v,
            Err(Error::Singular(..)) => f64::NEG_INFINITY,
            Err(e) => return Err(e),
        };
        let u: f64 = rng.random();
        if accept(lp_new - lp, u) {
            x.copy_from_slice(&proposal);
            lp = lp_new;
            accepted += 1;
        }
        if step >= config.burn_in && (step - config.burn_in + 1) % config.thinning == 0 {
            kept.extend_from_slice(&x);
        }
    }
    let rows = kept.len() / d.max(1);
    Ok(MetropolisOutput {
        samples: SampleMatrix::from_vec(rows, d, kept)?,
        acceptance_rate: if total == 0 {
            0.0
        } else {
            accepted as f64 / total as f64
        },
    })
}

/// One random-walk Metropolis chain started at `initial`.
pub fn metropolis_reference(
    target: &dyn TargetModel,
    config: &MetropolisConfig,
    initial: &[f64],
) -> Result<MetropolisOutput> {
    chain(target, config, initial, 0)
}

/// Independent chains run concurrently, one per initial state; samples are
/// concatenated in chain order and the acceptance rate is the mean.
pub fn metropolis_chains(
    target: &dyn TargetModel,
    config: &MetropolisConfig,
    initial: &[Vec<f64>],
) -> Result<MetropolisOutput> {
    if initial.is_empty() {
        return Err(Error::invalid("need at least one chain"));
    }
    let outs = try_map_indexed(initial.len(), |c| {
        chain(target, config, &initial[c], c as u64)
    })?;
    let d = target.dim();
    let mut data = Vec::new();
    let mut rate = 0.0;
    for o in &outs {
        data.extend_from_slice(o.samples.as_slice());
        rate += o.acceptance_rate;
    }
    Ok(MetropolisOutput {
        samples: SampleMatrix::from_vec(data.len() / d, d, data)?,
        acceptance_rate: rate / outs.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianTarget;
    use nalgebra::DMatrix;

    fn config(seed: u64) -> MetropolisConfig {
        MetropolisConfig {
            chain_length: 2000,
            proposal_scale: 1.0,
            burn_in: 100,
            thinning: 2,
            seed,
        }
    }

    #[test]
    fn uphill_moves_always_accepted() {
        assert!(accept(0.0, 0.999_999));
        assert!(accept(3.0, 0.5));
        assert!(!accept(-1.0, 0.5));
        assert!(accept(-1.0, 0.3));
    }

    #[test]
    fn reproducible_and_thinned() {
        let t = GaussianTarget::new(vec![0.0, 1.0], DMatrix::identity(2, 2)).unwrap();
        let a = metropolis_reference(&t, &config(4), &[0.0, 0.0]).unwrap();
        let b = metropolis_reference(&t, &config(4), &[0.0, 0.0]).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.rows(), 1000);
        assert!(a.acceptance_rate > 0.2 && a.acceptance_rate < 0.9);
        let c = metropolis_chains(&t, &config(4), &[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(c.samples.rows(), 2000);
    }

    #[test]
    fn rejects_bad_inputs() {
        let t = GaussianTarget::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
        let mut c = config(0);
        assert!(metropolis_reference(&t, &c, &[f64::NAN]).is_err());
        assert!(metropolis_reference(&t, &c, &[0.0, 1.0]).is_err());
        c.proposal_scale = 0.0;
        assert!(metropolis_reference(&t, &c, &[0.0]).is_err());
    }
}
