use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{metropolis_chains, MetropolisConfig};
use crate::model::{
    BayesNet, BayesNetSpec, GaussianTarget, SnlpPosterior, SnlpProblem, TargetModel, SCHEMA_VERSION,
};
use crate::samples::SampleMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub schema_version: u32,
    pub mean: Vec<f64>,
    /// Row-major, one inner list per row.
    pub covariance: Vec<Vec<f64>>,
}

/// A concrete problem instance as written to `problem.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    BayesNet(BayesNetSpec),
    Snlp(SnlpProblem),
    Gaussian(GaussianSpec),
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Self {
        GaussianSpec {
            schema_version: SCHEMA_VERSION,
            mean,
            covariance,
        }
    }

    pub fn target(&self) -> Result<GaussianTarget> {
        let d = self.mean.len();
        if self.covariance.len() != d || self.covariance.iter().any(|r| r.len() != d) {
            return Err(Error::invalid(format!("covariance must be {d} x {d}")));
        }
        let cov = DMatrix::from_fn(d, d, |r, c| self.covariance[r][c]);
        GaussianTarget::new(self.mean.clone(), cov)
    }
}

impl ProblemSpec {
    pub fn target(&self) -> Result<Box<dyn TargetModel>> {
        Ok(match self {
            ProblemSpec::BayesNet(spec) => Box::new(BayesNet::new(spec.clone())?),
            ProblemSpec::Snlp(p) => Box::new(SnlpPosterior::new(p.clone())?),
            ProblemSpec::Gaussian(g) => Box::new(g.target()?),
        })
    }

    /// Center and scale of the default particle initialization.
    pub fn default_init(&self, dim: usize) -> (Vec<f64>, f64) {
        match self {
            ProblemSpec::Snlp(p) => (vec![p.side / 2.0; dim], p.side / 4.0),
            ProblemSpec::BayesNet(_) | ProblemSpec::Gaussian(_) => (vec![0.0; dim], 1.0),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let kind = value
            .as_object_mut()
            .and_then(|o| o.remove("kind"))
            .ok_or_else(|| Error::format(path, "missing `kind`"))?;
        // internally tagged enums lose field paths, so dispatch on the tag by hand
        fn body<T: serde::de::DeserializeOwned>(
            path: &Path,
            value: serde_json::Value,
        ) -> Result<T> {
            serde_path_to_error::deserialize(value)
                .map_err(|e| Error::format(path, format!("at `{}`: {}", e.path(), e.inner())))
        }
        let spec = match kind.as_str() {
            Some("bayes_net") => ProblemSpec::BayesNet(body(path, value)?),
            Some("snlp") => ProblemSpec::Snlp(body(path, value)?),
            Some("gaussian") => ProblemSpec::Gaussian(body(path, value)?),
            _ => return Err(Error::format(path, format!("unknown problem kind {kind}"))),
        };
        match &spec {
            ProblemSpec::BayesNet(s) => s.validate()?,
            ProblemSpec::Snlp(p) => p.validate()?,
            ProblemSpec::Gaussian(g) => {
                g.target()?;
            }
        }
        Ok(spec)
    }
}

pub const DEFAULT_GROUND_TRUTH_SAMPLES: usize = 100_000;

/// Settings of the ground-truth sampler.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthConfig {
    /// Number of ground-truth rows; `0` disables ground truth and MMD.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Metropolis settings, used only for sensor networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinning: Option<usize>,
}

impl GroundTruthConfig {
    /// Fills sampler settings for problems that need a Markov chain.
    pub fn resolve(&mut self, spec: &ProblemSpec) {
        self.samples.get_or_insert(DEFAULT_GROUND_TRUTH_SAMPLES);
        if let ProblemSpec::Snlp(p) = spec {
            self.chains.get_or_insert(4);
            self.proposal_scale.get_or_insert(0.2 * p.variance.sqrt());
            self.burn_in.get_or_insert(20_000);
            self.thinning.get_or_insert(10);
        }
    }
}

/// Draws the ground-truth sample: ancestral sampling for Bayes nets, exact
/// draws for Gaussians, Metropolis chains started at the true sensor
/// positions for sensor networks.
pub fn ground_truth(
    spec: &ProblemSpec,
    target: &dyn TargetModel,
    cfg: &GroundTruthConfig,
) -> Result<Option<SampleMatrix>> {
    let samples = cfg.samples.unwrap_or(DEFAULT_GROUND_TRUTH_SAMPLES);
    if samples == 0 {
        return Ok(None);
    }
    Ok(Some(match spec {
        ProblemSpec::BayesNet(s) => s.ancestral_sample(samples, cfg.seed)?,
        ProblemSpec::Gaussian(g) => g.target()?.sample(samples, cfg.seed)?,
        ProblemSpec::Snlp(p) => {
            let chains = cfg.chains.unwrap_or(4).max(1);
            let thinning = cfg.thinning.unwrap_or(10).max(1);
            let per_chain = samples.div_ceil(chains);
            let mc = MetropolisConfig {
                chain_length: per_chain * thinning,
                proposal_scale: cfg.proposal_scale.unwrap_or(0.2 * p.variance.sqrt()),
                burn_in: cfg.burn_in.unwrap_or(20_000),
                thinning,
                seed: cfg.seed,
            };
            let start = p.true_state();
            let out = metropolis_chains(target, &mc, &vec![start; chains])?;
            let keep: Vec<usize> = (0..samples.min(out.samples.rows())).collect();
            out.samples.select_rows(&keep)
        }
    }))
}
