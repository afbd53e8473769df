//! Baseline and kernel hyperparameters per problem family.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// 6 unknown sensors, 12 dimensions.
    SnlpSmall,
    /// 50 unknown sensors, 100 dimensions.
    SnlpLarge,
    BayesNet30,
    BayesNet80,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparameters {
    /// Initial step and decay of MP-SVGD with a decaying step.
    pub decayed_step: (f64, f64),
    /// Initial step of MP-SVGD with AdaGrad, when one was tuned.
    pub adagrad_step: Option<f64>,
    /// Constant radius of SVN-CTR.
    pub svn_radius: f64,
    pub lengthscale: f64,
}

impl Family {
    pub fn hyperparameters(self) -> Hyperparameters {
        match self {
            Family::SnlpSmall => Hyperparameters {
                decayed_step: (0.1, 0.99),
                adagrad_step: Some(0.5),
                svn_radius: 1.0,
                lengthscale: 1.0,
            },
            Family::SnlpLarge => Hyperparameters {
                decayed_step: (0.1, 0.99),
                adagrad_step: None,
                svn_radius: 0.1,
                lengthscale: 3.0,
            },
            Family::BayesNet30 => Hyperparameters {
                decayed_step: (0.01, 0.999),
                adagrad_step: Some(0.05),
                svn_radius: 0.1,
                lengthscale: 10.0,
            },
            Family::BayesNet80 => Hyperparameters {
                decayed_step: (0.01, 0.99),
                adagrad_step: Some(0.05),
                svn_radius: 0.1,
                lengthscale: 60.0,
            },
        }
    }
}

/// Initial radius of the KL-ratio driver when none is configured.
pub const DEFAULT_INITIAL_RADIUS: f64 = 1.0;
