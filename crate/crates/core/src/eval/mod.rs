//! Evaluation: MMD against ground truth, gradient magnitude, and a
//! random-walk Metropolis reference sampler.

mod metropolis;
mod mmd;

pub use metropolis::{
    accept, metropolis_chains, metropolis_reference, MetropolisConfig, MetropolisOutput,
};
pub use mmd::{mmd, MmdReference, MmdReferenceInfo, GROUND_TRUTH_CAP};

use crate::stein::SteinGradientField;

/// `sqrt(sum_i ||g_i||^2)` in particle order.
pub fn gradient_magnitude(field: &SteinGradientField) -> f64 {
    field.magnitude()
}
