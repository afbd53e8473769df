//! Factor-structured target distributions.
//!
//! Every model carries a [`FactorLayout`] and evaluates an exact log-density
//! (normalizing constants included), its gradient, and its Hessian. Blocks of
//! the Hessian vanish outside the Markov blanket structure of the layout.

mod bayes_net;
mod gaussian;
mod layout;
mod snlp;

pub use bayes_net::{
    generate_bayes_net, BayesNet, BayesNetConfig, BayesNetSpec, BayesNode, NodeKind,
};
pub use gaussian::GaussianTarget;
pub use layout::FactorLayout;
pub use snlp::{build_snlp, Edge, SnlpConfig, SnlpPosterior, SnlpProblem};

use nalgebra::DMatrix;

use crate::error::Result;

/// Version tag written into every serialized problem spec.
pub const SCHEMA_VERSION: u32 = 1;

/// An evaluable log-density with analytic derivatives.
///
/// Implementations are pure functions of `(self, x)` and may be called from
/// many threads at once.
pub trait TargetModel: Send + Sync {
    fn layout(&self) -> &FactorLayout;

    fn dim(&self) -> usize {
        self.layout().total_dim()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64>;

    /// Log-density together with its exact gradient.
    fn log_density_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Dense exact Hessian of the log-density.
    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>>;

    /// Block `(a, b)` of the Hessian, `|C_a| x |C_b|`.
    fn hessian_block(&self, a: usize, b: usize, x: &[f64]) -> Result<DMatrix<f64>> {
        let layout = self.layout();
        layout.check_factor(a)?;
        layout.check_factor(b)?;
        let (ra, rb) = (layout.factor(a), layout.factor(b));
        if !layout.in_blanket(a, b) {
            layout.check_point(x)?;
            return Ok(DMatrix::zeros(ra.len(), rb.len()));
        }
        let h = self.hessian(x)?;
        Ok(h.view((ra.start, rb.start), (ra.len(), rb.len()))
            .into_owned())
    }

    /// Column names for sample files.
    fn dim_names(&self) -> Vec<String> {
        (0..self.dim()).map(|d| format!("x{d}")).collect()
    }
}

/// Log-density and gradient at `x`, after validating the point.
pub fn eval_target(target: &dyn TargetModel, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    target.layout().check_point(x)?;
    target.log_density_and_gradient(x)
}

pub fn target_hessian_block(
    target: &dyn TargetModel,
    a: usize,
    b: usize,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    target.layout().check_point(x)?;
    target.hessian_block(a, b, x)
}

/// Dimension index set `S_a` of factor `a`.
pub fn markov_blanket(target: &dyn TargetModel, a: usize) -> Result<Vec<usize>> {
    let layout = target.layout();
    layout.check_factor(a)?;
    Ok(layout.blanket(a).to_vec())
}

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(r; 0, variance)`.
#[inline]
pub(crate) fn gaussian_log_pdf(residual: f64, variance: f64) -> f64 {
    -0.5 * (LN_2PI + variance.ln()) - residual * residual / (2.0 * variance)
}
