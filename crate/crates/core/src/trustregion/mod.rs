//! Trust-region machinery: CG-Steihaug, the Nyström KL estimate, and the
//! two trust-region drivers.
//!
//! Both drivers share one radius across all particles, i.e. the ball of the
//! norm `max_i ||w_i||`, so each iteration decouples into independent
//! per-particle subproblems.

mod approx_kl;
mod cg;
mod drivers;
mod state;

pub use approx_kl::{
    approx_kl, approx_kl_on_subset, mean_negative_log_density, nystrom_entropy_term, nystrom_size,
    nystrom_subset, EIGENVALUE_FLOOR,
};
pub use cg::{cg_steihaug, default_tolerance, model_change, CgSolution, CgStatus};
pub use drivers::{
    tr_svi_at_run, tr_svi_kl_run, tr_svi_step, trust_region_steps, KlOptions, TrustRegionSteps,
};
pub use state::{
    AdaTrustState, KlDecision, TrustRegionKLState, B_DECAY, B_MIN, GROW_ABOVE, GROW_FACTOR,
    IMPROVEMENT_FACTOR, SHRINK_BELOW, SHRINK_FACTOR,
};
