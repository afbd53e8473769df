use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::approx_kl::{approx_kl_from_log_density, nystrom_size, nystrom_subset};
use super::cg::{cg_steihaug, default_tolerance, dot, norm, CgStatus};
use super::state::{AdaTrustState, KlDecision, TrustRegionKLState};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, LocalKernelFamily, Rbf};
use crate::model::TargetModel;
use crate::parallel::try_map_indexed;
use crate::stein::{graphical_newton_systems, NewtonSystems, ParticleSet};
use crate::trace::{RunOutput, Trace, TraceRow};

/// Per-particle trust-region steps for one iteration.
#[derive(Clone, Debug)]
pub struct TrustRegionSteps {
    /// Row-major `n x dim` steps.
    pub steps: Vec<f64>,
    /// `sum_i [1/2 w_i^T H_i w_i + g_i^T w_i]`, summed in particle order.
    pub model_change: f64,
    pub statuses: Vec<CgStatus>,
}

/// Solves every particle's Newton system with CG-Steihaug at a shared radius.
pub fn trust_region_steps(systems: &NewtonSystems, radius: f64) -> Result<TrustRegionSteps> {
    let n = systems.gradient.len();
    let solved = try_map_indexed(n, |i| {
        let h = &systems.hessians[i];
        let g = systems.gradient.particle(i);
        let apply = |v: &[f64], out: &mut [f64]| h.apply_into(v, out);
        let sol = cg_steihaug(apply, g, radius, default_tolerance(norm(g)), g.len())?;
        let mut hw = vec![0.0; g.len()];
        h.apply_into(&sol.step, &mut hw);
        let change = 0.5 * dot(&sol.step, &hw) + dot(g, &sol.step);
        Ok::<_, Error>((sol, change))
    })?;
    let mut steps = Vec::with_capacity(n * systems.gradient.as_matrix().cols());
    let mut model_change = 0.0;
    let mut statuses = Vec::with_capacity(n);
    for (sol, change) in solved {
        steps.extend(sol.step);
        model_change += change;
        statuses.push(sol.status);
    }
    Ok(TrustRegionSteps {
        steps,
        model_change,
        statuses,
    })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Options of the KL-ratio driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlOptions {
    pub initial_radius: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Defaults to `max(1, floor(n / 10))`.
    pub nystrom_size: Option<usize>,
}

impl KlOptions {
    pub fn new(iterations: usize, seed: u64) -> Self {
        KlOptions {
            initial_radius: 1.0,
            iterations,
            seed,
            nystrom_size: None,
        }
    }
}

/// Lengthscale for Approx-KL: median heuristic on the current particles.
fn entropy_kernel(particles: &ParticleSet, seed: u64) -> Result<Rbf> {
    match median_heuristic(particles.positions(), seed) {
        Ok(k) => Ok(k),
        // one particle, or all coincide: the kernel matrix is all ones anyway
        Err(Error::DegenerateSample(_)) | Err(Error::InvalidArgument(_)) => Rbf::new(1.0),
        Err(e) => Err(e),
    }
}

/// Trust-region graphical SVI with the radius driven by the ratio of the
/// observed to the predicted change in Approx-KL.
pub fn tr_svi_kl_run(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
    options: &KlOptions,
) -> Result<RunOutput> {
    let start = Instant::now();
    let n = particles.len();
    let m = options.nystrom_size.unwrap_or_else(|| nystrom_size(n));
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "Nyström size {m} must lie in 1..={n}"
        )));
    }
    let mut state = TrustRegionKLState::new(options.initial_radius)?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut current = particles.clone();
    let mut systems = graphical_newton_systems(&current, target, family)?;
    let mut g = systems.gradient.magnitude();
    let mut trace = Trace::default();
    trace.push(TraceRow::initial(
        g,
        Some(state.radius()),
        elapsed_ms(start),
    ));
    let mut converged = false;

    for t in 1..=options.iterations {
        let radius = state.radius();
        let steps = trust_region_steps(&systems, radius)?;
        let mut row = TraceRow {
            iteration: t,
            gradient_magnitude: g,
            radius_or_step: Some(radius),
            rho: None,
            approx_kl_u: None,
            approx_kl_o: None,
            accepted: false,
            wall_ms: None,
            scale: None,
        };
        let decision = if steps.model_change < 0.0 {
            let proposal = current.moved_by(&steps.steps)?;
            let kernel = entropy_kernel(&current, options.seed.wrapping_add(t as u64))?;
            let subset = nystrom_subset(n, m, &mut rng)?;
            let new_log_density = try_map_indexed(n, |i| target.log_density(proposal.position(i)))?;
            let u = approx_kl_from_log_density(&proposal, &new_log_density, &subset, kernel)?;
            let o = approx_kl_from_log_density(&current, &systems.log_density, &subset, kernel)?;
            row.approx_kl_u = Some(u);
            row.approx_kl_o = Some(o);
            let decision = state.update(u, o, steps.model_change, g);
            row.rho = state.last_rho;
            if decision == KlDecision::Accept {
                current = proposal;
                systems = graphical_newton_systems(&current, target, family)?;
                g = systems.gradient.magnitude();
            }
            decision
        } else {
            state.update(0.0, 0.0, steps.model_change, g)
        };
        row.accepted = decision == KlDecision::Accept;
        row.gradient_magnitude = g;
        row.wall_ms = Some(elapsed_ms(start));
        trace.push(row);
        if decision == KlDecision::Converged {
            converged = true;
            break;
        }
    }
    Ok(RunOutput {
        particles: current,
        trace,
        converged,
    })
}

/// One trust-region graphical Newton iteration at a fixed radius; every step
/// is applied.
pub fn tr_svi_step(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
    radius: f64,
) -> Result<ParticleSet> {
    let systems = graphical_newton_systems(particles, target, family)?;
    let steps = trust_region_steps(&systems, radius)?;
    particles.moved_by(&steps.steps)
}

/// Trust-region graphical SVI with the AdaTrust-style radius `g / b`.
pub fn tr_svi_at_run(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
    iterations: usize,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut current = particles.clone();
    let mut systems = graphical_newton_systems(&current, target, family)?;
    let g0 = systems.gradient.magnitude();
    let mut trace = Trace::default();
    if g0 == 0.0 {
        trace.push(TraceRow::initial(g0, None, elapsed_ms(start)));
        return Ok(RunOutput {
            particles: current,
            trace,
            converged: true,
        });
    }
    let mut state = AdaTrustState::new(g0)?;
    if state.clamps_inverted() {
        trace.notes.push(format!(
            "initial gradient magnitude {g0} is below b_min = {}; b may exceed b_max",
            state.b_min
        ));
    }
    let mut first = TraceRow::initial(g0, Some(state.radius()), elapsed_ms(start));
    first.scale = Some(state.b);
    trace.push(first);
    let mut converged = false;

    for t in 1..=iterations {
        let radius = state.radius();
        let steps = trust_region_steps(&systems, radius)?;
        current = current.moved_by(&steps.steps)?;
        systems = graphical_newton_systems(&current, target, family)?;
        let g = systems.gradient.magnitude();
        state.update(g);
        trace.push(TraceRow {
            iteration: t,
            gradient_magnitude: g,
            radius_or_step: Some(radius),
            rho: None,
            approx_kl_u: None,
            approx_kl_o: None,
            accepted: true,
            wall_ms: Some(elapsed_ms(start)),
            scale: Some(state.b),
        });
        if g == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(RunOutput {
        particles: current,
        trace,
        converged,
    })
}
