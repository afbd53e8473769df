//! Reference SVI methods: SVGD, message-passing SVGD with three step rules,
//! and SVN with a constant trust region.
//!
//! Every update is computed from the pre-step particle matrix.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{LocalKernelFamily, Rbf};
use crate::model::TargetModel;
use crate::parallel::try_map_indexed;
use crate::stein::{
    global_newton_systems, global_stein_gradient, graphical_stein_gradient, ParticleSet,
    SteinGradientField,
};
use crate::trace::{RunOutput, Trace, TraceRow};
use crate::trustregion::trust_region_steps;

pub const ADAGRAD_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Static,
    Decayed { decay: f64 },
    Adagrad,
}

/// Step-size rule for first-order updates.
#[derive(Clone, Debug, PartialEq)]
pub struct StepSchedule {
    rule: StepRule,
    initial_step: f64,
    accumulator: Vec<f64>,
}

impl StepSchedule {
    pub fn new(rule: StepRule, initial_step: f64) -> Result<Self> {
        if !(initial_step > 0.0 && initial_step.is_finite()) {
            return Err(Error::invalid(format!(
                "initial step must be positive, got {initial_step}"
            )));
        }
        if let StepRule::Decayed { decay } = rule {
            if !(decay > 0.0 && decay <= 1.0) {
                return Err(Error::invalid(format!(
                    "step decay must lie in (0, 1], got {decay}"
                )));
            }
        }
        Ok(StepSchedule {
            rule,
            initial_step,
            accumulator: Vec::new(),
        })
    }

    pub fn fixed(step: f64) -> Result<Self> {
        Self::new(StepRule::Static, step)
    }

    pub fn decayed(step: f64, decay: f64) -> Result<Self> {
        Self::new(StepRule::Decayed { decay }, step)
    }

    pub fn adagrad(step: f64) -> Result<Self> {
        Self::new(StepRule::Adagrad, step)
    }

    pub fn rule(&self) -> StepRule {
        self.rule
    }

    pub fn initial_step(&self) -> f64 {
        self.initial_step
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    /// Scalar step size at iteration `t` (the base step for AdaGrad).
    pub fn step_size(&self, t: usize) -> f64 {
        match self.rule {
            StepRule::Decayed { decay } => {
                self.initial_step * decay.powi(t.min(i32::MAX as usize) as i32)
            }
            StepRule::Static | StepRule::Adagrad => self.initial_step,
        }
    }

    /// Turns a direction into a step for iteration `t`.
    pub fn step(&mut self, direction: &[f64], t: usize) -> Vec<f64> {
        match self.rule {
            StepRule::Static | StepRule::Decayed { .. } => {
                let s = self.step_size(t);
                direction.iter().map(|d| s * d).collect()
            }
            StepRule::Adagrad => {
                if self.accumulator.len() != direction.len() {
                    self.accumulator = vec![0.0; direction.len()];
                }
                let s = self.initial_step;
                direction
                    .iter()
                    .zip(self.accumulator.iter_mut())
                    .map(|(d, acc)| {
                        *acc += d * d;
                        s * d / (acc.sqrt() + ADAGRAD_EPSILON)
                    })
                    .collect()
            }
        }
    }
}

fn check_step(xi: f64) -> Result<()> {
    if xi > 0.0 && xi.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "step size must be positive, got {xi}"
        )))
    }
}

/// One SVGD update with the global kernel.
pub fn svgd_step(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
    xi: f64,
) -> Result<ParticleSet> {
    check_step(xi)?;
    particles.check_against(target)?;
    let n = particles.len();
    let d = particles.dim();
    let scores = try_map_indexed(n, |j| {
        target
            .log_density_and_gradient(particles.position(j))
            .map(|r| r.1)
    })?;
    let phi = try_map_indexed(n, |i| {
        let xi_pos = particles.position(i);
        let mut acc = vec![0.0; d];
        for (j, score) in scores.iter().enumerate() {
            let (k, grad) = kernel.eval(particles.position(j), xi_pos)?;
            for c in 0..d {
                acc[c] += k * score[c] + grad[c];
            }
        }
        Ok::<_, Error>(acc)
    })?;
    let steps: Vec<f64> = phi
        .into_iter()
        .flatten()
        .map(|v| xi * v / n as f64)
        .collect();
    particles.moved_by(&steps)
}

fn descent(field: &SteinGradientField) -> Vec<f64> {
    field.as_slice().iter().map(|g| -g).collect()
}

/// One message-passing SVGD update at iteration `t` (counted from 0).
pub fn mp_svgd_step(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
    schedule: &mut StepSchedule,
    t: usize,
) -> Result<ParticleSet> {
    let field = graphical_stein_gradient(particles, target, family)?;
    particles.moved_by(&schedule.step(&descent(&field), t))
}

/// One SVN update: global-kernel Newton systems solved by CG-Steihaug at a
/// fixed radius, all steps applied.
pub fn svn_ctr_step(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
    radius: f64,
) -> Result<ParticleSet> {
    let systems = global_newton_systems(particles, target, kernel)?;
    let steps = trust_region_steps(&systems, radius)?;
    particles.moved_by(&steps.steps)
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn step_row(t: usize, g: f64, size: f64, start: Instant) -> TraceRow {
    TraceRow {
        iteration: t,
        gradient_magnitude: g,
        radius_or_step: Some(size),
        rho: None,
        approx_kl_u: None,
        approx_kl_o: None,
        accepted: true,
        wall_ms: Some(elapsed_ms(start)),
        scale: None,
    }
}

/// First-order driver shared by SVGD and MP-SVGD; `field` evaluates the
/// Stein gradient at a particle set.
fn first_order_run<F>(
    particles: &ParticleSet,
    iterations: usize,
    schedule: &mut StepSchedule,
    field: F,
) -> Result<RunOutput>
where
    F: Fn(&ParticleSet) -> Result<SteinGradientField>,
{
    let start = Instant::now();
    let mut current = particles.clone();
    let mut g = field(&current)?;
    let mut trace = Trace::default();
    trace.push(TraceRow::initial(
        g.magnitude(),
        Some(schedule.step_size(0)),
        elapsed_ms(start),
    ));
    for t in 0..iterations {
        let size = schedule.step_size(t);
        current = current.moved_by(&schedule.step(&descent(&g), t))?;
        g = field(&current)?;
        trace.push(step_row(t + 1, g.magnitude(), size, start));
    }
    Ok(RunOutput {
        particles: current,
        trace,
        converged: false,
    })
}

pub fn svgd_run(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
    xi: f64,
    iterations: usize,
) -> Result<RunOutput> {
    let mut schedule = StepSchedule::fixed(xi)?;
    first_order_run(particles, iterations, &mut schedule, |p| {
        global_stein_gradient(p, target, kernel)
    })
}

pub fn mp_svgd_run(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
    schedule: &mut StepSchedule,
    iterations: usize,
) -> Result<RunOutput> {
    first_order_run(particles, iterations, schedule, |p| {
        graphical_stein_gradient(p, target, family)
    })
}

pub fn svn_ctr_run(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
    radius: f64,
    iterations: usize,
) -> Result<RunOutput> {
    let start = Instant::now();
    let mut current = particles.clone();
    let mut systems = global_newton_systems(&current, target, kernel)?;
    let mut trace = Trace::default();
    trace.push(TraceRow::initial(
        systems.gradient.magnitude(),
        Some(radius),
        elapsed_ms(start),
    ));
    for t in 1..=iterations {
        let steps = trust_region_steps(&systems, radius)?;
        current = current.moved_by(&steps.steps)?;
        systems = global_newton_systems(&current, target, kernel)?;
        trace.push(step_row(t, systems.gradient.magnitude(), radius, start));
    }
    Ok(RunOutput {
        particles: current,
        trace,
        converged: false,
    })
}
