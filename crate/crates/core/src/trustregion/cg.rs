//! Steihaug's truncated conjugate gradient for the trust-region subproblem
//!
//! ```text
//! minimize  g^T w + 1/2 w^T H w   subject to  ||w|| <= radius
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgStatus {
    Interior,
    Boundary,
    NegativeCurvature,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgSolution {
    pub step: Vec<f64>,
    pub status: CgStatus,
    pub iterations: usize,
}

/// Relative residual tolerance `min(0.1, sqrt(||g||))`.
pub fn default_tolerance(gradient_norm: f64) -> f64 {
    0.1f64.min(gradient_norm.sqrt())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `g^T w + 1/2 w^T H w`, with `apply(v, out)` writing `H v` into `out`.
pub fn model_change<F>(apply: F, g: &[f64], w: &[f64]) -> f64
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut hw = vec![0.0; w.len()];
    apply(w, &mut hw);
    dot(g, w) + 0.5 * dot(w, &hw)
}

/// Both `tau` with `||z + tau d|| = radius`, smaller first.
fn boundary_roots(z: &[f64], d: &[f64], radius: f64) -> (f64, f64) {
    let a = dot(d, d);
    let b = 2.0 * dot(z, d);
    let c = dot(z, z) - radius * radius;
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // numerically stable pair
    let q = -0.5 * (b + b.signum() * disc);
    let (r1, r2) = if q == 0.0 {
        let t = (-c / a).max(0.0).sqrt();
        (-t, t)
    } else {
        (q / a, c / q)
    };
    if r1 <= r2 {
        (r1, r2)
    } else {
        (r2, r1)
    }
}

fn axpy(z: &[f64], tau: f64, d: &[f64]) -> Vec<f64> {
    z.iter().zip(d).map(|(a, b)| a + tau * b).collect()
}

/// Runs CG-Steihaug. `apply(v, out)` writes `H v` into `out`.
///
/// Stops when the residual drops below `tol * ||g||`, when an iterate leaves
/// the ball, when a direction of non-positive curvature appears, or after
/// `max_iters` iterations.
pub fn cg_steihaug<F>(
    apply: F,
    g: &[f64],
    radius: f64,
    tol: f64,
    max_iters: usize,
) -> Result<CgSolution>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid(format!(
            "trust-region radius must be positive, got {radius}"
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::invalid("CG tolerance must be non-negative"));
    }
    ensure_finite(g, "CG gradient")?;
    let n = g.len();
    let g_norm = norm(g);
    let mut z = vec![0.0; n];
    if g_norm == 0.0 {
        return Ok(CgSolution {
            step: z,
            status: CgStatus::Interior,
            iterations: 0,
        });
    }
    let eps = tol * g_norm;
    let mut r = g.to_vec();
    let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut bd = vec![0.0; n];
    let mut rr = dot(&r, &r);

    for it in 1..=max_iters.max(1) {
        apply(&d, &mut bd);
        let curvature = dot(&d, &bd);
        if !(curvature > 0.0) {
            // pick the boundary point with the lower model value
            let (t1, t2) = boundary_roots(&z, &d, radius);
            let p1 = axpy(&z, t1, &d);
            let p2 = axpy(&z, t2, &d);
            let m1 = model_change(&apply, g, &p1);
            let m2 = model_change(&apply, g, &p2);
            return Ok(CgSolution {
                step: if m1 < m2 { p1 } else { p2 },
                status: CgStatus::NegativeCurvature,
                iterations: it,
            });
        }
        let alpha = rr / curvature;
        let next = axpy(&z, alpha, &d);
        if norm(&next) >= radius {
            let (_, tau) = boundary_roots(&z, &d, radius);
            return Ok(CgSolution {
                step: axpy(&z, tau, &d),
                status: CgStatus::Boundary,
                iterations: it,
            });
        }
        z = next;
        for (ri, bi) in r.iter_mut().zip(&bd) {
            *ri += alpha * bi;
        }
        let rr_next = dot(&r, &r);
        if rr_next.sqrt() < eps {
            return Ok(CgSolution {
                step: z,
                status: CgStatus::Interior,
                iterations: it,
            });
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = -ri + beta * *di;
        }
    }
    Ok(CgSolution {
        step: z,
        status: CgStatus::Interior,
        iterations: max_iters.max(1),
    })
}
