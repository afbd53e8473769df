//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
/// eigenvalues (ascending) and column eigenvectors as `vecs[row][col]`.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k][p], v[k][q]);
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap());
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = (0..n)
        .map(|r| order.iter().map(|&c| v[r][c]).collect())
        .collect();
    (vals, vecs)
}

pub fn mat_vec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn quad_model(h: &[Vec<f64>], g: &[f64], w: &[f64]) -> f64 {
    let hw = mat_vec(h, w);
    g.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
        + 0.5 * w.iter().zip(&hw).map(|(a, b)| a * b).sum::<f64>()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Global minimizer of `g^T w + 1/2 w^T H w` over `||w|| <= radius`, via
/// the eigendecomposition and the secular equation, hard case included.
pub fn exact_trust_region(h: &[Vec<f64>], g: &[f64], radius: f64) -> Vec<f64> {
    let n = g.len();
    let (lam, q) = jacobi_eigen(h);
    let gt: Vec<f64> = (0..n)
        .map(|c| (0..n).map(|r| q[r][c] * g[r]).sum())
        .collect();
    let step_at = |mu: f64, skip_min: bool| -> Vec<f64> {
        let mut w = vec![0.0; n];
        for c in 0..n {
            if skip_min && (lam[c] - lam[0]).abs() < 1e-12 {
                continue;
            }
            let coef = -gt[c] / (lam[c] + mu);
            for r in 0..n {
                w[r] += coef * q[r][c];
            }
        }
        w
    };
    if lam[0] > 0.0 {
        let w = step_at(0.0, false);
        if norm(&w) <= radius {
            return w;
        }
    }
    let lo = (-lam[0]).max(0.0);
    let min_weight: f64 = (0..n)
        .filter(|&c| (lam[c] - lam[0]).abs() < 1e-12)
        .map(|c| gt[c] * gt[c])
        .sum();
    if min_weight.sqrt() < 1e-12 * (1.0 + norm(g)) {
        let w = step_at(lo, true);
        if norm(&w) <= radius {
            // hard case: move along the bottom eigenvector to the boundary
            let tau = (radius * radius - norm(&w).powi(2)).max(0.0).sqrt();
            let mut best: Option<(f64, Vec<f64>)> = None;
            for sign in [1.0, -1.0] {
                let cand: Vec<f64> = (0..n).map(|r| w[r] + sign * tau * q[r][0]).collect();
                let val = quad_model(h, g, &cand);
                if best.as_ref().is_none_or(|b| val < b.0) {
                    best = Some((val, cand));
                }
            }
            return best.unwrap().1;
        }
    }
    let mut a = lo;
    let mut b = lo + norm(g) / radius + 1.0;
    while norm(&step_at(b, false)) > radius {
        b *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if norm(&step_at(mid, false)) > radius {
            a = mid;
        } else {
            b = mid;
        }
    }
    step_at(b, false)
}

/// Largest absolute eigenvalue by power iteration.
pub fn power_norm(h: &[Vec<f64>], iters: usize) -> f64 {
    let n = h.len();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut est = 0.0;
    for _ in 0..iters {
        let hv = mat_vec(h, &v);
        let nv = norm(&hv);
        if nv == 0.0 {
            return 0.0;
        }
        est = nv / norm(&v);
        v = hv.iter().map(|x| x / nv).collect();
    }
    est
}

/// Random symmetric matrix with eigenvalues drawn from `[lo, hi]`.
pub fn random_symmetric(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // random orthogonal basis by Gram-Schmidt
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
        let nv = norm(&v);
        if nv > 1e-3 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    let lam: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| (0..n).map(|k| basis[k][r] * lam[k] * basis[k][c]).sum())
                .collect()
        })
        .collect()
}

fn rbf(x: &[f64], y: &[f64], ell: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * ell * ell)).exp()
}

/// Biased squared MMD by three plain double loops.
pub fn double_loop_mmd(x: &[Vec<f64>], y: &[Vec<f64>], ell: f64) -> f64 {
    let mut xx = 0.0;
    for a in x {
        for b in x {
            xx += rbf(a, b, ell);
        }
    }
    let mut yy = 0.0;
    for a in y {
        for b in y {
            yy += rbf(a, b, ell);
        }
    }
    let mut xy = 0.0;
    for a in x {
        for b in y {
            xy += rbf(a, b, ell);
        }
    }
    let (n, m) = (x.len() as f64, y.len() as f64);
    xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
}

/// Approx-KL computed with the full kernel matrix and Jacobi eigenvalues.
pub fn full_approx_kl(points: &[Vec<f64>], log_density: &[f64], ell: f64) -> f64 {
    let n = points.len();
    let k: Vec<Vec<f64>> = points
        .iter()
        .map(|a| points.iter().map(|b| rbf(a, b, ell) / n as f64).collect())
        .collect();
    let (lam, _) = jacobi_eigen(&k);
    let h: f64 = lam.iter().filter(|&&l| l > 1e-12).map(|l| l * l.ln()).sum();
    -log_density.iter().sum::<f64>() / n as f64 + h
}

/// Central-difference gradient of `f`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|d| {
            xp[d] = x[d] + h;
            let up = f(&xp);
            xp[d] = x[d] - h;
            let down = f(&xp);
            xp[d] = x[d];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Jacobian of a vector field, `out[r][c] = d f_r / d x_c`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.to_vec();
    for c in 0..n {
        xp[c] = x[c] + h;
        let up = f(&xp);
        xp[c] = x[c] - h;
        let down = f(&xp);
        xp[c] = x[c];
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect::<Vec<f64>>(),
        );
    }
    (0..cols[0].len())
        .map(|r| (0..n).map(|c| cols[c][r]).collect())
        .collect()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Stein gradient by direct summation. `blankets[a]` lists the kernel dims of
/// factor `a`, `factors[a]` its own dims; `scores[j]` is the score at `x[j]`.
/// Sign convention: the returned field is the KL gradient, so a single
/// particle gets the negative score.
pub fn direct_stein_gradient(
    x: &[Vec<f64>],
    scores: &[Vec<f64>],
    factors: &[Vec<usize>],
    blankets: &[Vec<usize>],
    ell: f64,
) -> Vec<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let mut out = vec![vec![0.0; d]; n];
    for i in 0..n {
        for (a, dims) in factors.iter().enumerate() {
            let b = &blankets[a];
            for j in 0..n {
                let r2: f64 = b.iter().map(|&k| (x[j][k] - x[i][k]).powi(2)).sum();
                let kv = (-r2 / (2.0 * ell * ell)).exp();
                for &k in dims {
                    let repulse = -(x[j][k] - x[i][k]) / (ell * ell) * kv;
                    out[i][k] -= (kv * scores[j][k] + repulse) / n as f64;
                }
            }
        }
    }
    out
}
