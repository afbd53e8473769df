//! Stein functional gradients and second-variation Hessians over a particle
//! set, in both the global-kernel and the local-kernel (graphical) form.
//!
//! For particle `i` and factor `a` the graphical gradient block is
//!
//! ```text
//! g_i[a] = -(1/n) sum_j [ k_a(x_j, x_i) grad_a log p(x_j) + grad_{x_j,a} k_a(x_j, x_i) ]
//! ```
//!
//! and the Hessian block for factors `(a, b)` is
//!
//! ```text
//! H_i[a,b] = (1/n) sum_j [ -k_a k_b d2_ab log p(x_j) + (d_{x_j,a} k_b) (d_{x_j,b} k_a)^T ]
//! ```
//!
//! The sum over `j` always includes `j = i` and runs in ascending order.

use std::ops::Range;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_finite, Error, Result};
use crate::kernels::{LocalKernelFamily, Rbf};
use crate::model::TargetModel;
use crate::parallel::{map_indexed, try_map_indexed};
use crate::samples::SampleMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    positions: SampleMatrix,
    pub iteration: usize,
    pub seed: Option<u64>,
}

impl ParticleSet {
    pub fn new(positions: SampleMatrix) -> Result<Self> {
        if positions.rows() == 0 {
            return Err(Error::invalid("a particle set needs at least one particle"));
        }
        ensure_finite(positions.as_slice(), "particle positions")?;
        Ok(ParticleSet {
            positions,
            iteration: 0,
            seed: None,
        })
    }

    /// `n` particles drawn i.i.d. from `N(center, scale^2 I)`.
    pub fn gaussian(n: usize, center: &[f64], scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid("initialization scale must be positive"));
        }
        let d = center.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            for c in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(c + scale * z);
            }
        }
        let mut set = ParticleSet::new(SampleMatrix::from_vec(n, d, data)?)?;
        set.seed = Some(seed);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.positions.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.cols()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        self.positions.row(i)
    }

    pub fn positions(&self) -> &SampleMatrix {
        &self.positions
    }

    pub fn into_positions(self) -> SampleMatrix {
        self.positions
    }

    /// Returns a copy moved by per-particle steps (row-major, same shape).
    pub fn moved_by(&self, steps: &[f64]) -> Result<ParticleSet> {
        if steps.len() != self.positions.as_slice().len() {
            return Err(Error::DimensionMismatch {
                expected: self.positions.as_slice().len(),
                got: steps.len(),
            });
        }
        let mut next = self.clone();
        for (x, s) in next.positions.as_mut_slice().iter_mut().zip(steps) {
            *x += s;
        }
        ensure_finite(next.positions.as_slice(), "particle positions")?;
        next.iteration += 1;
        Ok(next)
    }

    pub(crate) fn check_against(&self, target: &dyn TargetModel) -> Result<()> {
        if self.dim() != target.dim() {
            return Err(Error::DimensionMismatch {
                expected: target.dim(),
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// Per-particle Stein gradients `g_i`, row-major `n x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SteinGradientField {
    rows: SampleMatrix,
}

impl SteinGradientField {
    pub fn from_rows(rows: SampleMatrix) -> Self {
        SteinGradientField { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn as_matrix(&self) -> &SampleMatrix {
        &self.rows
    }

    pub fn as_slice(&self) -> &[f64] {
        self.rows.as_slice()
    }

    /// `sqrt(sum_i |g_i|^2)`, summed in particle order.
    pub fn magnitude(&self) -> f64 {
        let mut total = 0.0;
        for row in self.rows.iter_rows() {
            total += row.iter().map(|v| v * v).sum::<f64>();
        }
        total.sqrt()
    }
}

/// Symmetric per-particle Hessian stored as blocks `(a, b)`, `a <= b`, over a
/// partition of the dimensions. Absent blocks are zero; the lower triangle is
/// the mirror of the upper.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleHessian {
    ranges: Vec<Range<usize>>,
    dim: usize,
    blocks: Vec<((usize, usize), DMatrix<f64>)>,
}

impl ParticleHessian {
    /// Builds from blocks keyed `(a, b)` with `a <= b`; diagonal blocks are
    /// symmetrized from their upper triangle.
    pub fn from_blocks(
        ranges: Vec<Range<usize>>,
        mut blocks: Vec<((usize, usize), DMatrix<f64>)>,
    ) -> Result<Self> {
        let dim = ranges.last().map_or(0, |r| r.end);
        for ((a, b), m) in &mut blocks {
            if *a > *b || *b >= ranges.len() {
                return Err(Error::invalid(format!("bad block key ({a}, {b})")));
            }
            if m.nrows() != ranges[*a].len() || m.ncols() != ranges[*b].len() {
                return Err(Error::DimensionMismatch {
                    expected: ranges[*a].len() * ranges[*b].len(),
                    got: m.len(),
                });
            }
            if a == b {
                for r in 0..m.nrows() {
                    for c in r + 1..m.ncols() {
                        m[(c, r)] = m[(r, c)];
                    }
                }
            }
        }
        blocks.sort_by_key(|(k, _)| *k);
        Ok(ParticleHessian {
            ranges,
            dim,
            blocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Block `(a, b)` as stored or transposed; `None` when structurally zero.
    pub fn block(&self, a: usize, b: usize) -> Option<DMatrix<f64>> {
        let key = (a.min(b), a.max(b));
        let idx = self.blocks.binary_search_by_key(&key, |(k, _)| *k).ok()?;
        let m = &self.blocks[idx].1;
        Some(if a <= b { m.clone() } else { m.transpose() })
    }

    /// Matrix-free product into `out` (overwritten). Lengths are not checked.
    pub(crate) fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((a, b), m) in &self.blocks {
            let (ra, rb) = (self.ranges[*a].clone(), self.ranges[*b].clone());
            for (r, row) in ra.clone().enumerate() {
                let mut acc = 0.0;
                for (c, col) in rb.clone().enumerate() {
                    acc += m[(r, c)] * v[col];
                }
                out[row] += acc;
            }
            if a != b {
                for (c, col) in rb.enumerate() {
                    let mut acc = 0.0;
                    for (r, row) in ra.clone().enumerate() {
                        acc += m[(r, c)] * v[row];
                    }
                    out[col] += acc;
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for ((a, b), m) in &self.blocks {
            let (ra, rb) = (&self.ranges[*a], &self.ranges[*b]);
            for r in 0..ra.len() {
                for c in 0..rb.len() {
                    h[(ra.start + r, rb.start + c)] = m[(r, c)];
                    h[(rb.start + c, ra.start + r)] = m[(r, c)];
                }
            }
        }
        h
    }
}

/// Multiplies `v` by a particle Hessian.
pub fn hessian_apply(hessian: &ParticleHessian, v: &[f64]) -> Result<Vec<f64>> {
    hessian.apply(v)
}

/// Target quantities at every particle.
pub(crate) struct ParticleEvals {
    pub log_density: Vec<f64>,
    pub scores: SampleMatrix,
    pub hessians: Vec<DMatrix<f64>>,
}

pub(crate) fn evaluate_particles(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    with_hessian: bool,
) -> Result<ParticleEvals> {
    particles.check_against(target)?;
    let per: Vec<(f64, Vec<f64>, Option<DMatrix<f64>>)> = try_map_indexed(particles.len(), |j| {
        let x = particles.position(j);
        let (lp, g) = target.log_density_and_gradient(x)?;
        let h = if with_hessian {
            Some(target.hessian(x)?)
        } else {
            None
        };
        Ok::<_, Error>((lp, g, h))
    })?;
    let n = particles.len();
    let d = particles.dim();
    let mut log_density = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * d);
    let mut hessians = Vec::new();
    for (lp, g, h) in per {
        log_density.push(lp);
        scores.extend(g);
        hessians.extend(h);
    }
    Ok(ParticleEvals {
        log_density,
        scores: SampleMatrix::from_vec(n, d, scores)?,
        hessians,
    })
}

/// Particle Hessians together with the gradient field they belong to.
#[derive(Clone, Debug)]
pub struct NewtonSystems {
    pub gradient: SteinGradientField,
    pub hessians: Vec<ParticleHessian>,
    pub log_density: Vec<f64>,
}

fn check_family(family: &LocalKernelFamily, target: &dyn TargetModel) -> Result<()> {
    if family.layout() != target.layout() {
        return Err(Error::InvalidLayout(
            "local kernel layout differs from the target's layout".into(),
        ));
    }
    Ok(())
}

/// Scratch for one `(i, j)` interaction under local kernels.
struct Pair {
    delta: Vec<f64>,
    sq: Vec<f64>,
    k: Vec<f64>,
}

impl Pair {
    fn new(dim: usize, factors: usize) -> Self {
        Pair {
            delta: vec![0.0; dim],
            sq: vec![0.0; dim],
            k: vec![0.0; factors],
        }
    }

    /// Fills `delta = x_j - x_i` and the local kernel values `k_a(x_j, x_i)`.
    fn load(&mut self, family: &LocalKernelFamily, xj: &[f64], xi: &[f64]) {
        for d in 0..xj.len() {
            let v = xj[d] - xi[d];
            self.delta[d] = v;
            self.sq[d] = v * v;
        }
        family.values_from_sq_diffs(&self.sq, &mut self.k);
    }
}

fn graphical_gradient_row(
    particles: &ParticleSet,
    evals: &ParticleEvals,
    family: &LocalKernelFamily,
    i: usize,
) -> Vec<f64> {
    let layout = family.layout();
    let gs = family.kernel().grad_scale();
    let n = particles.len();
    let mut pair = Pair::new(particles.dim(), layout.num_factors());
    let mut acc = vec![0.0; particles.dim()];
    let xi = particles.position(i);
    for j in 0..n {
        pair.load(family, particles.position(j), xi);
        let score = evals.scores.row(j);
        for (a, range) in layout.factors().iter().enumerate() {
            let k = pair.k[a];
            for d in range.clone() {
                acc[d] += k * score[d] + gs * pair.delta[d] * k;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    acc.iter().map(|v| -v * inv_n).collect()
}

fn graphical_hessian_at(
    particles: &ParticleSet,
    evals: &ParticleEvals,
    family: &LocalKernelFamily,
    pairs: &[(usize, usize)],
    i: usize,
) -> Result<ParticleHessian> {
    let layout = family.layout();
    let gs = family.kernel().grad_scale();
    let n = particles.len();
    let mut blocks: Vec<DMatrix<f64>> = pairs
        .iter()
        .map(|&(a, b)| DMatrix::zeros(layout.factor(a).len(), layout.factor(b).len()))
        .collect();
    let mut pair = Pair::new(particles.dim(), layout.num_factors());
    let xi = particles.position(i);
    for j in 0..n {
        pair.load(family, particles.position(j), xi);
        let hj = &evals.hessians[j];
        for (&(a, b), block) in pairs.iter().zip(blocks.iter_mut()) {
            let (ka, kb) = (pair.k[a], pair.k[b]);
            let kk = ka * kb;
            let (ra, rb) = (layout.factor(a), layout.factor(b));
            for (r, row) in ra.clone().enumerate() {
                // d_{x_j,row} k_b(x_j, x_i)
                let dkb = gs * pair.delta[row] * kb;
                for (c, col) in rb.clone().enumerate() {
                    let dka = gs * pair.delta[col] * ka;
                    block[(r, c)] += -kk * hj[(row, col)] + dkb * dka;
                }
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    let blocks = pairs
        .iter()
        .copied()
        .zip(blocks)
        .map(|(key, m)| (key, m * inv_n))
        .collect();
    ParticleHessian::from_blocks(layout.factors().to_vec(), blocks)
}

fn global_gradient_row(
    particles: &ParticleSet,
    evals: &ParticleEvals,
    kernel: Rbf,
    i: usize,
) -> Vec<f64> {
    let gs = kernel.grad_scale();
    let n = particles.len();
    let xi = particles.position(i);
    let mut acc = vec![0.0; particles.dim()];
    for j in 0..n {
        let xj = particles.position(j);
        let k = kernel.value(xj, xi);
        let score = evals.scores.row(j);
        for d in 0..acc.len() {
            acc[d] += k * score[d] + gs * (xj[d] - xi[d]) * k;
        }
    }
    let inv_n = 1.0 / n as f64;
    acc.iter().map(|v| -v * inv_n).collect()
}

fn global_hessian_at(
    particles: &ParticleSet,
    evals: &ParticleEvals,
    kernel: Rbf,
    i: usize,
) -> Result<ParticleHessian> {
    let gs = kernel.grad_scale();
    let n = particles.len();
    let d = particles.dim();
    let xi = particles.position(i);
    let mut h = DMatrix::zeros(d, d);
    for j in 0..n {
        let xj = particles.position(j);
        let k = kernel.value(xj, xi);
        let grad_k: Vec<f64> = xj.iter().zip(xi).map(|(a, b)| gs * (a - b) * k).collect();
        let hj = &evals.hessians[j];
        for r in 0..d {
            for c in 0..d {
                h[(r, c)] += -k * k * hj[(r, c)] + grad_k[r] * grad_k[c];
            }
        }
    }
    ParticleHessian::from_blocks(vec![0..d], vec![((0, 0), h / n as f64)])
}

fn field_from_rows(n: usize, d: usize, rows: Vec<Vec<f64>>) -> Result<SteinGradientField> {
    Ok(SteinGradientField::from_rows(SampleMatrix::from_vec(
        n,
        d,
        rows.into_iter().flatten().collect(),
    )?))
}

/// Graphical (local-kernel) Stein gradient at every particle.
pub fn graphical_stein_gradient(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
) -> Result<SteinGradientField> {
    check_family(family, target)?;
    let evals = evaluate_particles(particles, target, false)?;
    graphical_gradient_from(particles, &evals, family)
}

pub(crate) fn graphical_gradient_from(
    particles: &ParticleSet,
    evals: &ParticleEvals,
    family: &LocalKernelFamily,
) -> Result<SteinGradientField> {
    let rows = map_indexed(particles.len(), |i| {
        graphical_gradient_row(particles, evals, family, i)
    });
    field_from_rows(particles.len(), particles.dim(), rows)
}

/// Global-kernel Stein gradient at every particle.
pub fn global_stein_gradient(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
) -> Result<SteinGradientField> {
    let evals = evaluate_particles(particles, target, false)?;
    let rows = map_indexed(particles.len(), |i| {
        global_gradient_row(particles, &evals, kernel, i)
    });
    field_from_rows(particles.len(), particles.dim(), rows)
}

fn check_index(particles: &ParticleSet, i: usize) -> Result<()> {
    if i < particles.len() {
        Ok(())
    } else {
        Err(Error::invalid(format!("particle index {i} out of range")))
    }
}

/// Graphical second-variation Hessian `H(x_i, x_i)` of particle `i`.
pub fn graphical_hessian(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
    i: usize,
) -> Result<ParticleHessian> {
    check_family(family, target)?;
    check_index(particles, i)?;
    let evals = evaluate_particles(particles, target, true)?;
    graphical_hessian_at(
        particles,
        &evals,
        family,
        &family.layout().coupled_pairs(),
        i,
    )
}

/// Global-kernel second-variation Hessian of particle `i` (one dense block).
pub fn global_hessian(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
    i: usize,
) -> Result<ParticleHessian> {
    check_index(particles, i)?;
    let evals = evaluate_particles(particles, target, true)?;
    global_hessian_at(particles, &evals, kernel, i)
}

/// Gradient field and every particle's graphical Hessian from one pass of
/// target evaluations.
pub fn graphical_newton_systems(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    family: &LocalKernelFamily,
) -> Result<NewtonSystems> {
    check_family(family, target)?;
    let evals = evaluate_particles(particles, target, true)?;
    let gradient = graphical_gradient_from(particles, &evals, family)?;
    let pairs = family.layout().coupled_pairs();
    let hessians = try_map_indexed(particles.len(), |i| {
        graphical_hessian_at(particles, &evals, family, &pairs, i)
    })?;
    Ok(NewtonSystems {
        gradient,
        hessians,
        log_density: evals.log_density,
    })
}

/// Global-kernel analogue of [`graphical_newton_systems`].
pub fn global_newton_systems(
    particles: &ParticleSet,
    target: &dyn TargetModel,
    kernel: Rbf,
) -> Result<NewtonSystems> {
    let evals = evaluate_particles(particles, target, true)?;
    let rows = map_indexed(particles.len(), |i| {
        global_gradient_row(particles, &evals, kernel, i)
    });
    let gradient = field_from_rows(particles.len(), particles.dim(), rows)?;
    let hessians = try_map_indexed(particles.len(), |i| {
        global_hessian_at(particles, &evals, kernel, i)
    })?;
    Ok(NewtonSystems {
        gradient,
        hessians,
        log_density: evals.log_density,
    })
}
