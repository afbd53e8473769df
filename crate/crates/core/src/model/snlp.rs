//! Sensor network localization posteriors.
//!
//! Unknown sensors are indexed `0..U`, anchors `U..U+A`. Each unknown sensor is
//! one 2-D factor; its blanket is the set of unknown sensors it shares a range
//! measurement with. The prior over positions is flat (log-prior 0).

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gaussian_log_pdf, FactorLayout, TargetModel, SCHEMA_VERSION};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnlpConfig {
    pub unknowns: usize,
    pub anchors: usize,
    pub side: f64,
    pub radius: f64,
    pub variance: f64,
    #[serde(default)]
    pub noiseless: bool,
    pub seed: u64,
}

impl SnlpConfig {
    /// Six unknown sensors and four anchors on a 6x6 square, r = 3, exact
    /// measurements modeled with noise variance 0.01.
    pub fn small(seed: u64) -> Self {
        SnlpConfig {
            unknowns: 6,
            anchors: 4,
            side: 6.0,
            radius: 3.0,
            variance: 0.01,
            noiseless: true,
            seed,
        }
    }

    /// Fifty unknown sensors and twelve anchors on a 20x20 square, r = 3,
    /// noisy measurements with variance 0.01.
    pub fn large(seed: u64) -> Self {
        SnlpConfig {
            unknowns: 50,
            anchors: 12,
            side: 20.0,
            radius: 3.0,
            variance: 0.01,
            noiseless: false,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub measured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnlpProblem {
    pub schema_version: u32,
    pub side: f64,
    pub radius: f64,
    pub variance: f64,
    pub noiseless: bool,
    pub unknown_positions: Vec<[f64; 2]>,
    pub anchors: Vec<[f64; 2]>,
    pub edges: Vec<Edge>,
    /// Unknown sensors without any measurement.
    #[serde(default)]
    pub disconnected: Vec<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn build_snlp(config: &SnlpConfig) -> Result<SnlpProblem> {
    if !(config.side > 0.0 && config.side.is_finite()) {
        return Err(Error::invalid("side must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<[f64; 2]> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(0.0..config.side),
                    rng.random_range(0.0..config.side),
                ]
            })
            .collect()
    };
    let unknowns = draw(config.unknowns, &mut rng);
    let anchors = draw(config.anchors, &mut rng);
    let noise = (!config.noiseless).then_some(&mut rng);
    let mut problem =
        SnlpProblem::from_positions(unknowns, anchors, config.radius, config.variance, noise)?;
    problem.side = config.side;
    Ok(problem)
}

impl SnlpProblem {
    /// Connects every pair closer than `radius` (anchor-anchor pairs carry no
    /// information and are skipped). With `noise = Some(rng)` measurements are
    /// perturbed by `N(0, variance)` and clipped at zero; otherwise exact.
    pub fn from_positions(
        unknown_positions: Vec<[f64; 2]>,
        anchors: Vec<[f64; 2]>,
        radius: f64,
        variance: f64,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("sensing radius must be positive"));
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        let u = unknown_positions.len();
        let all: Vec<[f64; 2]> = unknown_positions.iter().chain(&anchors).copied().collect();
        crate::error::ensure_finite(all.as_flattened(), "sensor positions")?;
        let normal = Normal::new(0.0, variance.sqrt()).expect("variance checked above");
        let mut rng = noise;
        let mut edges = Vec::new();
        for i in 0..u {
            for j in i + 1..all.len() {
                let d = distance(all[i], all[j]);
                if d < radius {
                    let measured = match rng.as_deref_mut() {
                        Some(rng) => (d + normal.sample(rng)).max(0.0),
                        None => d,
                    };
                    edges.push(Edge { i, j, measured });
                }
            }
        }
        let mut problem = SnlpProblem {
            schema_version: SCHEMA_VERSION,
            side: all.iter().flatten().fold(0.0, |m: f64, v| m.max(*v)),
            radius,
            variance,
            noiseless: rng.is_none(),
            unknown_positions,
            anchors,
            edges,
            disconnected: Vec::new(),
            warnings: Vec::new(),
        };
        problem.refresh_connectivity();
        Ok(problem)
    }

    fn refresh_connectivity(&mut self) {
        let u = self.unknown_positions.len();
        let mut seen = vec![false; u];
        for e in &self.edges {
            seen[e.i] = true;
            if e.j < u {
                seen[e.j] = true;
            }
        }
        self.disconnected = (0..u).filter(|&k| !seen[k]).collect();
        self.warnings = self
            .disconnected
            .iter()
            .map(|k| format!("unknown sensor {k} has no range measurements"))
            .collect();
    }

    pub fn num_unknowns(&self) -> usize {
        self.unknown_positions.len()
    }

    /// The true configuration as a state vector.
    pub fn true_state(&self) -> Vec<f64> {
        self.unknown_positions.iter().flatten().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.num_unknowns();
        let n = u + self.anchors.len();
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid("noise variance must be positive"));
        }
        for e in &self.edges {
            if e.i >= u || e.j >= n || e.i == e.j {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) is not a valid pair",
                    e.i, e.j
                )));
            }
            if !(e.measured >= 0.0 && e.measured.is_finite()) {
                return Err(Error::invalid(format!(
                    "edge ({}, {}) has an invalid measurement",
                    e.i, e.j
                )));
            }
        }
        Ok(())
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Posterior over unknown sensor positions given the range measurements.
#[derive(Clone, Debug)]
pub struct SnlpPosterior {
    problem: SnlpProblem,
    layout: FactorLayout,
}

struct EdgeTerm {
    /// Unit vector from the other endpoint towards sensor `i`.
    unit: [f64; 2],
    dist: f64,
    residual: f64,
}

impl SnlpPosterior {
    pub fn new(problem: SnlpProblem) -> Result<Self> {
        problem.validate()?;
        let u = problem.num_unknowns();
        if u == 0 {
            return Err(Error::invalid("no unknown sensors"));
        }
        let mut neighbors = vec![BTreeSet::new(); u];
        for e in &problem.edges {
            if e.j < u {
                neighbors[e.i].insert(e.j);
                neighbors[e.j].insert(e.i);
            }
        }
        let layout = FactorLayout::new(&vec![2; u], &neighbors)?;
        Ok(SnlpPosterior { problem, layout })
    }

    pub fn problem(&self) -> &SnlpProblem {
        &self.problem
    }

    fn position(&self, x: &[f64], k: usize) -> [f64; 2] {
        let u = self.problem.num_unknowns();
        if k < u {
            [x[2 * k], x[2 * k + 1]]
        } else {
            self.problem.anchors[k - u]
        }
    }

    fn term(&self, x: &[f64], e: &Edge) -> Result<EdgeTerm> {
        let (a, b) = (self.position(x, e.i), self.position(x, e.j));
        let delta = [a[0] - b[0], a[1] - b[1]];
        let dist = delta[0].hypot(delta[1]);
        if dist == 0.0 {
            return Err(Error::Singular(e.i, e.j));
        }
        Ok(EdgeTerm {
            unit: [delta[0] / dist, delta[1] / dist],
            dist,
            residual: dist - e.measured,
        })
    }
}

impl TargetModel for SnlpPosterior {
    fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.layout.check_point(x)?;
        let mut total = 0.0;
        for e in &self.problem.edges {
            total += gaussian_log_pdf(self.term(x, e)?.residual, self.problem.variance);
        }
        Ok(total)
    }

    fn log_density_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.layout.check_point(x)?;
        let u = self.problem.num_unknowns();
        let var = self.problem.variance;
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        for e in &self.problem.edges {
            let t = self.term(x, e)?;
            total += gaussian_log_pdf(t.residual, var);
            let scale = -t.residual / var;
            for c in 0..2 {
                grad[2 * e.i + c] += scale * t.unit[c];
                if e.j < u {
                    grad[2 * e.j + c] -= scale * t.unit[c];
                }
            }
        }
        Ok((total, grad))
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.layout.check_point(x)?;
        let u = self.problem.num_unknowns();
        let var = self.problem.variance;
        let mut h = DMatrix::zeros(x.len(), x.len());
        for e in &self.problem.edges {
            let t = self.term(x, e)?;
            // d2/ds_i2 of -(|s_i - s_j| - d)^2 / (2 var)
            let mut block = [[0.0; 2]; 2];
            for r in 0..2 {
                for c in 0..2 {
                    let uu = t.unit[r] * t.unit[c];
                    let eye = if r == c { 1.0 } else { 0.0 };
                    block[r][c] = -(uu + t.residual * (eye - uu) / t.dist) / var;
                }
            }
            for r in 0..2 {
                for c in 0..2 {
                    h[(2 * e.i + r, 2 * e.i + c)] += block[r][c];
                    if e.j < u {
                        h[(2 * e.j + r, 2 * e.j + c)] += block[r][c];
                        h[(2 * e.i + r, 2 * e.j + c)] -= block[r][c];
                        h[(2 * e.j + r, 2 * e.i + c)] -= block[r][c];
                    }
                }
            }
        }
        Ok(h)
    }

    fn dim_names(&self) -> Vec<String> {
        (0..self.problem.num_unknowns())
            .flat_map(|k| [format!("s{k}_x"), format!("s{k}_y")])
            .collect()
    }
}
