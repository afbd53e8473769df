//! Layered Bayes nets with Gaussian, linear-Gaussian and two-component
//! linear-Gaussian-mixture nodes.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{gaussian_log_pdf, FactorLayout, TargetModel, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::samples::SampleMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    /// `N(mean, variance)`, no parents.
    GaussianRoot { mean: f64 },
    /// `N(weights . parents, variance)`.
    LinearGaussian { weights: Vec<f64> },
    /// `sum_l component_weights[l] * N(weights[l] . parents, variance)`.
    Mixture {
        component_weights: [f64; 2],
        weights: [Vec<f64>; 2],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesNode {
    pub parents: Vec<usize>,
    pub variance: f64,
    #[serde(flatten)]
    pub kind: NodeKind,
}

/// A generated net. Node `k` owns state dimension `k`; nodes are numbered
/// layer by layer, so the numbering is a topological order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesNetSpec {
    pub schema_version: u32,
    pub max_parents: usize,
    pub layers: Vec<Vec<usize>>,
    pub nodes: Vec<BayesNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesNetConfig {
    pub layer_sizes: Vec<usize>,
    pub max_parents: usize,
    pub mixture_nodes: usize,
    #[serde(default = "default_mean_range")]
    pub mean_range: [f64; 2],
    /// Variances are drawn as `10^u`, `u ~ U(range)`.
    #[serde(default = "default_log10_variance_range")]
    pub log10_variance_range: [f64; 2],
    #[serde(default = "default_weight_range")]
    pub weight_range: [f64; 2],
    #[serde(default = "default_first_component_range")]
    pub first_component_range: [f64; 2],
    pub seed: u64,
}

fn default_mean_range() -> [f64; 2] {
    [0.0, 2.0]
}
fn default_log10_variance_range() -> [f64; 2] {
    [-3.0, 0.0]
}
fn default_weight_range() -> [f64; 2] {
    [-1.0, 1.0]
}
fn default_first_component_range() -> [f64; 2] {
    [0.4, 0.6]
}

impl BayesNetConfig {
    /// The generator settings of the 30-node, three-layer family.
    pub fn thirty_node(seed: u64) -> Self {
        BayesNetConfig {
            layer_sizes: vec![10, 10, 10],
            max_parents: 3,
            mixture_nodes: 6,
            mean_range: [0.0, 2.0],
            log10_variance_range: [-3.0, 0.0],
            weight_range: default_weight_range(),
            first_component_range: default_first_component_range(),
            seed,
        }
    }

    /// The generator settings of the 80-node, four-layer family.
    pub fn eighty_node(seed: u64) -> Self {
        BayesNetConfig {
            layer_sizes: vec![20, 20, 20, 20],
            max_parents: 4,
            mixture_nodes: 20,
            mean_range: [0.0, 4.0],
            ..Self::thirty_node(seed)
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must be a finite [lo, hi] with lo <= hi"
        )))
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub fn generate_bayes_net(config: &BayesNetConfig) -> Result<BayesNetSpec> {
    if config.layer_sizes.is_empty() || config.layer_sizes.contains(&0) {
        return Err(Error::invalid("every layer needs at least one node"));
    }
    if config.max_parents == 0 {
        return Err(Error::invalid("max_parents must be at least 1"));
    }
    let total: usize = config.layer_sizes.iter().sum();
    let non_root = total - config.layer_sizes[0];
    if config.mixture_nodes > non_root {
        return Err(Error::invalid(format!(
            "{} mixture nodes requested but only {non_root} non-root nodes exist",
            config.mixture_nodes
        )));
    }
    check_range("mean_range", config.mean_range)?;
    check_range("log10_variance_range", config.log10_variance_range)?;
    check_range("weight_range", config.weight_range)?;
    check_range("first_component_range", config.first_component_range)?;
    let [w_lo, w_hi] = config.first_component_range;
    if w_lo <= 0.0 || w_hi >= 1.0 {
        return Err(Error::invalid(
            "first_component_range must lie inside (0, 1)",
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut is_mixture = vec![false; total];
    for k in sample_indices(&mut rng, non_root, config.mixture_nodes) {
        is_mixture[config.layer_sizes[0] + k] = true;
    }

    let mut layers = Vec::with_capacity(config.layer_sizes.len());
    let mut nodes = Vec::with_capacity(total);
    let mut next = 0;
    for (l, &size) in config.layer_sizes.iter().enumerate() {
        let ids: Vec<usize> = (next..next + size).collect();
        next += size;
        for &id in &ids {
            let variance = 10f64.powf(uniform(&mut rng, config.log10_variance_range));
            let node = if l == 0 {
                BayesNode {
                    parents: Vec::new(),
                    variance,
                    kind: NodeKind::GaussianRoot {
                        mean: uniform(&mut rng, config.mean_range),
                    },
                }
            } else {
                let prev: &Vec<usize> = &layers[l - 1];
                let count = rng.random_range(1..=config.max_parents.min(prev.len()));
                let mut parents: Vec<usize> = sample_indices(&mut rng, prev.len(), count)
                    .into_iter()
                    .map(|k| prev[k])
                    .collect();
                parents.sort_unstable();
                let draw_weights = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                    (0..count)
                        .map(|_| uniform(rng, config.weight_range))
                        .collect()
                };
                let kind = if is_mixture[id] {
                    let w1 = uniform(&mut rng, config.first_component_range);
                    let a = draw_weights(&mut rng);
                    let b = draw_weights(&mut rng);
                    NodeKind::Mixture {
                        component_weights: [w1, 1.0 - w1],
                        weights: [a, b],
                    }
                } else {
                    NodeKind::LinearGaussian {
                        weights: draw_weights(&mut rng),
                    }
                };
                BayesNode {
                    parents,
                    variance,
                    kind,
                }
            };
            nodes.push(node);
        }
        layers.push(ids);
    }
    let spec = BayesNetSpec {
        schema_version: SCHEMA_VERSION,
        max_parents: config.max_parents,
        layers,
        nodes,
    };
    spec.validate()?;
    Ok(spec)
}

impl BayesNetSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::invalid(msg));
        if self.layers.is_empty() || self.layers.iter().any(Vec::is_empty) {
            return err("every layer needs at least one node".into());
        }
        let mut layer_of = vec![usize::MAX; self.nodes.len()];
        let mut expected = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            for &id in layer {
                if id != expected {
                    return err(format!(
                        "nodes must be numbered layer by layer; found {id} at {expected}"
                    ));
                }
                layer_of[id] = l;
                expected += 1;
            }
        }
        if expected != self.nodes.len() {
            return err(format!(
                "{} nodes listed in layers, {} defined",
                expected,
                self.nodes.len()
            ));
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if !(node.variance > 0.0 && node.variance.is_finite()) {
                return err(format!("node {id}: variance must be positive and finite"));
            }
            let is_root = layer_of[id] == 0;
            match (&node.kind, is_root) {
                (NodeKind::GaussianRoot { mean }, true) => {
                    if !node.parents.is_empty() || !mean.is_finite() {
                        return err(format!(
                            "node {id}: roots take a finite mean and no parents"
                        ));
                    }
                    continue;
                }
                (NodeKind::GaussianRoot { .. }, false) => {
                    return err(format!("node {id}: root kind outside the first layer"));
                }
                (_, true) => return err(format!("node {id}: first-layer nodes must be roots")),
                _ => {}
            }
            let k = node.parents.len();
            if k == 0 || k > self.max_parents {
                return err(format!(
                    "node {id}: parent count {k} outside [1, {}]",
                    self.max_parents
                ));
            }
            if node
                .parents
                .iter()
                .any(|&p| p >= self.nodes.len() || layer_of[p] + 1 != layer_of[id])
            {
                return err(format!(
                    "node {id}: parents must lie in the preceding layer"
                ));
            }
            let unique: BTreeSet<_> = node.parents.iter().collect();
            if unique.len() != k {
                return err(format!("node {id}: duplicate parents"));
            }
            match &node.kind {
                NodeKind::LinearGaussian { weights } => {
                    if weights.len() != k || weights.iter().any(|w| !w.is_finite()) {
                        return err(format!("node {id}: need {k} finite weights"));
                    }
                }
                NodeKind::Mixture {
                    component_weights: [w1, w2],
                    weights,
                } => {
                    if !(*w1 > 0.0 && *w1 < 1.0 && *w2 > 0.0 && *w2 < 1.0)
                        || (w1 + w2 - 1.0).abs() > 1e-12
                    {
                        return err(format!(
                            "node {id}: component weights must be in (0,1) and sum to 1"
                        ));
                    }
                    if weights
                        .iter()
                        .any(|w| w.len() != k || w.iter().any(|v| !v.is_finite()))
                    {
                        return err(format!("node {id}: need {k} finite weights per component"));
                    }
                }
                NodeKind::GaussianRoot { .. } => unreachable!(),
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Factor-level Markov blankets of the moralized graph: parents, children
    /// and co-parents of every node.
    pub fn moral_neighbors(&self) -> Vec<BTreeSet<usize>> {
        let mut neighbors = vec![BTreeSet::new(); self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &p in &node.parents {
                neighbors[id].insert(p);
                neighbors[p].insert(id);
                for &q in &node.parents {
                    if q != p {
                        neighbors[p].insert(q);
                    }
                }
            }
        }
        neighbors
    }

    /// Draws `count` joint samples in topological order.
    pub fn ancestral_sample(&self, count: usize, seed: u64) -> Result<SampleMatrix> {
        if count == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        self.validate()?;
        let d = self.nodes.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = SampleMatrix::zeros(count, d);
        for r in 0..count {
            let row = out.row_mut(r);
            for (id, node) in self.nodes.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                let linear = |w: &[f64], row: &[f64]| -> f64 {
                    w.iter().zip(&node.parents).map(|(a, &p)| a * row[p]).sum()
                };
                let mean = match &node.kind {
                    NodeKind::GaussianRoot { mean } => *mean,
                    NodeKind::LinearGaussian { weights } => linear(weights, row),
                    NodeKind::Mixture {
                        component_weights,
                        weights,
                    } => {
                        let u: f64 = rng.random();
                        let l = usize::from(u >= component_weights[0]);
                        linear(&weights[l], row)
                    }
                };
                row[id] = mean + node.variance.sqrt() * z;
            }
        }
        Ok(out)
    }
}

/// Coefficients of a node's residual `x_id - sum_k w_k x_{p_k} - offset`
/// over its local dims `[id, parents...]`.
struct Residual<'a> {
    id: usize,
    parents: &'a [usize],
    weights: &'a [f64],
    offset: f64,
}

impl Residual<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut r = x[self.id] - self.offset;
        for (w, &p) in self.weights.iter().zip(self.parents) {
            r -= w * x[p];
        }
        r
    }

    fn coef(&self, local: usize) -> f64 {
        if local == 0 {
            1.0
        } else {
            -self.weights[local - 1]
        }
    }

    fn dim(&self, local: usize) -> usize {
        if local == 0 {
            self.id
        } else {
            self.parents[local - 1]
        }
    }
}

/// The joint density of a [`BayesNetSpec`] as a [`TargetModel`]. One 1-D
/// factor per node in node order.
#[derive(Clone, Debug)]
pub struct BayesNet {
    spec: BayesNetSpec,
    layout: FactorLayout,
}

impl BayesNet {
    pub fn new(spec: BayesNetSpec) -> Result<Self> {
        spec.validate()?;
        let layout = FactorLayout::new(&vec![1; spec.num_nodes()], &spec.moral_neighbors())?;
        Ok(BayesNet { spec, layout })
    }

    pub fn spec(&self) -> &BayesNetSpec {
        &self.spec
    }

    fn residuals(&self, id: usize) -> Vec<(f64, Residual<'_>)> {
        let node = &self.spec.nodes[id];
        match &node.kind {
            NodeKind::GaussianRoot { mean } => vec![(
                1.0,
                Residual {
                    id,
                    parents: &[],
                    weights: &[],
                    offset: *mean,
                },
            )],
            NodeKind::LinearGaussian { weights } => vec![(
                1.0,
                Residual {
                    id,
                    parents: &node.parents,
                    weights,
                    offset: 0.0,
                },
            )],
            NodeKind::Mixture {
                component_weights,
                weights,
            } => (0..2)
                .map(|l| {
                    (
                        component_weights[l],
                        Residual {
                            id,
                            parents: &node.parents,
                            weights: &weights[l],
                            offset: 0.0,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Visits each node's log-density term with its local gradient and local
    /// Hessian over dims `[id, parents...]`.
    fn for_each_term(
        &self,
        x: &[f64],
        want_hessian: bool,
        mut visit: impl FnMut(&Residual<'_>, f64, &[f64], &[f64]),
    ) {
        for (id, node) in self.spec.nodes.iter().enumerate() {
            let var = node.variance;
            let comps = self.residuals(id);
            let m = 1 + node.parents.len();
            let mut grad = vec![0.0; m];
            let mut hess = if want_hessian {
                vec![0.0; m * m]
            } else {
                Vec::new()
            };
            let res0 = &comps[0].1;
            if comps.len() == 1 {
                let r = res0.value(x);
                let lp = gaussian_log_pdf(r, var);
                for p in 0..m {
                    grad[p] = -r / var * res0.coef(p);
                }
                if want_hessian {
                    for p in 0..m {
                        for q in 0..m {
                            hess[p * m + q] = -res0.coef(p) * res0.coef(q) / var;
                        }
                    }
                }
                visit(res0, lp, &grad, &hess);
                continue;
            }
            // Mixture: responsibilities in log space.
            let logs: Vec<f64> = comps
                .iter()
                .map(|(w, res)| w.ln() + gaussian_log_pdf(res.value(x), var))
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
            let resp: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
            let comp_grads: Vec<Vec<f64>> = comps
                .iter()
                .map(|(_, res)| {
                    let r = res.value(x);
                    (0..m).map(|p| -r / var * res.coef(p)).collect()
                })
                .collect();
            for p in 0..m {
                grad[p] = resp.iter().zip(&comp_grads).map(|(g, cg)| g * cg[p]).sum();
            }
            if want_hessian {
                for p in 0..m {
                    for q in 0..m {
                        let mut h = 0.0;
                        for ((g, cg), (_, res)) in resp.iter().zip(&comp_grads).zip(&comps) {
                            h += g * (cg[p] * cg[q] - res.coef(p) * res.coef(q) / var);
                        }
                        hess[p * m + q] = h - grad[p] * grad[q];
                    }
                }
            }
            visit(res0, lse, &grad, &hess);
        }
    }
}

impl TargetModel for BayesNet {
    fn layout(&self) -> &FactorLayout {
        &self.layout
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.layout.check_point(x)?;
        let mut total = 0.0;
        self.for_each_term(x, false, |_, lp, _, _| total += lp);
        Ok(total)
    }

    fn log_density_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.layout.check_point(x)?;
        let mut total = 0.0;
        let mut grad = vec![0.0; x.len()];
        self.for_each_term(x, false, |res, lp, g, _| {
            total += lp;
            for (p, gp) in g.iter().enumerate() {
                grad[res.dim(p)] += gp;
            }
        });
        Ok((total, grad))
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.layout.check_point(x)?;
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        self.for_each_term(x, true, |res, _, g, local| {
            let m = g.len();
            for p in 0..m {
                for q in 0..m {
                    h[(res.dim(p), res.dim(q))] += local[p * m + q];
                }
            }
        });
        Ok(h)
    }
}
