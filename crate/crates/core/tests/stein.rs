mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use trsvi::model::{generate_bayes_net, BayesNet, BayesNetConfig, GaussianTarget};
use trsvi::stein::{
    global_hessian, global_newton_systems, global_stein_gradient, graphical_hessian,
    graphical_newton_systems, graphical_stein_gradient,
};
use trsvi::{FactorLayout, LocalKernelFamily, ParticleSet, Rbf, TargetModel};

use common::direct_stein_gradient;

fn small_net() -> BayesNet {
    let cfg = BayesNetConfig {
        layer_sizes: vec![3, 3, 2],
        max_parents: 2,
        mixture_nodes: 1,
        seed: 5,
        ..BayesNetConfig::thirty_node(5)
    };
    BayesNet::new(generate_bayes_net(&cfg).unwrap()).unwrap()
}

fn rows(p: &ParticleSet) -> Vec<Vec<f64>> {
    (0..p.len()).map(|i| p.position(i).to_vec()).collect()
}

fn scores(target: &dyn TargetModel, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|p| target.log_density_and_gradient(p).unwrap().1)
        .collect()
}

fn max_diff(field: &[f64], oracle: &[Vec<f64>]) -> f64 {
    field
        .iter()
        .zip(oracle.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[test]
fn graphical_gradient_matches_direct_sum() {
    let target = small_net();
    let layout = target.layout().clone();
    let ell = 0.8;
    let family = LocalKernelFamily::new(Rbf::new(ell).unwrap(), layout.clone());
    let particles = ParticleSet::gaussian(12, &vec![0.0; layout.total_dim()], 1.0, 3).unwrap();
    let x = rows(&particles);
    let factors: Vec<Vec<usize>> = layout
        .factors()
        .iter()
        .map(|r| r.clone().collect())
        .collect();
    let blankets: Vec<Vec<usize>> = (0..layout.num_factors())
        .map(|a| layout.blanket(a).to_vec())
        .collect();
    let oracle = direct_stein_gradient(&x, &scores(&target, &x), &factors, &blankets, ell);
    let field = graphical_stein_gradient(&particles, &target, &family).unwrap();
    assert!(max_diff(field.as_slice(), &oracle) < 1e-12);
}

#[test]
fn global_gradient_matches_direct_sum() {
    let target = small_net();
    let d = target.dim();
    let particles = ParticleSet::gaussian(9, &vec![0.5; d], 0.7, 8).unwrap();
    let x = rows(&particles);
    let all: Vec<usize> = (0..d).collect();
    let factors: Vec<Vec<usize>> = (0..d).map(|k| vec![k]).collect();
    let blankets = vec![all; d];
    let oracle = direct_stein_gradient(&x, &scores(&target, &x), &factors, &blankets, 1.4);
    let field = global_stein_gradient(&particles, &target, Rbf::new(1.4).unwrap()).unwrap();
    assert!(max_diff(field.as_slice(), &oracle) < 1e-12);
}

#[test]
fn single_particle_gradient_is_negative_score() {
    let target = small_net();
    let family = LocalKernelFamily::new(Rbf::new(1.0).unwrap(), target.layout().clone());
    let particles = ParticleSet::gaussian(1, &vec![0.0; target.dim()], 1.0, 0).unwrap();
    let field = graphical_stein_gradient(&particles, &target, &family).unwrap();
    let (_, score) = target
        .log_density_and_gradient(particles.position(0))
        .unwrap();
    for (f, s) in field.as_slice().iter().zip(&score) {
        assert!((f + s).abs() < 1e-14);
    }
}

#[test]
fn newton_systems_agree_with_single_calls() {
    let target = small_net();
    let family = LocalKernelFamily::new(Rbf::new(0.9).unwrap(), target.layout().clone());
    let particles = ParticleSet::gaussian(6, &vec![0.0; target.dim()], 1.0, 21).unwrap();
    let sys = graphical_newton_systems(&particles, &target, &family).unwrap();
    let g = graphical_stein_gradient(&particles, &target, &family).unwrap();
    assert_eq!(sys.gradient.as_slice(), g.as_slice());
    for i in 0..particles.len() {
        let h = graphical_hessian(&particles, &target, &family, i).unwrap();
        assert_eq!(sys.hessians[i].to_dense(), h.to_dense());
    }
    let glob = global_newton_systems(&particles, &target, family.kernel()).unwrap();
    for i in 0..particles.len() {
        let h = global_hessian(&particles, &target, family.kernel(), i).unwrap();
        assert_eq!(glob.hessians[i].to_dense(), h.to_dense());
    }
}

#[test]
fn graphical_hessian_is_zero_outside_coupled_blocks() {
    let target = small_net();
    let layout = target.layout().clone();
    let family = LocalKernelFamily::new(Rbf::new(1.0).unwrap(), layout.clone());
    let particles = ParticleSet::gaussian(5, &vec![0.0; layout.total_dim()], 1.0, 2).unwrap();
    let dense = graphical_hessian(&particles, &target, &family, 0)
        .unwrap()
        .to_dense();
    for a in 0..layout.num_factors() {
        for b in 0..layout.num_factors() {
            if layout.in_blanket(a, b) || a == b {
                continue;
            }
            for r in layout.factor(a) {
                for c in layout.factor(b) {
                    assert_eq!(dense[(r, c)], 0.0);
                }
            }
        }
    }
}

#[test]
fn hessian_apply_matches_dense_product() {
    let target = small_net();
    let family = LocalKernelFamily::new(Rbf::new(1.1).unwrap(), target.layout().clone());
    let particles = ParticleSet::gaussian(7, &vec![0.0; target.dim()], 1.0, 6).unwrap();
    let h = graphical_hessian(&particles, &target, &family, 3).unwrap();
    let v: Vec<f64> = (0..target.dim()).map(|k| (k as f64 * 0.7).sin()).collect();
    let got = h.apply(&v).unwrap();
    let want = h.to_dense() * nalgebra::DVector::from_vec(v);
    for (a, b) in got.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn one_factor_layout_reduces_to_global(seed in 0u64..1000, ell in 0.3f64..3.0, n in 2usize..9) {
        let cov = DMatrix::from_row_slice(3, 3, &[1.2, 0.2, 0.0, 0.2, 0.9, -0.3, 0.0, -0.3, 0.7]);
        let target = GaussianTarget::new(vec![0.1, 0.2, -0.3], cov)
            .unwrap()
            .with_layout(FactorLayout::single(3).unwrap())
            .unwrap();
        let kernel = Rbf::new(ell).unwrap();
        let family = LocalKernelFamily::new(kernel, target.layout().clone());
        let particles = ParticleSet::gaussian(n, &[0.0; 3], 1.0, seed).unwrap();
        let a = graphical_stein_gradient(&particles, &target, &family).unwrap();
        let b = global_stein_gradient(&particles, &target, kernel).unwrap();
        prop_assert!(max_diff(a.as_slice(), &[b.as_slice().to_vec()]) <= 1e-12);
        let ha = graphical_hessian(&particles, &target, &family, 0).unwrap().to_dense();
        let hb = global_hessian(&particles, &target, kernel, 0).unwrap().to_dense();
        prop_assert!((ha - hb).abs().max() <= 1e-12);
    }

    #[test]
    fn hessian_is_symmetric(seed in 0u64..1000) {
        let target = small_net();
        let family = LocalKernelFamily::new(Rbf::new(1.0).unwrap(), target.layout().clone());
        let particles = ParticleSet::gaussian(4, &vec![0.0; target.dim()], 1.0, seed).unwrap();
        let h = graphical_hessian(&particles, &target, &family, 1).unwrap().to_dense();
        prop_assert!((&h - h.transpose()).abs().max() < 1e-12);
    }
}
