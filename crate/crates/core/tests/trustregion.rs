mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trsvi::kernels::median_heuristic;
use trsvi::model::{FactorLayout, GaussianTarget};
use trsvi::parallel::Workers;
use trsvi::trustregion::{
    approx_kl, approx_kl_on_subset, cg_steihaug, default_tolerance, model_change, tr_svi_at_run,
    tr_svi_kl_run, CgStatus, KlOptions,
};
use trsvi::{LocalKernelFamily, ParticleSet, Rbf, SampleMatrix, TargetModel};

use common::*;

fn dense_apply(h: &[Vec<f64>]) -> impl Fn(&[f64], &mut [f64]) + '_ {
    move |v, out| out.copy_from_slice(&mat_vec(h, v))
}

#[test]
fn exact_oracle_on_the_indefinite_example() {
    let h = vec![vec![1.0, 0.0], vec![0.0, -1.0]];
    let w = exact_trust_region(&h, &[1.0, 0.0], 1.0);
    assert!((quad_model(&h, &[1.0, 0.0], &w) + 0.75).abs() < 1e-12);
    assert!((w[0] + 0.5).abs() < 1e-12);
}

#[test]
fn cg_never_beats_the_exact_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..300 {
        let n = 2;
        let h = random_symmetric(n, -2.0, 3.0, &mut rng);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let radius = rng.random_range(0.05..3.0);
        let sol = cg_steihaug(dense_apply(&h), &g, radius, default_tolerance(norm(&g)), n).unwrap();
        let exact = exact_trust_region(&h, &g, radius);
        let cg_val = quad_model(&h, &g, &sol.step);
        let best = quad_model(&h, &g, &exact);
        assert!(norm(&exact) <= radius * (1.0 + 1e-10), "case {case}");
        assert!(cg_val >= best - 1e-10, "case {case}: {cg_val} < {best}");
        assert!(cg_val <= 0.0);
    }
}

#[test]
fn cg_reaches_exact_solution_for_interior_definite_systems() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let h = random_symmetric(4, 0.5, 2.0, &mut rng);
        let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sol = cg_steihaug(dense_apply(&h), &g, 1e6, 1e-14, 50).unwrap();
        assert_eq!(sol.status, CgStatus::Interior);
        let exact = exact_trust_region(&h, &g, 1e6);
        for (a, b) in sol.step.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn cg_respects_radius_model_and_cauchy_bound(seed in any::<u64>(), n in 1usize..=10, lo in -3.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_symmetric(n, lo, lo + 4.0, &mut rng);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let radius = rng.random_range(0.01..5.0);
        let sol = cg_steihaug(dense_apply(&h), &g, radius, default_tolerance(norm(&g)), n).unwrap();
        prop_assert!(norm(&sol.step) <= radius * (1.0 + 1e-10));
        let change = model_change(dense_apply(&h), &g, &sol.step);
        prop_assert!(change <= 0.0);
        let hn = power_norm(&h, 2000);
        let gn = norm(&g);
        let cauchy = 0.5 * gn * radius.min(gn / hn);
        prop_assert!(-change >= cauchy * (1.0 - 1e-9), "decrease {} < {}", -change, cauchy);
    }
}

/// Separable subproblems under the max-norm: solving each block at the
/// shared radius is the joint optimum.
#[test]
fn max_norm_trust_region_separates() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let h1 = random_symmetric(2, -1.0, 2.0, &mut rng);
        let h2 = random_symmetric(2, 0.2, 2.0, &mut rng);
        let g1: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let radius = rng.random_range(0.1..2.0);
        let separate = quad_model(&h1, &g1, &exact_trust_region(&h1, &g1, radius))
            + quad_model(&h2, &g2, &exact_trust_region(&h2, &g2, radius));
        // joint search over a polar grid on the product of the two discs; the
        // grid is itself a product, so its minimum is a sum of block minima
        let rings = 60;
        let spokes = 240;
        let block_best = |h: &[Vec<f64>], g: &[f64]| {
            let mut best = 0.0f64;
            for r in 0..=rings {
                for s in 0..spokes {
                    let rad = radius * r as f64 / rings as f64;
                    let ang = std::f64::consts::TAU * s as f64 / spokes as f64;
                    best = best.min(quad_model(h, g, &[rad * ang.cos(), rad * ang.sin()]));
                }
            }
            best
        };
        let joint = block_best(&h1, &g1) + block_best(&h2, &g2);
        assert!(separate <= joint + 1e-12);
        assert!(joint - separate < 5e-3 * (1.0 + separate.abs()));
    }
}

fn random_set(n: usize, d: usize, seed: u64) -> ParticleSet {
    ParticleSet::gaussian(n, &vec![0.0; d], 1.0, seed).unwrap()
}

#[test]
fn approx_kl_with_full_subset_matches_full_eigendecomposition() {
    let d = 5;
    let target = GaussianTarget::new(vec![0.3; d], DMatrix::identity(d, d) * 2.0).unwrap();
    for seed in 0..100 {
        let set = random_set(12, d, seed);
        let kernel = median_heuristic(set.positions(), 0).unwrap();
        let got = approx_kl(&set, &target, 12, kernel, seed).unwrap();
        let points: Vec<Vec<f64>> = set.positions().iter_rows().map(|r| r.to_vec()).collect();
        let lp: Vec<f64> = points
            .iter()
            .map(|p| target.log_density(p).unwrap())
            .collect();
        let want = full_approx_kl(&points, &lp, kernel.lengthscale());
        assert!((got - want).abs() < 1e-8, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn approx_kl_subset_order_is_irrelevant() {
    let target = GaussianTarget::new(vec![0.0; 2], DMatrix::identity(2, 2)).unwrap();
    let set = random_set(20, 2, 3);
    let k = Rbf::new(0.8).unwrap();
    let a = approx_kl_on_subset(&set, &target, &[1, 5, 9], k).unwrap();
    let b = approx_kl_on_subset(&set, &target, &[9, 1, 5], k).unwrap();
    assert!((a - b).abs() < 1e-14);
}

fn std_normal_1d() -> (GaussianTarget, LocalKernelFamily) {
    let t = GaussianTarget::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
    let fam = LocalKernelFamily::new(Rbf::new(1.0).unwrap(), t.layout().clone());
    (t, fam)
}

#[test]
fn kl_driver_converges_on_a_gaussian() {
    let (t, fam) = std_normal_1d();
    let init = ParticleSet::gaussian(50, &[5.0], 1.0, 1).unwrap();
    let out = tr_svi_kl_run(&init, &t, &fam, &KlOptions::new(100, 7)).unwrap();
    let g = out.trace.gradient_magnitudes();
    assert_eq!(out.trace.len(), 101);
    assert!(g[100] < 0.05 * g[0], "{} vs {}", g[100], g[0]);
}

#[test]
fn kl_driver_rejections_leave_particles_untouched() {
    let t = GaussianTarget::new(
        vec![0.0, 1.0],
        DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]),
    )
    .unwrap();
    let fam = LocalKernelFamily::new(Rbf::new(0.5).unwrap(), t.layout().clone());
    let mut current = ParticleSet::gaussian(30, &[2.0, -2.0], 1.0, 2).unwrap();
    let opts = KlOptions {
        initial_radius: 50.0,
        ..KlOptions::new(1, 0)
    };
    let mut saw_reject = false;
    for seed in 0..40 {
        let out = tr_svi_kl_run(
            &current,
            &t,
            &fam,
            &KlOptions {
                seed,
                ..opts.clone()
            },
        )
        .unwrap();
        let row = &out.trace.rows[1];
        if !row.accepted {
            saw_reject = true;
            assert_eq!(out.particles.positions(), current.positions());
            assert!(row.rho.is_none_or(|r| r < 0.0));
        } else {
            assert!(row.rho.unwrap() >= 0.0);
        }
        current = out.particles;
    }
    assert!(saw_reject);
}

#[test]
fn kl_driver_radius_follows_ratio_rule() {
    let (t, fam) = std_normal_1d();
    let init = ParticleSet::gaussian(20, &[1.0], 2.0, 4).unwrap();
    let out = tr_svi_kl_run(&init, &t, &fam, &KlOptions::new(30, 1)).unwrap();
    for next in &out.trace.rows[1..] {
        let before = next.radius_or_step.unwrap();
        if let Some(after) = out
            .trace
            .rows
            .get(next.iteration + 1)
            .and_then(|r| r.radius_or_step)
        {
            let expect = match next.rho {
                Some(r) if r < 1e-4 => before / 2.0,
                Some(r) if r > 0.7 => before * 1.5,
                Some(_) => before,
                None => before / 2.0,
            };
            assert_eq!(after, expect);
        }
    }
}

#[test]
fn at_driver_first_radius_and_invariants() {
    let t = GaussianTarget::new(
        vec![1.0, -1.0],
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
    )
    .unwrap();
    let fam = LocalKernelFamily::new(Rbf::new(1.0).unwrap(), t.layout().clone());
    let init = ParticleSet::gaussian(40, &[0.0, 0.0], 2.0, 9).unwrap();
    let out = tr_svi_at_run(&init, &t, &fam, 60).unwrap();
    let rows = &out.trace.rows;
    assert_eq!(rows[1].radius_or_step, Some(1.0));
    let b_max = rows[0].gradient_magnitude;
    let mut w = b_max;
    for r in &rows[1..] {
        let b = r.scale.unwrap();
        assert!(b >= 0.1 * (1.0 - 1e-12) && b <= b_max);
        let new_w = if r.gradient_magnitude < 0.999 * w {
            r.gradient_magnitude
        } else {
            w
        };
        assert!(new_w <= w);
        w = new_w;
    }
    assert!(rows[60].gradient_magnitude < rows[0].gradient_magnitude);
}

#[test]
fn at_driver_with_zero_gradient_returns_input() {
    let (t, fam) = std_normal_1d();
    let init = ParticleSet::new(SampleMatrix::from_rows(&[vec![0.0]]).unwrap()).unwrap();
    let out = tr_svi_at_run(&init, &t, &fam, 10).unwrap();
    assert!(out.converged);
    assert_eq!(out.particles, init);
    assert_eq!(out.trace.len(), 1);
}

#[test]
fn drivers_do_not_depend_on_worker_count() {
    let t = GaussianTarget::new(
        vec![0.0; 4],
        DMatrix::from_fn(4, 4, |r, c| if r == c { 1.0 } else { 0.3 }),
    )
    .unwrap()
    .with_layout(FactorLayout::fully_connected(&[2, 2]).unwrap())
    .unwrap();
    let fam = LocalKernelFamily::new(Rbf::new(1.0).unwrap(), t.layout().clone());
    let init = ParticleSet::gaussian(25, &[1.0; 4], 1.0, 0).unwrap();
    let run = |w: usize| {
        Workers(w).install(|| {
            let a = tr_svi_at_run(&init, &t, &fam, 15).unwrap();
            let k = tr_svi_kl_run(&init, &t, &fam, &KlOptions::new(15, 3)).unwrap();
            (
                a.particles,
                a.trace.gradient_magnitudes(),
                k.particles,
                k.trace.gradient_magnitudes(),
            )
        })
    };
    assert!(run(1) == run(4));
}
