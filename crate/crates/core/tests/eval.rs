mod common;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use trsvi::eval::{metropolis_reference, mmd, MetropolisConfig, MmdReference};
use trsvi::model::GaussianTarget;
use trsvi::parallel::Workers;
use trsvi::{Rbf, SampleMatrix};

fn normal_sample(n: usize, shift: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            vec![z + shift]
        })
        .collect()
}

#[test]
fn mmd_grows_with_mean_shift_and_matches_double_loop() {
    let k = Rbf::new(1.0).unwrap();
    let base = normal_sample(10_000, 0.0, 1);
    let x = SampleMatrix::from_rows(&base).unwrap();
    let mut last = f64::NEG_INFINITY;
    for (i, delta) in [0.0, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let other = normal_sample(10_000, delta, 100 + i as u64);
        let y = SampleMatrix::from_rows(&other).unwrap();
        let v = mmd(&x, &y, k).unwrap();
        let oracle = common::double_loop_mmd(&base, &other, 1.0);
        assert!((v - oracle).abs() < 1e-10, "delta {delta}: {v} vs {oracle}");
        assert!(v > last, "delta {delta}");
        last = v;
    }
}

#[test]
fn mmd_is_worker_count_invariant() {
    let x = SampleMatrix::from_rows(&normal_sample(700, 0.0, 3)).unwrap();
    let y = SampleMatrix::from_rows(&normal_sample(900, 0.3, 4)).unwrap();
    let k = Rbf::new(0.7).unwrap();
    let a = Workers(1).install(|| mmd(&x, &y, k).unwrap());
    let b = Workers(5).install(|| mmd(&x, &y, k).unwrap());
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn reference_subsamples_large_ground_truth() {
    let gt = SampleMatrix::from_rows(&normal_sample(25_000, 0.0, 9)).unwrap();
    let r = MmdReference::new(&gt, 2).unwrap();
    let info = r.info();
    assert_eq!(info.ground_truth_rows, 25_000);
    assert_eq!(info.ground_truth_used, 20_000);
    // median |z - z'| for independent standard normals is about 0.954
    assert!(
        (info.lengthscale - 0.954).abs() < 0.03,
        "{}",
        info.lengthscale
    );
    let x = SampleMatrix::from_rows(&normal_sample(50, 0.0, 10)).unwrap();
    assert_eq!(r.mmd(&x).unwrap(), mmd(&x, r.sample(), r.kernel()).unwrap());
}

#[test]
fn metropolis_recovers_standard_normal_moments() {
    let t = GaussianTarget::new(vec![0.0], DMatrix::identity(1, 1)).unwrap();
    let cfg = MetropolisConfig {
        chain_length: 1_000_000,
        proposal_scale: 2.4,
        burn_in: 1000,
        thinning: 1,
        seed: 5,
    };
    let out = metropolis_reference(&t, &cfg, &[0.0]).unwrap();
    let s = out.samples.as_slice();
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((0.95..=1.05).contains(&var), "{var}");
    assert!(out.acceptance_rate > 0.2);
}
