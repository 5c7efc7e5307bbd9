use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ssm_core::asm::ParameterDomain;
use ssm_core::classifier::{
    fit, fit_platt, smo, train_svm, KernelConfig, LabeledSample, SvmOptions,
};

fn domain(lo: [f64; 2], hi: [f64; 2]) -> ParameterDomain {
    ParameterDomain::new(vec!["a".into(), "b".into()], lo.to_vec(), hi.to_vec()).unwrap()
}

fn rbf(sigma: f64) -> SvmOptions {
    SvmOptions {
        kernel: KernelConfig {
            width: Some(sigma),
            ..KernelConfig::rbf()
        },
        ..SvmOptions::default()
    }
}

fn noisy_ring(seed: u64, n: usize) -> Vec<LabeledSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rho = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let r2 = rho[0] * rho[0] + rho[1] * rho[1];
            let s = u8::from(r2 < 1.0) ^ u8::from(rng.random_bool(0.05));
            LabeledSample { rho, s }
        })
        .collect()
}

#[test]
fn xor_dual_matches_closed_form() {
    let pts = [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let y = [1.0, 1.0, -1.0, -1.0];
    let sigma: f64 = 0.7;
    let k = |a: &[f64; 2], b: &[f64; 2]| {
        (-((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / (2.0 * sigma * sigma)).exp()
    };
    let mut q = vec![0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            q[i * 4 + j] = y[i] * y[j] * k(&pts[i], &pts[j]);
        }
    }
    let (alpha, _, _) = smo(&q, &y, 100.0, 1e-12, 100_000).unwrap();
    let e1 = (-1.0 / (2.0 * sigma * sigma)).exp();
    let e2 = (-2.0 / (2.0 * sigma * sigma)).exp();
    let expected = 1.0 / (1.0 + e2 - 2.0 * e1);
    for a in alpha {
        assert!((a / expected - 1.0).abs() < 1e-8, "{a} vs {expected}");
    }
}

#[test]
fn platt_fit_is_a_stationary_point_of_the_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f: Vec<f64> = (0..300).map(|_| rng.random_range(-3.0..3.0)).collect();
    let s: Vec<u8> = f
        .iter()
        .map(|&x| u8::from(rng.random_bool(1.0 / (1.0 + (-2.0 * x).exp()))))
        .collect();
    let sig = fit_platt(&f, &s).unwrap();
    let n1 = s.iter().filter(|&&v| v == 1).count() as f64;
    let n0 = s.len() as f64 - n1;
    let (mut ga, mut gb) = (0.0, 0.0);
    for (&x, &l) in f.iter().zip(&s) {
        let t = if l == 1 {
            (n1 + 1.0) / (n1 + 2.0)
        } else {
            1.0 / (n0 + 2.0)
        };
        let p = 1.0 / (1.0 + (sig.a * x + sig.b).exp());
        ga += x * (t - p);
        gb += t - p;
    }
    assert!(ga.abs() < 1e-8 && gb.abs() < 1e-8, "gradient ({ga}, {gb})");
    assert!(sig.a < -1.0 && sig.a > -3.5, "slope {}", sig.a);
}

#[test]
fn flipping_labels_negates_the_decision() {
    let d = domain([-2.0, -2.0], [2.0, 2.0]);
    let data = noisy_ring(5, 120);
    let flipped: Vec<LabeledSample> = data
        .iter()
        .map(|x| LabeledSample {
            rho: x.rho.clone(),
            s: 1 - x.s,
        })
        .collect();
    let a = train_svm(&data, &d, &rbf(0.3)).unwrap();
    let b = train_svm(&flipped, &d, &rbf(0.3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let (fa, fb) = (a.decision(&p), b.decision(&p));
        assert!((fa + fb).abs() < 1e-4 * (1.0 + fa.abs()), "{fa} {fb}");
    }
}

#[test]
fn predictions_invariant_under_affine_reparameterization() {
    let d = domain([-2.0, -2.0], [2.0, 2.0]);
    let map = |p: &[f64]| vec![3.0 * p[0] + 10.0, 0.5 * p[1] - 4.0];
    let d2 = domain([4.0, -5.0], [16.0, -3.0]);
    let data = noisy_ring(8, 150);
    let mapped: Vec<LabeledSample> = data
        .iter()
        .map(|x| LabeledSample {
            rho: map(&x.rho),
            s: x.s,
        })
        .collect();
    let a = fit(&data, &d, &SvmOptions::default()).unwrap();
    let b = fit(&mapped, &d2, &SvmOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        assert!((a.predict_prob(&p) - b.predict_prob(&map(&p))).abs() < 1e-6);
    }
}

#[test]
fn ring_is_learned() {
    let d = domain([-2.0, -2.0], [2.0, 2.0]);
    let m = fit(&noisy_ring(11, 300), &d, &SvmOptions::default()).unwrap();
    assert!(m.predict_prob(&[0.0, 0.0]) > 0.9);
    assert!(m.predict_prob(&[1.9, 1.9]) < 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probabilities_lie_in_open_unit_interval(seed in 0u64..10_000, x in -50.0f64..50.0, y in -50.0f64..50.0) {
        let d = domain([-2.0, -2.0], [2.0, 2.0]);
        let m = fit(&noisy_ring(seed, 40), &d, &SvmOptions::default()).unwrap();
        let p = m.predict_prob(&[x, y]);
        prop_assert!(p > 0.0 && p < 1.0);
    }
}
