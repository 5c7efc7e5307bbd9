use proptest::prelude::*;

use ssm_core::asm::{run_asm, select_boundary_candidates, AsmConfig, ParameterDomain};
use ssm_core::stability::{matrices_verdict, StabilityOptions};

fn disk_domain() -> ParameterDomain {
    ParameterDomain::new(
        vec!["x".into(), "y".into()],
        vec![-2.0, -2.0],
        vec![2.0, 2.0],
    )
    .unwrap()
}

fn disk(r: &[f64]) -> u8 {
    u8::from(r[0] * r[0] + r[1] * r[1] < 1.0)
}

fn cfg(seed: u64) -> AsmConfig {
    AsmConfig {
        n_init: 100,
        n_r: 5000,
        n_a: 250,
        p_th: 0.8,
        seed,
        ..AsmConfig::default()
    }
}

#[test]
fn disk_interior_is_confidently_stable() {
    let m = run_asm(&disk, &disk_domain(), &cfg(7)).unwrap();
    for p in [[0.0, 0.0], [0.4, 0.0], [0.0, -0.4], [-0.3, 0.3]] {
        assert!(m.predict_prob(&p) > 0.9, "{p:?}: {}", m.predict_prob(&p));
    }
    for p in [[1.8, 1.8], [-1.8, 1.8], [1.9, -0.2]] {
        assert!(m.predict_prob(&p) < 0.2, "{p:?}: {}", m.predict_prob(&p));
    }
}

#[test]
fn same_seed_same_model() {
    let a = run_asm(&disk, &disk_domain(), &cfg(3)).unwrap();
    let b = run_asm(&disk, &disk_domain(), &cfg(3)).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.samples.len(), 350);
}

proptest! {
    #[test]
    fn selection_is_optimal(probs in prop::collection::vec(0.0f64..1.0, 1..400), p_th in 0.0f64..1.0, frac in 0.0f64..1.0) {
        let n_a = ((probs.len() as f64 * frac) as usize).max(1);
        let sel = select_boundary_candidates(&probs, p_th, n_a);
        prop_assert_eq!(sel.len(), n_a);
        let worst = sel.iter().map(|&i| (probs[i] - p_th).abs()).fold(0.0, f64::max);
        for i in 0..probs.len() {
            if !sel.contains(&i) {
                prop_assert!((probs[i] - p_th).abs() >= worst);
            }
        }
    }

    #[test]
    fn verdict_follows_the_worst_eigenvalue(diag in prop::collection::vec(-100.0f64..100.0, 1..8), zero in any::<bool>()) {
        let mut d = diag.clone();
        if zero {
            d[0] = 0.0;
        }
        let a = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone()));
        let v = matrices_verdict(&[a], &StabilityOptions::default()).unwrap();
        let expected = d.iter().all(|&x| x < -1e-6);
        if d.iter().all(|&x| x < -1e-6 || x >= 0.0) {
            prop_assert_eq!(v.stable, expected);
        }
    }
}
