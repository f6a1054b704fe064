mod common;

use common::*;
use mrbsde::oracle::{reference_path, skorokhod_free_path, OracleKind, OraclePath};
use proptest::prelude::*;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/affine_oracle.txt");

fn feasible_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..40).prop_flat_map(|len| {
        (prop::collection::vec(-2.0f64..2.0, len), prop::collection::vec(-2.0f64..2.0, len)).prop_map(|(m, mut u)| {
            let last = u.len() - 1;
            u[last] = u[last].min(m[last]);
            (m, u)
        })
    })
}

proptest! {
    #[test]
    fn translation_moves_the_mean_and_keeps_the_compensator((m, u) in feasible_pair(), c in -5.0f64..5.0) {
        let (mean, k) = skorokhod_free_path(&m, &u).unwrap();
        let ms: Vec<f64> = m.iter().map(|v| v + c).collect();
        let us: Vec<f64> = u.iter().map(|v| v + c).collect();
        let (mean_s, k_s) = skorokhod_free_path(&ms, &us).unwrap();
        for j in 0..m.len() {
            prop_assert!((mean_s[j] - mean[j] - c).abs() < 1e-9);
            prop_assert!((k_s[j] - k[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn positive_scaling_scales_both((m, u) in feasible_pair(), lambda in 0.01f64..10.0) {
        let (mean, k) = skorokhod_free_path(&m, &u).unwrap();
        let ms: Vec<f64> = m.iter().map(|v| v * lambda).collect();
        let us: Vec<f64> = u.iter().map(|v| v * lambda).collect();
        let (mean_s, k_s) = skorokhod_free_path(&ms, &us).unwrap();
        for j in 0..m.len() {
            prop_assert!((mean_s[j] - lambda * mean[j]).abs() < 1e-9 * (1.0 + lambda));
            prop_assert!((k_s[j] - lambda * k[j]).abs() < 1e-9 * (1.0 + lambda));
        }
    }

    #[test]
    fn reflection_is_feasible_flat_and_monotone((m, u) in feasible_pair()) {
        let (mean, k) = skorokhod_free_path(&m, &u).unwrap();
        prop_assert_eq!(k[0], 0.0);
        for j in 0..m.len() {
            prop_assert!(mean[j] >= u[j] - 1e-12);
        }
        for j in 0..m.len() - 1 {
            prop_assert!(k[j + 1] >= k[j]);
            // K only moves off a node where the constraint binds.
            if k[j + 1] > k[j] + 1e-12 {
                prop_assert!((mean[j] - u[j]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn affine_reference_matches_golden() {
    let (kind, path) = reference_path(&affine_problem(), 10_000).unwrap().unwrap();
    assert_eq!(kind, OracleKind::PenalizedMeanEquation);
    let sampled = path.subsample(100);
    if std::env::var_os("MRBSDE_REGEN_GOLDEN").is_some() {
        std::fs::write(GOLDEN, sampled.to_table()).unwrap();
    }
    let golden = OraclePath::from_table(&std::fs::read_to_string(GOLDEN).unwrap()).unwrap();
    assert_eq!(golden.t.len(), 101);
    assert!(sup_abs(&golden.t, &sampled.t) < 1e-12);
    assert!(sup_abs(&golden.mean, &sampled.mean) < 1e-9);
    assert!(sup_abs(&golden.compensator, &sampled.compensator) < 1e-9);
}

#[test]
fn affine_reference_is_feasible_and_minimal() {
    let spec = affine_problem();
    let (_, path) = reference_path(&spec, 10_000).unwrap().unwrap();
    let u: Vec<f64> = path.t.iter().map(|&t| spec.obstacle.eval(t)).collect();
    // Without the constraint the mean is zero throughout, so the obstacle must bind.
    assert!(path.mean.iter().zip(&u).all(|(m, u)| m >= &(u - 1e-4)));
    let touch = path.mean.iter().zip(&u).map(|(m, u)| (m - u).abs()).fold(f64::INFINITY, f64::min);
    assert!(touch < 1e-4);
    assert!(*path.compensator.last().unwrap() > 0.0);
}

#[test]
fn sine_reference_uses_running_maximum() {
    let (kind, path) = reference_path(&sine_problem(), 1000).unwrap().unwrap();
    assert_eq!(kind, OracleKind::RunningMaximum);
    assert!((path.compensator_at(1.0) - 0.5).abs() < 1e-12);
    assert!((path.compensator_at(0.75) - 0.146_446_609_4).abs() < 1e-9);
}
