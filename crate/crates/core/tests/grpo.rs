use proptest::prelude::*;
use swirl::grpo::{compute_advantages, AdvantageMode, GrpoConfig};
use swirl::oracle::{estimator_expectation_test, random_instance};

fn rewards() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-20.0f64..0.0, 2..20)
}

proptest! {
    #[test]
    fn mean_std_is_shift_invariant(r in rewards(), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
        let a = compute_advantages(&r, AdvantageMode::MeanStd, 1e-8).unwrap();
        let b = compute_advantages(&shifted, AdvantageMode::MeanStd, 1e-8).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_std_keeps_sign_under_scaling(r in rewards(), s in 0.1f64..10.0) {
        let scaled: Vec<f64> = r.iter().map(|v| v * s).collect();
        let a = compute_advantages(&r, AdvantageMode::MeanStd, 1e-8).unwrap();
        let b = compute_advantages(&scaled, AdvantageMode::MeanStd, 1e-8).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!(x * y >= 0.0 || (x.abs() < 1e-6 && y.abs() < 1e-6));
        }
    }

    #[test]
    fn centred_modes_sum_to_zero(r in rewards()) {
        for mode in [AdvantageMode::MeanOnly, AdvantageMode::MeanStd, AdvantageMode::LeaveOneOut] {
            let a = compute_advantages(&r, mode, 1e-8).unwrap();
            prop_assert!(a.values.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn leave_one_out_is_scaled_mean_only(r in rewards()) {
        let g = r.len() as f64;
        let loo = compute_advantages(&r, AdvantageMode::LeaveOneOut, 1e-8).unwrap();
        let mo = compute_advantages(&r, AdvantageMode::MeanOnly, 1e-8).unwrap();
        for (x, y) in loo.values.iter().zip(&mo.values) {
            prop_assert!((x - y * g / (g - 1.0)).abs() < 1e-9);
        }
    }
}

#[test]
fn leave_one_out_estimator_is_unbiased() {
    for seed in [1u64, 2] {
        let inst = random_instance(seed, 3, 3, 1.0);
        let cfg = GrpoConfig {
            group_size: 8,
            advantage_mode: AdvantageMode::LeaveOneOut,
            ..GrpoConfig::default()
        };
        let rep = estimator_expectation_test(&inst.fwm, &inst.idm, (1, 0), &cfg, 100_000, seed).unwrap();
        assert!(rep.relative_error < 0.02, "seed {seed}: {}", rep.relative_error);
    }
}

#[test]
fn mean_std_bias_is_bounded() {
    let inst = random_instance(4, 3, 2, 1.0);
    let cfg = GrpoConfig {
        group_size: 8,
        advantage_mode: AdvantageMode::MeanStd,
        ..GrpoConfig::default()
    };
    let rep = estimator_expectation_test(&inst.fwm, &inst.idm, (0, 1), &cfg, 20_000, 9).unwrap();
    assert!(rep.relative_error.is_finite());
    assert!(rep.mean_norm.is_finite());
}
