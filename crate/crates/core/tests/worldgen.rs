use proptest::prelude::*;
use swirl::worldgen::{build_kernel, sample_dataset, uniform_prior, TransitionDataset, WorldKind, WorldSpec};

fn specs() -> impl Strategy<Value = WorldSpec> {
    prop_oneof![
        (2usize..9, 2usize..5, any::<u64>()).prop_map(|(s, a, seed)| WorldSpec::permutation(s, a, seed)),
        (2usize..9, 2usize..5, 0.0f64..0.9, any::<u64>())
            .prop_filter("A <= S", |(s, a, _, _)| a <= s)
            .prop_map(|(s, a, e, seed)| WorldSpec::shift_noise(s, a, e, seed)),
        (1usize..4, 2usize..4, 0.0f64..0.9, any::<u64>())
            .prop_map(|(r, c, e, seed)| WorldSpec::slip_grid(r, c, e, seed)),
    ]
}

proptest! {
    #[test]
    fn kernel_rows_are_distributions(spec in specs()) {
        let k = build_kernel(&spec).unwrap();
        for x in 0..k.num_states() {
            for z in 0..k.num_actions() {
                let row = k.row(x, z);
                prop_assert!(row.iter().all(|p| *p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permutation_worlds_are_bijective(s in 2usize..12, a in 2usize..5, seed in any::<u64>()) {
        let k = build_kernel(&WorldSpec::permutation(s, a, seed)).unwrap();
        prop_assert!(k.is_deterministic());
        for z in 0..a {
            let mut hit = vec![false; s];
            for x in 0..s {
                let y = k.row(x, z).iter().position(|p| *p == 1.0).unwrap();
                prop_assert!(!hit[y]);
                hit[y] = true;
            }
        }
    }

    #[test]
    fn dataset_file_round_trip(spec in specs(), n in 1usize..200, seed in any::<u64>()) {
        let k = build_kernel(&spec).unwrap();
        let d = sample_dataset(&k, &uniform_prior(k.num_actions()), n, seed).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = TransitionDataset::read_from(&buf[..]).unwrap();
        prop_assert_eq!(back, d);
    }
}

#[test]
fn empirical_transitions_converge_to_kernel() {
    let spec = WorldSpec::shift_noise(4, 3, 0.3, 11);
    let k = build_kernel(&spec).unwrap();
    let d = sample_dataset(&k, &[0.2, 0.3, 0.5], 100_000, 5).unwrap();
    let (s, a) = (4, 3);
    let mut counts = vec![0.0; s * a * s];
    let mut totals = vec![0.0; s * a];
    for (&(x, y), &z) in d.pairs().iter().zip(d.hidden_actions()) {
        counts[(x * a + z) * s + y] += 1.0;
        totals[x * a + z] += 1.0;
    }
    let mut worst = 0.0f64;
    for x in 0..s {
        for z in 0..a {
            for y in 0..s {
                let emp = counts[(x * a + z) * s + y] / totals[x * a + z];
                worst = worst.max((emp - k.prob(x, z, y)).abs());
            }
        }
    }
    assert!(worst < 0.02, "max deviation {worst}");
}

#[test]
fn kind_names_round_trip() {
    for kind in [WorldKind::Permutation, WorldKind::ShiftNoise, WorldKind::SlipGrid] {
        assert_eq!(kind.to_string().parse::<WorldKind>().unwrap(), kind);
    }
    assert!("torus".parse::<WorldKind>().is_err());
}
