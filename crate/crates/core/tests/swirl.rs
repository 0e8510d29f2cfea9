use swirl::analysis::{elbo, fwm_objective, posterior_exact, Evaluator, PairDistribution};
use swirl::metrics::format_row;
use swirl::oracle::random_instance;
use swirl::policy::{init_policy, ConditionalCategorical, InitKind, InitSources, ReferencePolicy, Role};
use swirl::swirl::{
    phase1_step, phase2_step, run, GradientMode, NoopObserver, Observer, PhaseConfig, StepSeed, SwirlConfig,
};
use swirl::worldgen::{build_kernel, sample_dataset, uniform_prior, TransitionDataset, TransitionKernel, WorldSpec};

fn seed(phase: usize, step: usize) -> StepSeed {
    StepSeed {
        master_seed: 3,
        iteration: 1,
        phase,
        step,
    }
}

fn world(n: usize) -> (TransitionKernel, TransitionDataset) {
    let kernel = build_kernel(&WorldSpec::shift_noise(5, 3, 0.2, 1)).unwrap();
    let data = sample_dataset(&kernel, &uniform_prior(3), n, 2).unwrap();
    (kernel, data)
}

fn small_config() -> SwirlConfig {
    let mut c = SwirlConfig {
        max_iterations: 2,
        master_seed: 42,
        emit_every: 5,
        ..SwirlConfig::default()
    };
    c.phase1.steps_per_phase = 15;
    c.phase2.steps_per_phase = 15;
    c.phase1.batch_contexts = 16;
    c.phase2.batch_contexts = 16;
    c
}

fn initial_models(kernel: &TransitionKernel, data: &TransitionDataset) -> (ConditionalCategorical, ConditionalCategorical) {
    let labelled = data.labelled_subset(0.5, 0).unwrap();
    let sources = InitSources {
        kernel: Some(kernel),
        labelled: Some(&labelled),
    };
    let (s, a) = (kernel.num_states(), kernel.num_actions());
    (
        init_policy(Role::Fwm, s, a, InitKind::FromKernelNoisy { corruption: 0.5 }, sources).unwrap(),
        init_policy(Role::Idm, s, a, InitKind::FromLabelledSft { alpha: 1.0 }, sources).unwrap(),
    )
}

fn trace_rows(config: &SwirlConfig, data: &TransitionDataset, kernel: &TransitionKernel) -> Vec<String> {
    let (fwm, idm) = initial_models(kernel, data);
    let out = run(config, data, fwm, idm, None, &mut NoopObserver).unwrap();
    out.trace.records().iter().map(format_row).collect()
}

#[derive(Default)]
struct PhaseLog {
    ends: Vec<(usize, usize, ConditionalCategorical, ConditionalCategorical)>,
}

impl Observer for PhaseLog {
    fn on_phase_end(
        &mut self,
        iteration: usize,
        phase: usize,
        fwm: &ConditionalCategorical,
        idm: &ConditionalCategorical,
        _idm_reference: &ReferencePolicy,
    ) -> swirl::Result<()> {
        self.ends.push((iteration, phase, fwm.clone(), idm.clone()));
        Ok(())
    }
}

#[test]
fn frozen_model_is_untouched_within_each_phase() {
    let (kernel, data) = world(300);
    let (fwm0, idm0) = initial_models(&kernel, &data);
    let mut log = PhaseLog::default();
    run(&small_config(), &data, fwm0.clone(), idm0.clone(), None, &mut log).unwrap();
    let mut prev = (fwm0, idm0);
    for (it, phase, fwm, idm) in &log.ends {
        match phase {
            1 => {
                assert!(idm.same_parameters(&prev.1), "idm moved in phase 1 of iteration {it}");
                assert!(!fwm.same_parameters(&prev.0));
            }
            2 => {
                assert!(fwm.same_parameters(&prev.0), "fwm moved in phase 2 of iteration {it}");
                assert!(!idm.same_parameters(&prev.1));
            }
            _ => unreachable!(),
        }
        prev = (fwm.clone(), idm.clone());
    }
    assert_eq!(log.ends.len(), 4);
}

#[test]
fn runs_are_bit_reproducible() {
    let (kernel, data) = world(300);
    let cfg = small_config();
    assert_eq!(trace_rows(&cfg, &data, &kernel), trace_rows(&cfg, &data, &kernel));
    let mut other = cfg;
    other.master_seed += 1;
    assert_ne!(trace_rows(&cfg, &data, &kernel), trace_rows(&other, &data, &kernel));
}

#[test]
fn hidden_actions_are_never_read() {
    let (kernel, data) = world(300);
    let poisoned = data
        .with_hidden_actions(data.hidden_actions().iter().map(|z| (z + 1) % 3).collect())
        .unwrap();
    let cfg = small_config();
    let (fwm, idm) = initial_models(&kernel, &data);
    let a = run(&cfg, &data, fwm.clone(), idm.clone(), None, &mut NoopObserver).unwrap();
    let b = run(&cfg, &poisoned, fwm, idm, None, &mut NoopObserver).unwrap();
    let rows = |t: &swirl::swirl::TrainingTrace| t.records().iter().map(format_row).collect::<Vec<_>>();
    assert_eq!(rows(&a.trace), rows(&b.trace));
    assert!(a.fwm.same_parameters(&b.fwm) && a.idm.same_parameters(&b.idm));
}

#[test]
fn trace_keys_increase_and_boundaries_carry_analysis() {
    let (kernel, data) = world(300);
    let (fwm, idm) = initial_models(&kernel, &data);
    let eval = Evaluator {
        kernel: kernel.clone(),
        dataset: data.clone(),
    };
    let out = run(&small_config(), &data, fwm, idm, Some(&eval), &mut NoopObserver).unwrap();
    let keys: Vec<_> = out.trace.records().iter().map(|r| r.key()).collect();
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(keys.len(), 1 + 2 * 30);
    for b in out.trace.iteration_boundaries() {
        assert!(b.marginal_loglik.is_some() && b.fwm_accuracy.is_some());
    }
    let plain = out.trace.records().iter().filter(|r| (r.step + 1) % 5 != 0 && r.iteration > 0);
    assert!(plain.into_iter().all(|r| r.exact_cmi.is_none()));
}

#[test]
fn single_direction_runs_are_supported() {
    let (kernel, data) = world(200);
    let mut cfg = small_config();
    cfg.phase2.steps_per_phase = 0;
    let (fwm, idm) = initial_models(&kernel, &data);
    let out = run(&cfg, &data, fwm, idm.clone(), None, &mut NoopObserver).unwrap();
    assert!(out.idm.same_parameters(&idm));
    assert!(out.trace.records().iter().all(|r| r.phase != 2));

    cfg.phase1.steps_per_phase = 0;
    let (fwm, idm) = initial_models(&kernel, &data);
    assert!(run(&cfg, &data, fwm, idm, None, &mut NoopObserver).is_err());
}

#[test]
fn uniform_scorer_leaves_fwm_unchanged() {
    let inst = random_instance(12, 5, 4, 2.0);
    let idm = ConditionalCategorical::uniform(Role::Idm, inst.fwm.num_states(), inst.fwm.num_actions());
    for mode in [GradientMode::Sampled, GradientMode::Exact] {
        let mut cfg = PhaseConfig::forward_default();
        cfg.gradient_mode = mode;
        let mut fwm = inst.fwm.clone();
        for step in 0..20 {
            phase1_step(&mut fwm, &idm, &inst.pairs, &cfg, None, seed(1, step)).unwrap();
        }
        assert!(fwm.same_parameters(&inst.fwm), "{mode}");
    }
}

#[test]
fn sharp_scorer_pulls_fwm_towards_its_target() {
    // S = 3, A = 2. The IDM puts all mass on z = 0 only for (x=0, y^=2).
    let (s, a) = (3, 2);
    let mut q = vec![0.5; s * s * a];
    for x in 0..s {
        for y in 0..s {
            let row = &mut q[(x * s + y) * a..(x * s + y + 1) * a];
            if x == 0 && y == 2 {
                row.copy_from_slice(&[1.0, 0.0]);
            } else {
                row.copy_from_slice(&[0.0, 1.0]);
            }
        }
    }
    let idm = ConditionalCategorical::from_probabilities(Role::Idm, (s, s), a, &q).unwrap();
    let fwm = ConditionalCategorical::uniform(Role::Fwm, s, a);
    let mut cfg = PhaseConfig::forward_default();
    cfg.batch_contexts = 1;
    for mode in [GradientMode::Sampled, GradientMode::Exact] {
        cfg.gradient_mode = mode;
        let mut f = fwm.clone();
        phase1_step(&mut f, &idm, &[(0, 2)], &cfg, None, seed(1, 0)).unwrap();
        let before = fwm.probabilities((0, 0)).unwrap()[2];
        let after = f.probabilities((0, 0)).unwrap()[2];
        assert!(after > before, "{mode}: {before} -> {after}");
    }
}

#[test]
fn exact_kernel_fwm_teaches_the_idm() {
    let kernel = build_kernel(&WorldSpec::permutation(3, 2, 7)).unwrap();
    let sources = InitSources {
        kernel: Some(&kernel),
        labelled: None,
    };
    let fwm = init_policy(Role::Fwm, 3, 2, InitKind::FromKernelNoisy { corruption: 0.0 }, sources).unwrap();
    let data = sample_dataset(&kernel, &uniform_prior(2), 200, 1).unwrap();
    let mut idm = ConditionalCategorical::uniform(Role::Idm, 3, 2);
    let mut cfg = PhaseConfig::inverse_default();
    cfg.gradient_mode = GradientMode::Exact;
    cfg.grpo.kl_coeff = 0.0;
    for step in 0..50 {
        phase2_step(&mut idm, &fwm, None, data.pairs(), &cfg, seed(2, step)).unwrap();
    }
    for (&(x, y), &z) in data.pairs().iter().zip(data.hidden_actions()) {
        // Both actions may lead to the same y; then either is correct.
        if kernel.prob(x, 1 - z, y) == 1.0 {
            continue;
        }
        let p = idm.probabilities((x, y)).unwrap();
        assert!(p[z] > p[1 - z], "context ({x}, {y})");
    }
}

#[test]
fn inverse_phase_converges_to_tilted_posterior() {
    let inst = random_instance(21, 4, 3, 1.5);
    let data = PairDistribution::from_pairs(&inst.pairs, inst.fwm.num_states()).unwrap();
    let reference = ReferencePolicy::StateBelief {
        snapshot: inst.idm.clone(),
        prior: inst.prior.clone(),
    };
    let mut cfg = PhaseConfig::inverse_default();
    cfg.gradient_mode = GradientMode::Exact;
    cfg.grpo.kl_coeff = 1.0;
    cfg.grpo.learning_rate = 2.0;
    cfg.batch_contexts = 64;
    let mut idm = inst.idm.clone();
    for step in 0..3000 {
        phase2_step(&mut idm, &inst.fwm, Some(&reference), &inst.pairs, &cfg, seed(2, step)).unwrap();
    }
    let mut worst = 0.0f64;
    for (x, y, _) in data.support() {
        let target = posterior_exact(&inst.fwm, &inst.prior, x, y).unwrap();
        let q = idm.probabilities((x, y)).unwrap();
        for (a, b) in q.iter().zip(&target) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-3, "max deviation {worst}");
}

#[test]
fn exact_phases_are_monotone() {
    for s in 0..5u64 {
        let inst = random_instance(100 + s, 5, 4, 2.0);
        let data = PairDistribution::from_pairs(&inst.pairs, inst.fwm.num_states()).unwrap();
        let reference = ReferencePolicy::StateBelief {
            snapshot: inst.idm.clone(),
            prior: inst.prior.clone(),
        };
        let mut p2 = PhaseConfig::inverse_default();
        p2.gradient_mode = GradientMode::Exact;
        p2.grpo.kl_coeff = 1.0;
        p2.grpo.learning_rate = 1e-2;
        let mut idm = inst.idm.clone();
        let mut prev = elbo(&inst.fwm, &idm, &inst.prior, &data).unwrap();
        for step in 0..200 {
            phase2_step(&mut idm, &inst.fwm, Some(&reference), &inst.pairs, &p2, seed(2, step)).unwrap();
            let now = elbo(&inst.fwm, &idm, &inst.prior, &data).unwrap();
            assert!(now >= prev - 1e-9, "instance {s} step {step}: {prev} -> {now}");
            prev = now;
        }

        let mut p1 = PhaseConfig::forward_default();
        p1.gradient_mode = GradientMode::Exact;
        p1.grpo.learning_rate = 1e-3;
        let mut fwm = inst.fwm.clone();
        let mut prev = fwm_objective(&fwm, &inst.idm, &data).unwrap();
        for step in 0..200 {
            phase1_step(&mut fwm, &inst.idm, &inst.pairs, &p1, None, seed(1, step)).unwrap();
            let now = fwm_objective(&fwm, &inst.idm, &data).unwrap();
            assert!(now >= prev - 1e-9, "instance {s} step {step}: {prev} -> {now}");
            prev = now;
        }
    }
}

#[test]
fn swapped_roles_are_rejected() {
    let inst = random_instance(3, 4, 3, 1.0);
    let mut idm = inst.idm.clone();
    let cfg = PhaseConfig::forward_default();
    assert!(phase1_step(&mut idm, &inst.idm, &inst.pairs, &cfg, None, seed(1, 0)).is_err());
    let p2 = PhaseConfig::inverse_default();
    let mut idm = inst.idm.clone();
    assert!(phase2_step(&mut idm, &inst.fwm, None, &inst.pairs, &p2, seed(2, 0)).is_err());
    let mut frozen = inst.fwm.clone();
    frozen.freeze();
    assert!(phase1_step(&mut frozen, &inst.idm, &inst.pairs, &cfg, None, seed(1, 0)).is_err());
}
