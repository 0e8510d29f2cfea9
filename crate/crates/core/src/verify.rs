//! The oracle suite: each check measures one error against one tolerance.

use std::fmt;

use crate::analysis::{
    elbo, empirical_belief, exact_cmi, exact_cmi_with_belief, fwm_objective, idm_objective, marginal_loglik,
    mean_posterior_kl, posterior_exact, variational_cmi_bound, variational_cmi_bound_with, PairDistribution,
};
use crate::error::Result;
use crate::grpo::{AdvantageMode, GrpoConfig};
use crate::oracle::{
    estimator_expectation_test, exact_phase1_gradient, exact_phase2_gradient, finite_difference, norm,
    random_instance, relative_error, RandomInstance,
};
use crate::policy::{kl_gradient, kl_probs, softmax, ConditionalCategorical, ReferencePolicy, Role, StatePrior};
use crate::swirl::{phase1_step, phase2_step, GradientMode, PhaseConfig, StepSeed};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    /// Passes when `measured < tolerance`.
    pub fn below(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        CheckResult {
            name: name.into(),
            measured,
            tolerance,
            pass: measured < tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} measured={:.3e} tolerance={:.1e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub bound_instances: usize,
    pub gradient_instances: usize,
    pub trials: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            bound_instances: 100,
            gradient_instances: 20,
            trials: 100_000,
        }
    }
}

fn instances(seed: u64, count: usize, max_states: usize, max_actions: usize) -> Vec<RandomInstance> {
    (0..count as u64)
        .map(|i| random_instance(seed.wrapping_mul(1_000_003).wrapping_add(i), max_states, max_actions, 2.0))
        .collect()
}

/// IDM whose rows are the exact posterior under `prior`.
pub fn posterior_idm(fwm: &ConditionalCategorical, prior: &StatePrior) -> Result<ConditionalCategorical> {
    let s = fwm.num_states();
    let a = fwm.num_actions();
    let mut probs = Vec::with_capacity(s * s * a);
    for x in 0..s {
        for y in 0..s {
            probs.extend(posterior_exact(fwm, prior, x, y)?);
        }
    }
    ConditionalCategorical::from_probabilities(Role::Idm, (s, s), a, &probs)
}

/// Scorer `Q(z | x, y^) ∝ belief(z | x) P(y^ | x, z)`, the optimum of the
/// CMI bound for a fixed belief. States without a belief get a uniform row.
pub fn bayes_scorer(fwm: &ConditionalCategorical, belief: &StatePrior) -> Result<ConditionalCategorical> {
    let s = fwm.num_states();
    let a = fwm.num_actions();
    let filled = StatePrior::new(
        (0..s)
            .map(|x| Some(belief.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0 / a as f64; a])))
            .collect(),
    );
    posterior_idm(fwm, &filled)
}

/// Bound inequalities and their tightness at the optimal inverse model.
pub fn bound_checks(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut cmi_violation = f64::NEG_INFINITY;
    let mut elbo_violation = f64::NEG_INFINITY;
    let mut cmi_tight = 0.0f64;
    let mut elbo_tight = 0.0f64;
    for inst in instances(cfg.seed, cfg.bound_instances, 6, 4) {
        let data = PairDistribution::from_pairs(&inst.pairs, inst.fwm.num_states())?;
        let cmi = exact_cmi(&inst.fwm, &inst.idm, &data)?;
        cmi_violation = cmi_violation.max(variational_cmi_bound(&inst.fwm, &inst.idm, &data)? - cmi);
        let ll = marginal_loglik(&inst.fwm, &inst.prior, &data)?;
        elbo_violation = elbo_violation.max(elbo(&inst.fwm, &inst.idm, &inst.prior, &data)? - ll);

        let belief = empirical_belief(&inst.idm, &data)?;
        let scorer = bayes_scorer(&inst.fwm, &belief)?;
        let bound = variational_cmi_bound_with(&inst.fwm, &scorer, &belief, &data)?;
        cmi_tight = cmi_tight.max((exact_cmi_with_belief(&inst.fwm, &belief, &data)? - bound).abs());
        let post = posterior_idm(&inst.fwm, &inst.prior)?;
        elbo_tight = elbo_tight.max((ll - elbo(&inst.fwm, &post, &inst.prior, &data)?).abs());
    }
    Ok(vec![
        CheckResult::below("cmi_bound_below_exact_cmi", cmi_violation, 1e-9),
        CheckResult::below("elbo_below_marginal_loglik", elbo_violation, 1e-9),
        CheckResult::below("cmi_bound_tight_at_bayes_scorer", cmi_tight, 1e-9),
        CheckResult::below("elbo_tight_at_exact_posterior", elbo_tight, 1e-9),
    ])
}

/// `marginal_loglik - elbo` against the mean KL to the exact posterior.
pub fn gap_identity_check(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut worst = 0.0f64;
    for inst in instances(cfg.seed, cfg.bound_instances, 6, 4) {
        let data = PairDistribution::from_pairs(&inst.pairs, inst.fwm.num_states())?;
        let gap = marginal_loglik(&inst.fwm, &inst.prior, &data)? - elbo(&inst.fwm, &inst.idm, &inst.prior, &data)?;
        let kl = mean_posterior_kl(&inst.fwm, &inst.idm, &inst.prior, &data)?;
        worst = worst.max((gap - kl).abs());
    }
    Ok(vec![CheckResult::below("elbo_gap_equals_posterior_kl", worst, 1e-9)])
}

const FD_STEP: f64 = 1e-5;

fn with_logits(model: &ConditionalCategorical, logits: &[f64]) -> ConditionalCategorical {
    ConditionalCategorical::from_logits(model.role(), model.context_dims(), model.outcome_dim(), logits.to_vec())
        .expect("same shape")
}

/// Analytic gradients against central finite differences.
pub fn gradient_checks(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut p1 = 0.0f64;
    let mut p2 = 0.0f64;
    let mut score = 0.0f64;
    let mut klg = 0.0f64;
    for (i, inst) in instances(cfg.seed ^ 0x9e37, cfg.gradient_instances, 5, 4).iter().enumerate() {
        let data = PairDistribution::from_pairs(&inst.pairs, inst.fwm.num_states())?;

        let exact = exact_phase1_gradient(&inst.fwm, &inst.idm, &inst.pairs)?;
        let fd = finite_difference(
            |t| fwm_objective(&with_logits(&inst.fwm, t), &inst.idm, &data).expect("objective"),
            inst.fwm.logits(),
            FD_STEP,
        )?;
        p1 = p1.max(relative_error(&exact, &fd));

        let beta = [0.0, 0.1, 1.0][i % 3];
        let exact = exact_phase2_gradient(&inst.idm, &inst.fwm, &inst.prior, beta, &inst.pairs)?;
        let fd = finite_difference(
            |t| idm_objective(&with_logits(&inst.idm, t), &inst.fwm, &inst.prior, beta, &data).expect("objective"),
            inst.idm.logits(),
            FD_STEP,
        )?;
        p2 = p2.max(relative_error(&exact, &fd));

        let ctx = inst.pairs[0];
        let outcome = i % inst.idm.outcome_dim();
        let analytic = inst.idm.grad_log_prob(ctx, outcome)?;
        let row = inst.idm.row(ctx)?.to_vec();
        let fd = finite_difference(|t| softmax(t)[outcome].ln(), &row, FD_STEP)?;
        score = score.max(relative_error(&analytic, &fd));

        let reference = inst.prior.require(ctx.0)?;
        let (_, analytic) = kl_gradient(&row, reference);
        let fd = finite_difference(|t| kl_probs(&softmax(t), reference), &row, FD_STEP)?;
        klg = klg.max(relative_error(&analytic, &fd));
    }
    Ok(vec![
        CheckResult::below("phase1_gradient_vs_finite_difference", p1, 1e-5),
        CheckResult::below("phase2_gradient_vs_finite_difference", p2, 1e-5),
        CheckResult::below("grad_log_prob_vs_finite_difference", score, 1e-5),
        CheckResult::below("kl_gradient_vs_finite_difference", klg, 1e-5),
    ])
}

/// Averaged leave-one-out GRPO direction against the exact gradient.
pub fn estimator_checks(cfg: &SuiteConfig, group_sizes: &[usize]) -> Result<Vec<CheckResult>> {
    let inst = random_instance(cfg.seed.wrapping_add(17), 3, 2, 1.5);
    group_sizes
        .iter()
        .map(|&g| {
            let grpo = GrpoConfig {
                group_size: g,
                advantage_mode: AdvantageMode::LeaveOneOut,
                ..GrpoConfig::default()
            };
            let rep = estimator_expectation_test(&inst.fwm, &inst.idm, (0, 1), &grpo, cfg.trials, cfg.seed)?;
            Ok(CheckResult::below(
                format!("leave_one_out_expectation_g{g}"),
                rep.relative_error,
                0.02,
            ))
        })
        .collect()
}

/// Forward model whose rows ignore the action: every `(x, z)` row is the `(x, 0)` row.
pub fn action_blind(fwm: &ConditionalCategorical) -> Result<ConditionalCategorical> {
    let s = fwm.num_states();
    let a = fwm.num_actions();
    let mut logits = Vec::with_capacity(s * a * s);
    for x in 0..s {
        let row = fwm.row((x, 0))?;
        for _ in 0..a {
            logits.extend_from_slice(row);
        }
    }
    ConditionalCategorical::from_logits(Role::Fwm, (s, a), s, logits)
}

/// Zero gradients at the closed-form optima.
pub fn stationarity_checks(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut tilted = 0.0f64;
    let mut blind_fixed_point = 0.0f64;
    let mut blind_reward = 0.0f64;
    for inst in instances(cfg.seed ^ 0x51, cfg.gradient_instances, 6, 4) {
        let post = posterior_idm(&inst.fwm, &inst.prior)?;
        let g = exact_phase2_gradient(&post, &inst.fwm, &inst.prior, 1.0, &inst.pairs)?;
        tilted = tilted.max(norm(&g));

        // An action-blind forward model's Bayes scorer ignores y^, so the
        // forward-phase reward is constant within every group.
        let blind = action_blind(&inst.fwm)?;
        let scorer = bayes_scorer(&blind, &inst.prior)?;
        let g = exact_phase1_gradient(&blind, &scorer, &inst.pairs)?;
        blind_fixed_point = blind_fixed_point.max(norm(&g));

        let g = exact_phase2_gradient(&inst.idm, &blind, &inst.prior, 0.0, &inst.pairs)?;
        blind_reward = blind_reward.max(norm(&g));
    }
    Ok(vec![
        CheckResult::below("phase2_stationary_at_tilted_posterior", tilted, 1e-8),
        CheckResult::below("phase1_stationary_for_action_blind_fwm", blind_fixed_point, 1e-12),
        CheckResult::below("phase2_zero_for_action_blind_fwm_beta0", blind_reward, 1e-12),
    ])
}

fn step_seed(master_seed: u64, phase: usize, step: usize) -> StepSeed {
    StepSeed {
        master_seed,
        iteration: 1,
        phase,
        step,
    }
}

/// Largest per-step decrease of the phase objectives under exact-mode ascent.
pub fn monotonicity_checks(cfg: &SuiteConfig, steps: usize) -> Result<Vec<CheckResult>> {
    let inst = random_instance(cfg.seed.wrapping_add(29), 5, 3, 1.5);
    let data = PairDistribution::from_pairs(&inst.pairs, inst.fwm.num_states())?;
    let reference = ReferencePolicy::StateBelief {
        snapshot: inst.idm.clone(),
        prior: inst.prior.clone(),
    };

    let mut phase2 = PhaseConfig::inverse_default();
    phase2.gradient_mode = GradientMode::Exact;
    phase2.grpo.kl_coeff = 1.0;
    phase2.grpo.learning_rate = 1e-2;
    phase2.batch_contexts = 16;
    let mut idm = inst.idm.clone();
    let mut prev = elbo(&inst.fwm, &idm, &inst.prior, &data)?;
    let mut worst2 = f64::NEG_INFINITY;
    for step in 0..steps {
        phase2_step(&mut idm, &inst.fwm, Some(&reference), &inst.pairs, &phase2, step_seed(cfg.seed, 2, step))?;
        let now = elbo(&inst.fwm, &idm, &inst.prior, &data)?;
        worst2 = worst2.max(prev - now);
        prev = now;
    }

    let mut phase1 = PhaseConfig::forward_default();
    phase1.gradient_mode = GradientMode::Exact;
    phase1.grpo.learning_rate = 1e-3;
    phase1.batch_contexts = 16;
    let mut fwm = inst.fwm.clone();
    let mut prev = fwm_objective(&fwm, &inst.idm, &data)?;
    let mut worst1 = f64::NEG_INFINITY;
    for step in 0..steps {
        phase1_step(&mut fwm, &inst.idm, &inst.pairs, &phase1, None, step_seed(cfg.seed, 1, step))?;
        let now = fwm_objective(&fwm, &inst.idm, &data)?;
        worst1 = worst1.max(prev - now);
        prev = now;
    }
    Ok(vec![
        CheckResult::below("phase2_elbo_max_step_decrease", worst2, 1e-9),
        CheckResult::below("phase1_objective_max_step_decrease", worst1, 1e-9),
    ])
}

/// A uniform scorer must leave the forward model bit-identical.
pub fn degenerate_scorer_checks(cfg: &SuiteConfig, steps: usize) -> Result<Vec<CheckResult>> {
    let inst = random_instance(cfg.seed.wrapping_add(41), 5, 4, 2.0);
    let idm = ConditionalCategorical::uniform(Role::Idm, inst.fwm.num_states(), inst.fwm.num_actions());
    [GradientMode::Sampled, GradientMode::Exact]
        .into_iter()
        .map(|mode| {
            let mut phase1 = PhaseConfig::forward_default();
            phase1.gradient_mode = mode;
            let mut fwm = inst.fwm.clone();
            for step in 0..steps {
                phase1_step(&mut fwm, &idm, &inst.pairs, &phase1, None, step_seed(cfg.seed, 1, step))?;
            }
            let changed = fwm
                .logits()
                .iter()
                .zip(inst.fwm.logits())
                .filter(|(a, b)| a.to_bits() != b.to_bits())
                .count();
            Ok(CheckResult::below(
                format!("uniform_scorer_noop_{mode}"),
                changed as f64,
                0.5,
            ))
        })
        .collect()
}

/// Every check, in a fixed order.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckResult>> {
    let mut out = bound_checks(cfg)?;
    out.extend(gap_identity_check(cfg)?);
    out.extend(gradient_checks(cfg)?);
    out.extend(estimator_checks(cfg, &[8, 64])?);
    out.extend(stationarity_checks(cfg)?);
    out.extend(monotonicity_checks(cfg, 200)?);
    out.extend(degenerate_scorer_checks(cfg, 200)?);
    Ok(out)
}
