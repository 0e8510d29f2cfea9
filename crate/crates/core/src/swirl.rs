//! The alternating training loop.
//!
//! Each iteration snapshots the reference policies, then runs
//!
//! - phase 1: the FWM is the policy. For a data pair `(x, y)` a latent
//!   action `z ~ Q(. | x, y)` is drawn from the frozen IDM, `G` next states
//!   are rolled out from `P(. | x, z)` and each is rewarded with
//!   `log Q(z | x, y^)`.
//! - phase 2: the IDM is the policy. `G` actions are drawn from `Q(. | x, y)`
//!   and rewarded with `log P(y | x, z)` from the frozen FWM, with a KL
//!   penalty towards the iteration's reference prior.
//!
//! In [`GradientMode::Exact`] the inner expectation over rollouts is
//! enumerated instead of sampled. The phase-1 latent action is still drawn
//! once per pair and step.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::analysis::{
    analyse, empirical_belief, fwm_objective, idm_objective, Evaluator, MetricsRecord,
    PairDistribution,
};
use crate::error::{Result, SwirlError};
use crate::grpo::{
    apply_update, compute_advantages, policy_gradient_step, GrpoConfig, RolloutGroup,
    RowGradients, StepStats,
};
use crate::policy::{ConditionalCategorical, ReferencePolicy, Role};
use crate::rng::{self, Purpose};
use crate::worldgen::TransitionDataset;
use crate::{Context, StateId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Sampled,
    Exact,
}

impl fmt::Display for GradientMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradientMode::Sampled => "sampled",
            GradientMode::Exact => "exact",
        })
    }
}

impl FromStr for GradientMode {
    type Err = SwirlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(GradientMode::Sampled),
            "exact" => Ok(GradientMode::Exact),
            other => Err(SwirlError::InvalidConfig(format!(
                "unknown gradient mode `{other}` (expected sampled or exact)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub grpo: GrpoConfig,
    /// Zero skips the phase; at most one phase may be skipped.
    pub steps_per_phase: usize,
    pub batch_contexts: usize,
    pub gradient_mode: GradientMode,
}

impl PhaseConfig {
    pub fn forward_default() -> Self {
        PhaseConfig {
            grpo: GrpoConfig::default(),
            steps_per_phase: 200,
            batch_contexts: 64,
            gradient_mode: GradientMode::Sampled,
        }
    }

    pub fn inverse_default() -> Self {
        PhaseConfig {
            grpo: GrpoConfig {
                kl_coeff: 0.1,
                ..GrpoConfig::default()
            },
            ..Self::forward_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        if self.batch_contexts == 0 {
            return Err(SwirlError::InvalidConfig("batch_contexts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwirlConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub master_seed: u64,
    /// Full analysis is recorded every `emit_every` steps and at phase ends.
    pub emit_every: usize,
}

impl Default for SwirlConfig {
    fn default() -> Self {
        SwirlConfig {
            phase1: PhaseConfig::forward_default(),
            phase2: PhaseConfig::inverse_default(),
            max_iterations: 3,
            convergence_tol: 1e-4,
            master_seed: 0,
            emit_every: 10,
        }
    }
}

impl SwirlConfig {
    pub fn validate(&self) -> Result<()> {
        self.phase1.validate()?;
        self.phase2.validate()?;
        if self.phase1.steps_per_phase == 0 && self.phase2.steps_per_phase == 0 {
            return Err(SwirlError::InvalidConfig(
                "steps_per_phase must be >= 1 (only one phase may be disabled)".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(SwirlError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(SwirlError::InvalidConfig("convergence_tol must be > 0".into()));
        }
        if self.emit_every == 0 {
            return Err(SwirlError::InvalidConfig("emit_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Identifies one training step; all of its random streams derive from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepSeed {
    pub master_seed: u64,
    pub iteration: usize,
    pub phase: usize,
    pub step: usize,
}

impl StepSeed {
    fn stream(&self, purpose: Purpose, group: usize) -> rand_chacha::ChaCha8Rng {
        rng::stream(self.master_seed, purpose, self.iteration, self.phase, self.step, group)
    }
}

fn sample_batch(pairs: &[(StateId, StateId)], size: usize, seed: &StepSeed) -> Result<Vec<(StateId, StateId)>> {
    if pairs.is_empty() {
        return Err(SwirlError::EmptyDataset);
    }
    let mut r = seed.stream(Purpose::Batch, 0);
    Ok((0..size).map(|_| pairs[r.gen_range(0..pairs.len())]).collect())
}

fn check_roles(policy: &ConditionalCategorical, policy_role: Role, scorer: &ConditionalCategorical) -> Result<()> {
    let scorer_role = match policy_role {
        Role::Fwm => Role::Idm,
        Role::Idm => Role::Fwm,
    };
    if policy.role() != policy_role || scorer.role() != scorer_role {
        return Err(SwirlError::ShapeMismatch(format!(
            "expected {} policy with {} scorer, got {} and {}",
            policy_role.as_str(),
            scorer_role.as_str(),
            policy.role().as_str(),
            scorer.role().as_str()
        )));
    }
    if policy.num_states() != scorer.num_states() || policy.num_actions() != scorer.num_actions() {
        return Err(SwirlError::ShapeMismatch("policy and scorer disagree on world size".into()));
    }
    Ok(())
}

/// Exact score-function gradient of `E_{k~p}[R_k]` w.r.t. the row logits:
/// `p_k (R_k - E_p R)`. Returns `(gradient, E_p R, E_p R^2)`.
fn exact_row_gradient(probs: &[f64], rewards: &[f64]) -> (Vec<f64>, f64, f64) {
    // Centred on the first reward so a constant reward gives an exact zero.
    let base = rewards[0];
    let shift: f64 = probs.iter().zip(rewards).map(|(p, r)| p * (r - base)).sum();
    let mean = base + shift;
    let second: f64 = probs.iter().zip(rewards).map(|(p, r)| p * r * r).sum();
    let grad = probs
        .iter()
        .zip(rewards)
        .map(|(p, r)| p * ((r - base) - shift))
        .collect();
    (grad, mean, second)
}

fn exact_step(
    policy: &mut ConditionalCategorical,
    rows: Vec<(Context, Vec<f64>)>,
    config: &PhaseConfig,
    reference: Option<&ReferencePolicy>,
) -> Result<StepStats> {
    let weight = 1.0 / rows.len() as f64;
    let mut grad = RowGradients::new();
    let mut contexts = Vec::with_capacity(rows.len());
    let (mut m1, mut m2) = (0.0, 0.0);
    for (ctx, rewards) in rows {
        let (g, mean, second) = exact_row_gradient(&policy.probabilities(ctx)?, &rewards);
        grad.add(ctx, weight, &g);
        m1 += weight * mean;
        m2 += weight * second;
        contexts.push(ctx);
    }
    let (mean_kl, grad_norm) = apply_update(policy, grad, &contexts, &config.grpo, reference)?;
    Ok(StepStats {
        reward_mean: m1,
        reward_std: (m2 - m1 * m1).max(0.0).sqrt(),
        mean_kl,
        grad_norm,
    })
}

/// One forward-phase step: the FWM is updated against rewards from the
/// frozen IDM.
pub fn phase1_step(
    fwm: &mut ConditionalCategorical,
    idm: &ConditionalCategorical,
    pairs: &[(StateId, StateId)],
    config: &PhaseConfig,
    reference: Option<&ReferencePolicy>,
    seed: StepSeed,
) -> Result<StepStats> {
    check_roles(fwm, Role::Fwm, idm)?;
    let batch = sample_batch(pairs, config.batch_contexts, &seed)?;
    let num_states = fwm.num_states();
    match config.gradient_mode {
        GradientMode::Sampled => {
            let g = config.grpo.group_size;
            let mut groups = Vec::with_capacity(batch.len());
            let mut advantages = Vec::with_capacity(batch.len());
            for (b, &(x, y)) in batch.iter().enumerate() {
                let z = idm.sample((x, y), &mut seed.stream(Purpose::Latent, b))?;
                let rollouts = fwm.sample_group((x, z), g, &mut seed.stream(Purpose::Rollout, b))?;
                let rewards = rollouts
                    .iter()
                    .map(|&yh| idm.log_prob((x, yh), z))
                    .collect::<Result<Vec<f64>>>()?;
                advantages.push(compute_advantages(
                    &rewards,
                    config.grpo.advantage_mode,
                    config.grpo.std_epsilon,
                )?);
                groups.push(RolloutGroup::new((x, z), rollouts, rewards)?);
            }
            policy_gradient_step(fwm, &groups, &advantages, &config.grpo, reference)
        }
        GradientMode::Exact => {
            let mut rows = Vec::with_capacity(batch.len());
            for (b, &(x, y)) in batch.iter().enumerate() {
                let z = idm.sample((x, y), &mut seed.stream(Purpose::Latent, b))?;
                let rewards = (0..num_states)
                    .map(|yh| idm.log_prob((x, yh), z))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(((x, z), rewards));
            }
            exact_step(fwm, rows, config, reference)
        }
    }
}

/// One inverse-phase step: the IDM is updated against rewards from the
/// frozen FWM, regularised towards `reference`.
pub fn phase2_step(
    idm: &mut ConditionalCategorical,
    fwm: &ConditionalCategorical,
    reference: Option<&ReferencePolicy>,
    pairs: &[(StateId, StateId)],
    config: &PhaseConfig,
    seed: StepSeed,
) -> Result<StepStats> {
    check_roles(idm, Role::Idm, fwm)?;
    if config.grpo.kl_coeff > 0.0 && reference.is_none() {
        return Err(SwirlError::MissingReference);
    }
    let batch = sample_batch(pairs, config.batch_contexts, &seed)?;
    let num_actions = idm.num_actions();
    match config.gradient_mode {
        GradientMode::Sampled => {
            let g = config.grpo.group_size;
            let mut groups = Vec::with_capacity(batch.len());
            let mut advantages = Vec::with_capacity(batch.len());
            for (b, &(x, y)) in batch.iter().enumerate() {
                let actions = idm.sample_group((x, y), g, &mut seed.stream(Purpose::Rollout, b))?;
                let rewards = actions
                    .iter()
                    .map(|&z| fwm.log_prob((x, z), y))
                    .collect::<Result<Vec<f64>>>()?;
                advantages.push(compute_advantages(
                    &rewards,
                    config.grpo.advantage_mode,
                    config.grpo.std_epsilon,
                )?);
                groups.push(RolloutGroup::new((x, y), actions, rewards)?);
            }
            policy_gradient_step(idm, &groups, &advantages, &config.grpo, reference)
        }
        GradientMode::Exact => {
            let mut rows = Vec::with_capacity(batch.len());
            for &(x, y) in &batch {
                let rewards = (0..num_actions)
                    .map(|z| fwm.log_prob((x, z), y))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(((x, y), rewards));
            }
            exact_step(idm, rows, config, reference)
        }
    }
}

/// Inverse-phase reference: the IDM snapshot and its empirical belief
/// `pi_ref(z | x)` over the data.
pub fn idm_reference(idm: &ConditionalCategorical, data: &PairDistribution) -> Result<ReferencePolicy> {
    let mut snapshot = idm.clone();
    snapshot.freeze();
    Ok(ReferencePolicy::StateBelief {
        prior: empirical_belief(idm, data)?,
        snapshot,
    })
}

/// Ordered `(iteration, phase, step)` metric rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    records: Vec<MetricsRecord>,
}

impl TrainingTrace {
    pub fn push(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.key() <= last.key() {
                return Err(SwirlError::InvalidConfig(format!(
                    "trace key {:?} does not follow {:?}",
                    record.key(),
                    last.key()
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// Last record of each iteration (the initial record counts as iteration 0).
    pub fn iteration_boundaries(&self) -> Vec<&MetricsRecord> {
        let mut out: Vec<&MetricsRecord> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some(last) if last.iteration == r.iteration => *last = r,
                _ => out.push(r),
            }
        }
        out
    }
}

/// Hooks for streaming output while training.
pub trait Observer {
    fn on_record(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    fn on_phase_end(
        &mut self,
        _iteration: usize,
        _phase: usize,
        _fwm: &ConditionalCategorical,
        _idm: &ConditionalCategorical,
        _idm_reference: &ReferencePolicy,
    ) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl Observer for NoopObserver {}

#[derive(Debug, Clone)]
pub struct SwirlOutcome {
    pub fwm: ConditionalCategorical,
    pub idm: ConditionalCategorical,
    /// Reference of the last iteration run; the trace's likelihood columns
    /// use its prior.
    pub idm_reference: ReferencePolicy,
    pub trace: TrainingTrace,
    pub iterations_run: usize,
    pub converged: bool,
}

fn relative_change(start: f64, end: f64) -> f64 {
    (end - start).abs() / start.abs().max(1e-12)
}

struct Recorder<'a> {
    data: &'a PairDistribution,
    evaluator: Option<&'a Evaluator>,
    trace: TrainingTrace,
    observer: &'a mut dyn Observer,
}

impl Recorder<'_> {
    fn emit(
        &mut self,
        mut record: MetricsRecord,
        full: bool,
        fwm: &ConditionalCategorical,
        idm: &ConditionalCategorical,
        reference: &ReferencePolicy,
    ) -> Result<()> {
        if full {
            let prior = reference
                .state_prior()
                .ok_or_else(|| SwirlError::InvalidConfig("inverse reference needs a state prior".into()))?;
            record = record.with_analysis(&analyse(fwm, idm, prior, self.data, self.evaluator)?);
        }
        self.observer.on_record(&record)?;
        self.trace.push(record)
    }
}

/// Runs the alternating loop from the given initial policies.
///
/// Only the observable pairs of `dataset` are used; accuracy columns come
/// from `evaluator` when one is supplied.
pub fn run(
    config: &SwirlConfig,
    dataset: &TransitionDataset,
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    evaluator: Option<&Evaluator>,
    observer: &mut dyn Observer,
) -> Result<SwirlOutcome> {
    run_from(config, dataset, fwm, idm, 1, evaluator, observer)
}

/// Continues a run at `first_iteration` from the models saved at the end of
/// the previous iteration. Random streams depend only on the step identity,
/// so the remaining records match those of an uninterrupted run. The initial
/// record is emitted only when starting at iteration 1.
pub fn run_from(
    config: &SwirlConfig,
    dataset: &TransitionDataset,
    fwm: ConditionalCategorical,
    idm: ConditionalCategorical,
    first_iteration: usize,
    evaluator: Option<&Evaluator>,
    observer: &mut dyn Observer,
) -> Result<SwirlOutcome> {
    config.validate()?;
    if first_iteration == 0 || first_iteration > config.max_iterations {
        return Err(SwirlError::InvalidConfig(format!(
            "first iteration {first_iteration} outside 1..={}",
            config.max_iterations
        )));
    }
    let (mut fwm, mut idm) = (fwm, idm);
    check_roles(&fwm, Role::Fwm, &idm)?;
    fwm.unfreeze();
    idm.unfreeze();
    let pairs = dataset.pairs();
    let data = PairDistribution::from_pairs(pairs, fwm.num_states())?;
    let mut rec = Recorder {
        data: &data,
        evaluator,
        trace: TrainingTrace::default(),
        observer,
    };

    let mut idm_ref = idm_reference(&idm, &data)?;
    if first_iteration == 1 {
        rec.emit(MetricsRecord::default(), true, &fwm, &idm, &idm_ref)?;
    }

    let mut converged = false;
    let mut iterations_run = first_iteration - 1;
    for iteration in first_iteration..=config.max_iterations {
        iterations_run = iteration;
        idm_ref = idm_reference(&idm, &data)?;
        let fwm_ref = fwm.snapshot();

        let mut change1 = 0.0;
        let p1 = &config.phase1;
        if p1.steps_per_phase > 0 {
            idm.freeze();
            let start = fwm_objective(&fwm, &idm, &data)?;
            let mut objective = start;
            for step in 0..p1.steps_per_phase {
                let seed = StepSeed {
                    master_seed: config.master_seed,
                    iteration,
                    phase: 1,
                    step,
                };
                let stats = phase1_step(&mut fwm, &idm, pairs, p1, Some(&fwm_ref), seed)?;
                objective = fwm_objective(&fwm, &idm, &data)?;
                let full = (step + 1) % config.emit_every == 0 || step + 1 == p1.steps_per_phase;
                rec.emit(step_record(iteration, 1, step, objective, &stats), full, &fwm, &idm, &idm_ref)?;
            }
            idm.unfreeze();
            change1 = relative_change(start, objective);
            rec.observer.on_phase_end(iteration, 1, &fwm, &idm, &idm_ref)?;
        }

        let mut change2 = 0.0;
        let p2 = &config.phase2;
        if p2.steps_per_phase > 0 {
            fwm.freeze();
            let prior = idm_ref.state_prior().expect("idm reference carries a prior");
            let beta = p2.grpo.kl_coeff;
            let start = idm_objective(&idm, &fwm, prior, beta, &data)?;
            let mut objective = start;
            for step in 0..p2.steps_per_phase {
                let seed = StepSeed {
                    master_seed: config.master_seed,
                    iteration,
                    phase: 2,
                    step,
                };
                let stats = phase2_step(&mut idm, &fwm, Some(&idm_ref), pairs, p2, seed)?;
                objective = idm_objective(&idm, &fwm, prior, beta, &data)?;
                let full = (step + 1) % config.emit_every == 0 || step + 1 == p2.steps_per_phase;
                rec.emit(step_record(iteration, 2, step, objective, &stats), full, &fwm, &idm, &idm_ref)?;
            }
            fwm.unfreeze();
            change2 = relative_change(start, objective);
            rec.observer.on_phase_end(iteration, 2, &fwm, &idm, &idm_ref)?;
        }

        if change1 < config.convergence_tol && change2 < config.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(SwirlOutcome {
        fwm,
        idm,
        idm_reference: idm_ref,
        trace: rec.trace,
        iterations_run,
        converged,
    })
}

fn step_record(iteration: usize, phase: usize, step: usize, objective: f64, stats: &StepStats) -> MetricsRecord {
    MetricsRecord {
        iteration,
        phase,
        step,
        objective: Some(objective),
        reward_mean: Some(stats.reward_mean),
        reward_std: Some(stats.reward_std),
        mean_kl_to_ref: Some(stats.mean_kl),
        ..MetricsRecord::default()
    }
}
