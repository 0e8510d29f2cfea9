//! Group-relative advantages and the KL-regularised score-function update.
//!
//! A step takes groups of `G` samples drawn from the policy at some context,
//! each scored by a frozen model, and ascends
//!
//! ```text
//! mean_groups (1/G) sum_k A_k grad log pi(s_k | c)  -  beta * mean_groups grad KL(pi(.|c) || ref(.|c))
//! ```
//!
//! The KL gradient is exact (enumerated over outcomes). There is no ratio
//! clipping.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SwirlError};
use crate::policy::{kl_gradient, ConditionalCategorical, ReferencePolicy};
use crate::Context;

/// Largest accepted `learning_rate * kl_coeff`.
pub const MAX_LR_KL_PRODUCT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageMode {
    /// `(R_k - mean) / (std + eps)`, population std.
    MeanStd,
    /// `R_k - mean`.
    MeanOnly,
    /// `R_k - mean of the other rewards`; unbiased.
    LeaveOneOut,
}

impl fmt::Display for AdvantageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvantageMode::MeanStd => "mean_std",
            AdvantageMode::MeanOnly => "mean_only",
            AdvantageMode::LeaveOneOut => "leave_one_out",
        })
    }
}

impl FromStr for AdvantageMode {
    type Err = SwirlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_std" => Ok(AdvantageMode::MeanStd),
            "mean_only" => Ok(AdvantageMode::MeanOnly),
            "leave_one_out" => Ok(AdvantageMode::LeaveOneOut),
            other => Err(SwirlError::InvalidConfig(format!(
                "unknown advantage mode `{other}` (expected mean_std, mean_only or leave_one_out)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub kl_coeff: f64,
    pub learning_rate: f64,
    pub advantage_mode: AdvantageMode,
    pub std_epsilon: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 16,
            kl_coeff: 0.0,
            learning_rate: 0.05,
            advantage_mode: AdvantageMode::MeanStd,
            std_epsilon: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SwirlError::InvalidConfig(m));
        if self.group_size < 2 {
            return bad(format!("group_size must be >= 2, got {}", self.group_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.kl_coeff >= 0.0 && self.kl_coeff.is_finite()) {
            return bad(format!("kl_coeff must be >= 0, got {}", self.kl_coeff));
        }
        if !(self.std_epsilon > 0.0) {
            return bad(format!("std_epsilon must be > 0, got {}", self.std_epsilon));
        }
        if self.learning_rate * self.kl_coeff > MAX_LR_KL_PRODUCT {
            return bad(format!(
                "learning_rate * kl_coeff = {} exceeds {MAX_LR_KL_PRODUCT}",
                self.learning_rate * self.kl_coeff
            ));
        }
        Ok(())
    }
}

/// `G` samples for one context and the frozen scorer's rewards for them.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub context: Context,
    pub samples: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(context: Context, samples: Vec<usize>, rewards: Vec<f64>) -> Result<Self> {
        if samples.len() != rewards.len() {
            return Err(SwirlError::ShapeMismatch(format!(
                "{} samples but {} rewards",
                samples.len(),
                rewards.len()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite() || **r > 0.0) {
            return Err(SwirlError::NonFinite(format!(
                "reward {r} is not a finite log-probability"
            )));
        }
        Ok(RolloutGroup {
            context,
            samples,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub values: Vec<f64>,
    pub mode: AdvantageMode,
}

pub fn compute_advantages(
    rewards: &[f64],
    mode: AdvantageMode,
    std_epsilon: f64,
) -> Result<AdvantageVector> {
    let g = rewards.len();
    if g < 2 {
        return Err(SwirlError::InvalidConfig(format!(
            "advantages need at least 2 rewards, got {g}"
        )));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(SwirlError::NonFinite("reward".into()));
    }
    let n = g as f64;
    // Offsets from the first reward, so identical rewards give exact zeros.
    let d: Vec<f64> = rewards.iter().map(|r| r - rewards[0]).collect();
    let total: f64 = d.iter().sum();
    let mean = total / n;
    let values = match mode {
        AdvantageMode::MeanOnly => d.iter().map(|r| r - mean).collect(),
        AdvantageMode::MeanStd => {
            let var = d.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
            let denom = var.sqrt() + std_epsilon;
            d.iter().map(|r| (r - mean) / denom).collect()
        }
        AdvantageMode::LeaveOneOut => d.iter().map(|r| r - (total - r) / (n - 1.0)).collect(),
    };
    Ok(AdvantageVector { values, mode })
}

/// Sparse per-row gradient over a policy's logits, reduced in context order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGradients {
    rows: BTreeMap<Context, Vec<f64>>,
}

impl RowGradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `scale * grad` to the row for `context`.
    pub fn add(&mut self, context: Context, scale: f64, grad: &[f64]) {
        let row = self
            .rows
            .entry(context)
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (r, g) in row.iter_mut().zip(grad) {
            *r += scale * g;
        }
    }

    pub fn get(&self, context: Context) -> Option<&[f64]> {
        self.rows.get(&context).map(|r| r.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Context, &Vec<f64>)> {
        self.rows.iter()
    }

    pub fn norm(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|r| r.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Dense gradient table with the same layout as the policy's logits.
    pub fn to_dense(&self, policy: &ConditionalCategorical) -> Vec<f64> {
        let mut dense = vec![0.0; policy.logits().len()];
        let (_, d2) = policy.context_dims();
        let k = policy.outcome_dim();
        for (&(i, j), row) in &self.rows {
            let start = (i * d2 + j) * k;
            dense[start..start + k].copy_from_slice(row);
        }
        dense
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub reward_mean: f64,
    pub reward_std: f64,
    pub mean_kl: f64,
    pub grad_norm: f64,
}

fn check_update_target(
    policy: &ConditionalCategorical,
    config: &GrpoConfig,
    reference: Option<&ReferencePolicy>,
) -> Result<()> {
    config.validate()?;
    if policy.is_frozen() {
        return Err(SwirlError::FrozenModel);
    }
    if config.kl_coeff > 0.0 && reference.is_none() {
        return Err(SwirlError::MissingReference);
    }
    Ok(())
}

/// Subtracts `beta * mean_c grad KL(policy(.|c) || ref(.|c))` over `contexts`
/// from `grad`, adds the ascent step to the logits, and returns
/// `(mean KL, gradient norm)`.
///
/// This is the shared tail of both the sampled and the exact update.
pub fn apply_update(
    policy: &mut ConditionalCategorical,
    mut grad: RowGradients,
    contexts: &[Context],
    config: &GrpoConfig,
    reference: Option<&ReferencePolicy>,
) -> Result<(f64, f64)> {
    check_update_target(policy, config, reference)?;
    if contexts.is_empty() {
        return Err(SwirlError::InvalidConfig("update needs at least one context".into()));
    }
    let mut ordered = contexts.to_vec();
    ordered.sort_unstable();
    let weight = 1.0 / ordered.len() as f64;
    let mut kl_total = 0.0;
    if let Some(reference) = reference {
        for &ctx in &ordered {
            let (kl, g) = kl_gradient(policy.row(ctx)?, &reference.probabilities(ctx)?);
            kl_total += kl;
            if config.kl_coeff > 0.0 {
                grad.add(ctx, -config.kl_coeff * weight, &g);
            }
        }
    }
    let norm = grad.norm();
    for (&ctx, g) in grad.iter() {
        let row = policy.row_mut(ctx)?;
        for (l, gi) in row.iter_mut().zip(g) {
            *l += config.learning_rate * gi;
        }
    }
    if let Some(bad) = policy.logits().iter().find(|l| !l.is_finite()) {
        return Err(SwirlError::NonFinite(format!("logit {bad} after update")));
    }
    Ok((kl_total * weight, norm))
}

/// One GRPO ascent step on `policy` from scored rollout groups.
pub fn policy_gradient_step(
    policy: &mut ConditionalCategorical,
    groups: &[RolloutGroup],
    advantages: &[AdvantageVector],
    config: &GrpoConfig,
    reference: Option<&ReferencePolicy>,
) -> Result<StepStats> {
    check_update_target(policy, config, reference)?;
    if groups.is_empty() {
        return Err(SwirlError::InvalidConfig("policy step needs at least one group".into()));
    }
    if groups.len() != advantages.len() {
        return Err(SwirlError::ShapeMismatch(format!(
            "{} groups but {} advantage vectors",
            groups.len(),
            advantages.len()
        )));
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by_key(|&i| (groups[i].context, i));

    let group_weight = 1.0 / groups.len() as f64;
    let mut grad = RowGradients::new();
    let mut rewards = Vec::new();
    for &i in &order {
        let (group, adv) = (&groups[i], &advantages[i]);
        if group.len() != adv.values.len() || group.len() < 2 {
            return Err(SwirlError::ShapeMismatch(format!(
                "group of {} samples with {} advantages",
                group.len(),
                adv.values.len()
            )));
        }
        let scale = group_weight / group.len() as f64;
        for (&sample, &a) in group.samples.iter().zip(&adv.values) {
            if a != 0.0 {
                grad.add(group.context, scale * a, &policy.grad_log_prob(group.context, sample)?);
            }
        }
        rewards.extend_from_slice(&group.rewards);
    }
    let contexts: Vec<Context> = order.iter().map(|&i| groups[i].context).collect();
    let (mean_kl, grad_norm) = apply_update(policy, grad, &contexts, config, reference)?;
    let (reward_mean, reward_std) = mean_std(&rewards);
    Ok(StepStats {
        reward_mean,
        reward_std,
        mean_kl,
        grad_norm,
    })
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
