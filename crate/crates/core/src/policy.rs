//! Tabular conditional categoricals with one softmax row per context.
//!
//! A [`ConditionalCategorical`] with role [`Role::Fwm`] holds the forward
//! model `P(y | x, z)` (contexts `S x A`, outcomes `S`); with role
//! [`Role::Idm`] it holds the inverse model `Q(z | x, y)` (contexts `S x S`,
//! outcomes `A`). All softmax computations subtract the row maximum first.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Result, SwirlError};
use crate::worldgen::{LabelledTransition, TransitionKernel};
use crate::Context;

/// Logit assigned to zero-probability outcomes when initialising from
/// probabilities. `exp(-50)` is about `2e-22`.
pub const LOGIT_FLOOR: f64 = -50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Fwm,
    Idm,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Fwm => "fwm",
            Role::Idm => "idm",
        }
    }

    /// `(context dims, outcome dim)` for a world with the given sizes.
    pub fn shape(self, num_states: usize, num_actions: usize) -> ((usize, usize), usize) {
        match self {
            Role::Fwm => ((num_states, num_actions), num_states),
            Role::Idm => ((num_states, num_states), num_actions),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - max - log_total).collect()
}

/// `ln p` with zero mapped to [`LOGIT_FLOOR`].
fn floored_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOGIT_FLOOR)
    } else {
        LOGIT_FLOOR
    }
}

/// KL(p || q) for probability vectors; `p_k = 0` terms contribute nothing.
pub fn kl_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| pk * (pk.ln() - qk.ln()))
        .sum()
}

pub fn entropy_probs(p: &[f64]) -> f64 {
    -p.iter().filter(|pk| **pk > 0.0).map(|pk| pk * pk.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalCategorical {
    role: Role,
    context_dims: (usize, usize),
    outcome_dim: usize,
    logits: Vec<f64>,
    frozen: bool,
}

impl ConditionalCategorical {
    /// All-zero logits, i.e. uniform rows.
    pub fn uniform(role: Role, num_states: usize, num_actions: usize) -> Self {
        let (context_dims, outcome_dim) = role.shape(num_states, num_actions);
        ConditionalCategorical {
            role,
            context_dims,
            outcome_dim,
            logits: vec![0.0; context_dims.0 * context_dims.1 * outcome_dim],
            frozen: false,
        }
    }

    pub fn from_logits(
        role: Role,
        context_dims: (usize, usize),
        outcome_dim: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        if logits.len() != context_dims.0 * context_dims.1 * outcome_dim {
            return Err(SwirlError::ShapeMismatch(format!(
                "{} logits for shape {}x{}x{}",
                logits.len(),
                context_dims.0,
                context_dims.1,
                outcome_dim
            )));
        }
        if context_dims.0 == 0 || context_dims.1 == 0 || outcome_dim == 0 {
            return Err(SwirlError::ShapeMismatch("zero-sized dimension".into()));
        }
        let consistent = match role {
            Role::Fwm => context_dims.0 == outcome_dim,
            Role::Idm => context_dims.0 == context_dims.1,
        };
        if !consistent {
            return Err(SwirlError::ShapeMismatch(format!(
                "shape {}x{}x{} is not valid for role {}",
                context_dims.0,
                context_dims.1,
                outcome_dim,
                role.as_str()
            )));
        }
        if let Some(bad) = logits.iter().find(|l| !l.is_finite()) {
            return Err(SwirlError::NonFinite(format!("logit {bad}")));
        }
        Ok(ConditionalCategorical {
            role,
            context_dims,
            outcome_dim,
            logits,
            frozen: false,
        })
    }

    /// Logits `ln p` (floored) for a table of row probabilities.
    pub fn from_probabilities(
        role: Role,
        context_dims: (usize, usize),
        outcome_dim: usize,
        probs: &[f64],
    ) -> Result<Self> {
        let logits = probs.iter().map(|&p| floored_ln(p)).collect();
        Self::from_logits(role, context_dims, outcome_dim, logits)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn context_dims(&self) -> (usize, usize) {
        self.context_dims
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_dim
    }

    pub fn num_states(&self) -> usize {
        self.context_dims.0
    }

    pub fn num_actions(&self) -> usize {
        match self.role {
            Role::Fwm => self.context_dims.1,
            Role::Idm => self.outcome_dim,
        }
    }

    pub fn num_contexts(&self) -> usize {
        self.context_dims.0 * self.context_dims.1
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    /// Same logits and dims, ignoring the frozen flag.
    pub fn same_parameters(&self, other: &Self) -> bool {
        self.role == other.role
            && self.context_dims == other.context_dims
            && self.outcome_dim == other.outcome_dim
            && self.logits.len() == other.logits.len()
            && self
                .logits
                .iter()
                .zip(&other.logits)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn contexts(&self) -> impl Iterator<Item = Context> + '_ {
        let (d1, d2) = self.context_dims;
        (0..d1).flat_map(move |i| (0..d2).map(move |j| (i, j)))
    }

    fn check_context(&self, (i, j): Context) -> Result<usize> {
        if i >= self.context_dims.0 {
            return Err(SwirlError::IndexOutOfRange {
                what: "context (first)",
                index: i,
                bound: self.context_dims.0,
            });
        }
        if j >= self.context_dims.1 {
            return Err(SwirlError::IndexOutOfRange {
                what: "context (second)",
                index: j,
                bound: self.context_dims.1,
            });
        }
        Ok((i * self.context_dims.1 + j) * self.outcome_dim)
    }

    fn check_outcome(&self, k: usize) -> Result<()> {
        if k >= self.outcome_dim {
            return Err(SwirlError::IndexOutOfRange {
                what: "outcome",
                index: k,
                bound: self.outcome_dim,
            });
        }
        Ok(())
    }

    pub fn row(&self, context: Context) -> Result<&[f64]> {
        let start = self.check_context(context)?;
        Ok(&self.logits[start..start + self.outcome_dim])
    }

    pub fn row_mut(&mut self, context: Context) -> Result<&mut [f64]> {
        let start = self.check_context(context)?;
        Ok(&mut self.logits[start..start + self.outcome_dim])
    }

    pub fn probabilities(&self, context: Context) -> Result<Vec<f64>> {
        Ok(softmax(self.row(context)?))
    }

    pub fn log_probabilities(&self, context: Context) -> Result<Vec<f64>> {
        Ok(log_softmax(self.row(context)?))
    }

    pub fn log_prob(&self, context: Context, outcome: usize) -> Result<f64> {
        self.check_outcome(outcome)?;
        Ok(self.log_probabilities(context)?[outcome])
    }

    /// Dense `num_contexts x outcome_dim` probability table.
    pub fn probability_table(&self) -> Vec<f64> {
        self.logits
            .chunks(self.outcome_dim)
            .flat_map(softmax)
            .collect()
    }

    /// `group_size` independent draws from the context's distribution.
    pub fn sample_group<R: Rng + ?Sized>(
        &self,
        context: Context,
        group_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if group_size < 2 {
            return Err(SwirlError::InvalidConfig(format!(
                "group size must be >= 2, got {group_size}"
            )));
        }
        let dist = WeightedIndex::new(self.probabilities(context)?)
            .map_err(|e| SwirlError::NonFinite(e.to_string()))?;
        Ok((0..group_size).map(|_| dist.sample(rng)).collect())
    }

    /// A single draw from the context's distribution.
    pub fn sample<R: Rng + ?Sized>(&self, context: Context, rng: &mut R) -> Result<usize> {
        let dist = WeightedIndex::new(self.probabilities(context)?)
            .map_err(|e| SwirlError::NonFinite(e.to_string()))?;
        Ok(dist.sample(rng))
    }

    /// Gradient of `log p(outcome | context)` w.r.t. the context's logit row:
    /// `onehot(outcome) - softmax(row)`. All other rows have zero gradient.
    pub fn grad_log_prob(&self, context: Context, outcome: usize) -> Result<Vec<f64>> {
        self.check_outcome(outcome)?;
        let mut g = self.probabilities(context)?;
        g.iter_mut().for_each(|v| *v = -*v);
        g[outcome] += 1.0;
        Ok(g)
    }

    pub fn entropy(&self, context: Context) -> Result<f64> {
        Ok(entropy_probs(&self.probabilities(context)?))
    }

    /// Copies the logits into an immutable reference snapshot.
    pub fn snapshot(&self) -> ReferencePolicy {
        let mut model = self.clone();
        model.frozen = true;
        ReferencePolicy::Contextual(model)
    }
}

/// `KL(p(. | context) || q(. | context))` between two models of the same shape.
pub fn kl_divergence(
    p: &ConditionalCategorical,
    q: &ConditionalCategorical,
    context: Context,
) -> Result<f64> {
    if p.role != q.role || p.context_dims != q.context_dims || p.outcome_dim != q.outcome_dim {
        return Err(SwirlError::ShapeMismatch(format!(
            "cannot compare {} {:?}x{} with {} {:?}x{}",
            p.role.as_str(),
            p.context_dims,
            p.outcome_dim,
            q.role.as_str(),
            q.context_dims,
            q.outcome_dim
        )));
    }
    let lp = p.log_probabilities(context)?;
    let lq = q.log_probabilities(context)?;
    Ok(lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| {
            let pk = a.exp();
            if pk > 0.0 {
                pk * (a - b)
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .max(0.0))
}

/// Gradient of `KL(softmax(row) || reference)` w.r.t. `row`:
/// `p_j (ln p_j - ln r_j - KL)`.
pub fn kl_gradient(row: &[f64], reference: &[f64]) -> (f64, Vec<f64>) {
    let lp = log_softmax(row);
    let p: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let log_ratio: Vec<f64> = lp
        .iter()
        .zip(reference)
        .map(|(l, r)| l - r.ln())
        .collect();
    let kl: f64 = p
        .iter()
        .zip(&log_ratio)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, lr)| pk * lr)
        .sum();
    let grad = p
        .iter()
        .zip(&log_ratio)
        .map(|(pk, lr)| if *pk > 0.0 { pk * (lr - kl) } else { 0.0 })
        .collect();
    (kl.max(0.0), grad)
}

/// Per-state action distribution `prior(z | x)`; `None` for states with no
/// defined prior (e.g. absent from the dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct StatePrior {
    rows: Vec<Option<Vec<f64>>>,
}

impl StatePrior {
    pub fn new(rows: Vec<Option<Vec<f64>>>) -> Self {
        StatePrior { rows }
    }

    /// The same distribution for every state.
    pub fn shared(num_states: usize, prior: &[f64]) -> Self {
        StatePrior {
            rows: vec![Some(prior.to_vec()); num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, x: usize) -> Option<&[f64]> {
        self.rows.get(x).and_then(|r| r.as_deref())
    }

    pub fn require(&self, x: usize) -> Result<&[f64]> {
        self.get(x).ok_or(SwirlError::MissingPrior(x))
    }

    pub fn rows(&self) -> &[Option<Vec<f64>>] {
        &self.rows
    }
}

/// A frozen distribution the policy is regularised towards.
///
/// `Contextual` compares each context with the same context of a frozen
/// model snapshot. `StateBelief` ignores the second context index and uses a
/// per-state prior `pi(z | x)`; the inverse phase uses this form, built from
/// the IDM snapshot's empirical belief over the dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferencePolicy {
    Contextual(ConditionalCategorical),
    StateBelief {
        snapshot: ConditionalCategorical,
        prior: StatePrior,
    },
}

impl ReferencePolicy {
    pub fn probabilities(&self, context: Context) -> Result<Vec<f64>> {
        match self {
            ReferencePolicy::Contextual(model) => model.probabilities(context),
            ReferencePolicy::StateBelief { prior, .. } => Ok(prior.require(context.0)?.to_vec()),
        }
    }

    pub fn snapshot(&self) -> &ConditionalCategorical {
        match self {
            ReferencePolicy::Contextual(model) => model,
            ReferencePolicy::StateBelief { snapshot, .. } => snapshot,
        }
    }

    pub fn state_prior(&self) -> Option<&StatePrior> {
        match self {
            ReferencePolicy::StateBelief { prior, .. } => Some(prior),
            ReferencePolicy::Contextual(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    Uniform,
    /// Kernel rows mixed with uniform: `(1 - corruption) T + corruption / S`.
    FromKernelNoisy { corruption: f64 },
    /// Add-`alpha` smoothed conditional counts from revealed-action records.
    FromLabelledSft { alpha: f64 },
}

/// Data an initialiser may draw on.
#[derive(Debug, Clone, Copy, Default)]
pub struct InitSources<'a> {
    pub kernel: Option<&'a TransitionKernel>,
    pub labelled: Option<&'a [LabelledTransition]>,
}

pub fn init_policy(
    role: Role,
    num_states: usize,
    num_actions: usize,
    kind: InitKind,
    sources: InitSources<'_>,
) -> Result<ConditionalCategorical> {
    if num_states < 1 || num_actions < 1 {
        return Err(SwirlError::ShapeMismatch("dimensions must be positive".into()));
    }
    let (dims, outcomes) = role.shape(num_states, num_actions);
    match kind {
        InitKind::Uniform => Ok(ConditionalCategorical::uniform(role, num_states, num_actions)),
        InitKind::FromKernelNoisy { corruption } => {
            if role != Role::Fwm {
                return Err(SwirlError::InvalidConfig(
                    "from_kernel_noisy initialisation is only defined for the fwm role".into(),
                ));
            }
            if !(0.0..=1.0).contains(&corruption) {
                return Err(SwirlError::InvalidConfig(format!(
                    "corruption must lie in [0, 1], got {corruption}"
                )));
            }
            let kernel = sources.kernel.ok_or_else(|| {
                SwirlError::InvalidConfig("from_kernel_noisy needs the world kernel".into())
            })?;
            if kernel.num_states() != num_states || kernel.num_actions() != num_actions {
                return Err(SwirlError::ShapeMismatch("kernel does not match model dims".into()));
            }
            let uniform = 1.0 / num_states as f64;
            let probs: Vec<f64> = (0..num_states)
                .flat_map(|x| (0..num_actions).map(move |z| (x, z)))
                .flat_map(|(x, z)| {
                    kernel
                        .row(x, z)
                        .iter()
                        .map(|t| (1.0 - corruption) * t + corruption * uniform)
                        .collect::<Vec<_>>()
                })
                .collect();
            ConditionalCategorical::from_probabilities(role, dims, outcomes, &probs)
        }
        InitKind::FromLabelledSft { alpha } => {
            let labelled = sources.labelled.unwrap_or(&[]);
            if labelled.is_empty() {
                return Err(SwirlError::InvalidConfig(
                    "from_labelled_sft needs a non-empty labelled subset".into(),
                ));
            }
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(SwirlError::InvalidConfig(format!("smoothing must be >= 0, got {alpha}")));
            }
            let mut counts = vec![alpha; dims.0 * dims.1 * outcomes];
            for t in labelled {
                if t.x >= num_states || t.y >= num_states || t.z >= num_actions {
                    return Err(SwirlError::IndexOutOfRange {
                        what: "labelled record",
                        index: t.x.max(t.y),
                        bound: num_states,
                    });
                }
                let (ctx, outcome) = match role {
                    Role::Fwm => ((t.x, t.z), t.y),
                    Role::Idm => ((t.x, t.y), t.z),
                };
                counts[(ctx.0 * dims.1 + ctx.1) * outcomes + outcome] += 1.0;
            }
            let mut probs = Vec::with_capacity(counts.len());
            for row in counts.chunks(outcomes) {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    probs.extend(row.iter().map(|c| c / total));
                } else {
                    probs.extend(std::iter::repeat_n(1.0 / outcomes as f64, outcomes));
                }
            }
            ConditionalCategorical::from_probabilities(role, dims, outcomes, &probs)
        }
    }
}
