//! Exact likelihood and information quantities by enumeration.
//!
//! Expectations over data use the dataset's empirical pair distribution:
//! `P(x, y) = count(x, y) / n`. The "exact" quantities (CMI, posterior) use
//! Bayes on the model joint and never consult the IDM; the IDM only enters
//! the variational bound and the ELBO.
//!
//! Accuracy metrics break argmax ties toward the smallest index.

use crate::error::{Result, SwirlError};
use crate::policy::{entropy_probs, kl_probs, ConditionalCategorical, Role, StatePrior};
use crate::worldgen::TransitionDataset;
use crate::worldgen::TransitionKernel;
use crate::{ActionId, StateId};

const TIE_TOL: f64 = 1e-12;

/// Empirical distribution of dataset pairs as an `S x S` weight table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    num_states: usize,
    weights: Vec<f64>,
}

impl PairDistribution {
    pub fn from_pairs(pairs: &[(StateId, StateId)], num_states: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(SwirlError::EmptyDataset);
        }
        let mut counts = vec![0usize; num_states * num_states];
        for &(x, y) in pairs {
            if x >= num_states || y >= num_states {
                return Err(SwirlError::IndexOutOfRange {
                    what: "state",
                    index: x.max(y),
                    bound: num_states,
                });
            }
            counts[x * num_states + y] += 1;
        }
        let n = pairs.len() as f64;
        Ok(PairDistribution {
            num_states,
            weights: counts.into_iter().map(|c| c as f64 / n).collect(),
        })
    }

    /// Uses only the observable pairs.
    pub fn from_dataset(dataset: &TransitionDataset) -> Result<Self> {
        Self::from_pairs(dataset.pairs(), dataset.spec().num_states)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn weight(&self, x: StateId, y: StateId) -> f64 {
        self.weights[x * self.num_states + y]
    }

    /// Empirical source distribution `P(x)`.
    pub fn source(&self, x: StateId) -> f64 {
        self.weights[x * self.num_states..(x + 1) * self.num_states]
            .iter()
            .sum()
    }

    /// Nonzero-weight pairs in row-major order.
    pub fn support(&self) -> impl Iterator<Item = (StateId, StateId, f64)> + '_ {
        let s = self.num_states;
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(move |(i, &w)| (i / s, i % s, w))
    }
}

fn expect_role(model: &ConditionalCategorical, role: Role) -> Result<()> {
    if model.role() != role {
        return Err(SwirlError::ShapeMismatch(format!(
            "expected a {} model, got {}",
            role.as_str(),
            model.role().as_str()
        )));
    }
    Ok(())
}

fn check_pair_models(fwm: &ConditionalCategorical, idm: &ConditionalCategorical) -> Result<()> {
    expect_role(fwm, Role::Fwm)?;
    expect_role(idm, Role::Idm)?;
    if fwm.num_states() != idm.num_states() || fwm.num_actions() != idm.num_actions() {
        return Err(SwirlError::ShapeMismatch("fwm and idm disagree on world size".into()));
    }
    Ok(())
}

/// `P~(z | x)`: average of `Q(z | x, y)` over the dataset pairs with source
/// `x`. States with no pairs have no belief.
pub fn empirical_belief(idm: &ConditionalCategorical, data: &PairDistribution) -> Result<StatePrior> {
    expect_role(idm, Role::Idm)?;
    let s = data.num_states();
    let a = idm.num_actions();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; s];
    for x in 0..s {
        let px = data.source(x);
        if px == 0.0 {
            continue;
        }
        let mut belief = vec![0.0; a];
        for y in 0..s {
            let w = data.weight(x, y);
            if w == 0.0 {
                continue;
            }
            for (b, q) in belief.iter_mut().zip(idm.probabilities((x, y))?) {
                *b += w * q;
            }
        }
        belief.iter_mut().for_each(|b| *b /= px);
        rows[x] = Some(belief);
    }
    Ok(StatePrior::new(rows))
}

/// `E_x[H(P~(. | x))]` under the empirical source distribution.
pub fn belief_entropy(belief: &StatePrior, data: &PairDistribution) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..data.num_states() {
        let px = data.source(x);
        if px > 0.0 {
            total += px * entropy_probs(belief.require(x)?);
        }
    }
    Ok(total)
}

/// Exact `I(Z; Y^ | X)` under `P(x) belief(z | x) P_theta(y^ | x, z)`.
pub fn exact_cmi_with_belief(
    fwm: &ConditionalCategorical,
    belief: &StatePrior,
    data: &PairDistribution,
) -> Result<f64> {
    expect_role(fwm, Role::Fwm)?;
    let s = fwm.num_states();
    let a = fwm.num_actions();
    let mut total = 0.0;
    for x in 0..s {
        let px = data.source(x);
        if px == 0.0 {
            continue;
        }
        let b = belief.require(x)?;
        let rows: Vec<Vec<f64>> = (0..a)
            .map(|z| fwm.probabilities((x, z)))
            .collect::<Result<_>>()?;
        // H(Z | Y^, X = x) = sum_y^ p(y^) H(posterior over z)
        let mut cond_entropy = 0.0;
        for yh in 0..s {
            let joint: Vec<f64> = (0..a).map(|z| b[z] * rows[z][yh]).collect();
            let evidence: f64 = joint.iter().sum();
            if evidence > 0.0 {
                let post: Vec<f64> = joint.iter().map(|j| j / evidence).collect();
                cond_entropy += evidence * entropy_probs(&post);
            }
        }
        total += px * (entropy_probs(b) - cond_entropy);
    }
    Ok(total.max(0.0))
}

pub fn exact_cmi(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    data: &PairDistribution,
) -> Result<f64> {
    check_pair_models(fwm, idm)?;
    exact_cmi_with_belief(fwm, &empirical_belief(idm, data)?, data)
}

/// `E_x E_{z ~ belief} E_{y^ ~ P_theta} [log Q(z | x, y^)]`.
pub fn scorer_log_likelihood(
    fwm: &ConditionalCategorical,
    scorer: &ConditionalCategorical,
    belief: &StatePrior,
    data: &PairDistribution,
) -> Result<f64> {
    check_pair_models(fwm, scorer)?;
    let s = fwm.num_states();
    let a = fwm.num_actions();
    let mut total = 0.0;
    for x in 0..s {
        let px = data.source(x);
        if px == 0.0 {
            continue;
        }
        let b = belief.require(x)?;
        let log_q: Vec<Vec<f64>> = (0..s)
            .map(|yh| scorer.log_probabilities((x, yh)))
            .collect::<Result<_>>()?;
        for (z, &bz) in b.iter().enumerate().take(a) {
            if bz == 0.0 {
                continue;
            }
            let p = fwm.probabilities((x, z))?;
            let inner: f64 = p.iter().zip(&log_q).map(|(pk, lq)| pk * lq[z]).sum();
            total += px * bz * inner;
        }
    }
    Ok(total)
}

/// Variational CMI bound with the belief and the scoring posterior supplied
/// separately: `E_x H(belief) + E_x E_{z~belief} E_{y^} log scorer(z | x, y^)`.
pub fn variational_cmi_bound_with(
    fwm: &ConditionalCategorical,
    scorer: &ConditionalCategorical,
    belief: &StatePrior,
    data: &PairDistribution,
) -> Result<f64> {
    Ok(belief_entropy(belief, data)? + scorer_log_likelihood(fwm, scorer, belief, data)?)
}

/// Forward-phase objective `J(theta) = E_(x,y) E_{z~Q(.|x,y)} E_{y^~P_theta(.|x,z)} log Q(z | x, y^)`.
pub fn fwm_objective(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    data: &PairDistribution,
) -> Result<f64> {
    check_pair_models(fwm, idm)?;
    let s = fwm.num_states();
    let mut total = 0.0;
    for (x, y, w) in data.support() {
        let q = idm.probabilities((x, y))?;
        let log_q: Vec<Vec<f64>> = (0..s)
            .map(|yh| idm.log_probabilities((x, yh)))
            .collect::<Result<_>>()?;
        for (z, qz) in q.iter().enumerate() {
            let p = fwm.probabilities((x, z))?;
            let inner: f64 = p.iter().zip(&log_q).map(|(pk, lq)| pk * lq[z]).sum();
            total += w * qz * inner;
        }
    }
    Ok(total)
}

/// `E_x[H(P~)] + J(theta)`, a lower bound on [`exact_cmi`].
pub fn variational_cmi_bound(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    data: &PairDistribution,
) -> Result<f64> {
    let belief = empirical_belief(idm, data)?;
    Ok(belief_entropy(&belief, data)? + fwm_objective(fwm, idm, data)?)
}

/// Mean over pairs of `log sum_z prior(z | x) P_theta(y | x, z)`.
pub fn marginal_loglik(
    fwm: &ConditionalCategorical,
    prior: &StatePrior,
    data: &PairDistribution,
) -> Result<f64> {
    expect_role(fwm, Role::Fwm)?;
    let mut total = 0.0;
    for (x, y, w) in data.support() {
        let pr = prior.require(x)?;
        let mut evidence = 0.0;
        for (z, pz) in pr.iter().enumerate() {
            evidence += pz * fwm.probabilities((x, z))?[y];
        }
        if evidence <= 0.0 {
            return Err(SwirlError::ZeroEvidence { x, y });
        }
        total += w * evidence.ln();
    }
    Ok(total)
}

/// `P(z | x, y) ∝ prior(z | x) P_theta(y | x, z)`.
pub fn posterior_exact(
    fwm: &ConditionalCategorical,
    prior: &StatePrior,
    x: StateId,
    y: StateId,
) -> Result<Vec<f64>> {
    expect_role(fwm, Role::Fwm)?;
    let pr = prior.require(x)?;
    let mut joint = Vec::with_capacity(pr.len());
    for (z, pz) in pr.iter().enumerate() {
        let p = fwm.probabilities((x, z))?;
        if y >= p.len() {
            return Err(SwirlError::IndexOutOfRange {
                what: "state",
                index: y,
                bound: p.len(),
            });
        }
        joint.push(pz * p[y]);
    }
    let evidence: f64 = joint.iter().sum();
    if !(evidence > 0.0) {
        return Err(SwirlError::ZeroEvidence { x, y });
    }
    Ok(joint.into_iter().map(|j| j / evidence).collect())
}

/// Mean over pairs of `E_{z~Q}[log P_theta(y | x, z)] - beta KL(Q(.|x,y) || prior(.|x))`.
/// With `beta = 1` this is the ELBO.
pub fn idm_objective(
    idm: &ConditionalCategorical,
    fwm: &ConditionalCategorical,
    prior: &StatePrior,
    beta: f64,
    data: &PairDistribution,
) -> Result<f64> {
    check_pair_models(fwm, idm)?;
    let mut total = 0.0;
    for (x, y, w) in data.support() {
        let q = idm.probabilities((x, y))?;
        let mut expected = 0.0;
        for (z, qz) in q.iter().enumerate() {
            if *qz > 0.0 {
                expected += qz * fwm.log_probabilities((x, z))?[y];
            }
        }
        total += w * (expected - beta * kl_probs(&q, prior.require(x)?));
    }
    Ok(total)
}

pub fn elbo(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    prior: &StatePrior,
    data: &PairDistribution,
) -> Result<f64> {
    idm_objective(idm, fwm, prior, 1.0, data)
}

/// Dataset-mean `KL(Q(.|x,y) || posterior_exact(x, y))`.
pub fn mean_posterior_kl(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    prior: &StatePrior,
    data: &PairDistribution,
) -> Result<f64> {
    check_pair_models(fwm, idm)?;
    let mut total = 0.0;
    for (x, y, w) in data.support() {
        let post = posterior_exact(fwm, prior, x, y)?;
        total += w * kl_probs(&idm.probabilities((x, y))?, &post);
    }
    Ok(total)
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn top_set(values: &[f64]) -> Vec<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..values.len())
        .filter(|&i| values[i] >= max - TIE_TOL)
        .collect()
}

/// Fraction of distinct `(x, z*)` contexts in the dataset where the FWM's
/// argmax next state lies in the kernel's most likely set.
pub fn fwm_accuracy(
    fwm: &ConditionalCategorical,
    kernel: &TransitionKernel,
    dataset: &TransitionDataset,
) -> Result<f64> {
    expect_role(fwm, Role::Fwm)?;
    let s = kernel.num_states();
    let a = kernel.num_actions();
    let mut seen = vec![false; s * a];
    for (&(x, _), &z) in dataset.pairs().iter().zip(dataset.hidden_actions()) {
        seen[x * a + z] = true;
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (idx, _) in seen.iter().enumerate().filter(|(_, s)| **s) {
        let (x, z) = (idx / a, idx % a);
        let guess = argmax_first(&fwm.probabilities((x, z))?);
        total += 1;
        if top_set(kernel.row(x, z)).contains(&guess) {
            hits += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Fraction of dataset pairs where the IDM's argmax action is the hidden
/// action or, under ambiguity, maximises `T(y | x, z) prior(z)`.
pub fn idm_accuracy(
    idm: &ConditionalCategorical,
    kernel: &TransitionKernel,
    dataset: &TransitionDataset,
) -> Result<f64> {
    expect_role(idm, Role::Idm)?;
    if dataset.is_empty() {
        return Ok(0.0);
    }
    let prior = dataset.action_prior();
    let mut hits = 0usize;
    for (&(x, y), &z_star) in dataset.pairs().iter().zip(dataset.hidden_actions()) {
        let guess: ActionId = argmax_first(&idm.probabilities((x, y))?);
        let scores: Vec<f64> = (0..kernel.num_actions())
            .map(|z| kernel.prob(x, z, y) * prior[z])
            .collect();
        if guess == z_star || top_set(&scores).contains(&guess) {
            hits += 1;
        }
    }
    Ok(hits as f64 / dataset.len() as f64)
}

/// One row of the training trace. Analysis columns are `None` on steps
/// where full analysis was not computed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// 0 for the initial evaluation, 1 for the forward phase, 2 for the inverse phase.
    pub phase: usize,
    pub step: usize,
    pub objective: Option<f64>,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub mean_kl_to_ref: Option<f64>,
    pub exact_cmi: Option<f64>,
    pub cmi_bound: Option<f64>,
    pub marginal_loglik: Option<f64>,
    pub elbo: Option<f64>,
    pub elbo_gap: Option<f64>,
    pub fwm_accuracy: Option<f64>,
    pub idm_accuracy: Option<f64>,
}

impl MetricsRecord {
    pub fn key(&self) -> (usize, usize, usize) {
        (self.iteration, self.phase, self.step)
    }

    pub fn with_analysis(mut self, a: &AnalysisSnapshot) -> Self {
        self.exact_cmi = Some(a.exact_cmi);
        self.cmi_bound = Some(a.cmi_bound);
        self.marginal_loglik = Some(a.marginal_loglik);
        self.elbo = Some(a.elbo);
        self.elbo_gap = Some(a.elbo_gap);
        self.fwm_accuracy = a.fwm_accuracy;
        self.idm_accuracy = a.idm_accuracy;
        self
    }
}

/// The analysis columns of a metrics row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisSnapshot {
    pub exact_cmi: f64,
    pub cmi_bound: f64,
    pub marginal_loglik: f64,
    pub elbo: f64,
    pub elbo_gap: f64,
    pub fwm_accuracy: Option<f64>,
    pub idm_accuracy: Option<f64>,
}

/// Kernel plus an evaluation copy of the dataset with its hidden actions.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub kernel: TransitionKernel,
    pub dataset: TransitionDataset,
}

/// All analysis columns for one `(fwm, idm, prior)` state.
pub fn analyse(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    prior: &StatePrior,
    data: &PairDistribution,
    evaluator: Option<&Evaluator>,
) -> Result<AnalysisSnapshot> {
    let belief = empirical_belief(idm, data)?;
    let exact = exact_cmi_with_belief(fwm, &belief, data)?;
    let bound = belief_entropy(&belief, data)? + fwm_objective(fwm, idm, data)?;
    let marginal = marginal_loglik(fwm, prior, data)?;
    let lower = elbo(fwm, idm, prior, data)?;
    let (fwm_acc, idm_acc) = match evaluator {
        Some(e) => (
            Some(fwm_accuracy(fwm, &e.kernel, &e.dataset)?),
            Some(idm_accuracy(idm, &e.kernel, &e.dataset)?),
        ),
        None => (None, None),
    };
    Ok(AnalysisSnapshot {
        exact_cmi: exact,
        cmi_bound: bound,
        marginal_loglik: marginal,
        elbo: lower,
        elbo_gap: marginal - lower,
        fwm_accuracy: fwm_acc,
        idm_accuracy: idm_acc,
    })
}
