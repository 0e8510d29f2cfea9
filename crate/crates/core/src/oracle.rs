//! Brute-force verifiers.
//!
//! The gradients here are written directly from the objective definitions
//! with their own softmax and double sums. They share only data types with
//! the training path, so agreement between the two is evidence rather than
//! tautology.

use rand::Rng;

use crate::error::{Result, SwirlError};
use crate::grpo::{compute_advantages, AdvantageMode, GrpoConfig};
use crate::policy::{ConditionalCategorical, Role, StatePrior};
use crate::rng::{self, Purpose};
use crate::StateId;

/// Largest `S * A * S` accepted by the enumerating oracles.
pub const MAX_ORACLE_ENTRIES: usize = 1_000_000;

fn guard(fwm: &ConditionalCategorical) -> Result<()> {
    let s = fwm.num_states();
    let entries = s * fwm.num_actions() * s;
    if entries > MAX_ORACLE_ENTRIES {
        return Err(SwirlError::InstanceTooLarge {
            entries,
            limit: MAX_ORACLE_ENTRIES,
        });
    }
    Ok(())
}

fn check_models(fwm: &ConditionalCategorical, idm: &ConditionalCategorical) -> Result<()> {
    if fwm.role() != Role::Fwm || idm.role() != Role::Idm {
        return Err(SwirlError::ShapeMismatch("oracle expects (fwm, idm) models".into()));
    }
    if fwm.num_states() != idm.num_states() || fwm.num_actions() != idm.num_actions() {
        return Err(SwirlError::ShapeMismatch("fwm and idm disagree on world size".into()));
    }
    guard(fwm)
}

/// Plain softmax of one logit row.
fn dist(model: &ConditionalCategorical, i: usize, j: usize) -> Vec<f64> {
    let k = model.outcome_dim();
    let (_, d2) = model.context_dims();
    let row = &model.logits()[(i * d2 + j) * k..(i * d2 + j + 1) * k];
    let m = row.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn idx(model: &ConditionalCategorical, i: usize, j: usize, k: usize) -> usize {
    (i * model.context_dims().1 + j) * model.outcome_dim() + k
}

fn check_pairs(pairs: &[(StateId, StateId)], s: usize) -> Result<()> {
    if pairs.is_empty() {
        return Err(SwirlError::EmptyDataset);
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| *x >= s || *y >= s) {
        return Err(SwirlError::IndexOutOfRange {
            what: "state",
            index: x.max(y),
            bound: s,
        });
    }
    Ok(())
}

/// Gradient of the forward objective w.r.t. every FWM logit:
/// `E_(x,y) sum_z Q(z|x,y) sum_y^ P(y^|x,z) log Q(z|x,y^) d/dtheta log P(y^|x,z)`.
pub fn exact_phase1_gradient(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    pairs: &[(StateId, StateId)],
) -> Result<Vec<f64>> {
    check_models(fwm, idm)?;
    let s = fwm.num_states();
    let a = fwm.num_actions();
    check_pairs(pairs, s)?;
    let w = 1.0 / pairs.len() as f64;
    let mut grad = vec![0.0; fwm.logits().len()];
    for &(x, y) in pairs {
        let q_xy = dist(idm, x, y);
        for z in 0..a {
            let p = dist(fwm, x, z);
            for yh in 0..s {
                let reward = dist(idm, x, yh)[z].ln();
                for j in 0..s {
                    let score = if j == yh { 1.0 } else { 0.0 } - p[j];
                    grad[idx(fwm, x, z, j)] += w * q_xy[z] * p[yh] * reward * score;
                }
            }
        }
    }
    Ok(grad)
}

/// Gradient w.r.t. every IDM logit of
/// `E_(x,y) [ E_{z~Q} log P(y|x,z) - beta KL(Q(.|x,y) || prior(.|x)) ]`.
pub fn exact_phase2_gradient(
    idm: &ConditionalCategorical,
    fwm: &ConditionalCategorical,
    prior: &StatePrior,
    beta: f64,
    pairs: &[(StateId, StateId)],
) -> Result<Vec<f64>> {
    check_models(fwm, idm)?;
    let a = fwm.num_actions();
    check_pairs(pairs, fwm.num_states())?;
    let w = 1.0 / pairs.len() as f64;
    let mut grad = vec![0.0; idm.logits().len()];
    for &(x, y) in pairs {
        let pr = prior.get(x).ok_or(SwirlError::MissingPrior(x))?;
        let q = dist(idm, x, y);
        // per-z integrand of E_Q[f_z] with f_z = R_z - beta (log Q_z - log pi_z);
        // d/dl_j E_Q[f] = sum_z Q_z (delta_zj - Q_j) (f_z + d f_z/d log Q_z) and
        // d f_z / d log Q_z = -beta.
        let f: Vec<f64> = (0..a)
            .map(|z| {
                let reward = dist(fwm, x, z)[y].ln();
                reward - beta * (q[z].ln() - pr[z].ln()) - beta
            })
            .collect();
        for j in 0..a {
            let mut g = 0.0;
            for z in 0..a {
                let d = if z == j { 1.0 } else { 0.0 } - q[j];
                g += q[z] * d * f[z];
            }
            grad[idx(idm, x, y, j)] += w * g;
        }
    }
    Ok(grad)
}

/// Central differences of `f` at `table`, one coordinate at a time.
pub fn finite_difference<F>(f: F, table: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(SwirlError::InvalidConfig(format!("step must be > 0, got {step}")));
    }
    let mut work = table.to_vec();
    let mut out = Vec::with_capacity(table.len());
    for i in 0..table.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = f(&work);
        work[i] = orig - step;
        let down = f(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(SwirlError::NonFinite(format!("function value at coordinate {i}")));
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / ||b||`, or `||a - b||` when `b` is zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nb = norm(b);
    if nb > 0.0 {
        norm(&diff) / nb
    } else {
        norm(&diff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationReport {
    pub mode: AdvantageMode,
    pub group_size: usize,
    pub trials: usize,
    pub mean_direction: Vec<f64>,
    pub exact_gradient: Vec<f64>,
    /// `||mean - exact|| / ||exact||` (absolute when the exact gradient is zero).
    pub relative_error: f64,
    /// Norm of the averaged direction.
    pub mean_norm: f64,
    /// Standard error of the averaged direction, `sqrt(sum_i Var_i / M)`.
    pub standard_error: f64,
}

/// Averages the sampled forward-phase update direction for the single data
/// pair `pair` over `trials` independent groups and compares it with
/// [`exact_phase1_gradient`] for that pair.
pub fn estimator_expectation_test(
    fwm: &ConditionalCategorical,
    idm: &ConditionalCategorical,
    pair: (StateId, StateId),
    config: &GrpoConfig,
    trials: usize,
    seed: u64,
) -> Result<ExpectationReport> {
    config.validate()?;
    if trials < 10_000 {
        return Err(SwirlError::InvalidConfig(format!(
            "estimator test needs at least 10^4 trials, got {trials}"
        )));
    }
    let exact = exact_phase1_gradient(fwm, idm, &[pair])?;
    let (x, y) = pair;
    let g = config.group_size;
    let k = fwm.outcome_dim();
    let mut sum = vec![0.0; exact.len()];
    let mut sum_sq = vec![0.0; exact.len()];
    let mut dir = vec![0.0; k];
    for t in 0..trials {
        let mut r = rng::stream(seed, Purpose::Oracle, 0, 0, 0, t);
        let z = idm.sample((x, y), &mut r)?;
        let samples = fwm.sample_group((x, z), g, &mut r)?;
        let rewards = samples
            .iter()
            .map(|&yh| idm.log_prob((x, yh), z))
            .collect::<Result<Vec<f64>>>()?;
        let adv = compute_advantages(&rewards, config.advantage_mode, config.std_epsilon)?;
        dir.iter_mut().for_each(|d| *d = 0.0);
        for (&yh, &a_k) in samples.iter().zip(&adv.values) {
            for (d, gl) in dir.iter_mut().zip(fwm.grad_log_prob((x, z), yh)?) {
                *d += a_k * gl / g as f64;
            }
        }
        let base = idx(fwm, x, z, 0);
        for (j, d) in dir.iter().enumerate() {
            sum[base + j] += d;
            sum_sq[base + j] += d * d;
        }
    }
    let m = trials as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
    let var_total: f64 = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, mu)| (sq / m - mu * mu).max(0.0))
        .sum();
    Ok(ExpectationReport {
        mode: config.advantage_mode,
        group_size: g,
        trials,
        relative_error: relative_error(&mean, &exact),
        mean_norm: norm(&mean),
        standard_error: (var_total / m).sqrt(),
        mean_direction: mean,
        exact_gradient: exact,
    })
}

/// A random enumerable problem: models, a per-state prior and data pairs.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub fwm: ConditionalCategorical,
    pub idm: ConditionalCategorical,
    pub prior: StatePrior,
    pub pairs: Vec<(StateId, StateId)>,
}

/// Seeded random instance with `2 <= S <= max_states`, `2 <= A <= max_actions`,
/// logits uniform in `[-scale, scale]` and a strictly positive prior.
pub fn random_instance(seed: u64, max_states: usize, max_actions: usize, scale: f64) -> RandomInstance {
    let mut r = rng::seeded(rng::mix(&[seed, Purpose::Oracle as u64]));
    let s = r.gen_range(2..=max_states.max(2));
    let a = r.gen_range(2..=max_actions.max(2));
    let mut logits = |n: usize| -> Vec<f64> { (0..n).map(|_| r.gen_range(-scale..=scale)).collect() };
    let fwm = ConditionalCategorical::from_logits(Role::Fwm, (s, a), s, logits(s * a * s))
        .expect("valid shape");
    let idm = ConditionalCategorical::from_logits(Role::Idm, (s, s), a, logits(s * s * a))
        .expect("valid shape");
    let prior_rows = (0..s)
        .map(|_| {
            let w: Vec<f64> = (0..a).map(|_| r.gen_range(0.05..1.0)).collect();
            let t: f64 = w.iter().sum();
            Some(w.into_iter().map(|v| v / t).collect())
        })
        .collect();
    let n = r.gen_range(s..=4 * s * s);
    let pairs = (0..n)
        .map(|_| (r.gen_range(0..s), r.gen_range(0..s)))
        .collect();
    RandomInstance {
        fwm,
        idm,
        prior: StatePrior::new(prior_rows),
        pairs,
    }
}
