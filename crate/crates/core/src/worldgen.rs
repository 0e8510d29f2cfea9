//! Enumerable synthetic worlds and state-only transition datasets.
//!
//! Three families are provided:
//! - `permutation`: each action is a seeded random permutation of the states.
//! - `shift_noise`: `y = (x + z) mod S` with probability `1 - noise`, the
//!   remaining mass spread uniformly over the other states.
//! - `slip_grid`: a 4-action grid walk (up, down, left, right) where the
//!   intended move executes with probability `1 - noise` and the slip mass is
//!   split evenly over the three other moves. Moves off the grid stay put.
//!
//! Datasets keep the generating actions, but only behind
//! [`TransitionDataset::hidden_actions`], which is reserved for evaluation.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, SwirlError};
use crate::rng;
use crate::{ActionId, Context, StateId};

/// Version tag written at the top of dataset files.
pub const DATASET_VERSION: &str = "swirl-world-v1";

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorldKind {
    Permutation,
    ShiftNoise,
    SlipGrid,
}

impl fmt::Display for WorldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorldKind::Permutation => "permutation",
            WorldKind::ShiftNoise => "shift_noise",
            WorldKind::SlipGrid => "slip_grid",
        })
    }
}

impl FromStr for WorldKind {
    type Err = SwirlError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "permutation" => Ok(WorldKind::Permutation),
            "shift_noise" => Ok(WorldKind::ShiftNoise),
            "slip_grid" => Ok(WorldKind::SlipGrid),
            other => Err(SwirlError::InvalidWorld(format!(
                "unknown world kind `{other}` (expected permutation, shift_noise or slip_grid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub kind: WorldKind,
    pub num_states: usize,
    pub num_actions: usize,
    /// Shift noise or grid slip probability; ignored by permutation worlds.
    pub noise: f64,
    /// Grid shape, only meaningful for slip grids (zero otherwise).
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub seed: u64,
}

impl WorldSpec {
    pub fn permutation(num_states: usize, num_actions: usize, seed: u64) -> Self {
        WorldSpec {
            kind: WorldKind::Permutation,
            num_states,
            num_actions,
            noise: 0.0,
            grid_rows: 0,
            grid_cols: 0,
            seed,
        }
    }

    pub fn shift_noise(num_states: usize, num_actions: usize, noise: f64, seed: u64) -> Self {
        WorldSpec {
            kind: WorldKind::ShiftNoise,
            num_states,
            num_actions,
            noise,
            grid_rows: 0,
            grid_cols: 0,
            seed,
        }
    }

    pub fn slip_grid(rows: usize, cols: usize, slip: f64, seed: u64) -> Self {
        WorldSpec {
            kind: WorldKind::SlipGrid,
            num_states: rows * cols,
            num_actions: 4,
            noise: slip,
            grid_rows: rows,
            grid_cols: cols,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(SwirlError::InvalidWorld(m));
        if self.num_states < 2 {
            return err(format!("num_states must be >= 2, got {}", self.num_states));
        }
        if self.num_actions < 2 {
            return err(format!("num_actions must be >= 2, got {}", self.num_actions));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return err(format!("noise must lie in [0, 1), got {}", self.noise));
        }
        match self.kind {
            WorldKind::SlipGrid => {
                if self.num_actions != 4 {
                    return err(format!("slip_grid needs 4 actions, got {}", self.num_actions));
                }
                if self.grid_rows == 0 || self.grid_cols == 0 {
                    return err("slip_grid needs positive grid_rows and grid_cols".into());
                }
                if self.grid_rows * self.grid_cols != self.num_states {
                    return err(format!(
                        "slip_grid has {}x{} cells but num_states = {}",
                        self.grid_rows, self.grid_cols, self.num_states
                    ));
                }
            }
            WorldKind::ShiftNoise if self.num_actions > self.num_states => {
                return err(format!(
                    "shift_noise needs num_actions <= num_states, got {} > {}",
                    self.num_actions, self.num_states
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Ground-truth dynamics `T(y | x, z)` stored as a dense `S x A x S` table.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    spec: WorldSpec,
    table: Vec<f64>,
}

impl TransitionKernel {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn num_states(&self) -> usize {
        self.spec.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.spec.num_actions
    }

    /// Distribution over next states for `(x, z)`.
    pub fn row(&self, x: StateId, z: ActionId) -> &[f64] {
        let s = self.spec.num_states;
        let start = (x * self.spec.num_actions + z) * s;
        &self.table[start..start + s]
    }

    pub fn prob(&self, x: StateId, z: ActionId, y: StateId) -> f64 {
        self.row(x, z)[y]
    }

    /// True when every row is one-hot.
    pub fn is_deterministic(&self) -> bool {
        self.table.iter().all(|&p| p == 0.0 || p == 1.0)
    }

    /// Builds a permutation kernel from explicit per-action permutations
    /// (`perms[z][x]` is the successor of `x` under `z`).
    pub fn from_permutations(spec: WorldSpec, perms: &[Vec<StateId>]) -> Result<Self> {
        spec.validate()?;
        let s = spec.num_states;
        if perms.len() != spec.num_actions {
            return Err(SwirlError::ShapeMismatch(format!(
                "{} permutations for {} actions",
                perms.len(),
                spec.num_actions
            )));
        }
        for perm in perms {
            let mut seen = vec![false; s];
            if perm.len() != s {
                return Err(SwirlError::ShapeMismatch("permutation length".into()));
            }
            for &y in perm {
                if y >= s || std::mem::replace(&mut seen[y], true) {
                    return Err(SwirlError::InvalidWorld(format!("{perm:?} is not a permutation")));
                }
            }
        }
        let mut table = vec![0.0; s * spec.num_actions * s];
        for x in 0..s {
            for (z, perm) in perms.iter().enumerate() {
                table[(x * spec.num_actions + z) * s + perm[x]] = 1.0;
            }
        }
        Ok(TransitionKernel { spec, table })
    }
}

/// Deterministically constructs the kernel described by `spec`.
pub fn build_kernel(spec: &WorldSpec) -> Result<TransitionKernel> {
    spec.validate()?;
    let s = spec.num_states;
    let a = spec.num_actions;
    match spec.kind {
        WorldKind::Permutation => {
            let mut rng = rng::seeded(spec.seed);
            let perms: Vec<Vec<StateId>> = (0..a)
                .map(|_| {
                    let mut p: Vec<StateId> = (0..s).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect();
            TransitionKernel::from_permutations(spec.clone(), &perms)
        }
        WorldKind::ShiftNoise => {
            let eps = spec.noise;
            let other = eps / (s - 1) as f64;
            let mut table = vec![0.0; s * a * s];
            for x in 0..s {
                for z in 0..a {
                    let target = (x + z) % s;
                    let row = &mut table[(x * a + z) * s..(x * a + z + 1) * s];
                    for (y, p) in row.iter_mut().enumerate() {
                        *p = if y == target { 1.0 - eps } else { other };
                    }
                }
            }
            Ok(TransitionKernel {
                spec: spec.clone(),
                table,
            })
        }
        WorldKind::SlipGrid => {
            let slip = spec.noise;
            let mut table = vec![0.0; s * a * s];
            for x in 0..s {
                for z in 0..a {
                    let row = &mut table[(x * a + z) * s..(x * a + z + 1) * s];
                    for m in 0..4 {
                        let y = grid_move(spec.grid_rows, spec.grid_cols, x, m);
                        row[y] += if m == z { 1.0 - slip } else { slip / 3.0 };
                    }
                }
            }
            Ok(TransitionKernel {
                spec: spec.clone(),
                table,
            })
        }
    }
}

/// Moves 0..4 are up, down, left, right; off-grid moves stay in place.
fn grid_move(rows: usize, cols: usize, state: StateId, mv: usize) -> StateId {
    let (r, c) = (state / cols, state % cols);
    let (r, c) = match mv {
        0 => (r.saturating_sub(1), c),
        1 => ((r + 1).min(rows - 1), c),
        2 => (r, c.saturating_sub(1)),
        _ => (r, (c + 1).min(cols - 1)),
    };
    r * cols + c
}

/// Row-major FWM contexts `(x, z)` and IDM contexts `(x, y)`.
pub fn enumerate_contexts(kernel: &TransitionKernel) -> (Vec<Context>, Vec<Context>) {
    let s = kernel.num_states();
    let a = kernel.num_actions();
    let fwm = (0..s).flat_map(|x| (0..a).map(move |z| (x, z))).collect();
    let idm = (0..s).flat_map(|x| (0..s).map(move |y| (x, y))).collect();
    (fwm, idm)
}

/// Checks that `prior` is a probability vector over `num_actions` actions.
pub fn validate_prior(prior: &[f64], num_actions: usize) -> Result<()> {
    if prior.len() != num_actions {
        return Err(SwirlError::InvalidPrior(format!(
            "length {} but the world has {} actions",
            prior.len(),
            num_actions
        )));
    }
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(SwirlError::InvalidPrior(format!("negative or non-finite entry in {prior:?}")));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(SwirlError::InvalidPrior(format!("entries sum to {total}, not 1")));
    }
    Ok(())
}

pub fn uniform_prior(num_actions: usize) -> Vec<f64> {
    vec![1.0 / num_actions as f64; num_actions]
}

/// A transition with its generating action revealed (warm-up data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelledTransition {
    pub x: StateId,
    pub y: StateId,
    pub z: ActionId,
}

/// State-only pairs `(x, y)` plus the hidden generating actions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    spec: WorldSpec,
    pairs: Vec<(StateId, StateId)>,
    hidden_actions: Vec<ActionId>,
    action_prior: Vec<f64>,
}

impl TransitionDataset {
    pub fn new(
        spec: WorldSpec,
        pairs: Vec<(StateId, StateId)>,
        hidden_actions: Vec<ActionId>,
        action_prior: Vec<f64>,
    ) -> Result<Self> {
        spec.validate()?;
        validate_prior(&action_prior, spec.num_actions)?;
        if pairs.len() != hidden_actions.len() {
            return Err(SwirlError::ShapeMismatch(format!(
                "{} pairs but {} hidden actions",
                pairs.len(),
                hidden_actions.len()
            )));
        }
        let s = spec.num_states;
        for (&(x, y), &z) in pairs.iter().zip(&hidden_actions) {
            if x >= s || y >= s {
                return Err(SwirlError::IndexOutOfRange {
                    what: "state",
                    index: x.max(y),
                    bound: s,
                });
            }
            if z >= spec.num_actions {
                return Err(SwirlError::IndexOutOfRange {
                    what: "action",
                    index: z,
                    bound: spec.num_actions,
                });
            }
        }
        Ok(TransitionDataset {
            spec,
            pairs,
            hidden_actions,
            action_prior,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn pairs(&self) -> &[(StateId, StateId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn action_prior(&self) -> &[f64] {
        &self.action_prior
    }

    /// The generating actions. Evaluation only: training never calls this.
    pub fn hidden_actions(&self) -> &[ActionId] {
        &self.hidden_actions
    }

    /// Replaces the hidden actions, keeping the observable pairs.
    pub fn with_hidden_actions(&self, hidden_actions: Vec<ActionId>) -> Result<Self> {
        TransitionDataset::new(
            self.spec.clone(),
            self.pairs.clone(),
            hidden_actions,
            self.action_prior.clone(),
        )
    }

    /// Splits off a seeded random `fraction` of records with actions revealed,
    /// for warm-up initialisation.
    pub fn labelled_subset(&self, fraction: f64, seed: u64) -> Result<Vec<LabelledTransition>> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(SwirlError::InvalidConfig(format!(
                "labelled_fraction must lie in (0, 1), got {fraction}"
            )));
        }
        let take = ((self.len() as f64) * fraction).round() as usize;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::seeded(rng::mix(&[seed, rng::Purpose::Split as u64])));
        idx.truncate(take);
        idx.sort_unstable();
        Ok(idx
            .into_iter()
            .map(|i| LabelledTransition {
                x: self.pairs[i].0,
                y: self.pairs[i].1,
                z: self.hidden_actions[i],
            })
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = &self.spec;
        writeln!(w, "{DATASET_VERSION}")?;
        writeln!(w, "world_kind={}", spec.kind)?;
        writeln!(w, "num_states={}", spec.num_states)?;
        writeln!(w, "num_actions={}", spec.num_actions)?;
        writeln!(w, "noise={}", spec.noise)?;
        writeln!(w, "grid_rows={}", spec.grid_rows)?;
        writeln!(w, "grid_cols={}", spec.grid_cols)?;
        writeln!(w, "seed={}", spec.seed)?;
        let prior: Vec<String> = self.action_prior.iter().map(|p| p.to_string()).collect();
        writeln!(w, "action_prior={}", prior.join(","))?;
        writeln!(w, "records={}", self.pairs.len())?;
        for (&(x, y), z) in self.pairs.iter().zip(&self.hidden_actions) {
            writeln!(w, "{x}\t{y}\t{z}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| SwirlError::Format(format!("unexpected end of file, expected {what}")))
        };
        let tag = next("version tag")?;
        if tag.trim() != DATASET_VERSION {
            return Err(SwirlError::Format(format!(
                "version tag `{}` does not match `{DATASET_VERSION}`",
                tag.trim()
            )));
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next(key)?;
            match line.split_once('=') {
                Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
                _ => Err(SwirlError::Format(format!("expected `{key}=...`, found `{line}`"))),
            }
        };
        fn num<T: FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| SwirlError::Format(format!("bad value `{v}` for {key}")))
        }
        let kind: WorldKind = field("world_kind")?.parse()?;
        let spec = WorldSpec {
            kind,
            num_states: num("num_states", field("num_states")?)?,
            num_actions: num("num_actions", field("num_actions")?)?,
            noise: num("noise", field("noise")?)?,
            grid_rows: num("grid_rows", field("grid_rows")?)?,
            grid_cols: num("grid_cols", field("grid_cols")?)?,
            seed: num("seed", field("seed")?)?,
        };
        let prior = field("action_prior")?
            .split(',')
            .map(|p| num("action_prior", p.trim().to_string()))
            .collect::<Result<Vec<f64>>>()?;
        let records: usize = num("records", field("records")?)?;
        let mut pairs = Vec::with_capacity(records);
        let mut hidden = Vec::with_capacity(records);
        for i in 0..records {
            let line = next("record")?;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(SwirlError::Format(format!("record {i}: expected 3 tab-separated fields")));
            }
            let x = num("x", cols[0].to_string())?;
            let y = num("y", cols[1].to_string())?;
            let z = num("z_hidden", cols[2].to_string())?;
            pairs.push((x, y));
            hidden.push(z);
        }
        TransitionDataset::new(spec, pairs, hidden, prior)
    }
}

/// Draws `n` records: `x ~ Uniform(S)`, `z ~ action_prior`, `y ~ T(. | x, z)`.
pub fn sample_dataset(
    kernel: &TransitionKernel,
    action_prior: &[f64],
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if n == 0 {
        return Err(SwirlError::InvalidConfig("dataset size n must be >= 1".into()));
    }
    validate_prior(action_prior, kernel.num_actions())?;
    let mut rng = rng::seeded(rng::mix(&[seed, rng::Purpose::Dataset as u64]));
    let action_dist = WeightedIndex::new(action_prior)
        .map_err(|e| SwirlError::InvalidPrior(e.to_string()))?;
    let row_dists: Vec<WeightedIndex<f64>> = (0..kernel.num_states())
        .flat_map(|x| (0..kernel.num_actions()).map(move |z| (x, z)))
        .map(|(x, z)| WeightedIndex::new(kernel.row(x, z)).expect("kernel rows are distributions"))
        .collect();
    let mut pairs = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.gen_range(0..kernel.num_states());
        let z = action_dist.sample(&mut rng);
        let y = row_dists[x * kernel.num_actions() + z].sample(&mut rng);
        pairs.push((x, y));
        hidden.push(z);
    }
    TransitionDataset::new(kernel.spec().clone(), pairs, hidden, action_prior.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_rows_normalised(k: &TransitionKernel) {
        for x in 0..k.num_states() {
            for z in 0..k.num_actions() {
                let row = k.row(x, z);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_permutation_kernel() {
        let spec = WorldSpec::permutation(3, 2, 0);
        let k = TransitionKernel::from_permutations(spec, &[vec![0, 1, 2], vec![1, 2, 0]]).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(k.prob(x, 0, y), if x == y { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn noiseless_shift() {
        let k = build_kernel(&WorldSpec::shift_noise(4, 2, 0.0, 1)).unwrap();
        for x in 0..4 {
            for z in 0..2 {
                for y in 0..4 {
                    let want = if y == (x + z) % 4 { 1.0 } else { 0.0 };
                    assert_eq!(k.prob(x, z, y), want);
                }
            }
        }
    }

    #[test]
    fn noisy_shift_entries() {
        let k = build_kernel(&WorldSpec::shift_noise(4, 2, 0.3, 1)).unwrap();
        assert_rows_normalised(&k);
        for x in 0..4 {
            for z in 0..2 {
                for y in 0..4 {
                    let want = if y == (x + z) % 4 { 0.7 } else { 0.1 };
                    assert!((k.prob(x, z, y) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn slip_grid_clamps_and_normalises() {
        let k = build_kernel(&WorldSpec::slip_grid(2, 3, 0.3, 0)).unwrap();
        assert_rows_normalised(&k);
        // corner 0: up and left both stay put
        let up = k.row(0, 0);
        assert!((up[0] - (0.7 + 0.1)).abs() < 1e-15);
        assert!((up[3] - 0.1).abs() < 1e-15);
        assert!((up[1] - 0.1).abs() < 1e-15);
        // moving right from the centre of the top row
        let right = k.row(1, 3);
        assert!((right[2] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(build_kernel(&WorldSpec::shift_noise(3, 4, 0.1, 0)).is_err());
        let mut bad = WorldSpec::slip_grid(2, 2, 0.1, 0);
        bad.num_actions = 3;
        assert!(build_kernel(&bad).is_err());
        bad = WorldSpec::slip_grid(2, 2, 0.1, 0);
        bad.num_states = 5;
        assert!(build_kernel(&bad).is_err());
        assert!(build_kernel(&WorldSpec::permutation(1, 2, 0)).is_err());
        assert!(build_kernel(&WorldSpec::shift_noise(4, 2, 1.0, 0)).is_err());
    }

    #[test]
    fn permutation_rows_are_bijections() {
        let k = build_kernel(&WorldSpec::permutation(7, 3, 42)).unwrap();
        assert!(k.is_deterministic());
        for z in 0..3 {
            let mut hit = [false; 7];
            for x in 0..7 {
                let y = k.row(x, z).iter().position(|&p| p == 1.0).unwrap();
                assert!(!hit[y]);
                hit[y] = true;
            }
        }
        assert_eq!(k, build_kernel(&WorldSpec::permutation(7, 3, 42)).unwrap());
    }

    #[test]
    fn contexts_are_row_major() {
        let k = build_kernel(&WorldSpec::shift_noise(2, 2, 0.0, 0)).unwrap();
        let (fwm, idm) = enumerate_contexts(&k);
        assert_eq!(fwm, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(idm, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let k = build_kernel(&WorldSpec::permutation(3, 2, 0)).unwrap();
        let (fwm, idm) = enumerate_contexts(&k);
        assert_eq!((fwm.len(), idm.len()), (6, 9));
    }

    #[test]
    fn sampling_rejects_bad_input() {
        let k = build_kernel(&WorldSpec::permutation(3, 2, 0)).unwrap();
        assert!(sample_dataset(&k, &[0.5, 0.5], 0, 0).is_err());
        assert!(sample_dataset(&k, &[0.7, 0.7], 10, 0).is_err());
        assert!(sample_dataset(&k, &[1.5, -0.5], 10, 0).is_err());
        assert!(sample_dataset(&k, &[1.0], 10, 0).is_err());
    }

    #[test]
    fn permutation_samples_are_consistent() {
        let k = build_kernel(&WorldSpec::permutation(5, 3, 9)).unwrap();
        let d = sample_dataset(&k, &uniform_prior(3), 500, 4).unwrap();
        for (&(x, y), &z) in d.pairs().iter().zip(d.hidden_actions()) {
            assert_eq!(k.prob(x, z, y), 1.0);
        }
        assert_eq!(d, sample_dataset(&k, &uniform_prior(3), 500, 4).unwrap());
    }

    #[test]
    fn shift_noise_frequency_converges() {
        let k = build_kernel(&WorldSpec::shift_noise(4, 2, 0.3, 0)).unwrap();
        let d = sample_dataset(&k, &uniform_prior(2), 100_000, 11).unwrap();
        let hits = d
            .pairs()
            .iter()
            .zip(d.hidden_actions())
            .filter(|(&(x, y), &z)| y == (x + z) % 4)
            .count();
        let freq = hits as f64 / d.len() as f64;
        assert!((freq - 0.7).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn labelled_subset_takes_fraction() {
        let k = build_kernel(&WorldSpec::permutation(4, 2, 1)).unwrap();
        let d = sample_dataset(&k, &uniform_prior(2), 101, 2).unwrap();
        let lab = d.labelled_subset(0.5, 3).unwrap();
        assert_eq!(lab.len(), 51);
        assert!(d.labelled_subset(1.0, 3).is_err());
        assert!(d.labelled_subset(0.0, 3).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let k = build_kernel(&WorldSpec::slip_grid(2, 2, 0.15, 5)).unwrap();
        let d = sample_dataset(&k, &[0.1, 0.2, 0.3, 0.4], 50, 8).unwrap();
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = TransitionDataset::read_from(&buf[..]).unwrap();
        assert_eq!(back, d);

        let text = String::from_utf8(buf).unwrap().replacen(DATASET_VERSION, "swirl-world-v0", 1);
        assert!(matches!(
            TransitionDataset::read_from(text.as_bytes()),
            Err(SwirlError::Format(_))
        ));
    }
}
