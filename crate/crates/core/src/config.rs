//! Run configuration in a sectioned `key = value` format.
//!
//! ```text
//! # comments start with '#'
//! [world]
//! kind = permutation          # permutation | shift_noise | slip_grid
//! num_states = 8              # required (slip_grid: grid_rows, grid_cols)
//! num_actions = 4             # required (slip_grid: fixed at 4)
//! noise = 0.0
//! seed = 0
//!
//! [dataset]
//! n = 1000
//! action_prior = uniform      # or a comma list, e.g. 0.1,0.2,0.3,0.4
//! seed = 0
//! labelled_fraction = 0.5
//!
//! [init]
//! fwm = labelled_sft:1.0      # uniform | kernel_noisy:<eta> | labelled_sft:<alpha>
//! idm = labelled_sft:1.0
//!
//! [phase1]                    # [phase2] takes the same keys
//! group_size = 16
//! kl_coeff = 0.0              # phase2 default 0.1
//! learning_rate = 0.05
//! advantage_mode = mean_std   # mean_std | mean_only | leave_one_out
//! std_epsilon = 1e-8
//! steps = 200
//! batch_contexts = 64
//! gradient_mode = sampled     # sampled | exact
//!
//! [swirl]
//! max_iterations = 3
//! convergence_tol = 1e-4
//! master_seed = 0
//!
//! [output]
//! dir = runs/example          # required
//! emit_every = 10
//! ```
//!
//! Unknown sections or keys, duplicate keys, bad values and invariant
//! violations are all errors carrying a line number.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Result, SwirlError};
use crate::grpo::AdvantageMode;
use crate::policy::InitKind;
use crate::swirl::{GradientMode, PhaseConfig, SwirlConfig};
use crate::worldgen::{uniform_prior, validate_prior, WorldKind, WorldSpec};

const PHASE_KEYS: &[&str] = &[
    "group_size",
    "kl_coeff",
    "learning_rate",
    "advantage_mode",
    "std_epsilon",
    "steps",
    "batch_contexts",
    "gradient_mode",
];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "world" => &["kind", "num_states", "num_actions", "noise", "grid_rows", "grid_cols", "seed"],
        "dataset" => &["n", "action_prior", "seed", "labelled_fraction"],
        "init" => &["fwm", "idm"],
        "phase1" | "phase2" => PHASE_KEYS,
        "swirl" => &["max_iterations", "convergence_tol", "master_seed"],
        "output" => &["dir", "emit_every"],
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n: usize,
    pub action_prior: Vec<f64>,
    pub seed: u64,
    pub labelled_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub fwm: InitKind,
    pub idm: InitKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub world: WorldSpec,
    pub dataset: DatasetConfig,
    pub init: InitConfig,
    pub swirl: SwirlConfig,
    pub output_dir: PathBuf,
    pub emit_every: usize,
}

fn line_err(line: usize, message: impl Into<String>) -> SwirlError {
    SwirlError::ConfigLine {
        line,
        message: message.into(),
    }
}

struct Entries {
    values: BTreeMap<(String, String), (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values: BTreeMap<(String, String), (String, usize)> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| line_err(line_no, format!("malformed section header `{line}`")))?
                    .trim();
                if known_keys(name).is_none() {
                    return Err(line_err(line_no, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| line_err(line_no, format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| line_err(line_no, format!("key `{key}` appears before any section")))?;
            if !known_keys(sec).unwrap_or(&[]).contains(&key) {
                return Err(line_err(line_no, format!("unknown key `{key}` in [{sec}]")));
            }
            if value.is_empty() {
                return Err(line_err(line_no, format!("empty value for `{key}`")));
            }
            let slot = (sec.to_string(), key.to_string());
            if let Some((_, first)) = values.get(&slot) {
                return Err(line_err(
                    line_no,
                    format!("duplicate key `{sec}.{key}` (lines {first} and {line_no})"),
                ));
            }
            values.insert(slot, (value.to_string(), line_no));
        }
        Ok(Entries { values })
    }

    fn raw(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.values.get(&(section.to_string(), key.to_string()))
    }

    fn line(&self, section: &str, key: &str) -> Option<usize> {
        self.raw(section, key).map(|(_, l)| *l)
    }

    fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| {
                line_err(*line, format!("`{section}.{key}`: cannot parse `{v}` as {}", type_name::<T>()))
            }),
        }
    }

    fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Runs `check` on a parsed value, attaching the key's line to failures.
    fn checked<T: FromStr>(
        &self,
        section: &str,
        key: &str,
        default: T,
        check: impl FnOnce(&T) -> std::result::Result<(), String>,
    ) -> Result<T> {
        let v = self.get_or(section, key, default)?;
        check(&v).map_err(|m| self.at(section, key, m))?;
        Ok(v)
    }

    /// Error located at a key's line, or unlocated when the key is absent.
    fn at(&self, section: &str, key: &str, message: String) -> SwirlError {
        match self.line(section, key) {
            Some(line) => line_err(line, format!("`{section}.{key}`: {message}")),
            None => SwirlError::InvalidConfig(format!("`{section}.{key}` (default): {message}")),
        }
    }
}

fn type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}

fn parse_init(value: &str) -> std::result::Result<InitKind, String> {
    let (name, arg) = match value.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (value.trim(), None),
    };
    let number = |a: Option<&str>| -> std::result::Result<f64, String> {
        a.ok_or_else(|| format!("`{name}` needs a parameter, e.g. `{name}:0.3`"))?
            .parse::<f64>()
            .map_err(|_| format!("bad parameter in `{value}`"))
    };
    match name {
        "uniform" if arg.is_none() => Ok(InitKind::Uniform),
        "kernel_noisy" => Ok(InitKind::FromKernelNoisy {
            corruption: number(arg)?,
        }),
        "labelled_sft" => Ok(InitKind::FromLabelledSft { alpha: number(arg)? }),
        _ => Err(format!(
            "unknown init `{value}` (expected uniform, kernel_noisy:<eta> or labelled_sft:<alpha>)"
        )),
    }
}

fn parse_phase(e: &Entries, section: &str, defaults: PhaseConfig) -> Result<PhaseConfig> {
    let mut p = defaults;
    p.grpo.group_size = e.checked(section, "group_size", p.grpo.group_size, |g| {
        (*g >= 2).then_some(()).ok_or_else(|| "must be >= 2".to_string())
    })?;
    p.grpo.kl_coeff = e.checked(section, "kl_coeff", p.grpo.kl_coeff, |b| {
        (*b >= 0.0 && b.is_finite()).then_some(()).ok_or_else(|| "must be >= 0".to_string())
    })?;
    p.grpo.learning_rate = e.checked(section, "learning_rate", p.grpo.learning_rate, |v| {
        (*v > 0.0 && v.is_finite()).then_some(()).ok_or_else(|| "must be > 0".to_string())
    })?;
    if let Some((v, line)) = e.raw(section, "advantage_mode") {
        p.grpo.advantage_mode = v
            .parse::<AdvantageMode>()
            .map_err(|err| line_err(*line, err.to_string()))?;
    }
    p.grpo.std_epsilon = e.checked(section, "std_epsilon", p.grpo.std_epsilon, |v| {
        (*v > 0.0).then_some(()).ok_or_else(|| "must be > 0".to_string())
    })?;
    p.steps_per_phase = e.get_or(section, "steps", p.steps_per_phase)?;
    p.batch_contexts = e.checked(section, "batch_contexts", p.batch_contexts, |b| {
        (*b >= 1).then_some(()).ok_or_else(|| "must be >= 1".to_string())
    })?;
    if let Some((v, line)) = e.raw(section, "gradient_mode") {
        p.gradient_mode = v
            .parse::<GradientMode>()
            .map_err(|err| line_err(*line, err.to_string()))?;
    }
    p.grpo
        .validate()
        .map_err(|err| e.at(section, "learning_rate", err.to_string()))?;
    Ok(p)
}

/// Parses and fully validates a run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let e = Entries::parse(text)?;

    let kind: WorldKind = match e.raw("world", "kind") {
        Some((v, line)) => v.parse().map_err(|err: SwirlError| line_err(*line, err.to_string()))?,
        None => WorldKind::Permutation,
    };
    let mut missing = Vec::new();
    let require = |section: &str, key: &str, missing: &mut Vec<String>| {
        if e.raw(section, key).is_none() {
            missing.push(format!("{section}.{key}"));
        }
    };
    if kind == WorldKind::SlipGrid {
        require("world", "grid_rows", &mut missing);
        require("world", "grid_cols", &mut missing);
    } else {
        require("world", "num_states", &mut missing);
        require("world", "num_actions", &mut missing);
    }
    require("output", "dir", &mut missing);
    if !missing.is_empty() {
        return Err(SwirlError::InvalidConfig(format!(
            "missing required fields: {}",
            missing.join(", ")
        )));
    }

    let grid_rows: usize = e.get_or("world", "grid_rows", 0)?;
    let grid_cols: usize = e.get_or("world", "grid_cols", 0)?;
    let (default_s, default_a) = if kind == WorldKind::SlipGrid {
        (grid_rows * grid_cols, 4)
    } else {
        (0, 0)
    };
    let world = WorldSpec {
        kind,
        num_states: e.get_or("world", "num_states", default_s)?,
        num_actions: e.get_or("world", "num_actions", default_a)?,
        noise: e.get_or("world", "noise", 0.0)?,
        grid_rows,
        grid_cols,
        seed: e.get_or("world", "seed", 0)?,
    };
    world.validate().map_err(|err| {
        let key = ["num_states", "num_actions", "noise", "grid_rows", "grid_cols", "kind"]
            .into_iter()
            .find(|k| e.raw("world", k).is_some())
            .unwrap_or("kind");
        e.at("world", key, err.to_string())
    })?;

    let action_prior = match e.raw("dataset", "action_prior") {
        None => uniform_prior(world.num_actions),
        Some((v, _)) if v == "uniform" => uniform_prior(world.num_actions),
        Some((v, line)) => {
            let prior = v
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| line_err(*line, format!("`dataset.action_prior`: bad list `{v}`")))?;
            validate_prior(&prior, world.num_actions).map_err(|err| line_err(*line, err.to_string()))?;
            prior
        }
    };
    let dataset = DatasetConfig {
        n: e.checked("dataset", "n", 1000, |n| {
            (*n >= 1).then_some(()).ok_or_else(|| "must be >= 1".to_string())
        })?,
        action_prior,
        seed: e.get_or("dataset", "seed", 0)?,
        labelled_fraction: e.checked("dataset", "labelled_fraction", 0.5, |f| {
            (*f > 0.0 && *f < 1.0)
                .then_some(())
                .ok_or_else(|| "must lie in (0, 1)".to_string())
        })?,
    };

    let init_for = |key: &str, default: InitKind| -> Result<InitKind> {
        match e.raw("init", key) {
            None => Ok(default),
            Some((v, line)) => parse_init(v).map_err(|m| line_err(*line, format!("`init.{key}`: {m}"))),
        }
    };
    let init = InitConfig {
        fwm: init_for("fwm", InitKind::FromLabelledSft { alpha: 1.0 })?,
        idm: init_for("idm", InitKind::FromLabelledSft { alpha: 1.0 })?,
    };
    if matches!(init.idm, InitKind::FromKernelNoisy { .. }) {
        return Err(e.at("init", "idm", "kernel_noisy is only defined for the fwm".into()));
    }
    if let InitKind::FromKernelNoisy { corruption } = init.fwm {
        if !(0.0..=1.0).contains(&corruption) {
            return Err(e.at("init", "fwm", format!("corruption {corruption} outside [0, 1]")));
        }
    }

    let phase1 = parse_phase(&e, "phase1", PhaseConfig::forward_default())?;
    let phase2 = parse_phase(&e, "phase2", PhaseConfig::inverse_default())?;
    let emit_every = e.checked("output", "emit_every", 10, |v| {
        (*v >= 1).then_some(()).ok_or_else(|| "must be >= 1".to_string())
    })?;
    let swirl = SwirlConfig {
        phase1,
        phase2,
        max_iterations: e.checked("swirl", "max_iterations", 3, |v| {
            (*v >= 1).then_some(()).ok_or_else(|| "must be >= 1".to_string())
        })?,
        convergence_tol: e.checked("swirl", "convergence_tol", 1e-4, |v| {
            (*v > 0.0).then_some(()).ok_or_else(|| "must be > 0".to_string())
        })?,
        master_seed: e.get_or("swirl", "master_seed", 0)?,
        emit_every,
    };
    swirl.validate().map_err(|err| {
        let key = if e.raw("phase1", "steps").is_some() { "phase1" } else { "phase2" };
        e.at(key, "steps", err.to_string())
    })?;

    let output_dir: String = e.get("output", "dir")?.expect("checked above");
    Ok(RunConfig {
        world,
        dataset,
        init,
        swirl,
        output_dir: PathBuf::from(output_dir),
        emit_every,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[world]\nnum_states = 8\nnum_actions = 4\n[output]\ndir = out\n";

    #[test]
    fn empty_file_lists_required_fields() {
        let err = parse_config("").unwrap_err().to_string();
        for f in ["world.num_states", "world.num_actions", "output.dir"] {
            assert!(err.contains(f), "{err}");
        }
    }

    #[test]
    fn defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.swirl.phase1.grpo.group_size, 16);
        assert_eq!(c.swirl.phase2.grpo.group_size, 16);
        assert_eq!(c.swirl.phase1.grpo.kl_coeff, 0.0);
        assert_eq!(c.swirl.phase2.grpo.kl_coeff, 0.1);
        assert_eq!(c.swirl.phase1.grpo.advantage_mode, AdvantageMode::MeanStd);
        assert_eq!(c.dataset.labelled_fraction, 0.5);
        assert_eq!(c.dataset.action_prior, vec![0.25; 4]);
        assert_eq!(c.world.kind, WorldKind::Permutation);
        assert_eq!(c.output_dir, PathBuf::from("out"));
        assert_eq!(c.emit_every, c.swirl.emit_every);
    }

    #[test]
    fn duplicate_key_names_both_lines() {
        let text = "[world]\nnum_states = 8\nnum_actions = 4\nnum_states = 9\n[output]\ndir = o\n";
        let err = parse_config(text).unwrap_err();
        match err {
            SwirlError::ConfigLine { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("lines 2 and 4"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_section() {
        let err = parse_config(&format!("{MINIMAL}[phase1]\nclip = 0.2\n")).unwrap_err();
        assert!(matches!(err, SwirlError::ConfigLine { line: 7, .. }), "{err:?}");
        let err = parse_config(&format!("{MINIMAL}[extra]\n")).unwrap_err();
        assert!(matches!(err, SwirlError::ConfigLine { line: 6, .. }), "{err:?}");
    }

    #[test]
    fn type_mismatch_and_invariants_carry_lines() {
        let err = parse_config("[world]\nnum_states = eight\nnum_actions = 4\n[output]\ndir = o\n").unwrap_err();
        assert!(matches!(err, SwirlError::ConfigLine { line: 2, .. }), "{err:?}");
        let err = parse_config(&format!("{MINIMAL}[dataset]\nlabelled_fraction = 1.0\n")).unwrap_err();
        assert!(matches!(err, SwirlError::ConfigLine { line: 7, .. }), "{err:?}");
        let err = parse_config(&format!("{MINIMAL}[phase2]\ngroup_size = 1\n")).unwrap_err();
        assert!(matches!(err, SwirlError::ConfigLine { line: 7, .. }), "{err:?}");
        let err = parse_config(&format!("{MINIMAL}[phase1]\nsteps = 0\n[phase2]\nsteps = 0\n")).unwrap_err();
        assert!(matches!(err, SwirlError::ConfigLine { .. }), "{err:?}");
        assert!(err.is_validation());
    }

    #[test]
    fn full_config() {
        let text = "\
[world]
kind = slip_grid
grid_rows = 2
grid_cols = 3
noise = 0.1
seed = 4
[dataset]
n = 500
action_prior = 0.1, 0.2, 0.3, 0.4
[init]
fwm = kernel_noisy:0.3
idm = uniform
[phase1]
gradient_mode = exact
advantage_mode = leave_one_out
[phase2]
kl_coeff = 1
[swirl]
max_iterations = 5
master_seed = 9
[output]
dir = /tmp/x
emit_every = 3
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.world.num_states, 6);
        assert_eq!(c.world.num_actions, 4);
        assert_eq!(c.dataset.action_prior, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(c.init.fwm, InitKind::FromKernelNoisy { corruption: 0.3 });
        assert_eq!(c.init.idm, InitKind::Uniform);
        assert_eq!(c.swirl.phase1.gradient_mode, GradientMode::Exact);
        assert_eq!(c.swirl.phase2.grpo.kl_coeff, 1.0);
        assert_eq!(c.swirl.master_seed, 9);
        assert_eq!(c.emit_every, 3);
    }
}
