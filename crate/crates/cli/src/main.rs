use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Parser, Subcommand};

use swirl::analysis::{analyse, empirical_belief, Evaluator, PairDistribution};
use swirl::checkpoint;
use swirl::config::{parse_config, RunConfig};
use swirl::metrics::MetricsWriter;
use swirl::policy::{entropy_probs, init_policy, ConditionalCategorical, InitKind, InitSources, ReferencePolicy, Role};
use swirl::swirl::{run_from, Observer};
use swirl::verify::{run_suite, SuiteConfig};
use swirl::worldgen::{build_kernel, sample_dataset, TransitionDataset, TransitionKernel};
use swirl::SwirlError;

const DATASET_FILE: &str = "dataset.txt";
const METRICS_FILE: &str = "metrics.csv";
const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Parser)]
#[command(name = "swirl", version, about = "Alternating forward/inverse model training on enumerable worlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the world kernel and print summary statistics.
    GenWorld {
        #[arg(long)]
        config: PathBuf,
        /// Also save the true kernel as a forward-model checkpoint.
        #[arg(long)]
        fwm_out: Option<PathBuf>,
    },
    /// Sample a transition dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output.dir>/dataset.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the alternating loop, streaming metrics and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file; sampled from the config (and saved) when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from the last completed iteration in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Recompute the analysis metrics for the final checkpoints of a run.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to `output.dir`.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Run the oracle suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte-Carlo groups for the estimator checks.
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Print a checkpoint's distributions.
    Inspect {
        checkpoint: PathBuf,
        /// Context as `i,j`; repeatable. All contexts when omitted.
        #[arg(long = "context")]
        contexts: Vec<String>,
    },
}

enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
    Verification(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let validation = e
            .chain()
            .any(|c| c.downcast_ref::<SwirlError>().is_some_and(SwirlError::is_validation));
        if validation {
            Failure::Validation(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<SwirlError> for Failure {
    fn from(e: SwirlError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(n)) => {
            eprintln!("verification failed: {n} check(s) out of tolerance");
            ExitCode::from(3)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenWorld { config, fwm_out } => gen_world(&load_config(&config)?, fwm_out.as_deref()),
        Command::GenData { config, out } => gen_data(&load_config(&config)?, out),
        Command::Train { config, data, resume } => train(&load_config(&config)?, data.as_deref(), resume),
        Command::Eval { config, dir } => eval(&load_config(&config)?, dir),
        Command::Verify { seed, trials } => verify(seed, trials),
        Command::Inspect { checkpoint, contexts } => inspect(&checkpoint, &contexts),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .map_err(Failure::Runtime)?;
    parse_config(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(Failure::from)
}

fn gen_world(cfg: &RunConfig, fwm_out: Option<&Path>) -> Result<(), Failure> {
    let kernel = build_kernel(&cfg.world)?;
    let (s, a) = (kernel.num_states(), kernel.num_actions());
    let mut entropy = 0.0;
    let mut max_p = 0.0f64;
    let mut min_nonzero = 1.0f64;
    let mut support = 0usize;
    for x in 0..s {
        for z in 0..a {
            let row = kernel.row(x, z);
            entropy += entropy_probs(row);
            for &p in row.iter().filter(|p| **p > 0.0) {
                max_p = max_p.max(p);
                min_nonzero = min_nonzero.min(p);
                support += 1;
            }
        }
    }
    let rows = (s * a) as f64;
    println!("kind={}", cfg.world.kind);
    println!("num_states={s}");
    println!("num_actions={a}");
    println!("deterministic={}", kernel.is_deterministic());
    println!("mean_row_entropy={}", entropy / rows);
    println!("mean_support={}", support as f64 / rows);
    println!("max_probability={max_p}");
    println!("min_nonzero_probability={min_nonzero}");
    if let Some(path) = fwm_out {
        let exact = InitKind::FromKernelNoisy { corruption: 0.0 };
        let sources = InitSources {
            kernel: Some(&kernel),
            labelled: None,
        };
        let fwm = init_policy(Role::Fwm, s, a, exact, sources)?;
        let meta = BTreeMap::from([("source".to_string(), "kernel".to_string())]);
        checkpoint::save(path, &fwm, &meta).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn make_dataset(cfg: &RunConfig, kernel: &TransitionKernel) -> Result<TransitionDataset, Failure> {
    Ok(sample_dataset(kernel, &cfg.dataset.action_prior, cfg.dataset.n, cfg.dataset.seed)?)
}

fn write_dataset(dataset: &TransitionDataset, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    dataset.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn read_dataset(path: &Path) -> anyhow::Result<TransitionDataset> {
    let f = File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    TransitionDataset::read_from(BufReader::new(f)).with_context(|| format!("reading dataset {}", path.display()))
}

fn gen_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let kernel = build_kernel(&cfg.world)?;
    let dataset = make_dataset(cfg, &kernel)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join(DATASET_FILE));
    write_dataset(&dataset, &path)?;
    println!("wrote {} records to {}", dataset.len(), path.display());
    Ok(())
}

fn ensure_writable(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir.join(CHECKPOINT_DIR)).with_context(|| format!("creating {}", dir.display()))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").with_context(|| format!("output dir {} is not writable", dir.display()))?;
    fs::remove_file(probe)?;
    Ok(())
}

fn phase_checkpoint(dir: &Path, iteration: usize, phase: usize, model: &str) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("iter{iteration}_phase{phase}_{model}.swirl"))
}

struct TrainObserver<W: Write> {
    metrics: MetricsWriter<W>,
    dir: PathBuf,
    meta: BTreeMap<String, String>,
}

impl<W: Write> Observer for TrainObserver<W> {
    fn on_record(&mut self, record: &swirl::analysis::MetricsRecord) -> swirl::Result<()> {
        self.metrics.write(record)
    }

    fn on_phase_end(
        &mut self,
        iteration: usize,
        phase: usize,
        fwm: &ConditionalCategorical,
        idm: &ConditionalCategorical,
        _idm_reference: &ReferencePolicy,
    ) -> swirl::Result<()> {
        let mut meta = self.meta.clone();
        meta.insert("iteration".into(), iteration.to_string());
        meta.insert("phase".into(), phase.to_string());
        checkpoint::save(&phase_checkpoint(&self.dir, iteration, phase, "fwm"), fwm, &meta)?;
        checkpoint::save(&phase_checkpoint(&self.dir, iteration, phase, "idm"), idm, &meta)
    }
}

fn last_phase(cfg: &RunConfig) -> usize {
    if cfg.swirl.phase2.steps_per_phase > 0 {
        2
    } else {
        1
    }
}

/// Highest iteration whose final-phase checkpoints exist.
fn last_completed_iteration(cfg: &RunConfig) -> usize {
    let phase = last_phase(cfg);
    (1..=cfg.swirl.max_iterations)
        .take_while(|&i| {
            phase_checkpoint(&cfg.output_dir, i, phase, "fwm").exists()
                && phase_checkpoint(&cfg.output_dir, i, phase, "idm").exists()
        })
        .last()
        .unwrap_or(0)
}

/// Keeps the header and the rows of iterations `<= keep`.
fn truncate_metrics(path: &Path, keep: usize) -> anyhow::Result<()> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        let iteration = line.split(',').next().and_then(|c| c.parse::<usize>().ok());
        if iteration.is_none_or(|i| i <= keep) {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn final_paths(dir: &Path) -> [PathBuf; 3] {
    ["fwm.swirl", "idm.swirl", "idm_ref.swirl"].map(|n| dir.join(n))
}

fn train(cfg: &RunConfig, data: Option<&Path>, resume: bool) -> Result<(), Failure> {
    let dir = cfg.output_dir.clone();
    ensure_writable(&dir)?;
    let kernel = build_kernel(&cfg.world)?;
    let dataset_path = dir.join(DATASET_FILE);
    let dataset = match data {
        Some(p) => read_dataset(p)?,
        None if resume => read_dataset(&dataset_path)?,
        None => make_dataset(cfg, &kernel)?,
    };
    if dataset.spec().num_states != kernel.num_states() || dataset.spec().num_actions != kernel.num_actions() {
        return Err(Failure::Validation(anyhow!("dataset dimensions do not match the configured world")));
    }
    if data.is_some() || !resume {
        write_dataset(&dataset, &dataset_path)?;
    }

    let metrics_path = dir.join(METRICS_FILE);
    let (fwm, idm, first_iteration, out) = if resume {
        let done = last_completed_iteration(cfg);
        if final_paths(&dir).iter().all(|p| p.exists()) && done == cfg.swirl.max_iterations {
            println!("run in {} is already complete", dir.display());
            return Ok(());
        }
        if done == 0 {
            return Err(Failure::Runtime(anyhow!("no completed iteration to resume in {}", dir.display())));
        }
        let phase = last_phase(cfg);
        let fwm = checkpoint::load(&phase_checkpoint(&dir, done, phase, "fwm"))?;
        let idm = checkpoint::load(&phase_checkpoint(&dir, done, phase, "idm"))?;
        truncate_metrics(&metrics_path, done)?;
        let out = OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .with_context(|| format!("opening {}", metrics_path.display()))?;
        println!("resuming at iteration {}", done + 1);
        (fwm, idm, done + 1, out)
    } else {
        let labelled = dataset.labelled_subset(cfg.dataset.labelled_fraction, cfg.dataset.seed)?;
        let sources = InitSources {
            kernel: Some(&kernel),
            labelled: Some(&labelled),
        };
        let (s, a) = (kernel.num_states(), kernel.num_actions());
        let fwm = init_policy(Role::Fwm, s, a, cfg.init.fwm, sources)?;
        let idm = init_policy(Role::Idm, s, a, cfg.init.idm, sources)?;
        let out = File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
        (fwm, idm, 1, out)
    };

    let metrics = if first_iteration == 1 {
        MetricsWriter::new(BufWriter::new(out))?
    } else {
        MetricsWriter::append(BufWriter::new(out))
    };
    let meta = BTreeMap::from([
        ("master_seed".to_string(), cfg.swirl.master_seed.to_string()),
        ("world_kind".to_string(), cfg.world.kind.to_string()),
    ]);
    let mut observer = TrainObserver {
        metrics,
        dir: dir.clone(),
        meta: meta.clone(),
    };
    let evaluator = Evaluator {
        kernel: kernel.clone(),
        dataset: dataset.clone(),
    };
    let outcome = run_from(&cfg.swirl, &dataset, fwm, idm, first_iteration, Some(&evaluator), &mut observer)?;
    observer.metrics.into_inner().flush().context("flushing metrics")?;

    let mut meta = meta;
    meta.insert("iterations_run".into(), outcome.iterations_run.to_string());
    meta.insert("converged".into(), outcome.converged.to_string());
    let [fwm_path, idm_path, ref_path] = final_paths(&dir);
    checkpoint::save(&fwm_path, &outcome.fwm, &meta)?;
    checkpoint::save(&idm_path, &outcome.idm, &meta)?;
    checkpoint::save(&ref_path, outcome.idm_reference.snapshot(), &meta)?;
    if let Some(last) = outcome.trace.last() {
        println!(
            "finished: iterations={} converged={} fwm_accuracy={} idm_accuracy={}",
            outcome.iterations_run,
            outcome.converged,
            last.fwm_accuracy.map_or("-".into(), |v| v.to_string()),
            last.idm_accuracy.map_or("-".into(), |v| v.to_string()),
        );
    }
    Ok(())
}

fn eval(cfg: &RunConfig, dir: Option<PathBuf>) -> Result<(), Failure> {
    let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
    let kernel = build_kernel(&cfg.world)?;
    let dataset = read_dataset(&dir.join(DATASET_FILE))?;
    let [fwm_path, idm_path, ref_path] = final_paths(&dir);
    let load = |p: &Path| checkpoint::load(p).with_context(|| format!("loading {}", p.display()));
    let fwm = load(&fwm_path)?;
    let idm = load(&idm_path)?;
    let reference = load(&ref_path)?;
    for p in [&fwm_path, &idm_path, &ref_path] {
        checkpoint::load_sidecar(p).with_context(|| format!("sidecar of {}", p.display()))?;
    }
    let data = PairDistribution::from_pairs(dataset.pairs(), fwm.num_states())?;
    let prior = empirical_belief(&reference, &data)?;
    let evaluator = Evaluator { kernel, dataset };
    let a = analyse(&fwm, &idm, &prior, &data, Some(&evaluator))?;
    println!("exact_cmi={}", a.exact_cmi);
    println!("cmi_bound={}", a.cmi_bound);
    println!("marginal_loglik={}", a.marginal_loglik);
    println!("elbo={}", a.elbo);
    println!("elbo_gap={}", a.elbo_gap);
    if let Some(v) = a.fwm_accuracy {
        println!("fwm_accuracy={v}");
    }
    if let Some(v) = a.idm_accuracy {
        println!("idm_accuracy={v}");
    }
    Ok(())
}

fn verify(seed: u64, trials: usize) -> Result<(), Failure> {
    let cfg = SuiteConfig {
        seed,
        trials,
        ..SuiteConfig::default()
    };
    let results = run_suite(&cfg)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} checks, {} failed", results.len(), failed);
    if failed > 0 {
        return Err(Failure::Verification(failed));
    }
    Ok(())
}

fn parse_context(text: &str) -> anyhow::Result<(usize, usize)> {
    let (i, j) = text
        .split_once(',')
        .ok_or_else(|| anyhow!("context `{text}` should look like `i,j`"))?;
    Ok((i.trim().parse()?, j.trim().parse()?))
}

fn inspect(path: &Path, contexts: &[String]) -> Result<(), Failure> {
    let model = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Ok(meta) = checkpoint::load_sidecar(path) {
        for (k, v) in meta {
            println!("# {k}={v}");
        }
    }
    let (d1, d2) = model.context_dims();
    let names = match model.role() {
        Role::Fwm => ("x", "z", "y"),
        Role::Idm => ("x", "y", "z"),
    };
    println!("role={} contexts={d1}x{d2} outcomes={}", model.role().as_str(), model.outcome_dim());
    let selected: Vec<(usize, usize)> = if contexts.is_empty() {
        model.contexts().collect()
    } else {
        contexts
            .iter()
            .map(|c| parse_context(c))
            .collect::<anyhow::Result<_>>()
            .map_err(Failure::Validation)?
    };
    for ctx in selected {
        let probs = model.probabilities(ctx)?;
        let cells: Vec<String> = probs.iter().map(|p| format!("{p:.4}")).collect();
        println!("{}={} {}={}: P({} | .) = [{}]", names.0, ctx.0, names.1, ctx.1, names.2, cells.join(", "));
    }
    Ok(())
}
