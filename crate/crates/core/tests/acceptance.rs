//! One line per acceptance criterion: `PASS|FAIL [n] name: details`.

use std::time::{Duration, Instant};

use swirl::analysis::Evaluator;
use swirl::checkpoint;
use swirl::config::{parse_config, RunConfig};
use swirl::metrics::MetricsWriter;
use swirl::policy::{init_policy, InitSources, Role};
use swirl::swirl::{run, Observer, SwirlOutcome};
use swirl::verify::{
    bound_checks, degenerate_scorer_checks, estimator_checks, gap_identity_check, gradient_checks,
    monotonicity_checks, stationarity_checks, CheckResult, SuiteConfig,
};
use swirl::worldgen::{build_kernel, sample_dataset};

const END_TO_END: &str = "
[world]
kind = permutation
num_states = 8
num_actions = 4
seed = 0
[dataset]
n = 2000
seed = 0
labelled_fraction = 0.5
[init]
fwm = kernel_noisy:0.3
idm = labelled_sft:1
[phase1]
gradient_mode = exact
steps = 200
learning_rate = 0.05
[phase2]
gradient_mode = exact
steps = 200
learning_rate = 0.05
[swirl]
max_iterations = 3
master_seed = 0
[output]
dir = unused
";

struct Report {
    failures: Vec<usize>,
}

impl Report {
    fn line(&mut self, id: usize, name: &str, pass: bool, details: String) {
        println!("{} [{id}] {name}: {details}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id);
        }
    }

    fn checks(&mut self, id: usize, name: &str, checks: &[CheckResult], elapsed: Duration, budget: Duration) {
        let pass = checks.iter().all(|c| c.pass) && elapsed < budget;
        let mut parts: Vec<String> = checks
            .iter()
            .map(|c| format!("{}={:.3e} (<{:.0e})", c.name, c.measured, c.tolerance))
            .collect();
        parts.push(format!("runtime={:.2}s (<{}s)", elapsed.as_secs_f64(), budget.as_secs()));
        self.line(id, name, pass, parts.join(", "));
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

#[derive(Default)]
struct CsvSink {
    writer: Option<MetricsWriter<Vec<u8>>>,
}

impl Observer for CsvSink {
    fn on_record(&mut self, record: &swirl::analysis::MetricsRecord) -> swirl::Result<()> {
        self.writer.as_mut().expect("writer").write(record)
    }
}

/// Runs the end-to-end configuration; returns the outcome and the CSV bytes
/// without the timestamped first line.
fn end_to_end(cfg: &RunConfig) -> (SwirlOutcome, Vec<u8>) {
    let kernel = build_kernel(&cfg.world).unwrap();
    let data = sample_dataset(&kernel, &cfg.dataset.action_prior, cfg.dataset.n, cfg.dataset.seed).unwrap();
    let labelled = data.labelled_subset(cfg.dataset.labelled_fraction, cfg.dataset.seed).unwrap();
    let sources = InitSources {
        kernel: Some(&kernel),
        labelled: Some(&labelled),
    };
    let (s, a) = (kernel.num_states(), kernel.num_actions());
    let fwm = init_policy(Role::Fwm, s, a, cfg.init.fwm, sources).unwrap();
    let idm = init_policy(Role::Idm, s, a, cfg.init.idm, sources).unwrap();
    let eval = Evaluator {
        kernel: kernel.clone(),
        dataset: data.clone(),
    };
    let mut sink = CsvSink {
        writer: Some(MetricsWriter::new(Vec::new()).unwrap()),
    };
    let outcome = run(&cfg.swirl, &data, fwm, idm, Some(&eval), &mut sink).unwrap();
    let bytes = sink.writer.take().unwrap().into_inner();
    let body = bytes.splitn(2, |b| *b == b'\n').nth(1).unwrap().to_vec();
    (outcome, body)
}

fn main() {
    let suite = SuiteConfig::default();
    let mut report = Report { failures: Vec::new() };

    let (bounds, t) = timed(|| bound_checks(&suite).unwrap());
    report.checks(1, "bound inequalities and tightness (100 instances)", &bounds, t, Duration::from_secs(10));

    let (gap, t) = timed(|| gap_identity_check(&suite).unwrap());
    report.checks(2, "elbo gap equals posterior KL (100 instances)", &gap, t, Duration::from_secs(10));

    let (grads, t) = timed(|| gradient_checks(&suite).unwrap());
    report.checks(3, "gradient oracles vs finite differences (20 instances)", &grads, t, Duration::from_secs(30));

    let (est, t) = timed(|| estimator_checks(&suite, &[8, 64]).unwrap());
    report.checks(4, "leave-one-out estimator expectation (10^5 groups)", &est, t, Duration::from_secs(60));

    let (mono, t) = timed(|| monotonicity_checks(&suite, 200).unwrap());
    report.checks(5, "coordinate-ascent monotonicity (200 steps)", &mono, t, Duration::from_secs(60));

    let (stat, t) = timed(|| stationarity_checks(&suite).unwrap());
    report.checks(6, "stationarity at closed-form optima", &stat, t, Duration::from_secs(60));

    let cfg = parse_config(END_TO_END).unwrap();
    let ((first, csv_a), t) = timed(|| end_to_end(&cfg));
    let last = first.trace.last().unwrap();
    let fwm_acc = last.fwm_accuracy.unwrap();
    let idm_acc = last.idm_accuracy.unwrap();
    let boundary: Vec<f64> = first
        .trace
        .iteration_boundaries()
        .iter()
        .map(|r| r.marginal_loglik.unwrap())
        .collect();
    let worst_drop = boundary.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let pass = fwm_acc >= 0.95
        && idm_acc >= 0.95
        && worst_drop <= 1e-6
        && boundary.len() == 4
        && t < Duration::from_secs(60);
    report.line(
        7,
        "end-to-end recovery (S=8, A=4, n=2000, 3 iterations)",
        pass,
        format!(
            "fwm_accuracy={fwm_acc} (>=0.95), idm_accuracy={idm_acc} (>=0.95), boundary marginal_loglik={boundary:?}, \
             max drop={worst_drop:.3e} (<=1e-6), runtime={:.2}s (<60s)",
            t.as_secs_f64()
        ),
    );

    let (noop, t) = timed(|| degenerate_scorer_checks(&suite, 200).unwrap());
    report.checks(8, "uniform scorer leaves the FWM bit-unchanged", &noop, t, Duration::from_secs(60));

    let (second, csv_b) = end_to_end(&cfg);
    let models = |o: &SwirlOutcome| {
        [
            checkpoint::encode(&o.fwm),
            checkpoint::encode(&o.idm),
            checkpoint::encode(o.idm_reference.snapshot()),
        ]
    };
    let same_csv = csv_a == csv_b;
    let same_ckpt = models(&first) == models(&second);
    report.line(
        9,
        "determinism of metrics and checkpoints",
        same_csv && same_ckpt,
        format!("csv_identical={same_csv} ({} bytes), checkpoints_identical={same_ckpt}", csv_a.len()),
    );

    if !report.failures.is_empty() {
        eprintln!("failed criteria: {:?}", report.failures);
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
