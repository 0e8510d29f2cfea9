//! Metrics CSV output.
//!
//! The first line is a comment carrying the schema version and a creation
//! timestamp; it is the only nondeterministic part of the file.

use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::analysis::MetricsRecord;
use crate::error::Result;

pub const METRICS_VERSION: &str = "swirl-metrics-v1";

pub const COLUMNS: [&str; 14] = [
    "iteration",
    "phase",
    "step",
    "objective",
    "reward_mean",
    "reward_std",
    "mean_kl_to_ref",
    "exact_cmi",
    "cmi_bound",
    "marginal_loglik",
    "elbo",
    "elbo_gap",
    "fwm_accuracy",
    "idm_accuracy",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn format_row(r: &MetricsRecord) -> String {
    let cells = [
        r.iteration.to_string(),
        r.phase.to_string(),
        r.step.to_string(),
        cell(r.objective),
        cell(r.reward_mean),
        cell(r.reward_std),
        cell(r.mean_kl_to_ref),
        cell(r.exact_cmi),
        cell(r.cmi_bound),
        cell(r.marginal_loglik),
        cell(r.elbo),
        cell(r.elbo_gap),
        cell(r.fwm_accuracy),
        cell(r.idm_accuracy),
    ];
    cells.join(",")
}

pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    /// Writes the version comment and column header.
    pub fn new(mut out: W) -> Result<Self> {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(out, "# {METRICS_VERSION} created_unix={created}")?;
        writeln!(out, "{}", COLUMNS.join(","))?;
        Ok(MetricsWriter { out })
    }

    /// Continues an existing file without writing a header.
    pub fn append(out: W) -> Self {
        MetricsWriter { out }
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", format_row(record))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
