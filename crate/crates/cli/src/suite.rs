//! Batch execution: every run in the suite becomes one CSV row with a fixed
//! column set. Failures do not stop the batch — they become rows whose
//! numeric columns are empty and whose `error` column carries the message.

use entrobound_core::Measure1D;
use rayon::prelude::*;

use crate::config::{Method, Overrides, RunConfig, SuiteConfig};
use crate::error::{Error, Result};
use crate::runner::{execute, RunReport};

pub const CSV_COLUMNS: [&str; 9] = [
    "method", "measure", "function", "entropy", "bound", "slack", "ratio", "error", "seed",
];

/// One materialized CSV row; fields are already rendered to strings so the
/// writer stays a dumb serializer.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub cells: [String; 9],
    pub violation: bool,
    pub failed: bool,
}

/// Run all configs (rows execute in parallel, output preserves input
/// order) and report whether any row violated its inequality.
pub fn run_suite(suite: &SuiteConfig, overrides: &Overrides) -> Result<Vec<SuiteRow>> {
    suite.validate()?;
    let rows: Vec<SuiteRow> = suite
        .runs
        .par_iter()
        .map(|raw| {
            let cfg = raw.clone().with_overrides(overrides).with_defaults();
            match execute(&cfg) {
                Ok(report) => success_row(&cfg, &report),
                Err(err) => failure_row(&cfg, &err),
            }
        })
        .collect();
    Ok(rows)
}

pub fn any_violation(rows: &[SuiteRow]) -> bool {
    rows.iter().any(|r| r.violation)
}

/// Render rows as CSV with the fixed header. The `csv` writer handles
/// quoting, so messages with commas or quotes stay one field.
pub fn to_csv(rows: &[SuiteRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)
        .and_then(|()| rows.iter().try_for_each(|r| w.write_record(&r.cells)))
        .map_err(|e| Error::config(format!("CSV serialization failed: {e}")))?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::config(format!("CSV serialization failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::config(format!("CSV is not UTF-8: {e}")))
}

fn measure_label(cfg: &RunConfig) -> String {
    match cfg.method {
        Method::McTheorem1 => "martingale-tree".to_string(),
        Method::McBrownian => "wiener".to_string(),
        Method::McPoisson => match cfg.rate {
            Some(rate) => format!("poisson(rate={rate})"),
            None => "poisson".to_string(),
        },
        _ => cfg
            .measure
            .as_ref()
            .and_then(|spec| spec.build().ok().map(|m: Measure1D| m.label()))
            .unwrap_or_default(),
    }
}

fn float_cell(x: f64) -> String {
    format!("{x}")
}

fn success_row(cfg: &RunConfig, out: &RunReport) -> SuiteRow {
    let rep = &out.report;
    // Deterministic rows carry the quadrature error estimate; Monte Carlo
    // rows carry the slack standard error.
    let error = rep.slack_stderr.unwrap_or(rep.quadrature_error);
    SuiteRow {
        cells: [
            cfg.method.name().to_string(),
            measure_label(cfg),
            cfg.function.clone().unwrap_or_default(),
            float_cell(rep.entropy),
            float_cell(rep.bound),
            float_cell(rep.slack),
            float_cell(rep.ratio),
            float_cell(error),
            cfg.seed.map(|s| s.to_string()).unwrap_or_default(),
        ],
        violation: out.violation,
        failed: false,
    }
}

fn failure_row(cfg: &RunConfig, err: &Error) -> SuiteRow {
    let message: String = err
        .to_string()
        .chars()
        .map(|c| if c == '\n' { ' ' } else { c })
        .collect();
    SuiteRow {
        cells: [
            cfg.method.name().to_string(),
            measure_label(cfg),
            cfg.function.clone().unwrap_or_default(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            format!("ERROR: {message}"),
            cfg.seed.map(|s| s.to_string()).unwrap_or_default(),
        ],
        violation: false,
        failed: true,
    }
}
