//! Plot-data emission: pull a series out of a run report and render it as
//! whitespace-separated columns with `#` header comments, readable by any
//! plotting tool.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::runner::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    WeightProfile,
    SlackVsParam,
    McConvergence,
}

impl PlotKind {
    pub fn parse(name: &str) -> Result<PlotKind> {
        match name {
            "weight-profile" => Ok(PlotKind::WeightProfile),
            "slack-vs-param" => Ok(PlotKind::SlackVsParam),
            "mc-convergence" => Ok(PlotKind::McConvergence),
            other => Err(Error::config(format!(
                "unknown plot kind `{other}`; expected weight-profile, slack-vs-param, or mc-convergence"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::WeightProfile => "weight-profile",
            PlotKind::SlackVsParam => "slack-vs-param",
            PlotKind::McConvergence => "mc-convergence",
        }
    }
}

/// Render the requested series. Two columns `(x, y)` for deterministic
/// series, three `(x, y, σ)` when every row carries an uncertainty.
pub fn emit_plotdata(report: &RunReport, kind: PlotKind) -> Result<String> {
    let series = report.series.as_ref();
    let mut out = String::new();
    let method = &report.report.method;
    match kind {
        PlotKind::WeightProfile => {
            let rows = series.and_then(|s| s.weight_profile.as_ref()).ok_or_else(|| {
                Error::missing_series(
                    "weight-profile",
                    "a quantile-family method (theorem3, prop1, eq145)",
                )
            })?;
            let _ = writeln!(out, "# weight profile: method {method}");
            let _ = writeln!(out, "# columns: v K(quantile(v))");
            for r in rows {
                let _ = writeln!(out, "{} {}", r.v, r.k);
            }
        }
        PlotKind::SlackVsParam => {
            let rows = series.and_then(|s| s.sweep.as_ref()).ok_or_else(|| {
                Error::missing_series("slack-vs-param", "a `sweep` block in the config")
            })?;
            let with_sd = rows.iter().all(|r| r.slack_sd.is_some());
            let _ = writeln!(out, "# slack vs parameter: method {method}");
            let _ = writeln!(
                out,
                "# columns: param slack{}",
                if with_sd { " sigma" } else { "" }
            );
            for r in rows {
                match (with_sd, r.slack_sd) {
                    (true, Some(sd)) => {
                        let _ = writeln!(out, "{} {} {}", r.value, r.slack, sd);
                    }
                    _ => {
                        let _ = writeln!(out, "{} {}", r.value, r.slack);
                    }
                }
            }
        }
        PlotKind::McConvergence => {
            let rows = series.and_then(|s| s.convergence.as_ref()).ok_or_else(|| {
                Error::missing_series("mc-convergence", "`convergence_series: true` in the config")
            })?;
            let _ = writeln!(out, "# Monte Carlo convergence: method {method}");
            let _ = writeln!(out, "# columns: n slack sigma");
            for r in rows {
                let _ = writeln!(out, "{} {} {}", r.n, r.slack, r.slack_sd);
            }
        }
    }
    Ok(out)
}
