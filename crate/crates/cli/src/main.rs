//! `entrobound` — evaluate entropy bounds from JSON configs.
//!
//! Exit codes: 0 success, 2 when a proved inequality is numerically violated
//! beyond tolerance (the signal that should never fire), 1 for input or
//! convergence errors. Reports go to `--out` or stdout; the one-line human
//! summary goes to stderr so piped output stays machine-readable.

mod config;
mod error;
mod plot;
mod runner;
mod suite;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig, SuiteConfig};
use error::{Error, Result};
use plot::PlotKind;
use runner::RunReport;

#[derive(Parser)]
#[command(
    name = "entrobound",
    version,
    about = "Entropy-bound evaluation: single runs, batch suites, plot-ready series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one configured bound and write a JSON report.
    Run {
        /// Path to a run config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Evaluate a batch of bounds and write a CSV report.
    Suite {
        /// Path to a suite config (JSON with a `runs` array).
        #[arg(long)]
        config: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Extract a plot-ready series from a run report.
    Plot {
        /// Path to a JSON report produced by `run`.
        #[arg(long = "in")]
        input: PathBuf,
        /// One of: weight-profile, slack-vs-param, mc-convergence.
        #[arg(long)]
        kind: String,
        /// Series destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Flags that override the corresponding config fields.
#[derive(Args)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long = "rel-tol")]
    rel_tol: Option<f64>,
    #[arg(long = "abs-tol")]
    abs_tol: Option<f64>,
}

impl From<&OverrideArgs> for Overrides {
    fn from(a: &OverrideArgs) -> Overrides {
        Overrides {
            seed: a.seed,
            samples: a.samples,
            rel_tol: a.rel_tol,
            abs_tol: a.abs_tol,
        }
    }
}

fn main() {
    // Clap's own exit code for usage errors is 2, which this tool reserves
    // for inequality violations; remap usage errors to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    match dispatch(cli) {
        Ok(violation) => std::process::exit(if violation { 2 } else { 0 }),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}

/// Honor ENTROBOUND_THREADS before any parallel work starts.
fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("ENTROBOUND_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.parse().map_err(|_| {
        Error::config(format!(
            "ENTROBOUND_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    if threads == 0 {
        return Err(Error::config("ENTROBOUND_THREADS must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::config(format!("thread pool initialization failed: {e}")))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            out,
            overrides,
        } => {
            let cfg: RunConfig = read_json(&config)?;
            let cfg = cfg.with_overrides(&(&overrides).into()).with_defaults();
            let report = runner::execute(&cfg)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| Error::config(format!("report serialization failed: {e}")))?;
            write_output(out.as_deref(), &format!("{json}\n"))?;
            eprintln!("{}", run_summary(&report));
            Ok(report.violation)
        }
        Command::Suite {
            config,
            out,
            overrides,
        } => {
            let cfg: SuiteConfig = read_json(&config)?;
            let rows = suite::run_suite(&cfg, &(&overrides).into())?;
            write_output(out.as_deref(), &suite::to_csv(&rows)?)?;
            let failed = rows.iter().filter(|r| r.failed).count();
            let violations = rows.iter().filter(|r| r.violation).count();
            eprintln!(
                "suite: {} rows, {failed} failed, {violations} violations [{}]",
                rows.len(),
                if violations > 0 { "VIOLATION" } else { "ok" }
            );
            Ok(suite::any_violation(&rows))
        }
        Command::Plot { input, kind, out } => {
            let kind = PlotKind::parse(&kind)?;
            let report: RunReport = read_json(&input)?;
            let data = plot::emit_plotdata(&report, kind)?;
            let rows = data.lines().filter(|l| !l.starts_with('#')).count();
            write_output(out.as_deref(), &data)?;
            eprintln!("plot {}: {rows} rows", kind.name());
            Ok(false)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn write_output(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Error::io(path.display().to_string(), e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run_summary(out: &RunReport) -> String {
    let rep = &out.report;
    let status = if out.violation { "VIOLATION" } else { "ok" };
    if let Some(checks) = &out.identities {
        let worst = checks.iter().map(|c| c.max_error).fold(0.0f64, f64::max);
        return format!(
            "{}: {} checks, max error {worst:.3e} [{status}]",
            rep.method,
            checks.len()
        );
    }
    format!(
        "{}: entropy {:.6} bound {:.6} slack {:.3e} ratio {:.4} [{status}]",
        rep.method, rep.entropy, rep.bound, rep.slack, rep.ratio
    )
}
