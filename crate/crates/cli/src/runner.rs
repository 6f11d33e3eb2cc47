//! Executes one validated `RunConfig`: builds the measure/family/function,
//! dispatches to the core routine, and assembles the report with any
//! requested series. Violation detection implements the exit-2 contract.

use entrobound_core::{
    brownian_cylinder_check, classic_lsi_rhs, conjugate_derivative, entropy, eq145_bound, fhat,
    log_mass_identity_lhs, poisson_functional_check, power_identity_lhs, prop1_bound, ratio_of,
    theorem1_mc, theorem2_bound, theorem3_bound, trimming_martingale_mc, weights, BoundReport,
    CylinderFunctional, Differentiable, Expr, McReport, Measure1D, QuadratureSpec, TrimmedFamily1D,
};
use serde::{Deserialize, Serialize};

use crate::config::{FamilyConfig, Method, RunConfig};
use crate::error::{Error, Result};

/// Number of subdivisions of the weight-profile grid; the series has one
/// point per `v = i/WEIGHT_GRID` for `i = 0..=WEIGHT_GRID`, so the midpoint
/// `v = 1/2` is always a grid point.
pub const WEIGHT_GRID: usize = 512;

/// Identity-suite tolerances (quadrature identities, closed forms, the
/// conjugate involution, and its finite-difference derivative check).
pub const IDENTITY_TOL: f64 = 1e-6;
pub const CLOSED_FORM_TOL: f64 = 1e-12;
pub const INVOLUTION_TOL: f64 = 1e-8;
pub const CONJUGATE_FD_TOL: f64 = 1e-5;

/// Full single-run report: the effective config (defaults filled in), the
/// bound quadruple, optional Monte Carlo diagnostics, identity-check rows,
/// and plot-ready series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub report: BoundReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mc: Option<McDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub identities: Option<Vec<IdentityCheck>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub series: Option<SeriesBlock>,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McDiagnostics {
    pub n: u64,
    pub mean_w: f64,
    pub mean_z: f64,
    pub excess_kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBlock {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight_profile: Option<Vec<WeightRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub convergence: Option<Vec<ConvergenceRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<Vec<SweepRow>>,
}

impl SeriesBlock {
    fn empty() -> SeriesBlock {
        SeriesBlock {
            weight_profile: None,
            convergence: None,
            sweep: None,
        }
    }

    fn is_empty(&self) -> bool {
        self.weight_profile.is_none() && self.convergence.is_none() && self.sweep.is_none()
    }
}

/// One point of the quantile-weight profile: `K` is the weighted
/// log-Sobolev weight, `W` and `U` the symmetrization-bound weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub v: f64,
    pub k: f64,
    pub w: f64,
    pub u: f64,
}

/// Slack estimate after the first `n` samples of the same streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: u64,
    pub slack: f64,
    pub slack_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub entropy: f64,
    pub bound: f64,
    pub slack: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub slack_sd: Option<f64>,
}

/// Run a config end to end (defaults must already be filled in via
/// `with_defaults`). The returned report carries its own violation flag.
pub fn execute(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let digest = cfg.digest()?;
    let mut series = SeriesBlock::empty();

    let (report, mc, identities) = if let Some(sweep) = &cfg.sweep {
        let mut rows = Vec::with_capacity(sweep.values.len());
        let mut last: Option<(BoundReport, Option<McDiagnostics>)> = None;
        for &value in &sweep.values {
            let sub = cfg.at_sweep_value(&sweep.param, value)?;
            sub.validate()?;
            let (rep, mc, _) = execute_once(&sub)?;
            rows.push(SweepRow {
                value,
                entropy: rep.entropy,
                bound: rep.bound,
                slack: rep.slack,
                slack_sd: rep.slack_stderr,
            });
            last = Some((rep, mc));
        }
        series.sweep = Some(rows);
        let (rep, mc) = last.expect("sweep.values validated non-empty");
        (rep, mc, None)
    } else {
        execute_once(cfg)?
    };

    if cfg.method.uses_weights()
        && cfg.sweep.is_none()
        && matches!(cfg.family, FamilyConfig::Quantile)
    {
        if let Some(spec) = &cfg.measure {
            let m = spec.build()?;
            series.weight_profile = Some(weight_profile(&m, &cfg.quadrature)?);
        }
    }
    if cfg.convergence_series && cfg.sweep.is_none() {
        series.convergence = Some(convergence_series(cfg)?);
    }

    let violation = sweep_violation(&series, cfg)
        || identity_violation(&identities)
        || is_violation(cfg.method, &report, cfg.violation_tol);
    Ok(RunReport {
        config: cfg.clone(),
        report: report.with_digest(&digest),
        mc,
        identities,
        series: if series.is_empty() { None } else { Some(series) },
        violation,
    })
}

/// Exit-2 predicate. Deterministic methods compare slack against the
/// tolerance plus the quadrature error estimate; Monte Carlo methods use
/// three standard errors. `entropy` reports no independent bound, so it can
/// never violate.
pub fn is_violation(method: Method, rep: &BoundReport, tol: f64) -> bool {
    if method == Method::Entropy {
        return false;
    }
    match rep.slack_stderr {
        Some(sd) if sd > 0.0 => rep.slack < -3.0 * sd,
        _ => rep.slack < -(tol * (1.0 + rep.bound.abs()) + rep.quadrature_error),
    }
}

fn sweep_violation(series: &SeriesBlock, cfg: &RunConfig) -> bool {
    let Some(rows) = &series.sweep else {
        return false;
    };
    rows.iter().any(|row| {
        let rep = BoundReport {
            slack_stderr: row.slack_sd,
            ..BoundReport::new(cfg.method.name(), row.entropy, row.bound, 0.0)
        };
        is_violation(cfg.method, &rep, cfg.violation_tol)
    })
}

fn identity_violation(identities: &Option<Vec<IdentityCheck>>) -> bool {
    identities
        .as_ref()
        .is_some_and(|checks| checks.iter().any(|c| !c.pass))
}

type Outcome = (BoundReport, Option<McDiagnostics>, Option<Vec<IdentityCheck>>);

fn execute_once(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.method {
        Method::Entropy => deterministic(cfg, eval_entropy),
        Method::Classic => deterministic(cfg, eval_classic),
        Method::Theorem2 => deterministic(cfg, eval_theorem2),
        Method::Prop1 => deterministic(cfg, eval_prop1),
        Method::Eq145 => deterministic(cfg, eval_eq145),
        Method::Theorem3 => deterministic(cfg, eval_theorem3),
        Method::McTheorem1 => monte_carlo(cfg, eval_mc_theorem1),
        Method::McBrownian => monte_carlo(cfg, eval_mc_brownian),
        Method::McPoisson => monte_carlo(cfg, eval_mc_poisson),
        Method::McTrimming => monte_carlo(cfg, eval_mc_trimming),
        Method::Identities => identities_suite(cfg),
    }
}

struct Problem {
    measure: Measure1D,
    family: TrimmedFamily1D,
    function: Expr,
    spec: QuadratureSpec,
}

fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    let measure = cfg
        .measure
        .as_ref()
        .expect("validated: measure present")
        .build()?;
    let family = match &cfg.family {
        FamilyConfig::Quantile => TrimmedFamily1D::quantile(&measure),
        FamilyConfig::Custom { a, b } => {
            TrimmedFamily1D::custom(Expr::parse(a)?, Expr::parse(b)?, &measure)?
        }
    };
    let function = Expr::parse(cfg.function.as_deref().expect("validated: function present"))?;
    Ok(Problem {
        measure,
        family,
        function,
        spec: cfg.quadrature,
    })
}

fn deterministic(cfg: &RunConfig, eval: fn(&RunConfig, &Problem) -> Result<BoundReport>) -> Result<Outcome> {
    let p = build_problem(cfg)?;
    // A constant function makes every bound in the family exactly 0 ≥ 0:
    // entropy is zero and each right-hand side integrates a vanishing
    // derivative or deviation. Report the exact values rather than
    // quadrature noise. Domain errors in the constant still surface.
    if p.function.vars().is_empty() {
        let c = p.function.eval1(0.0)?;
        let needs_domain_error =
            !c.is_finite() || (takes_nonnegative_argument(cfg.method) && c < 0.0);
        if !needs_domain_error {
            return Ok((
                BoundReport::new(cfg.method.name(), 0.0, 0.0, 0.0),
                None,
                None,
            ));
        }
        // Fall through so the usual domain check reports the error.
    }
    Ok((eval(cfg, &p)?, None, None))
}

/// Methods whose function argument is the density-like `g ≥ 0` rather than
/// a square-integrated `f`.
fn takes_nonnegative_argument(method: Method) -> bool {
    matches!(method, Method::Entropy | Method::Theorem2 | Method::McTrimming)
}

fn eval_entropy(cfg: &RunConfig, p: &Problem) -> Result<BoundReport> {
    let ent = entropy(&p.measure, &|x| p.function.eval1(x), &p.spec)?;
    let mut rep = BoundReport::new(cfg.method.name(), ent.value, ent.value, ent.error);
    rep.flags.push("entropy-only".to_string());
    Ok(rep)
}

fn eval_classic(cfg: &RunConfig, p: &Problem) -> Result<BoundReport> {
    let f = Differentiable::new(p.function.clone())?;
    let c = cfg.constant.unwrap_or(1.0);
    let ent = entropy(
        &p.measure,
        &|x| {
            let y = f.expr().eval1(x)?;
            Ok(y * y)
        },
        &p.spec,
    )?;
    let rhs = classic_lsi_rhs(&p.measure, &f, c, &p.spec)?;
    Ok(BoundReport::new(
        cfg.method.name(),
        ent.value,
        rhs.value,
        ent.error + rhs.error,
    ))
}

fn eval_theorem2(cfg: &RunConfig, p: &Problem) -> Result<BoundReport> {
    let g = |x: f64| p.function.eval1(x);
    let ent = entropy(&p.measure, &g, &p.spec)?;
    let val = theorem2_bound(&p.measure, &p.family, &g, &p.spec)?;
    let mut rep = BoundReport::new(
        cfg.method.name(),
        ent.value,
        val.bound,
        ent.error + val.error,
    );
    rep.flags = val.flags;
    Ok(rep)
}

fn eval_prop1(cfg: &RunConfig, p: &Problem) -> Result<BoundReport> {
    let f = Differentiable::new(p.function.clone())?;
    let ent = entropy(
        &p.measure,
        &|x| {
            let y = f.expr().eval1(x)?;
            Ok(y * y)
        },
        &p.spec,
    )?;
    let bound = prop1_bound(&p.measure, &p.family, &f, &p.spec)?;
    Ok(BoundReport::new(
        cfg.method.name(),
        ent.value,
        bound.value,
        ent.error + bound.error,
    ))
}

fn eval_eq145(cfg: &RunConfig, p: &Problem) -> Result<BoundReport> {
    let f = Differentiable::new(p.function.clone())?;
    let ent = entropy(
        &p.measure,
        &|x| {
            let y = f.expr().eval1(x)?;
            Ok(y * y)
        },
        &p.spec,
    )?;
    let b = eq145_bound(&p.measure, &p.family, &f, &p.spec)?;
    let mut rep = BoundReport::new(cfg.method.name(), ent.value, b.total, ent.error + b.error);
    rep.flags.push(format!(
        "symmetrized-term {} local-term {}",
        b.symmetrized_term, b.local_term
    ));
    Ok(rep)
}

fn eval_theorem3(cfg: &RunConfig, p: &Problem) -> Result<BoundReport> {
    let f = Differentiable::new(p.function.clone())?;
    let b = theorem3_bound(&p.measure, &f, &p.spec)?;
    Ok(BoundReport {
        method: cfg.method.name().to_string(),
        ..b
    })
}

fn monte_carlo(cfg: &RunConfig, eval: fn(&RunConfig, u64) -> Result<McReport>) -> Result<Outcome> {
    let samples = cfg.samples.expect("validated: samples present");
    let mc = eval(cfg, samples)?;
    let mut rep = BoundReport::new(cfg.method.name(), mc.entropy, mc.bound, 0.0);
    rep.entropy_stderr = Some(mc.entropy_sd);
    rep.bound_stderr = Some(mc.bound_sd);
    rep.slack_stderr = Some(mc.slack_sd);
    rep.slack = mc.slack;
    rep.ratio = ratio_of(mc.entropy, mc.bound);
    rep.flags = mc.flags.clone();
    let diag = McDiagnostics {
        n: mc.n,
        mean_w: mc.mean_w,
        mean_z: mc.mean_z,
        excess_kurtosis: mc.excess_kurtosis,
    };
    Ok((rep, Some(diag), None))
}

fn eval_mc_theorem1(cfg: &RunConfig, samples: u64) -> Result<McReport> {
    let model = cfg
        .model
        .as_ref()
        .expect("validated: model present")
        .build()?;
    Ok(theorem1_mc(&model, samples, cfg.seed.expect("validated: seed present"))?)
}

fn cylinder(cfg: &RunConfig) -> Result<CylinderFunctional> {
    let expr = Expr::parse(cfg.function.as_deref().expect("validated: function present"))?;
    let times = cfg.times.clone().expect("validated: times present");
    Ok(CylinderFunctional::new(times, expr)?)
}

fn eval_mc_brownian(cfg: &RunConfig, samples: u64) -> Result<McReport> {
    let func = cylinder(cfg)?;
    Ok(brownian_cylinder_check(
        &func,
        samples,
        cfg.seed.expect("validated: seed present"),
    )?)
}

fn eval_mc_poisson(cfg: &RunConfig, samples: u64) -> Result<McReport> {
    let func = cylinder(cfg)?;
    Ok(poisson_functional_check(
        &func,
        cfg.rate.expect("validated: rate present"),
        samples,
        cfg.seed.expect("validated: seed present"),
    )?)
}

fn eval_mc_trimming(cfg: &RunConfig, samples: u64) -> Result<McReport> {
    let m = cfg
        .measure
        .as_ref()
        .expect("validated: measure present")
        .build()?;
    let fam = match &cfg.family {
        FamilyConfig::Quantile => TrimmedFamily1D::quantile(&m),
        FamilyConfig::Custom { a, b } => {
            TrimmedFamily1D::custom(Expr::parse(a)?, Expr::parse(b)?, &m)?
        }
    };
    let expr = Expr::parse(cfg.function.as_deref().expect("validated: function present"))?;
    Ok(trimming_martingale_mc(
        &m,
        &fam,
        &|x| expr.eval1(x),
        samples,
        cfg.seed.expect("validated: seed present"),
        &cfg.quadrature,
    )?)
}

/// Re-run the method at geometrically growing prefixes of the same sample
/// streams. Each row reproduces exactly what a smaller run would report.
fn convergence_series(cfg: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    let samples = cfg.samples.expect("validated: samples present");
    let mut checkpoints = Vec::new();
    let mut n = samples;
    while checkpoints.len() < 8 && n >= 2048 {
        checkpoints.push(n);
        n /= 2;
    }
    if checkpoints.is_empty() {
        checkpoints.push(samples);
    }
    checkpoints.reverse();

    let eval: fn(&RunConfig, u64) -> Result<McReport> = match cfg.method {
        Method::McTheorem1 => eval_mc_theorem1,
        Method::McBrownian => eval_mc_brownian,
        Method::McPoisson => eval_mc_poisson,
        Method::McTrimming => eval_mc_trimming,
        other => {
            return Err(Error::config(format!(
                "convergence series needs a Monte Carlo method, got {}",
                other.name()
            )))
        }
    };
    checkpoints
        .into_iter()
        .map(|n| {
            let mc = eval(cfg, n)?;
            Ok(ConvergenceRow {
                n: mc.n,
                slack: mc.slack,
                slack_sd: mc.slack_sd,
            })
        })
        .collect()
}

/// The quantile-weight profile on the fixed `v`-grid, clamped inside the
/// quadrature window so the edge rows stay finite.
fn weight_profile(m: &Measure1D, spec: &QuadratureSpec) -> Result<Vec<WeightRow>> {
    let prof = weights(m);
    let d = spec.tail_cut;
    (0..=WEIGHT_GRID)
        .map(|i| {
            let v = (i as f64 / WEIGHT_GRID as f64).clamp(d, 1.0 - d);
            let x = m.quantile(v)?;
            let wp = prof.at_cdf(v, x)?;
            Ok(WeightRow {
                v,
                k: wp.k,
                w: wp.w,
                u: wp.u,
            })
        })
        .collect()
}

/// The identity suite for one measure: quadrature identities at the nine
/// deciles, closed-form `τ`/`F̂` checks, the conjugate involution, and a
/// finite-difference check of the conjugate derivative. Only the quantile
/// family has these closed forms.
fn identities_suite(cfg: &RunConfig) -> Result<Outcome> {
    if !matches!(cfg.family, FamilyConfig::Quantile) {
        return Err(Error::Core(entrobound_core::Error::Unsupported {
            what: "identity suite applies to the quantile family only".to_string(),
        }));
    }
    let m = cfg
        .measure
        .as_ref()
        .expect("validated: measure present")
        .build()?;
    let fam = TrimmedFamily1D::quantile(&m);
    let spec = &cfg.quadrature;
    let levels: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();

    let mut checks = Vec::new();
    let mut push = |name: &str, max_error: f64, tolerance: f64| {
        checks.push(IdentityCheck {
            name: name.to_string(),
            max_error,
            tolerance,
            pass: max_error <= tolerance,
        });
    };

    let mut err_log = 0.0f64;
    let mut err_pow = 0.0f64;
    for &t in &levels {
        let mu_t = fam.tail_mass(&m, t)?;
        let lhs_log = log_mass_identity_lhs(&fam, &m, t, spec)?;
        let rhs_log = -mu_t.ln();
        err_log = err_log.max((lhs_log - rhs_log).abs() / (1.0 + rhs_log.abs()));
        let lhs_pow = power_identity_lhs(&fam, &m, t, spec)?;
        let rhs_pow = 2.0 * (mu_t.powf(-0.5) - 1.0);
        err_pow = err_pow.max((lhs_pow - rhs_pow).abs() / (1.0 + rhs_pow.abs()));
    }
    push("log-mass-identity", err_log, IDENTITY_TOL);
    push("power-identity", err_pow, IDENTITY_TOL);

    let mut err_tau = 0.0f64;
    let mut err_fhat = 0.0f64;
    let mut err_invol = 0.0f64;
    let mut err_fd = 0.0f64;
    for i in 1..20 {
        let v = i as f64 / 20.0;
        let x = m.quantile(v)?;
        let f = m.cdf(x);
        let tau = fam.tau(&m, x)?;
        err_tau = err_tau.max((tau - (2.0 * f - 1.0).abs()).abs());
        let mu_tau = fam.tail_mass(&m, tau)?;
        err_fhat = err_fhat.max((fhat(&m, x) - mu_tau / 2.0).abs());
        let s = fam.conjugate(&m, x)?;
        let ss = fam.conjugate(&m, s)?;
        err_invol = err_invol.max((ss - x).abs() / (1.0 + x.abs()));
        if (2..=18).contains(&i) {
            let h = 1e-6 * (1.0 + x.abs());
            let fd = (fam.conjugate(&m, x + h)? - fam.conjugate(&m, x - h)?) / (2.0 * h);
            let exact = conjugate_derivative(&m, x, s)?;
            err_fd = err_fd.max((fd - exact).abs() / (1.0 + exact.abs()));
        }
    }
    push("tau-closed-form", err_tau, CLOSED_FORM_TOL);
    push("fhat-closed-form", err_fhat, CLOSED_FORM_TOL);
    push("conjugate-involution", err_invol, INVOLUTION_TOL);
    push("conjugate-derivative-fd", err_fd, CONJUGATE_FD_TOL);

    let worst = checks.iter().map(|c| c.max_error).fold(0.0f64, f64::max);
    let mut rep = BoundReport::new(cfg.method.name(), 0.0, 0.0, worst);
    for c in checks.iter().filter(|c| !c.pass) {
        rep.flags.push(format!("failed: {}", c.name));
    }
    Ok((rep, None, Some(checks)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> RunConfig {
        serde_json::from_str::<RunConfig>(json).unwrap().with_defaults()
    }

    /// Entropy of g(x) = x under uniform[0,1]: ∫x ln x − (1/2)ln(1/2)
    /// = −1/4 + (ln 2)/2.
    const UNIFORM_LINEAR_ENTROPY: f64 = 0.09657359027997264;

    #[test]
    fn entropy_run_matches_closed_form() {
        let out = execute(&cfg(
            r#"{"method": "entropy", "measure": {"kind": "uniform", "a": 0, "b": 1},
                "function": "x"}"#,
        ))
        .unwrap();
        approx::assert_relative_eq!(
            out.report.entropy,
            UNIFORM_LINEAR_ENTROPY,
            max_relative = 1e-8
        );
        assert!(!out.violation);
        assert_eq!(out.report.inputs_digest.len(), 64);
    }

    #[test]
    fn constant_functions_report_exact_zeros() {
        for method in ["entropy", "classic", "theorem2", "prop1", "eq145", "theorem3"] {
            let out = execute(&cfg(&format!(
                r#"{{"method": "{method}", "measure": {{"kind": "gaussian", "mean": 0, "std": 1}},
                    "function": "2.5"}}"#
            )))
            .unwrap();
            assert_eq!(out.report.entropy, 0.0, "{method}");
            assert_eq!(out.report.bound, 0.0, "{method}");
            assert_eq!(out.report.ratio, 1.0, "{method}");
            assert!(!out.violation, "{method}");
        }
    }

    #[test]
    fn negative_constant_still_errs_where_g_must_be_nonnegative() {
        let res = execute(&cfg(
            r#"{"method": "theorem2", "measure": {"kind": "uniform", "a": 0, "b": 1},
                "function": "0 - 1"}"#,
        ));
        assert!(res.is_err());
    }

    #[test]
    fn theorem3_run_reports_nonnegative_slack() {
        let out = execute(&cfg(
            r#"{"method": "theorem3", "measure": {"kind": "gaussian", "mean": 0, "std": 1},
                "function": "exp(0.5*x)"}"#,
        ))
        .unwrap();
        assert!(out.report.slack >= 0.0);
        assert!(!out.violation);
        let profile = out.series.unwrap().weight_profile.unwrap();
        assert_eq!(profile.len(), WEIGHT_GRID + 1);
        // K(0) for the standard Gaussian is 4π.
        approx::assert_relative_eq!(
            profile[WEIGHT_GRID / 2].k,
            4.0 * std::f64::consts::PI,
            max_relative = 1e-9
        );
    }

    #[test]
    fn uniform_weight_profile_has_k_two_at_the_median() {
        let out = execute(&cfg(
            r#"{"method": "theorem3", "measure": {"kind": "uniform", "a": 0, "b": 1},
                "function": "1 + x"}"#,
        ))
        .unwrap();
        let profile = out.series.unwrap().weight_profile.unwrap();
        let mid = &profile[WEIGHT_GRID / 2];
        assert_eq!(mid.v, 0.5);
        approx::assert_relative_eq!(mid.k, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn identities_suite_passes_on_a_mixture() {
        let out = execute(&cfg(
            r#"{"method": "identities",
                "measure": {"kind": "mixture", "weights": [0.3, 0.7],
                            "parts": [{"kind": "gaussian", "mean": -1, "std": 0.5},
                                      {"kind": "gaussian", "mean": 2, "std": 1}]}}"#,
        ))
        .unwrap();
        let checks = out.identities.unwrap();
        assert_eq!(checks.len(), 6);
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
        assert!(!out.violation);
    }

    #[test]
    fn sweep_over_lambda_tracks_the_equality_family() {
        let out = execute(&cfg(
            r#"{"method": "classic", "measure": {"kind": "gaussian", "mean": 0, "std": 1},
                "function": "exp(lam*x/2)",
                "sweep": {"param": "lam", "values": [0.2, 0.5, 1.0]}}"#,
        ))
        .unwrap();
        let rows = out.series.unwrap().sweep.unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            // Equality family: slack vanishes up to the tail-window bias
            // (the [δ, 1−δ] quadrature window clips ~3e-7 of the e^{λx}
            // integrand mass at λ = 1).
            assert!(
                row.slack.abs() <= 1e-6 * (1.0 + row.bound.abs()),
                "slack {} at λ = {}",
                row.slack,
                row.value
            );
            let expected = (row.value * row.value / 2.0)
                * (row.value * row.value / 2.0).exp();
            approx::assert_relative_eq!(row.entropy, expected, max_relative = 1e-6);
        }
        assert!(!out.violation);
    }

    #[test]
    fn mc_trimming_convergence_series_shrinks() {
        let out = execute(&cfg(
            r#"{"method": "mc-trimming", "measure": {"kind": "uniform", "a": 0, "b": 1},
                "function": "x", "seed": 5, "samples": 32768,
                "convergence_series": true}"#,
        ))
        .unwrap();
        let series = out.series.unwrap().convergence.unwrap();
        assert!(series.len() >= 4);
        let first = series.first().unwrap();
        let last = series.last().unwrap();
        assert!(last.n > first.n);
        assert!(last.slack_sd < first.slack_sd);
        // The last row is the full run.
        assert_eq!(last.slack, out.report.slack);
    }

    #[test]
    fn violation_predicate_uses_three_sigma_for_mc() {
        let mut rep = BoundReport::new("mc-trimming", 1.0, 0.9, 0.0);
        rep.slack = -0.1;
        rep.slack_stderr = Some(0.05);
        assert!(!is_violation(Method::McTrimming, &rep, 1e-8));
        rep.slack_stderr = Some(0.01);
        assert!(is_violation(Method::McTrimming, &rep, 1e-8));
        let det = BoundReport::new("theorem2", 1.0, 0.999999999, 0.0);
        assert!(!is_violation(Method::Theorem2, &det, 1e-8));
        let det = BoundReport::new("theorem2", 1.0, 0.9, 0.0);
        assert!(is_violation(Method::Theorem2, &det, 1e-8));
    }
}
