//! Run and suite configuration: JSON shapes, validation with actionable
//! messages, CLI-flag overrides, and the canonical digest that ties every
//! report to the exact inputs that produced it.

use entrobound_core::{sha256_hex, MeasureSpec, ModelSpec, QuadratureSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance scale for the "theorem falsified" signal on deterministic
/// methods: a run is a violation when
/// `slack < −(violation_tol·(1 + |bound|) + quadrature_error)`.
/// Monte Carlo methods use `slack < −3·σ_slack` instead.
pub const DEFAULT_VIOLATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Entropy,
    Classic,
    Theorem2,
    Prop1,
    Eq145,
    Theorem3,
    McTheorem1,
    McBrownian,
    McPoisson,
    McTrimming,
    Identities,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Entropy => "entropy",
            Method::Classic => "classic",
            Method::Theorem2 => "theorem2",
            Method::Prop1 => "prop1",
            Method::Eq145 => "eq145",
            Method::Theorem3 => "theorem3",
            Method::McTheorem1 => "mc-theorem1",
            Method::McBrownian => "mc-brownian",
            Method::McPoisson => "mc-poisson",
            Method::McTrimming => "mc-trimming",
            Method::Identities => "identities",
        }
    }

    pub fn is_monte_carlo(self) -> bool {
        matches!(
            self,
            Method::McTheorem1 | Method::McBrownian | Method::McPoisson | Method::McTrimming
        )
    }

    /// Methods whose bound is built from the quantile-family weights; their
    /// reports carry a weight-profile series for plotting.
    pub fn uses_weights(self) -> bool {
        matches!(self, Method::Prop1 | Method::Eq145 | Method::Theorem3)
    }
}

/// Trimmed-family selector: the closed-form quantile family or custom
/// endpoint curves `a(t), b(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyConfig {
    Quantile,
    Custom { a: String, b: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Either a config field (`seed`, `samples`, `rate`, `constant`) or an
    /// identifier appearing in `function`, replaced per value.
    pub param: String,
    pub values: Vec<f64>,
}

/// One bound evaluation. Optional fields are method-specific; `validate`
/// spells out what the chosen method needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSpec>,
    #[serde(default = "default_family")]
    pub family: FamilyConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<String>,
    /// Log-Sobolev constant for `classic` (defaults to 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    /// Coordinate times of a cylinder functional (`mc-brownian`,
    /// `mc-poisson`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Poisson intensity (`mc-poisson`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Martingale tree (`mc-theorem1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// For Monte Carlo methods: also report estimates at geometrically
    /// growing sample counts (same streams, so each point is exactly the
    /// smaller run).
    #[serde(default)]
    pub convergence_series: bool,
    #[serde(default = "default_violation_tol")]
    pub violation_tol: f64,
}

fn default_family() -> FamilyConfig {
    FamilyConfig::Quantile
}

fn default_violation_tol() -> f64 {
    DEFAULT_VIOLATION_TOL
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.quadrature.validate()?;
        self.validate_required()?;
        if let Some(c) = self.constant {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config(format!(
                    "constant must be positive and finite, got {c}"
                )));
            }
        }
        if self.samples == Some(0) {
            return Err(Error::config("samples must be at least 1"));
        }
        if !(self.violation_tol >= 0.0 && self.violation_tol.is_finite()) {
            return Err(Error::config(format!(
                "violation_tol must be nonnegative and finite, got {}",
                self.violation_tol
            )));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.param.is_empty() {
                return Err(Error::config("sweep.param must not be empty"));
            }
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values must not be empty"));
            }
            if sweep.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("sweep.values must all be finite"));
            }
            if matches!(sweep.param.as_str(), "seed" | "samples")
                && sweep
                    .values
                    .iter()
                    .any(|v| *v < 0.0 || v.fract() != 0.0 || *v > u64::MAX as f64)
            {
                return Err(Error::config(format!(
                    "sweep over {} needs nonnegative integer values",
                    sweep.param
                )));
            }
        }
        if self.convergence_series && !self.method.is_monte_carlo() {
            return Err(Error::config(format!(
                "convergence_series applies to Monte Carlo methods, not {}",
                self.method.name()
            )));
        }
        Ok(())
    }

    fn validate_required(&self) -> Result<()> {
        let need = |field: &str, present: bool| -> Result<()> {
            if present {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "method {} requires the `{field}` field",
                    self.method.name()
                )))
            }
        };
        match self.method {
            Method::Entropy
            | Method::Classic
            | Method::Theorem2
            | Method::Prop1
            | Method::Eq145
            | Method::Theorem3 => {
                need("measure", self.measure.is_some())?;
                need("function", self.function.is_some())
            }
            Method::McTheorem1 => {
                need("model", self.model.is_some())?;
                need("seed", self.seed.is_some())?;
                need("samples", self.samples.is_some())
            }
            Method::McBrownian => {
                need("function", self.function.is_some())?;
                need("times", self.times.is_some())?;
                need("seed", self.seed.is_some())?;
                need("samples", self.samples.is_some())
            }
            Method::McPoisson => {
                need("function", self.function.is_some())?;
                need("times", self.times.is_some())?;
                need("rate", self.rate.is_some())?;
                need("seed", self.seed.is_some())?;
                need("samples", self.samples.is_some())
            }
            Method::McTrimming => {
                need("measure", self.measure.is_some())?;
                need("function", self.function.is_some())?;
                need("seed", self.seed.is_some())?;
                need("samples", self.samples.is_some())
            }
            Method::Identities => need("measure", self.measure.is_some()),
        }
    }

    /// Fill in defaults that the report should echo explicitly.
    pub fn with_defaults(mut self) -> RunConfig {
        if self.method == Method::Classic && self.constant.is_none() {
            self.constant = Some(1.0);
        }
        self
    }

    /// Apply command-line overrides on top of the file values.
    pub fn with_overrides(mut self, ov: &Overrides) -> RunConfig {
        if let Some(seed) = ov.seed {
            self.seed = Some(seed);
        }
        if let Some(samples) = ov.samples {
            self.samples = Some(samples);
        }
        if let Some(rel) = ov.rel_tol {
            self.quadrature.rel_tol = rel;
        }
        if let Some(abs) = ov.abs_tol {
            self.quadrature.abs_tol = abs;
        }
        self
    }

    /// SHA-256 of the canonical serialization of the effective config; the
    /// struct field order is fixed, so equal configs digest equally.
    pub fn digest(&self) -> Result<String> {
        let canon = serde_json::to_string(self)
            .map_err(|e| Error::config(format!("config not serializable: {e}")))?;
        Ok(sha256_hex(canon.as_bytes()))
    }

    /// Specialize this config to one sweep value: numeric fields by name,
    /// anything else as an identifier substituted into `function`.
    pub fn at_sweep_value(&self, param: &str, value: f64) -> Result<RunConfig> {
        let mut cfg = self.clone();
        cfg.sweep = None;
        cfg.convergence_series = false;
        match param {
            "seed" => cfg.seed = Some(value as u64),
            "samples" => cfg.samples = Some(value as u64),
            "rate" => cfg.rate = Some(value),
            "constant" => cfg.constant = Some(value),
            ident => {
                let src = cfg.function.as_deref().ok_or_else(|| {
                    Error::config(format!(
                        "sweep parameter `{ident}` needs a `function` to substitute into"
                    ))
                })?;
                let replaced = substitute_identifier(src, ident, value);
                if replaced == *src {
                    return Err(Error::config(format!(
                        "sweep parameter `{ident}` does not occur in function `{src}`"
                    )));
                }
                cfg.function = Some(replaced);
            }
        }
        Ok(cfg)
    }
}

/// Replace standalone occurrences of `ident` in an expression source with a
/// parenthesized literal. Occurrences inside longer identifiers stay.
fn substitute_identifier(src: &str, ident: &str, value: f64) -> String {
    let bytes = src.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut out = String::with_capacity(src.len() + 8);
    let mut i = 0;
    while i < bytes.len() {
        let rest = &src[i..];
        let boundary_before = i == 0 || !is_word(bytes[i - 1]);
        if boundary_before && rest.starts_with(ident) {
            let end = i + ident.len();
            let boundary_after = end == bytes.len() || !is_word(bytes[end]);
            if boundary_after {
                out.push_str(&format!("({value:?})"));
                i = end;
                continue;
            }
        }
        let ch = rest.chars().next().expect("non-empty rest");
        out.push(ch);
        i += ch.len_utf8();
    }
    out
}

/// Command-line overrides shared by `run` and `suite`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
}

/// A batch of runs; rows are reported in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub runs: Vec<RunConfig>,
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::config("suite must contain at least one run"));
        }
        Ok(())
    }
}
