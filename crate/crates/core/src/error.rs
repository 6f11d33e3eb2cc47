//! Error taxonomy shared by every module.
//!
//! The variants are deliberately fine-grained: callers (notably the CLI)
//! translate them into the exit-code contract, where "a proved inequality is
//! numerically violated" must stay distinguishable from "your input was bad"
//! and from "the integrator gave up".

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while evaluating measures, expressions,
/// trimmed families, bounds, or path-space checks.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain (probabilities,
    /// rates, parameter ranges).
    #[error("domain error: {what}")]
    Domain { what: String },

    /// Structurally invalid input data (unsorted grids, negative weights,
    /// missing fields, ill-formed families).
    #[error("validation error: {what}")]
    Validation { what: String },

    /// An iterative routine exhausted its budget before reaching tolerance.
    #[error("convergence failure in {routine}: {detail}")]
    Convergence { routine: String, detail: String },

    /// A computation produced (or would produce) a non-finite value where a
    /// finite one is required: log of a nonpositive number, division by zero,
    /// overflow. Reported instead of letting NaN propagate into reports.
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    /// Malformed expression source.
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    /// A function call in an expression had the wrong number of arguments.
    #[error("arity error: {name} expects {expected}, got {got}")]
    Arity {
        name: String,
        expected: String,
        got: usize,
    },

    /// Evaluation point dimension does not match the variables an expression
    /// uses.
    #[error("dimension error: {what}")]
    Dimension { what: String },

    /// A construct outside the differentiable core grammar.
    #[error("unsupported: {what}")]
    Unsupported { what: String },

    /// A conditional quantity became numerically meaningless (tail mass below
    /// threshold, too few tail samples, a non-contracting regularization
    /// ladder).
    #[error("degenerate input for {context}: {detail}")]
    Degenerate { context: String, detail: String },

    /// A function that must be nonnegative was sampled below -1e-12.
    #[error("negative function value {value:.3e} at x = {at:.6}")]
    NegativeFunction { at: f64, value: f64 },

    /// A density vanished (or underflowed) inside its support where a weight
    /// needs to divide by it.
    #[error("zero density at x = {at:.6} inside the support")]
    ZeroDensity { at: f64 },

    /// A function handed to the symmetric-case bound is not symmetric with
    /// respect to the trimmed family.
    #[error("symmetry violation at t = {t:.6}: |f(a_t) - f(b_t)| = {diff:.3e}")]
    SymmetryViolation { t: f64, diff: f64 },

    /// A branch distribution has nonzero conditional mean.
    #[error("non-martingale step {step}: conditional mean increment {mean:.3e}")]
    NonMartingale { step: usize, mean: f64 },

    /// A reachable tree value is negative.
    #[error("negative martingale value {value:.6} reachable at step {step}")]
    NegativeValue { step: usize, value: f64 },

    /// Monte Carlo moment estimates came out non-finite; error bars would be
    /// meaningless.
    #[error("variance estimation failed: {what}")]
    Variance { what: String },

    /// A Poisson-space functional is not compactly supported in one of its
    /// arguments, so the derivative norm may diverge.
    #[error("support error: {what}")]
    Support { what: String },
}

impl Error {
    pub(crate) fn domain(what: impl Into<String>) -> Self {
        Error::Domain { what: what.into() }
    }

    pub(crate) fn validation(what: impl Into<String>) -> Self {
        Error::Validation { what: what.into() }
    }

    pub(crate) fn convergence(routine: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Convergence {
            routine: routine.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn degenerate(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Degenerate {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
