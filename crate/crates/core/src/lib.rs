//! Numerics for entropy functionals and the inequalities that bound them.
//!
//! The crate evaluates `Ent_μ g = ∫ g log g dμ − (∫ g dμ) log(∫ g dμ)` for
//! explicit functions under one-dimensional (and product) probability
//! measures, and checks it against several right-hand sides:
//!
//! * the classical log-Sobolev form `2c ∫ (f')² dμ` ([`bounds::classic_lsi_rhs`]);
//! * the trimmed conditional-mean bound `∫ (g − G_{τ(x)})²/G_{τ(x)} dμ`
//!   built from a one-parameter family of shrinking trimmed regions
//!   ([`bounds::theorem2_bound`], with a Monte Carlo variant for product
//!   measures on ℝ^d);
//! * weighted gradient bounds with explicit quantile weights V, W, U, K
//!   ([`bounds::prop1_bound`], [`bounds::eq145_bound`],
//!   [`bounds::theorem3_bound`]);
//! * the martingale form `Ent M ≤ E ∫ (1/M_{t−}) d⟨M⟩_t` on finite trees and
//!   Brownian/Poisson cylinder functionals ([`pathspace`]).
//!
//! Deterministic results come from adaptive quadrature in quantile
//! coordinates ([`measure::integrate`]); stochastic cross-checks come from a
//! chunked, worker-count-independent Monte Carlo driver ([`mc`]). Functions
//! are given either as closures or in a small expression language with exact
//! symbolic derivatives ([`expr`]).

// Validation gates are written `!(a < b)` on purpose: unlike `a >= b`, the
// negated form also rejects NaN operands.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod expr;
pub mod mc;
pub mod measure;
pub mod normal;
pub mod pathspace;
pub mod quad;
pub mod report;
pub mod trimming;

/// Floating-point scalar used throughout the numeric paths.
pub type Real = f64;

/// Exact scalar used by the martingale-tree enumeration when bit-for-bit
/// rational answers are wanted.
pub type ExactRational = num_rational::BigRational;

pub use bounds::{
    bernoulli_constant, build_g_grid, classic_lsi_rhs, entropy, eq145_bound, prop1_bound,
    symmetrize, symmetry_check, theorem2_bound, theorem2_bound_rd, theorem3_bound, weights,
    Eq145Bound, GGrid, Symmetrized, Theorem2Value, WeightPoint, WeightProfile,
};
pub use error::{Error, Result};
pub use expr::{DiffFn, Differentiable, Expr, FnPair};
pub use mc::{McMoments, McReport};
pub use measure::{
    integrate, integrate_v, Measure1D, MeasureSpec, ProductMeasure, QuadratureSpec,
};
pub use pathspace::{
    brownian_cylinder_check, poisson_functional_check, theorem1_enumerate, theorem1_mc,
    trimming_martingale_mc, BranchSpec, CylinderFunctional, MartingaleModel, ModelSpec, StepKind,
    StepSpec, TreeScalar,
};
pub use quad::QuadResult;
pub use report::{ratio_of, sha256_hex, BoundReport};
pub use trimming::{
    conjugate_derivative, fhat, log_mass_identity_lhs, power_identity_lhs, BallTrimmingRd,
    FamilySpec, TrimmedFamily1D,
};
