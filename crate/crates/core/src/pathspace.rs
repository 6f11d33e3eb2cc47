//! Martingale and path-space forms of the entropy bound.
//!
//! Three settings share the same inequality `Ent M ≤ E ∫ (1/M_{t−}) d⟨M⟩_t`:
//!
//! * finite martingale trees, where both sides are finite sums and can be
//!   enumerated exactly (in `f64` or in exact rational arithmetic);
//! * Brownian cylinder functionals `ξ = F(B_{t₁}, …, B_{tₙ})`, where the
//!   closed martingale `E[ξ² | F_t]` turns the bound into the classical
//!   path-space inequality `Ent ξ² ≤ 2 E‖Dξ‖²`;
//! * Poisson cylinder functionals of the jump times, with the constant
//!   `4/λ²` and a compact-support requirement on `F`.
//!
//! The last section revisits the trimmed conditional-mean bound of
//! [`crate::bounds`] by Monte Carlo, reusing its deterministic `G` grid, so
//! quadrature and sampling can be cross-checked against each other.

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{build_g_grid, checked, tau_at, G_DIRECT_FLOOR};
use crate::error::{Error, Result};
use crate::expr::{coordinate_indices, Ast, Expr};
use crate::measure::{Measure1D, QuadratureSpec};
use crate::mc::{run_moments, sample_exponential, sample_std_normal, uniform_open, Csum, McReport};
use crate::trimming::TrimmedFamily1D;

/// Hard cap on exhaustive tree enumeration.
pub const MAX_LEAVES: u64 = 1_000_000;

/// Probability sums and step means must match their targets this closely.
const MARTINGALE_TOL: f64 = 1e-12;

/// Scalar used by the exact tree enumeration: `f64` for speed, arbitrary-
/// precision rationals for exactness on small trees (rational arithmetic
/// grows quickly with depth, so prefer `f64` beyond a few thousand leaves).
pub trait TreeScalar: Clone + PartialOrd + Signed {
    fn from_f64(x: f64) -> Option<Self>;
    fn to_f64(&self) -> f64;
}

impl TreeScalar for f64 {
    fn from_f64(x: f64) -> Option<f64> {
        x.is_finite().then_some(x)
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl TreeScalar for BigRational {
    fn from_f64(x: f64) -> Option<BigRational> {
        BigRational::from_float(x)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Whether a step multiplies the running value by its branch factor or adds
/// its branch offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Mult,
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    pub kind: StepKind,
    pub branches: Vec<BranchSpec>,
}

/// Serialized description of a finite martingale tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub initial: f64,
    pub steps: Vec<StepSpec>,
    /// Optional labels `t₀ < t₁ < … < tₙ` for the steps (plots only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_grid: Option<Vec<f64>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<MartingaleModel> {
        MartingaleModel::new(self.clone())
    }
}

/// A validated martingale tree: positive start value, branch probabilities
/// summing to one, mean-one multiplicative / mean-zero additive steps, and
/// every value reachable before the final step strictly positive (the bound
/// divides by it).
#[derive(Debug, Clone)]
pub struct MartingaleModel {
    spec: ModelSpec,
}

impl MartingaleModel {
    pub fn new(spec: ModelSpec) -> Result<MartingaleModel> {
        if !(spec.initial.is_finite() && spec.initial > 0.0) {
            return Err(Error::validation(format!(
                "initial martingale value must be positive and finite, got {}",
                spec.initial
            )));
        }
        let mut leaves: u64 = 1;
        for (k, step) in spec.steps.iter().enumerate() {
            if step.branches.is_empty() {
                return Err(Error::validation(format!("step {k} has no branches")));
            }
            leaves = leaves.saturating_mul(step.branches.len() as u64);
            if leaves > MAX_LEAVES {
                return Err(Error::validation(format!(
                    "tree exceeds {MAX_LEAVES} leaves at step {k}"
                )));
            }
            let mut psum = 0.0;
            let mut mean = 0.0;
            for b in &step.branches {
                if !(b.p.is_finite() && b.p >= 0.0) {
                    return Err(Error::validation(format!(
                        "step {k} has an invalid branch probability {}",
                        b.p
                    )));
                }
                if !b.value.is_finite() {
                    return Err(Error::validation(format!(
                        "step {k} has a non-finite branch value {}",
                        b.value
                    )));
                }
                psum += b.p;
                mean += b.p * b.value;
            }
            if (psum - 1.0).abs() > MARTINGALE_TOL {
                return Err(Error::validation(format!(
                    "step {k} branch probabilities sum to {psum}, expected 1"
                )));
            }
            let target = match step.kind {
                StepKind::Mult => 1.0,
                StepKind::Add => 0.0,
            };
            if (mean - target).abs() > MARTINGALE_TOL * (1.0 + mean.abs()) {
                return Err(Error::NonMartingale { step: k, mean });
            }
        }
        if let Some(grid) = &spec.time_grid {
            if grid.len() != spec.steps.len() + 1 {
                return Err(Error::validation(format!(
                    "time grid needs {} points for {} steps, got {}",
                    spec.steps.len() + 1,
                    spec.steps.len(),
                    grid.len()
                )));
            }
            if !grid.windows(2).all(|w| w[0].is_finite() && w[0] < w[1])
                || grid.first().is_some_and(|t| !t.is_finite() || *t < 0.0)
            {
                return Err(Error::validation(
                    "time grid must be nonnegative and strictly increasing",
                ));
            }
        }
        let model = MartingaleModel { spec };
        model.check_positivity(0, model.spec.initial)?;
        Ok(model)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn leaves(&self) -> u64 {
        self.spec
            .steps
            .iter()
            .map(|s| s.branches.len() as u64)
            .product()
    }

    fn check_positivity(&self, k: usize, value: f64) -> Result<()> {
        if value < 0.0 {
            return Err(Error::NegativeValue { step: k, value });
        }
        if k == self.spec.steps.len() {
            return Ok(());
        }
        if value == 0.0 {
            return Err(Error::degenerate(
                "martingale tree",
                format!("value hits zero before the final step (step {k})"),
            ));
        }
        for b in &self.spec.steps[k].branches {
            let next = match self.spec.steps[k].kind {
                StepKind::Mult => value * b.value,
                StepKind::Add => value + b.value,
            };
            self.check_positivity(k + 1, next)?;
        }
        Ok(())
    }
}

struct StepData<T> {
    kind: StepKind,
    probs: Vec<T>,
    values: Vec<T>,
    /// Conditional-variance factor `Σ p v² − (Σ p v)²` of the branch values.
    varf: T,
}

fn step_data<T: TreeScalar>(step: &StepSpec, k: usize) -> Result<StepData<T>> {
    let conv = |x: f64| {
        T::from_f64(x).ok_or_else(|| {
            Error::validation(format!("step {k}: value {x} is not representable"))
        })
    };
    let mut probs = Vec::with_capacity(step.branches.len());
    let mut values = Vec::with_capacity(step.branches.len());
    let mut psum = T::zero();
    for b in &step.branches {
        let p = conv(b.p)?;
        psum = psum + p.clone();
        probs.push(p);
        values.push(conv(b.value)?);
    }
    // Normalize exactly so probabilities sum to one in T (the f64 data is
    // only guaranteed to sum to 1 within 1e-12).
    for p in &mut probs {
        *p = p.clone() / psum.clone();
    }
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    for (p, v) in probs.iter().zip(&values) {
        s1 = s1 + p.clone() * v.clone();
        s2 = s2 + p.clone() * v.clone() * v.clone();
    }
    let varf = s2 - s1.clone() * s1;
    Ok(StepData {
        kind: step.kind,
        probs,
        values,
        varf,
    })
}

struct TreeAcc<T> {
    /// Σ P·M·ln M over leaves (f64: the logarithm leaves any exact field).
    ent_terms: Csum,
    /// Σ P·M over leaves, kept in T.
    mass: T,
    /// Σ over internal nodes of P · Var(ΔM | node) / M(node), kept in T.
    bound: T,
}

fn enumerate_rec<T: TreeScalar>(
    steps: &[StepData<T>],
    k: usize,
    prob: T,
    value: T,
    acc: &mut TreeAcc<T>,
) {
    if k == steps.len() {
        let pm = prob * value.clone();
        let vf = value.to_f64();
        if vf > 1e-300 {
            acc.ent_terms.add(pm.to_f64() * vf.ln());
        }
        acc.mass = acc.mass.clone() + pm;
        return;
    }
    let sd = &steps[k];
    let contrib = match sd.kind {
        StepKind::Mult => prob.clone() * value.clone() * sd.varf.clone(),
        StepKind::Add => prob.clone() * sd.varf.clone() / value.clone(),
    };
    acc.bound = acc.bound.clone() + contrib;
    for (p, v) in sd.probs.iter().zip(&sd.values) {
        let next = match sd.kind {
            StepKind::Mult => value.clone() * v.clone(),
            StepKind::Add => value.clone() + v.clone(),
        };
        enumerate_rec(steps, k + 1, prob.clone() * p.clone(), next, acc);
    }
}

/// Exhaustively enumerate the tree: returns `(Ent M₁, E ∫ (1/M_{t−}) d⟨M⟩)`.
/// Both sums are carried in `T`; only the logarithms of the entropy pass
/// through `f64`.
pub fn theorem1_enumerate<T: TreeScalar>(model: &MartingaleModel) -> Result<(f64, f64)> {
    let steps: Vec<StepData<T>> = model
        .spec
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| step_data(s, k))
        .collect::<Result<_>>()?;
    let initial = T::from_f64(model.spec.initial)
        .ok_or_else(|| Error::validation("initial value is not representable"))?;
    let mut acc = TreeAcc {
        ent_terms: Csum::default(),
        mass: T::zero(),
        bound: T::zero(),
    };
    enumerate_rec(&steps, 0, T::one(), initial, &mut acc);
    let mass = acc.mass.to_f64();
    let ent = if mass > 1e-300 {
        acc.ent_terms.total() - mass * mass.ln()
    } else {
        0.0
    };
    Ok((ent, acc.bound.to_f64()))
}

/// Monte Carlo version of the tree bound: per sampled path, the integrand
/// `Σ_k Var(ΔM_{k+1} | node_k) / M_k` (exact given the node) and the terminal
/// value. Cross-checks [`theorem1_enumerate`] within sampling error.
pub fn theorem1_mc(model: &MartingaleModel, nsamples: u64, seed: u64) -> Result<McReport> {
    let steps: Vec<StepData<f64>> = model
        .spec
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| step_data(s, k))
        .collect::<Result<_>>()?;
    run_moments(nsamples, seed, &|rng: &mut ChaCha12Rng| {
        let mut value = model.spec.initial;
        let mut w = 0.0;
        for sd in &steps {
            w += match sd.kind {
                StepKind::Mult => value * sd.varf,
                StepKind::Add => sd.varf / value,
            };
            let u = uniform_open(rng);
            let mut acc = 0.0;
            let mut idx = sd.probs.len() - 1;
            for (i, p) in sd.probs.iter().enumerate() {
                acc += p;
                if u <= acc {
                    idx = i;
                    break;
                }
            }
            value = match sd.kind {
                StepKind::Mult => value * sd.values[idx],
                StepKind::Add => value + sd.values[idx],
            };
        }
        Ok((w, value))
    })?
    .report()
}

/// `ξ = F(path at t₁ < … < tₙ)` with symbolic partial derivatives, evaluated
/// on Brownian or Poisson paths.
pub struct CylinderFunctional {
    times: Vec<f64>,
    f: Expr,
    /// Partial derivative of `F` per *coordinate* (zero where unused), with
    /// the coordinate index of each of the derivative's own variables —
    /// derivatives fold away variables, so each needs its own projection.
    derivs: Vec<Option<(Expr, Vec<usize>)>>,
    /// Coordinate index of each variable of `f`, in `f.vars()` order.
    idx: Vec<usize>,
}

impl CylinderFunctional {
    pub fn new(times: Vec<f64>, f: Expr) -> Result<CylinderFunctional> {
        if times.is_empty() {
            return Err(Error::validation("cylinder functional needs at least one time"));
        }
        if !(times[0].is_finite() && times[0] > 0.0)
            || !times.windows(2).all(|w| w[1].is_finite() && w[0] < w[1])
        {
            return Err(Error::validation(format!(
                "times must be finite, positive and strictly increasing, got {times:?}"
            )));
        }
        let idx = coordinate_indices(f.vars(), times.len())?;
        let mut derivs: Vec<Option<(Expr, Vec<usize>)>> = (0..times.len()).map(|_| None).collect();
        for (k, var) in f.vars().iter().enumerate() {
            let d = f.deriv(var);
            let di = coordinate_indices(d.vars(), times.len())?;
            derivs[idx[k]] = Some((d, di));
        }
        Ok(CylinderFunctional {
            times,
            f,
            derivs,
            idx,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn expr(&self) -> &Expr {
        &self.f
    }

    fn args(&self, coords: &[f64]) -> Vec<f64> {
        self.idx.iter().map(|&i| coords[i]).collect()
    }

    fn value(&self, coords: &[f64]) -> Result<f64> {
        self.f.eval(&self.args(coords))
    }

    /// Gradient with respect to the path coordinates (dense, zeros included).
    fn gradient(&self, coords: &[f64]) -> Result<Vec<f64>> {
        self.derivs
            .iter()
            .map(|d| match d {
                Some((e, di)) => {
                    let args: Vec<f64> = di.iter().map(|&i| coords[i]).collect();
                    e.eval(&args)
                }
                None => Ok(0.0),
            })
            .collect()
    }
}

/// Brownian path-space check: `Ent ξ² ≤ 2 E‖Dξ‖²` for ξ = F(B_{t₁},…,B_{tₙ}),
/// with `‖Dξ‖² = Σ_j (t_j − t_{j−1}) (Σ_{i ≥ j} ∂_i F)²`.
pub fn brownian_cylinder_check(
    func: &CylinderFunctional,
    nsamples: u64,
    seed: u64,
) -> Result<McReport> {
    let times = func.times();
    let n = times.len();
    run_moments(nsamples, seed, &|rng: &mut ChaCha12Rng| {
        let mut coords = Vec::with_capacity(n);
        let mut prev = 0.0;
        let mut b = 0.0;
        for &t in times {
            b += (t - prev).sqrt() * sample_std_normal(rng);
            prev = t;
            coords.push(b);
        }
        let xi = func.value(&coords)?;
        let grad = func.gradient(&coords)?;
        let mut suffix = 0.0;
        let mut norm2 = 0.0;
        for j in (0..n).rev() {
            suffix += grad[j];
            let dt = times[j] - if j > 0 { times[j - 1] } else { 0.0 };
            norm2 += dt * suffix * suffix;
        }
        Ok((2.0 * norm2, xi * xi))
    })?
    .report()
}

fn contains_var(ast: &Ast) -> bool {
    match ast {
        Ast::Num(_) => false,
        Ast::Var(_) => true,
        Ast::Add(l, r) | Ast::Sub(l, r) | Ast::Mul(l, r) | Ast::Div(l, r) => {
            contains_var(l) || contains_var(r)
        }
        Ast::Neg(e) | Ast::Exp(e) | Ast::Log(e) | Ast::Sin(e) | Ast::Cos(e) | Ast::Sqrt(e) => {
            contains_var(e)
        }
        Ast::Pow(b, _) => contains_var(b),
        Ast::Bump { arg, w, .. } => contains_var(arg) || contains_var(w),
    }
}

/// Conservative structural test that the functional vanishes outside a
/// bounded region of its arguments. Sound, not complete: `true` implies
/// compact support; some compactly supported expressions are rejected.
/// Structural proof that the expression vanishes outside a bounded window of
/// the variables it reads. Constants never qualify here — a nonzero constant
/// factor contributes no decay, so `bump(2; 0, 4) * x1` stays unbounded.
fn vanishes_at_infinity(ast: &Ast) -> bool {
    match ast {
        Ast::Num(_) | Ast::Var(_) => false,
        // supp(f ± g) ⊆ supp f ∪ supp g.
        Ast::Add(l, r) | Ast::Sub(l, r) => vanishes_at_infinity(l) && vanishes_at_infinity(r),
        // supp(f·g) ⊆ supp f ∩ supp g.
        Ast::Mul(l, r) => vanishes_at_infinity(l) || vanishes_at_infinity(r),
        Ast::Div(l, _) => vanishes_at_infinity(l),
        Ast::Neg(e) => vanishes_at_infinity(e),
        Ast::Pow(b, k) => *k > 0 && vanishes_at_infinity(b),
        // exp(0) = 1, cos(0) = 1, etc.: postcomposition destroys support.
        Ast::Exp(_) | Ast::Log(_) | Ast::Sin(_) | Ast::Cos(_) | Ast::Sqrt(_) => false,
        // The guard pins the variable only when the argument carries it;
        // otherwise the bump is a constant factor and decay must come from w.
        Ast::Bump { arg, w, .. } => contains_var(arg) || vanishes_at_infinity(w),
    }
}

/// Gate for the path-space checks: either the functional structurally
/// vanishes outside a compact set, or it is a constant (for which the bound
/// is trivial).
fn compactly_supported(ast: &Ast) -> bool {
    vanishes_at_infinity(ast) || !contains_var(ast)
}

/// Poisson path-space check: `Ent ξ² ≤ (4/λ²) E‖∇ξ‖²` for ξ = F(T₁,…,Tₙ)
/// evaluated at the first n jump times of a rate-λ Poisson process. `F` must
/// be (structurally) compactly supported; anything else is a
/// [`Error::Support`] error rather than a silently unsound run.
pub fn poisson_functional_check(
    func: &CylinderFunctional,
    lambda: f64,
    nsamples: u64,
    seed: u64,
) -> Result<McReport> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!(
            "Poisson rate must be positive and finite, got {lambda}"
        )));
    }
    if !compactly_supported(func.expr().ast()) {
        return Err(Error::Support {
            what: format!(
                "the Poisson bound needs a compactly supported functional; \
                 `{}` does not pass the structural check (wrap the variable-dependent \
                 part in a bump factor)",
                func.expr()
            ),
        });
    }
    let n = func.times().len();
    let factor = 4.0 / (lambda * lambda);
    run_moments(nsamples, seed, &|rng: &mut ChaCha12Rng| {
        let mut coords = Vec::with_capacity(n);
        let mut t = 0.0;
        for _ in 0..n {
            t += sample_exponential(lambda, rng);
            coords.push(t);
        }
        let xi = func.value(&coords)?;
        let grad = func.gradient(&coords)?;
        let norm2: f64 = grad.iter().map(|d| d * d).sum();
        Ok((factor * norm2, xi * xi))
    })?
    .report()
}

/// Monte Carlo cross-check of the trimmed conditional-mean bound: samples the
/// integrand `(g − G_{τ(X)})² / G_{τ(X)}` against the *deterministic* `G`
/// grid of [`crate::bounds::theorem2_bound`]. Expected to agree with the
/// quadrature bound within sampling error. Denominators are shifted by
/// ε = 1e-6 (numerators are unaffected) when the grid dips below 1e-7, and
/// the report is flagged.
pub fn trimming_martingale_mc(
    m: &Measure1D,
    fam: &TrimmedFamily1D,
    g: &(dyn Fn(f64) -> Result<f64> + Sync),
    nsamples: u64,
    seed: u64,
    spec: &QuadratureSpec,
) -> Result<McReport> {
    let grid = build_g_grid(m, fam, &|x| g(x), spec)?;
    let shift = if grid.g_min <= G_DIRECT_FLOOR { 1e-6 } else { 0.0 };
    let mut report = run_moments(nsamples, seed, &|rng: &mut ChaCha12Rng| {
        let v = uniform_open(rng);
        let x = m.quantile(v)?;
        let z = checked(&|y| g(y), x)?;
        let gt = grid.eval(tau_at(fam, m, v, x)?) + shift;
        let w = if gt <= 0.0 {
            if z <= 1e-12 {
                0.0
            } else {
                return Err(Error::non_finite(
                    "trimming martingale integrand",
                    format!("conditional mean vanished under positive g = {z}"),
                ));
            }
        } else {
            let d = z - (gt - shift);
            d * d / gt
        };
        Ok((w, z))
    })?
    .report()?;
    if shift > 0.0 {
        report.flags.push(format!(
            "epsilon-shift: conditional-mean grid reached {:.3e}, denominators shifted by {shift:.0e}",
            grid.g_min
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{entropy, theorem2_bound};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    const TWO_LEAF_ENTROPY: f64 = 0.130_812_035_941_137; // 0.75·ln(3/2) − 0.25·ln 2
    const TWO_LEAF_BOUND: f64 = 0.25;

    fn two_leaf() -> MartingaleModel {
        ModelSpec {
            initial: 1.0,
            steps: vec![StepSpec {
                kind: StepKind::Mult,
                branches: vec![
                    BranchSpec { p: 0.5, value: 1.5 },
                    BranchSpec { p: 0.5, value: 0.5 },
                ],
            }],
            time_grid: None,
        }
        .build()
        .unwrap()
    }

    /// A three-step tree with dyadic data (exactly representable in binary).
    fn three_step() -> MartingaleModel {
        ModelSpec {
            initial: 2.0,
            steps: vec![
                StepSpec {
                    kind: StepKind::Mult,
                    branches: vec![
                        BranchSpec { p: 0.25, value: 1.75 },
                        BranchSpec { p: 0.75, value: 0.75 },
                    ],
                },
                StepSpec {
                    kind: StepKind::Add,
                    branches: vec![
                        BranchSpec { p: 0.5, value: 0.125 },
                        BranchSpec { p: 0.5, value: -0.125 },
                    ],
                },
                StepSpec {
                    kind: StepKind::Mult,
                    branches: vec![
                        BranchSpec { p: 0.5, value: 1.25 },
                        BranchSpec { p: 0.25, value: 0.875 },
                        BranchSpec { p: 0.25, value: 0.625 },
                    ],
                },
            ],
            time_grid: Some(vec![0.0, 0.25, 0.5, 1.0]),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn two_leaf_oracle_exact() {
        let model = two_leaf();
        let (ent, bound) = theorem1_enumerate::<f64>(&model).unwrap();
        assert_abs_diff_eq!(ent, TWO_LEAF_ENTROPY, epsilon = 1e-12);
        assert_abs_diff_eq!(bound, TWO_LEAF_BOUND, epsilon = 1e-15);
        assert!(ent <= bound);
    }

    #[test]
    fn rational_enumeration_matches_f64() {
        for model in [two_leaf(), three_step()] {
            let (ent_f, bound_f) = theorem1_enumerate::<f64>(&model).unwrap();
            let (ent_q, bound_q) = theorem1_enumerate::<BigRational>(&model).unwrap();
            assert_abs_diff_eq!(ent_f, ent_q, epsilon = 1e-12);
            assert_abs_diff_eq!(bound_f, bound_q, epsilon = 1e-12);
        }
    }

    #[test]
    fn rational_two_leaf_bound_is_exactly_one_quarter() {
        // Every quantity in the variance sum is dyadic, so the rational
        // enumeration must produce exactly 1/4.
        let (_, bound) = theorem1_enumerate::<BigRational>(&two_leaf()).unwrap();
        assert_eq!(bound, 0.25);
    }

    #[test]
    fn model_validation_rejects_bad_trees() {
        // Probabilities that do not sum to one.
        let err = ModelSpec {
            initial: 1.0,
            steps: vec![StepSpec {
                kind: StepKind::Mult,
                branches: vec![
                    BranchSpec { p: 0.5, value: 1.5 },
                    BranchSpec { p: 0.4, value: 0.5 },
                ],
            }],
            time_grid: None,
        }
        .build()
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");

        // Multiplicative step with mean ≠ 1.
        let err = ModelSpec {
            initial: 1.0,
            steps: vec![StepSpec {
                kind: StepKind::Mult,
                branches: vec![
                    BranchSpec { p: 0.5, value: 1.5 },
                    BranchSpec { p: 0.5, value: 0.6 },
                ],
            }],
            time_grid: None,
        }
        .build()
        .unwrap_err();
        match err {
            Error::NonMartingale { step, mean } => {
                assert_eq!(step, 0);
                assert_relative_eq!(mean, 1.05, max_relative = 1e-12);
            }
            other => panic!("expected NonMartingale, got {other}"),
        }

        // Additive step that drives the value negative.
        let err = ModelSpec {
            initial: 0.1,
            steps: vec![StepSpec {
                kind: StepKind::Add,
                branches: vec![
                    BranchSpec { p: 0.5, value: 0.5 },
                    BranchSpec { p: 0.5, value: -0.5 },
                ],
            }],
            time_grid: None,
        }
        .build()
        .unwrap_err();
        assert!(matches!(err, Error::NegativeValue { step: 1, .. }), "{err}");

        // Nonpositive start.
        assert!(ModelSpec {
            initial: 0.0,
            steps: vec![],
            time_grid: None,
        }
        .build()
        .is_err());

        // Time grid with the wrong length.
        let err = ModelSpec {
            initial: 1.0,
            steps: vec![StepSpec {
                kind: StepKind::Add,
                branches: vec![BranchSpec { p: 1.0, value: 0.0 }],
            }],
            time_grid: Some(vec![0.0, 0.5, 1.0]),
        }
        .build()
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn model_validation_rejects_zero_before_final_step() {
        let err = ModelSpec {
            initial: 1.0,
            steps: vec![
                StepSpec {
                    kind: StepKind::Add,
                    branches: vec![
                        BranchSpec { p: 0.5, value: 1.0 },
                        BranchSpec { p: 0.5, value: -1.0 },
                    ],
                },
                StepSpec {
                    kind: StepKind::Add,
                    branches: vec![
                        BranchSpec { p: 0.5, value: 0.5 },
                        BranchSpec { p: 0.5, value: -0.5 },
                    ],
                },
            ],
            time_grid: None,
        }
        .build()
        .unwrap_err();
        assert!(matches!(err, Error::Degenerate { .. }), "{err}");
    }

    #[test]
    fn leaf_cap_is_enforced() {
        let wide = StepSpec {
            kind: StepKind::Add,
            branches: (0..101)
                .map(|i| BranchSpec {
                    p: 1.0 / 101.0,
                    value: (i as f64 - 50.0) * 1e-6,
                })
                .collect(),
        };
        let err = ModelSpec {
            initial: 1.0,
            steps: vec![wide; 3],
            time_grid: None,
        }
        .build()
        .unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
    }

    #[test]
    fn random_trees_satisfy_the_bound() {
        // Random admissible trees: multiplicative factors normalized to mean
        // one, additive offsets recentred and scaled to keep values positive.
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let depth = rng.random_range(1..=4);
            let mut steps = Vec::new();
            let mut min_reach = 1.0_f64;
            for _ in 0..depth {
                let nb = rng.random_range(2..=3);
                let probs: Vec<f64> = {
                    let raw: Vec<f64> = (0..nb).map(|_| rng.random_range(0.2..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    raw.iter().map(|p| p / s).collect()
                };
                if rng.random_bool(0.5) {
                    let raw: Vec<f64> = (0..nb).map(|_| rng.random_range(0.3..1.8)).collect();
                    let mean: f64 = probs.iter().zip(&raw).map(|(p, v)| p * v).sum();
                    let values: Vec<f64> = raw.iter().map(|v| v / mean).collect();
                    min_reach *= values.iter().copied().fold(f64::INFINITY, f64::min);
                    steps.push(StepSpec {
                        kind: StepKind::Mult,
                        branches: probs
                            .iter()
                            .zip(&values)
                            .map(|(&p, &value)| BranchSpec { p, value })
                            .collect(),
                    });
                } else {
                    let scale = 0.3 * min_reach;
                    let raw: Vec<f64> = (0..nb).map(|_| rng.random_range(-scale..scale)).collect();
                    let mean: f64 = probs.iter().zip(&raw).map(|(p, v)| p * v).sum();
                    let values: Vec<f64> = raw.iter().map(|v| v - mean).collect();
                    let worst = values.iter().copied().fold(f64::INFINITY, f64::min);
                    min_reach += worst;
                    steps.push(StepSpec {
                        kind: StepKind::Add,
                        branches: probs
                            .iter()
                            .zip(&values)
                            .map(|(&p, &value)| BranchSpec { p, value })
                            .collect(),
                    });
                }
            }
            let model = ModelSpec {
                initial: 1.0,
                steps,
                time_grid: None,
            }
            .build()
            .unwrap();
            let (ent, bound) = theorem1_enumerate::<f64>(&model).unwrap();
            assert!(
                ent <= bound + 1e-12 * (1.0 + bound.abs()),
                "entropy {ent} exceeds bound {bound}"
            );
            assert!(ent >= -1e-12);
        }
    }

    #[test]
    fn tree_mc_agrees_with_enumeration() {
        let model = three_step();
        let (ent, bound) = theorem1_enumerate::<f64>(&model).unwrap();
        let rep = theorem1_mc(&model, 100_000, 31).unwrap();
        assert_abs_diff_eq!(rep.bound, bound, epsilon = 4.0 * rep.bound_sd.max(1e-9));
        assert_abs_diff_eq!(rep.entropy, ent, epsilon = 4.0 * rep.entropy_sd.max(1e-9));
    }

    #[test]
    fn tree_mc_is_deterministic() {
        let model = two_leaf();
        let a = theorem1_mc(&model, 30_000, 5).unwrap();
        let b = theorem1_mc(&model, 30_000, 5).unwrap();
        assert_eq!(a.bound.to_bits(), b.bound.to_bits());
    }

    #[test]
    fn cylinder_validation() {
        let f = Expr::parse("x1 + x2").unwrap();
        assert!(CylinderFunctional::new(vec![0.5, 1.0], f.clone()).is_ok());
        assert!(CylinderFunctional::new(vec![1.0, 0.5], f.clone()).is_err());
        assert!(CylinderFunctional::new(vec![0.0, 1.0], f.clone()).is_err());
        assert!(CylinderFunctional::new(vec![], f).is_err());
        // Variable out of range for the number of times.
        let g = Expr::parse("x3").unwrap();
        assert!(CylinderFunctional::new(vec![0.5, 1.0], g).is_err());
    }

    #[test]
    fn brownian_equality_family_hits_both_sides() {
        // ξ = e^{B₁/2}: Ent ξ² = 2E‖Dξ‖² = e^{1/2}/2.
        let func =
            CylinderFunctional::new(vec![1.0], Expr::parse("exp(x / 2)").unwrap()).unwrap();
        let rep = brownian_cylinder_check(&func, 200_000, 17).unwrap();
        let exact = 0.5_f64.exp() / 2.0;
        assert_abs_diff_eq!(rep.entropy, exact, epsilon = 4.0 * rep.entropy_sd);
        assert_abs_diff_eq!(rep.bound, exact, epsilon = 4.0 * rep.bound_sd);
        assert!(rep.slack >= -4.0 * rep.slack_sd);
    }

    #[test]
    fn brownian_two_time_inequality_holds() {
        let func = CylinderFunctional::new(
            vec![0.5, 1.0],
            Expr::parse("x1 + 0.5 * sin(x2)").unwrap(),
        )
        .unwrap();
        let rep = brownian_cylinder_check(&func, 100_000, 23).unwrap();
        assert!(
            rep.slack >= -4.0 * rep.slack_sd,
            "lhs {} vs rhs {} (sd {})",
            rep.entropy,
            rep.bound,
            rep.slack_sd
        );
    }

    #[test]
    fn brownian_check_is_deterministic() {
        let func = CylinderFunctional::new(vec![1.0], Expr::parse("x^2").unwrap()).unwrap();
        let a = brownian_cylinder_check(&func, 40_000, 3).unwrap();
        let b = brownian_cylinder_check(&func, 40_000, 3).unwrap();
        assert_eq!(a.entropy.to_bits(), b.entropy.to_bits());
        assert_eq!(a.bound.to_bits(), b.bound.to_bits());
    }

    #[test]
    fn compact_support_structural_rules() {
        let yes = [
            "bump(x1; 0, 4)",
            "bump(x1; 0, 4) + bump(x2; 1, 2)",
            "bump(x1; 0, 4) * exp(x2)",
            "2 * bump(x1; 0, 4)",
            "bump(x1; 0, 4)^2",
            "0.5",
        ];
        for src in yes {
            let e = Expr::parse(src).unwrap();
            assert!(compactly_supported(e.ast()), "{src} should pass");
        }
        let no = [
            "x1",
            "exp(x1)",
            "bump(x1; 0, 4) + x2",
            "sin(bump(x1; 0, 4))",
            "exp(bump(x1; 0, 4))",
            "bump(2; 0, 4) * x1",
        ];
        for src in no {
            let e = Expr::parse(src).unwrap();
            assert!(!compactly_supported(e.ast()), "{src} should fail");
        }
    }

    #[test]
    fn poisson_rejects_unbounded_support() {
        let func =
            CylinderFunctional::new(vec![1.0], Expr::parse("exp(x)").unwrap()).unwrap();
        let err = poisson_functional_check(&func, 1.0, 1_000, 7).unwrap_err();
        assert!(matches!(err, Error::Support { .. }), "{err}");
    }

    #[test]
    fn poisson_bump_inequality_holds() {
        let func =
            CylinderFunctional::new(vec![1.0], Expr::parse("bump(x; 0, 4)").unwrap()).unwrap();
        for lambda in [1.0, 2.0] {
            let rep = poisson_functional_check(&func, lambda, 100_000, 13).unwrap();
            assert!(
                rep.slack >= -4.0 * rep.slack_sd,
                "λ = {lambda}: lhs {} vs rhs {} (sd {})",
                rep.entropy,
                rep.bound,
                rep.slack_sd
            );
        }
    }

    #[test]
    fn poisson_rejects_bad_rate() {
        let func =
            CylinderFunctional::new(vec![1.0], Expr::parse("bump(x; 0, 4)").unwrap()).unwrap();
        assert!(poisson_functional_check(&func, 0.0, 100, 1).is_err());
        assert!(poisson_functional_check(&func, f64::INFINITY, 100, 1).is_err());
    }

    #[test]
    fn trimming_mc_matches_quadrature_bound() {
        let m = Measure1D::gaussian(0.0, 1.0).unwrap();
        let fam = TrimmedFamily1D::quantile(&m);
        let spec = QuadratureSpec::default();
        let quad = theorem2_bound(&m, &fam, &|x| Ok(x.exp()), &spec).unwrap();
        let rep = trimming_martingale_mc(&m, &fam, &|x| Ok(x.exp()), 150_000, 29, &spec).unwrap();
        assert_abs_diff_eq!(rep.bound, quad.bound, epsilon = 4.0 * rep.bound_sd);
        let ent = entropy(&m, &|x| Ok(x.exp()), &spec).unwrap();
        assert_abs_diff_eq!(rep.entropy, ent.value, epsilon = 4.0 * rep.entropy_sd);
    }

    #[test]
    fn trimming_mc_flags_epsilon_shift_for_compact_g() {
        let m = Measure1D::gaussian(0.0, 1.0).unwrap();
        let fam = TrimmedFamily1D::quantile(&m);
        let g = Expr::parse("bump(x; -1, 1)").unwrap();
        let rep = trimming_martingale_mc(
            &m,
            &fam,
            &|x| g.eval1(x),
            20_000,
            41,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(
            rep.flags.iter().any(|f| f.contains("epsilon-shift")),
            "flags: {:?}",
            rep.flags
        );
    }
}
