//! One-dimensional probability measures: density, CDF, quantile, and
//! integration against the measure.
//!
//! All integrals are computed in probability coordinates,
//! `∫h dμ = ∫₀¹ h(q(v)) dv`, which tames unbounded supports and heavy tail
//! weights; the interval is truncated to `[δ, 1−δ]` (`δ = tail_cut`) and
//! split at `v = 1/2` with panels graded geometrically toward the endpoints.
//!
//! Builtin measures use closed-form quantiles (the Gaussian via a polished
//! inverse-CDF); mixtures fall back to bracketing bisection with a Newton
//! polish, and grid densities invert their piecewise-quadratic CDF per
//! segment. In every case the returned `x` satisfies `|cdf(x) − v| ≤ 1e-12`
//! wherever the CDF is strictly increasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quad::{self, QuadResult};

/// Tolerances and truncation for measure-coordinate quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
    /// Probability mass `δ` trimmed from each tail before quadrature.
    pub tail_cut: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_depth: 48,
            tail_cut: 1e-10,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::validation("rel_tol must be positive and finite"));
        }
        if !(self.abs_tol > 0.0 && self.abs_tol.is_finite()) {
            return Err(Error::validation("abs_tol must be positive and finite"));
        }
        if self.max_depth == 0 || self.max_depth > 64 {
            return Err(Error::validation("max_depth must be in 1..=64"));
        }
        if !(self.tail_cut > 0.0 && self.tail_cut < 1e-3) {
            return Err(Error::validation("tail_cut must satisfy 0 < δ < 1e-3"));
        }
        Ok(())
    }
}

/// Piecewise-linear density on a knot grid, renormalized to total mass one.
/// The CDF is exactly piecewise quadratic, so quantiles solve a quadratic
/// per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    xs: Vec<f64>,
    ps: Vec<f64>,
    /// Cumulative mass at each knot; `cum[0] = 0`, `cum[last] = 1`.
    cum: Vec<f64>,
}

impl GridDensity {
    pub fn new(xs: Vec<f64>, ps: Vec<f64>) -> Result<GridDensity> {
        if xs.len() < 2 || xs.len() != ps.len() {
            return Err(Error::validation(format!(
                "grid density needs matching xs/ps of length ≥ 2, got {} and {}",
                xs.len(),
                ps.len()
            )));
        }
        if xs.iter().any(|x| !x.is_finite()) || ps.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("grid density knots must be finite"));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation("grid density xs must be strictly increasing"));
        }
        if let Some(p) = ps.iter().find(|p| **p < 0.0) {
            return Err(Error::validation(format!(
                "grid density values must be nonnegative, found {p}"
            )));
        }
        let total: f64 = xs
            .windows(2)
            .zip(ps.windows(2))
            .map(|(x, p)| 0.5 * (x[1] - x[0]) * (p[0] + p[1]))
            .sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::validation(
                "grid density must have positive total mass",
            ));
        }
        let ps: Vec<f64> = ps.iter().map(|p| p / total).collect();
        let mut cum = Vec::with_capacity(xs.len());
        cum.push(0.0);
        for i in 1..xs.len() {
            let seg = 0.5 * (xs[i] - xs[i - 1]) * (ps[i - 1] + ps[i]);
            cum.push(cum[i - 1] + seg);
        }
        // Pin the top exactly; rounding drift here would leak into quantiles.
        *cum.last_mut().expect("len ≥ 2") = 1.0;
        Ok(GridDensity { xs, ps, cum })
    }

    fn density(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return 0.0;
        }
        let j = self.xs.partition_point(|&t| t <= x).min(n - 1).max(1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let (p0, p1) = (self.ps[j - 1], self.ps[j]);
        p0 + (p1 - p0) * (x - x0) / (x1 - x0)
    }

    fn cdf(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let j = self.xs.partition_point(|&t| t <= x).min(n - 1).max(1);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let (p0, p1) = (self.ps[j - 1], self.ps[j]);
        let xi = x - x0;
        let slope = (p1 - p0) / (x1 - x0);
        (self.cum[j - 1] + p0 * xi + 0.5 * slope * xi * xi).min(1.0)
    }

    fn quantile(&self, v: f64) -> f64 {
        // First knot with cum ≥ v; segment (j-1, j) then has cum[j-1] < v ≤ cum[j],
        // which rules out zero-mass segments.
        let j = self.cum.partition_point(|&c| c < v).max(1);
        let i = j - 1;
        let h = self.xs[i + 1] - self.xs[i];
        let (p0, p1) = (self.ps[i], self.ps[i + 1]);
        let slope = (p1 - p0) / h;
        let r = v - self.cum[i];
        // Solve p0·ξ + slope·ξ²/2 = r via the cancellation-free root
        // ξ = 2r / (p0 + √(p0² + 2·slope·r)); slope = 0 reduces to r/p0.
        let disc = (p0 * p0 + 2.0 * slope * r).max(0.0);
        let denom = p0 + disc.sqrt();
        let xi = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
        self.xs[i] + xi.clamp(0.0, h)
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ps)
    }
}

/// A one-dimensional probability measure with positive density on its
/// support. Immutable after construction; all methods are pure.
#[derive(Debug, Clone, PartialEq)]
pub enum Measure1D {
    Gaussian { mean: f64, std: f64 },
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Logistic { loc: f64, scale: f64 },
    Mixture { weights: Vec<f64>, parts: Vec<Measure1D> },
    Grid(GridDensity),
}

impl Measure1D {
    pub fn gaussian(mean: f64, std: f64) -> Result<Measure1D> {
        if !mean.is_finite() || !(std > 0.0 && std.is_finite()) {
            return Err(Error::validation(format!(
                "gaussian needs finite mean and positive std, got ({mean}, {std})"
            )));
        }
        Ok(Measure1D::Gaussian { mean, std })
    }

    pub fn standard_gaussian() -> Measure1D {
        Measure1D::Gaussian { mean: 0.0, std: 1.0 }
    }

    pub fn uniform(a: f64, b: f64) -> Result<Measure1D> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::validation(format!(
                "uniform needs finite a < b, got ({a}, {b})"
            )));
        }
        Ok(Measure1D::Uniform { a, b })
    }

    pub fn exponential(rate: f64) -> Result<Measure1D> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::validation(format!(
                "exponential needs a positive rate, got {rate}"
            )));
        }
        Ok(Measure1D::Exponential { rate })
    }

    pub fn logistic(loc: f64, scale: f64) -> Result<Measure1D> {
        if !loc.is_finite() || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::validation(format!(
                "logistic needs finite loc and positive scale, got ({loc}, {scale})"
            )));
        }
        Ok(Measure1D::Logistic { loc, scale })
    }

    /// Finite convex combination of non-mixture builtins. Weights are
    /// normalized; density and CDF stay exact.
    pub fn mixture(weights: Vec<f64>, parts: Vec<Measure1D>) -> Result<Measure1D> {
        if weights.is_empty() || weights.len() != parts.len() {
            return Err(Error::validation(format!(
                "mixture needs matching nonempty weights/parts, got {} and {}",
                weights.len(),
                parts.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation("mixture weights must be nonnegative"));
        }
        if parts.iter().any(|p| matches!(p, Measure1D::Mixture { .. })) {
            return Err(Error::validation("mixture parts must not be mixtures"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::validation("mixture weights must not all be zero"));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Measure1D::Mixture { weights, parts })
    }

    pub fn grid(xs: Vec<f64>, ps: Vec<f64>) -> Result<Measure1D> {
        Ok(Measure1D::Grid(GridDensity::new(xs, ps)?))
    }

    /// Probability density at `x` (zero outside the support).
    pub fn density(&self, x: f64) -> f64 {
        match self {
            Measure1D::Gaussian { mean, std } => normal::pdf((x - mean) / std) / std,
            Measure1D::Uniform { a, b } => {
                if x >= *a && x <= *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Measure1D::Exponential { rate } => {
                if x >= 0.0 {
                    rate * (-rate * x).exp()
                } else {
                    0.0
                }
            }
            Measure1D::Logistic { loc, scale } => {
                // 1/(4s)·sech²(z/2); cosh overflow gives 0, which is correct.
                let c = ((x - loc) / (2.0 * scale)).cosh();
                1.0 / (4.0 * scale * c * c)
            }
            Measure1D::Mixture { weights, parts } => weights
                .iter()
                .zip(parts)
                .map(|(w, m)| w * m.density(x))
                .sum(),
            Measure1D::Grid(g) => g.density(x),
        }
    }

    /// Distribution function `F(x) = μ((−∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Measure1D::Gaussian { mean, std } => normal::cdf((x - mean) / std),
            Measure1D::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Measure1D::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Measure1D::Logistic { loc, scale } => {
                let z = (x - loc) / scale;
                1.0 / (1.0 + (-z).exp())
            }
            Measure1D::Mixture { weights, parts } => weights
                .iter()
                .zip(parts)
                .map(|(w, m)| w * m.cdf(x))
                .sum(),
            Measure1D::Grid(g) => g.cdf(x),
        }
    }

    /// Inverse CDF. Closed form for builtins; bracketed bisection with a
    /// Newton polish for mixtures; exact per-segment inversion for grids.
    /// Satisfies `|cdf(quantile(v)) − v| ≤ 1e-12` on strictly increasing
    /// stretches of the CDF.
    pub fn quantile(&self, v: f64) -> Result<f64> {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::domain(format!(
                "quantile needs v ∈ (0,1), got {v}"
            )));
        }
        Ok(match self {
            Measure1D::Gaussian { mean, std } => mean + std * normal::quantile(v),
            Measure1D::Uniform { a, b } => a + (b - a) * v,
            Measure1D::Exponential { rate } => -(-v).ln_1p() / rate,
            Measure1D::Logistic { loc, scale } => loc + scale * (v / (1.0 - v)).ln(),
            Measure1D::Mixture { weights, parts } => {
                self.quantile_bisect(v, weights, parts)?
            }
            Measure1D::Grid(g) => g.quantile(v),
        })
    }

    fn quantile_bisect(&self, v: f64, weights: &[f64], parts: &[Measure1D]) -> Result<f64> {
        // Component quantiles bracket the mixture quantile: if x ≥ q_j(v) for
        // every j then F_mix(x) = Σ w_j F_j(x) ≥ v, and symmetrically below.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (w, part) in weights.iter().zip(parts) {
            if *w == 0.0 {
                continue;
            }
            let q = part.quantile(v)?;
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::convergence(
                "mixture quantile",
                "no finite bracket from component quantiles",
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + mid.abs()) {
                break;
            }
        }
        let mut x = 0.5 * (lo + hi);
        // Newton polish where the density is informative; quadratic
        // convergence pushes |F(x) − v| to machine level.
        for _ in 0..8 {
            let p = self.density(x);
            if p <= 1e-12 {
                break;
            }
            let resid = self.cdf(x) - v;
            x -= resid / p;
            if resid.abs() <= 1e-16 {
                break;
            }
        }
        Ok(x)
    }

    /// Support interval (endpoints may be infinite).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Measure1D::Gaussian { .. } | Measure1D::Logistic { .. } => {
                (f64::NEG_INFINITY, f64::INFINITY)
            }
            Measure1D::Uniform { a, b } => (*a, *b),
            Measure1D::Exponential { .. } => (0.0, f64::INFINITY),
            Measure1D::Mixture { parts, .. } => parts.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), m| {
                    let (a, b) = m.support();
                    (lo.min(a), hi.max(b))
                },
            ),
            Measure1D::Grid(g) => (g.xs[0], g.xs[g.xs.len() - 1]),
        }
    }

    /// Median, used as the center of quantile-trimmed families.
    pub fn median(&self) -> f64 {
        self.quantile(0.5).expect("0.5 ∈ (0,1)")
    }

    /// Compact human-readable label for reports.
    pub fn label(&self) -> String {
        match self {
            Measure1D::Gaussian { mean, std } => format!("gaussian({mean}, {std})"),
            Measure1D::Uniform { a, b } => format!("uniform({a}, {b})"),
            Measure1D::Exponential { rate } => format!("exponential({rate})"),
            Measure1D::Logistic { loc, scale } => format!("logistic({loc}, {scale})"),
            Measure1D::Mixture { weights, parts } => {
                let terms: Vec<String> = weights
                    .iter()
                    .zip(parts)
                    .map(|(w, m)| format!("{w}*{}", m.label()))
                    .collect();
                format!("mixture({})", terms.join(" + "))
            }
            Measure1D::Grid(g) => format!(
                "grid({} pts on [{}, {}])",
                g.xs.len(),
                g.xs[0],
                g.xs[g.xs.len() - 1]
            ),
        }
    }
}

/// `∫ h dμ` in probability coordinates over `v ∈ [δ, 1−δ]`.
pub fn integrate(
    m: &Measure1D,
    h: &dyn Fn(f64) -> Result<f64>,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    spec.validate()?;
    integrate_v(m, &|_, x| h(x), spec.tail_cut, 1.0 - spec.tail_cut, spec)
}

/// `∫ h(v, q(v)) dv` over `[v_lo, v_hi] ∩ [δ, 1−δ]`, panels graded toward
/// both endpoints and split at `v = 1/2` when it is interior. The integrand
/// receives both the probability coordinate and the quantile point, so
/// callers that need `F(x)` (weights, trimmed tails) get it for free.
pub fn integrate_v(
    m: &Measure1D,
    h: &dyn Fn(f64, f64) -> Result<f64>,
    v_lo: f64,
    v_hi: f64,
    spec: &QuadratureSpec,
) -> Result<QuadResult> {
    let lo = v_lo.max(spec.tail_cut);
    let hi = v_hi.min(1.0 - spec.tail_cut);
    if !(lo < hi) {
        return Ok(QuadResult {
            value: 0.0,
            error: 0.0,
            evals: 0,
        });
    }
    let split = if lo < 0.5 && 0.5 < hi {
        0.5
    } else {
        0.5 * (lo + hi)
    };
    let knots = quad::graded_knots(lo, hi, split);
    let f = |v: f64| -> Result<f64> {
        let x = m.quantile(v)?;
        h(v, x)
    };
    quad::adaptive_panels(&f, &knots, spec.rel_tol, spec.abs_tol, spec.max_depth)
}

/// Product of independent one-dimensional components; the measure `μ` on
/// `ℝ^d` for the d-dimensional trimmed-filtration check.
#[derive(Debug, Clone)]
pub struct ProductMeasure {
    components: Vec<Measure1D>,
}

impl ProductMeasure {
    pub fn new(components: Vec<Measure1D>) -> Result<ProductMeasure> {
        if components.is_empty() {
            return Err(Error::validation(
                "product measure needs at least one component",
            ));
        }
        Ok(ProductMeasure { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Measure1D] {
        &self.components
    }

    pub fn density(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.components.len() {
            return Err(Error::Dimension {
                what: format!(
                    "product measure has dimension {}, got a point of dimension {}",
                    self.components.len(),
                    point.len()
                ),
            });
        }
        Ok(self
            .components
            .iter()
            .zip(point)
            .map(|(m, x)| m.density(*x))
            .product())
    }
}

/// JSON-facing measure description; validated into [`Measure1D`] by
/// [`MeasureSpec::build`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasureSpec {
    Gaussian { mean: f64, std: f64 },
    Uniform { a: f64, b: f64 },
    Exponential { rate: f64 },
    Logistic { loc: f64, scale: f64 },
    Mixture { weights: Vec<f64>, parts: Vec<MeasureSpec> },
    Grid { xs: Vec<f64>, ps: Vec<f64> },
}

impl MeasureSpec {
    pub fn build(&self) -> Result<Measure1D> {
        match self {
            MeasureSpec::Gaussian { mean, std } => Measure1D::gaussian(*mean, *std),
            MeasureSpec::Uniform { a, b } => Measure1D::uniform(*a, *b),
            MeasureSpec::Exponential { rate } => Measure1D::exponential(*rate),
            MeasureSpec::Logistic { loc, scale } => Measure1D::logistic(*loc, *scale),
            MeasureSpec::Mixture { weights, parts } => {
                let parts = parts
                    .iter()
                    .map(|p| p.build())
                    .collect::<Result<Vec<_>>>()?;
                Measure1D::mixture(weights.clone(), parts)
            }
            MeasureSpec::Grid { xs, ps } => Measure1D::grid(xs.clone(), ps.clone()),
        }
    }
}
