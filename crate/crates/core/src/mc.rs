//! Deterministic, worker-count-independent Monte Carlo.
//!
//! Work is split into fixed chunks of [`CHUNK`] samples. Chunk `k` draws from
//! `ChaCha12` seeded with the run seed on stream `k`, accumulates its sums
//! sequentially with Neumaier compensation, and the per-chunk partials are
//! folded in chunk order. The result is bitwise identical for any number of
//! rayon workers, and prefixes of the chunk sequence give consistent
//! convergence checkpoints without re-running.
//!
//! The moment accumulator tracks the triple `(w, y, z)` per sample, where
//! `z` is the function value, `y = z·log z`, and `w` is the bound-side
//! integrand (pre-scaled by any deterministic constant). Entropy, bound, and
//! slack are smooth functions of the three means, so standard errors come
//! from the delta method with the full 3×3 sample covariance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::Measure1D;
use crate::normal;

/// Fixed chunk length; part of the determinism contract.
pub const CHUNK: u64 = 16_384;

/// Excess-kurtosis level above which error bars get a warning flag.
pub const KURTOSIS_FLAG_LEVEL: f64 = 100.0;

/// Uniform variate in the open interval (0, 1); the zero case (possible
/// because `random::<f64>()` is half-open) maps to the smallest positive
/// normal so downstream quantile calls stay in-domain.
pub fn uniform_open(rng: &mut ChaCha12Rng) -> f64 {
    let u: f64 = rng.random();
    if u == 0.0 {
        f64::MIN_POSITIVE
    } else {
        u
    }
}

/// Inverse-CDF sample from a one-dimensional measure.
pub fn sample_measure(m: &Measure1D, rng: &mut ChaCha12Rng) -> Result<f64> {
    m.quantile(uniform_open(rng))
}

/// Standard normal variate via the tail-accurate inverse CDF (one uniform per
/// normal keeps the stream layout independent of acceptance tricks).
pub fn sample_std_normal(rng: &mut ChaCha12Rng) -> f64 {
    normal::quantile(uniform_open(rng))
}

/// Exponential variate with the given rate.
pub fn sample_exponential(rate: f64, rng: &mut ChaCha12Rng) -> f64 {
    -uniform_open(rng).ln() / rate
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Csum {
    s: f64,
    c: f64,
}

impl Csum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.s + x;
        if self.s.abs() >= x.abs() {
            self.c += (self.s - t) + x;
        } else {
            self.c += (x - t) + self.s;
        }
        self.s = t;
    }

    pub(crate) fn total(self) -> f64 {
        self.s + self.c
    }
}

/// Chunked deterministic fold: `init` starts each chunk accumulator, `step`
/// consumes one sample's worth of randomness, and the chunk partials are
/// merged **in chunk order**. `stream_offset` keeps independent phases of one
/// computation on disjoint ChaCha streams.
pub fn run_fold<A, I, S, M>(
    samples: u64,
    seed: u64,
    stream_offset: u64,
    init: I,
    step: S,
    mut merge: M,
) -> Result<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    S: Fn(&mut A, &mut ChaCha12Rng) -> Result<()> + Sync,
    M: FnMut(&mut A, A),
{
    let chunks = samples.div_ceil(CHUNK);
    let partials: Result<Vec<A>> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(stream_offset + k);
            let len = CHUNK.min(samples - k * CHUNK);
            let mut acc = init();
            for _ in 0..len {
                step(&mut acc, &mut rng)?;
            }
            Ok(acc)
        })
        .collect();
    let mut iter = partials?.into_iter();
    let mut acc = match iter.next() {
        Some(first) => first,
        None => init(),
    };
    for part in iter {
        merge(&mut acc, part);
    }
    Ok(acc)
}

/// Raw moment sums for the `(w, y, z)` triple; mergeable across chunks.
#[derive(Debug, Clone, Copy, Default)]
pub struct McMoments {
    n: u64,
    w: Csum,
    y: Csum,
    z: Csum,
    ww: Csum,
    yy: Csum,
    zz: Csum,
    wy: Csum,
    wz: Csum,
    yz: Csum,
    z3: Csum,
    z4: Csum,
}

impl McMoments {
    /// Record one sample: `w` the bound-side integrand, `z` the function
    /// value (`y = z·log z` is derived here, with `0·log 0 = 0`).
    pub fn accumulate(&mut self, w: f64, z: f64) -> Result<()> {
        if !w.is_finite() || !z.is_finite() {
            return Err(Error::Variance {
                what: format!("non-finite sample (w = {w}, z = {z})"),
            });
        }
        if z < -1e-12 {
            return Err(Error::NegativeFunction {
                at: f64::NAN,
                value: z,
            });
        }
        let z = z.max(0.0);
        let y = if z > 0.0 { z * z.ln() } else { 0.0 };
        self.n += 1;
        self.w.add(w);
        self.y.add(y);
        self.z.add(z);
        self.ww.add(w * w);
        self.yy.add(y * y);
        self.zz.add(z * z);
        self.wy.add(w * y);
        self.wz.add(w * z);
        self.yz.add(y * z);
        self.z3.add(z * z * z);
        self.z4.add(z * z * z * z);
        Ok(())
    }

    pub fn merge(&mut self, other: &McMoments) {
        self.n += other.n;
        self.w.add(other.w.total());
        self.y.add(other.y.total());
        self.z.add(other.z.total());
        self.ww.add(other.ww.total());
        self.yy.add(other.yy.total());
        self.zz.add(other.zz.total());
        self.wy.add(other.wy.total());
        self.wz.add(other.wz.total());
        self.yz.add(other.yz.total());
        self.z3.add(other.z3.total());
        self.z4.add(other.z4.total());
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    /// Entropy / bound / slack estimates with delta-method standard errors.
    pub fn report(&self) -> Result<McReport> {
        let n = self.n;
        if n < 2 {
            return Err(Error::Variance {
                what: format!("need at least 2 samples, got {n}"),
            });
        }
        let nf = n as f64;
        let (sw, sy, sz) = (self.w.total(), self.y.total(), self.z.total());
        let (m_w, m_y, m_z) = (sw / nf, sy / nf, sz / nf);
        let cov = |s_ab: Csum, s_a: f64, s_b: f64| -> f64 {
            (s_ab.total() - s_a * s_b / nf) / (nf - 1.0)
        };
        let vww = cov(self.ww, sw, sw);
        let vyy = cov(self.yy, sy, sy);
        let vzz = cov(self.zz, sz, sz);
        let vwy = cov(self.wy, sw, sy);
        let vwz = cov(self.wz, sw, sz);
        let vyz = cov(self.yz, sy, sz);

        // entropy = m_y − m_z·log m_z; gradient in (m_w, m_y, m_z).
        let (entropy, dz) = if m_z > 0.0 {
            let lz = m_z.ln();
            (m_y - m_z * lz, lz + 1.0)
        } else {
            (0.0, 0.0)
        };
        let bound = m_w;
        let slack = bound - entropy;

        let var_entropy = (vyy + dz * dz * vzz - 2.0 * dz * vyz) / nf;
        let var_bound = vww / nf;
        // slack gradient: (1, −1, +dz).
        let var_slack = (vww + vyy + dz * dz * vzz - 2.0 * vwy + 2.0 * dz * vwz
            - 2.0 * dz * vyz)
            / nf;

        let checked = |v: f64, what: &str| -> Result<f64> {
            if v.is_finite() {
                Ok(v.max(0.0).sqrt())
            } else {
                Err(Error::Variance {
                    what: format!("non-finite variance for {what}"),
                })
            }
        };
        let entropy_sd = checked(var_entropy, "entropy")?;
        let bound_sd = checked(var_bound, "bound")?;
        let slack_sd = checked(var_slack, "slack")?;
        if !(entropy.is_finite() && bound.is_finite()) {
            return Err(Error::Variance {
                what: "non-finite moment estimates".into(),
            });
        }

        // Excess kurtosis of z, a heaviness warning for the error bars.
        let c2 = self.zz.total() / nf - m_z * m_z;
        let excess_kurtosis = if c2 > 0.0 {
            let m = m_z;
            let c4 = self.z4.total() / nf - 4.0 * m * self.z3.total() / nf
                + 6.0 * m * m * self.zz.total() / nf
                - 3.0 * m * m * m * m;
            c4 / (c2 * c2) - 3.0
        } else {
            0.0
        };
        let mut flags = Vec::new();
        if excess_kurtosis > KURTOSIS_FLAG_LEVEL {
            flags.push(format!(
                "high-kurtosis: excess kurtosis of the function value is {excess_kurtosis:.1}; error bars may be optimistic"
            ));
        }

        Ok(McReport {
            n,
            entropy,
            entropy_sd,
            bound,
            bound_sd,
            slack,
            slack_sd,
            mean_w: m_w,
            mean_z: m_z,
            excess_kurtosis,
            flags,
        })
    }
}

/// Point estimates with standard errors (of the means, not of samples).
#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub n: u64,
    pub entropy: f64,
    pub entropy_sd: f64,
    pub bound: f64,
    pub bound_sd: f64,
    pub slack: f64,
    pub slack_sd: f64,
    pub mean_w: f64,
    pub mean_z: f64,
    pub excess_kurtosis: f64,
    pub flags: Vec<String>,
}

/// Per-chunk moment partials for `samples` draws; chunk `k` is stream
/// `stream_offset + k`. Folding a prefix of the result reproduces a smaller
/// run exactly, which is what convergence series are made of.
pub fn run_moment_chunks(
    samples: u64,
    seed: u64,
    stream_offset: u64,
    eval: &(dyn Fn(&mut ChaCha12Rng) -> Result<(f64, f64)> + Sync),
) -> Result<Vec<McMoments>> {
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(stream_offset + k);
            let len = CHUNK.min(samples - k * CHUNK);
            let mut acc = McMoments::default();
            for _ in 0..len {
                let (w, z) = eval(&mut rng)?;
                acc.accumulate(w, z)?;
            }
            Ok(acc)
        })
        .collect()
}

/// Fold all chunks of a run into one accumulator.
pub fn run_moments(
    samples: u64,
    seed: u64,
    eval: &(dyn Fn(&mut ChaCha12Rng) -> Result<(f64, f64)> + Sync),
) -> Result<McMoments> {
    let chunks = run_moment_chunks(samples, seed, 0, eval)?;
    Ok(fold_moments(&chunks))
}

pub fn fold_moments(chunks: &[McMoments]) -> McMoments {
    let mut acc = McMoments::default();
    for c in chunks {
        acc.merge(c);
    }
    acc
}
