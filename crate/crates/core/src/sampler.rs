//! Importance-sampled Monte Carlo estimation of GNH entries.
//!
//! For an entry `(k, m)` a point `t` is drawn with probability
//! `P(t) ∝ ‖v_k(t)‖·‖v_m(t)‖` and `H̃_km = (1/c) Σ_s v_k(t_s)ᵀ v_m(t_s) / P(t_s)`.
//!
//! Random streams are ChaCha8 seeded with the configured seed; the stream id
//! of an entry is `(min(k,m) << 32) | max(k,m)`, so estimates of distinct
//! entries are independent and can run in any order on any thread.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::precompute::{GnhPrecomp, WorkCounter};
use crate::scalar::Scalar;

/// Largest index set [`matrix_estimate`] accepts by default.
pub const DEFAULT_MATRIX_LIMIT: usize = 8_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Number of samples `c`.
    pub samples: usize,
    /// Failure probability `δ` of the reported bound.
    pub delta: f64,
    pub seed: u64,
}

impl EstimatorConfig {
    pub fn new(samples: usize, delta: f64, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(GnhError::shape("sample count must be at least 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(GnhError::shape(format!("δ = {delta} is outside (0, 1)")));
        }
        Ok(EstimatorConfig {
            samples,
            delta,
            seed,
        })
    }

    /// `η = 1 + √(8 log(1/δ))`.
    pub fn eta(&self) -> f64 {
        1.0 + (8.0 * (1.0 / self.delta).ln()).sqrt()
    }

    pub fn with_samples(self, samples: usize) -> Self {
        EstimatorConfig { samples, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        EstimatorConfig { seed, ..self }
    }
}

/// Random stream dedicated to the unordered pair `(k, m)`.
pub fn entry_rng(seed: u64, k: usize, m: usize) -> ChaCha8Rng {
    let (lo, hi) = if k <= m { (k, m) } else { (m, k) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((lo as u64) << 32) | (hi as u64 & 0xffff_ffff));
    rng
}

#[derive(Clone, Debug)]
pub struct SamplingDistribution<T> {
    probs: Vec<T>,
    cumulative: Vec<T>,
    total_mass: T,
    support: usize,
    /// `Σ_t ‖v_k(t)‖²` and `Σ_t ‖v_m(t)‖²`.
    sq_norms: (T, T),
}

impl<T: Scalar> SamplingDistribution<T> {
    /// Distribution proportional to the non-negative `weights`.
    pub fn from_weights(weights: Vec<T>) -> Self {
        let total_mass: T = weights.iter().copied().sum();
        let support = weights.iter().filter(|&&w| w > T::zero()).count();
        let n = weights.len();
        let probs: Vec<T> = if total_mass > T::zero() {
            weights.iter().map(|&w| w / total_mass).collect()
        } else {
            vec![T::zero(); n]
        };
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = T::zero();
        for &p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        if total_mass > T::zero() {
            // pin the table end so a draw just below 1 always lands
            if let Some(last) = probs.iter().rposition(|&p| p > T::zero()) {
                for c in &mut cumulative[last..] {
                    *c = T::one();
                }
            }
        }
        SamplingDistribution {
            probs,
            cumulative,
            total_mass,
            support,
            sq_norms: (T::zero(), T::zero()),
        }
    }

    /// Uniform distribution over `n` points.
    pub fn uniform(n: usize) -> Self {
        Self::from_weights(vec![T::one(); n])
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_mass(&self) -> T {
        self.total_mass
    }

    /// Number of points with non-zero probability.
    pub fn support(&self) -> usize {
        self.support
    }

    pub fn is_degenerate(&self) -> bool {
        self.total_mass <= T::zero()
    }

    /// Binary-search draw; returns the point and the number of search steps.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, u32) {
        let u = T::of(rng.random::<f64>());
        let t = self.cumulative.partition_point(|&c| c <= u);
        let steps = usize::BITS - self.cumulative.len().leading_zeros();
        (t.min(self.probs.len() - 1), steps)
    }
}

/// Distribution `P(t) ∝ ‖v_k(t)‖·‖v_m(t)‖`.
pub fn build_distribution<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    k: usize,
    m: usize,
) -> SamplingDistribution<T> {
    let (ki, mi) = (pre.index(k), pre.index(m));
    let mut sk = T::zero();
    let mut sm = T::zero();
    let weights = (0..pre.num_points())
        .map(|t| {
            let a = pre.column_norm(&ki, t);
            let b = pre.column_norm(&mi, t);
            sk += a * a;
            sm += b * b;
            a * b
        })
        .collect();
    let mut dist = SamplingDistribution::from_weights(weights);
    dist.sq_norms = (sk, sm);
    dist
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntryEstimate<T> {
    pub value: T,
    pub samples_used: usize,
    /// `(η/√c)·‖v_k‖·‖v_m‖`.
    pub bound: T,
    /// Set when the value is exact: diagonal entry, degenerate mass or a
    /// single contributing point.
    pub exact: bool,
    pub work: WorkCounter,
}

fn bound<T: Scalar>(cfg: &EstimatorConfig, sq_norms: (T, T), c: usize) -> T {
    T::of(cfg.eta() / (c as f64).sqrt()) * (sq_norms.0 * sq_norms.1).sqrt()
}

/// Monte Carlo estimate of `H_km` with `cfg.samples` draws.
pub fn entry_estimate<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    k: usize,
    m: usize,
    cfg: &EstimatorConfig,
) -> EntryEstimate<T> {
    let n = pre.num_points();
    let mut work = WorkCounter {
        distribution_ops: n as u64,
        ..WorkCounter::default()
    };
    let dist = build_distribution(pre, k, m);
    let exact = |value: T, samples_used: usize, work: WorkCounter| EntryEstimate {
        value,
        samples_used,
        bound: T::zero(),
        exact: true,
        work,
    };
    if dist.is_degenerate() {
        return exact(T::zero(), 0, work);
    }
    if k == m {
        // v_kᵀv_k / P(t) equals the total mass for every t
        return exact(dist.total_mass, 1, work);
    }
    let (ki, mi) = (pre.index(k), pre.index(m));
    let per_sample = (pre.output_dim() + 2) as u64;
    if dist.support == 1 {
        let t = dist
            .probs
            .iter()
            .position(|&p| p > T::zero())
            .expect("one point in support");
        work.sample_ops += per_sample;
        return exact(pre.v_dot(&ki, &mi, t), 1, work);
    }
    let c = cfg.samples;
    let mut rng = entry_rng(cfg.seed, k, m);
    let mut acc = T::zero();
    for _ in 0..c {
        let (t, steps) = dist.draw(&mut rng);
        work.search_steps += steps as u64;
        work.sample_ops += per_sample;
        acc += pre.v_dot(&ki, &mi, t) / dist.probs[t];
    }
    EntryEstimate {
        value: acc / T::from_usize_lossy(c),
        samples_used: c,
        bound: bound(cfg, dist.sq_norms, c),
        exact: false,
        work,
    }
}

/// Same estimator with `P(t) = 1/n`.
pub fn uniform_baseline_estimate<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    k: usize,
    m: usize,
    cfg: &EstimatorConfig,
) -> EntryEstimate<T> {
    let n = pre.num_points();
    let (ki, mi) = (pre.index(k), pre.index(m));
    let per_sample = (pre.output_dim() + 2) as u64;
    let mut work = WorkCounter::default();
    if n == 1 {
        work.sample_ops += per_sample;
        return EntryEstimate {
            value: pre.v_dot(&ki, &mi, 0),
            samples_used: 1,
            bound: T::zero(),
            exact: true,
            work,
        };
    }
    let c = cfg.samples;
    let mut rng = entry_rng(cfg.seed, k, m);
    let scale = T::from_usize_lossy(n);
    let mut acc = T::zero();
    for _ in 0..c {
        let t = rng.random_range(0..n);
        work.sample_ops += per_sample;
        acc += pre.v_dot(&ki, &mi, t) * scale;
    }
    let dist = build_distribution(pre, k, m);
    EntryEstimate {
        value: acc / T::from_usize_lossy(c),
        samples_used: c,
        bound: bound(cfg, dist.sq_norms, c),
        exact: false,
        work,
    }
}

/// Sampling scheme used by [`matrix_estimate_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Importance,
    Uniform,
}

/// Estimated `H(I, I)` for an index set, one estimate per unordered pair.
pub fn matrix_estimate<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    indices: &[usize],
    cfg: &EstimatorConfig,
) -> Result<Matrix<T>> {
    matrix_estimate_with(pre, indices, cfg, Scheme::Importance, DEFAULT_MATRIX_LIMIT)
}

pub fn matrix_estimate_with<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    indices: &[usize],
    cfg: &EstimatorConfig,
    scheme: Scheme,
    limit: usize,
) -> Result<Matrix<T>> {
    let s = indices.len();
    if s > limit {
        return Err(GnhError::Resource(format!(
            "estimated matrix of size {s} exceeds the limit of {limit}"
        )));
    }
    let cols: Vec<Vec<T>> = (0..s)
        .into_par_iter()
        .map(|b| {
            (0..=b)
                .map(|a| {
                    let (k, m) = (indices[a], indices[b]);
                    match scheme {
                        Scheme::Importance => entry_estimate(pre, k, m, cfg).value,
                        Scheme::Uniform => uniform_baseline_estimate(pre, k, m, cfg).value,
                    }
                })
                .collect()
        })
        .collect();
    let mut h = Matrix::zeros(s, s);
    for (b, col) in cols.into_iter().enumerate() {
        for (a, v) in col.into_iter().enumerate() {
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Ok(h)
}

/// Empirical statistics of repeated independent estimates of one entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialStats {
    pub exact: f64,
    pub mean: f64,
    /// Unbiased sample variance of the estimates.
    pub variance: f64,
    pub standard_error: f64,
    /// `‖v_k‖²‖v_m‖²/c`.
    pub variance_bound: f64,
    /// Fraction of trials outside the `(η/√c)·‖v_k‖·‖v_m‖` band.
    pub failure_rate: f64,
    pub trials: usize,
}

/// Seed of trial `t`, decorrelated from neighbouring base seeds.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64)
        .wrapping_add(1)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn trial_statistics<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    k: usize,
    m: usize,
    cfg: &EstimatorConfig,
    trials: usize,
) -> TrialStats {
    let exact = pre.entry_exact(k, m).f64();
    let ests: Vec<EntryEstimate<T>> = (0..trials)
        .into_par_iter()
        .map(|t| entry_estimate(pre, k, m, &cfg.with_seed(trial_seed(cfg.seed, t))))
        .collect();
    let values: Vec<f64> = ests.iter().map(|e| e.value.f64()).collect();
    let tf = trials as f64;
    let mean = values.iter().sum::<f64>() / tf;
    let variance = if trials > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (tf - 1.0)
    } else {
        0.0
    };
    let dist = build_distribution(pre, k, m);
    let c = cfg.samples as f64;
    let scale = (dist.sq_norms.0.f64() * dist.sq_norms.1.f64()).sqrt();
    // exact shortcuts carry a zero bound; allow for rounding
    let slack = 1e-12 * scale;
    let failures = ests
        .iter()
        .filter(|e| (e.value.f64() - exact).abs() > e.bound.f64() + slack)
        .count();
    TrialStats {
        exact,
        mean,
        variance,
        standard_error: (variance / tf).sqrt(),
        variance_bound: dist.sq_norms.0.f64() * dist.sq_norms.1.f64() / c,
        failure_rate: failures as f64 / tf,
        trials,
    }
}

/// Empirical rate at which the high-probability bound is violated.
pub fn concentration_test<T: Scalar, S: Scalar>(
    pre: &GnhPrecomp<T, S>,
    k: usize,
    m: usize,
    cfg: &EstimatorConfig,
    trials: usize,
) -> Result<f64> {
    if trials < 100 {
        return Err(GnhError::shape(format!(
            "{trials} trials requested, at least 100 required"
        )));
    }
    Ok(trial_statistics(pre, k, m, cfg, trials).failure_rate)
}
