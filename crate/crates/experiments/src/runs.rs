//! The sampling-convergence, compression-comparison and memory experiments.

use std::time::Instant;

use gnh_core::baselines::{kfac_build, rsvd, KfacMode, RsvdConfig, DEFAULT_OVERSAMPLE};
use gnh_core::hmatrix::probe_error;
use gnh_core::io::load_network;
use gnh_core::mlp::MlpNetwork;
use gnh_core::precompute::{c_tensor_bytes, GnhPrecomp};
use gnh_core::sampler::{
    matrix_estimate_with, trial_seed, EstimatorConfig, Scheme, DEFAULT_MATRIX_LIMIT,
};
use gnh_core::{ApproxOperator, LinearOperator, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{derive_seed, parse_settings, stream, ExperimentConfig, Method, Storage};
use crate::data::subsample_indices;
use crate::error::{Error, Result};
use crate::problem::{build_hmatrix, load_problem, resolve_lambda, WarmupSummary};
use crate::report::{Csv, Report};

/// Median wall-clock seconds of `runs` calls; the last result is kept.
pub fn median_time<R>(runs: usize, mut f: impl FnMut() -> Result<R>) -> Result<(R, f64)> {
    let mut times = Vec::with_capacity(runs);
    let mut last = None;
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        last = Some(f()?);
        times.push(t.elapsed().as_secs_f64());
    }
    Ok((last.expect("at least one run"), median(&mut times)))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub scheme: String,
    pub c: usize,
    /// Median over trials of `‖H̃ − H‖_F / ‖H‖_F` on the index set.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n_params: usize,
    pub points: usize,
    pub entries: Vec<usize>,
    pub rows: Vec<ConvergenceRow>,
    pub slope_fmc: f64,
    pub slope_uniform: f64,
    /// Per sample count: fraction of trials where importance sampling is at
    /// least as accurate as uniform sampling.
    pub win_fraction: Vec<f64>,
    pub warmup: Option<WarmupSummary>,
}

impl ConvergenceReport {
    pub fn error(&self, scheme: &str, c: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && r.c == c)
            .map(|r| r.error)
    }

    pub fn csv(&self) -> Csv {
        let mut t = Csv::new(&["scheme", "c", "error"]);
        t.comments.push(format!(
            "slope fmc {} uniform {}",
            self.slope_fmc, self.slope_uniform
        ));
        for r in &self.rows {
            t.push(vec![r.scheme.clone(), r.c.to_string(), r.error.to_string()]);
        }
        t
    }
}

/// Frobenius error of importance and uniform sampling against the exact
/// entries over `cfg.trials` seeds for every `c` in `cfg.sample_counts`.
pub fn convergence_on(
    pre: &GnhPrecomp<f64>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ConvergenceReport> {
    let n_params = pre.num_params();
    let entries = subsample_indices(n_params, cfg.entries, derive_seed(seed, stream::ENTRIES));
    let exact = pre.block(&entries, &entries);
    let scale = exact.frobenius_norm();
    let rel = |h: Matrix<f64>| h.sub(&exact).frobenius_norm() / scale;
    let base = derive_seed(seed, stream::SAMPLER);
    let mut rows = Vec::new();
    let mut fmc_median = Vec::new();
    let mut uni_median = Vec::new();
    let mut win_fraction = Vec::new();
    for &c in &cfg.sample_counts {
        let mut fmc = Vec::with_capacity(cfg.trials);
        let mut uni = Vec::with_capacity(cfg.trials);
        for t in 0..cfg.trials {
            let est = EstimatorConfig::new(c, cfg.delta, trial_seed(base, t))?;
            let limit = DEFAULT_MATRIX_LIMIT;
            fmc.push(rel(matrix_estimate_with(
                pre,
                &entries,
                &est,
                Scheme::Importance,
                limit,
            )?));
            uni.push(rel(matrix_estimate_with(
                pre,
                &entries,
                &est,
                Scheme::Uniform,
                limit,
            )?));
        }
        let wins = fmc.iter().zip(&uni).filter(|(f, u)| f <= u).count();
        win_fraction.push(wins as f64 / cfg.trials as f64);
        let (ef, eu) = (median(&mut fmc), median(&mut uni));
        fmc_median.push(ef);
        uni_median.push(eu);
        rows.push(ConvergenceRow {
            scheme: "fmc".to_string(),
            c,
            error: ef,
        });
        rows.push(ConvergenceRow {
            scheme: "uniform".to_string(),
            c,
            error: eu,
        });
    }
    let cs: Vec<f64> = cfg.sample_counts.iter().map(|&c| c as f64).collect();
    Ok(ConvergenceReport {
        n_params,
        points: pre.num_points(),
        entries,
        rows,
        slope_fmc: log_log_slope(&cs, &fmc_median),
        slope_uniform: log_log_slope(&cs, &uni_median),
        win_fraction,
        warmup: None,
    })
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<(ConvergenceReport, Report)> {
    cfg.validate()?;
    let seed = cfg.require_seed("convergence")?;
    let problem = load_problem(cfg, Some(seed))?;
    let analysis = problem.analyse(cfg.byte_budget)?;
    let mut out = convergence_on(&analysis.pre, cfg, seed)?;
    out.warmup = problem.warmup.clone();
    let mut report = Report::new("convergence", cfg, &out)?;
    report.warnings = problem.warnings;
    Ok((out, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionRow {
    pub method: Method,
    pub setting: String,
    /// Rank cap for the hierarchical matrix, rank for RSVD, label samples
    /// per point for K-FAC.
    pub parameter: usize,
    pub stored_entries: usize,
    /// `stored_entries / N²`.
    pub compression_rate: f64,
    /// Rate matched against the hierarchical row: `%K`, or `k/N` for K-FAC.
    pub matched_rate: f64,
    pub probe_error: f64,
    pub recount: Option<usize>,
    pub capped_blocks: Option<usize>,
    pub compensation: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RowTiming {
    pub t_build: f64,
    pub t_matv: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompressionReport {
    pub n_params: usize,
    pub points: usize,
    pub lambda: f64,
    pub rows: Vec<CompressionRow>,
    #[serde(skip)]
    pub timings: Vec<RowTiming>,
    pub warmup: Option<WarmupSummary>,
}

impl CompressionReport {
    pub fn row(&self, method: Method, setting: &str) -> Option<&CompressionRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.setting == setting)
    }

    pub fn csv(&self) -> Csv {
        let mut t = Csv::new(&[
            "method",
            "setting",
            "parameter",
            "t_build",
            "t_matv",
            "percent_k",
            "matched_rate",
            "eps_f",
        ]);
        for (r, tm) in self.rows.iter().zip(&self.timings) {
            t.push(vec![
                method_name(r.method).to_string(),
                r.setting.clone(),
                r.parameter.to_string(),
                format!("{:.6}", tm.t_build),
                format!("{:.6}", tm.t_matv),
                (100.0 * r.compression_rate).to_string(),
                r.matched_rate.to_string(),
                r.probe_error.to_string(),
            ]);
        }
        t
    }
}

pub fn method_name(m: Method) -> &'static str {
    match m {
        Method::Hm => "hm",
        Method::Rsvd => "rsvd",
        Method::Kfac => "kfac",
    }
}

/// Smallest RSVD rank whose `(N r + r) / N²` exceeds `rate`.
pub fn matched_rank(rate: f64, n: usize) -> usize {
    let nf = n as f64;
    (((rate * nf * nf) / (nf + 1.0)).floor() as usize + 1).min(n)
}

/// Smallest K-FAC sample count whose `k / N` exceeds `rate`.
pub fn matched_samples(rate: f64, n: usize) -> usize {
    (rate * n as f64).floor() as usize + 1
}

/// Hierarchical matrices for every configured preset, each followed by the
/// requested baselines at a slightly higher compression rate.
pub fn run_compression(cfg: &ExperimentConfig) -> Result<(CompressionReport, Report)> {
    cfg.validate()?;
    if !cfg.methods.contains(&Method::Hm) {
        return Err(Error::config(
            "compare matches the baselines to hm rows, so methods must include hm",
        ));
    }
    let seed = cfg.require_seed("compare")?;
    let problem = load_problem(cfg, Some(seed))?;
    let analysis = problem.analyse(cfg.byte_budget)?;
    let net = &problem.net;
    let n = problem.num_params();
    let lambda = resolve_lambda(cfg, &analysis);
    let reference = analysis.operator(net, lambda);
    let probe_seed = derive_seed(seed, stream::PROBE);
    let x = Matrix::gaussian(n, cfg.probes, &mut ChaCha8Rng::seed_from_u64(probe_seed));
    let matv = |op: &dyn LinearOperator<f64>| {
        median_time(cfg.timing_runs, || Ok(op.apply_block(&x))).map(|r| r.1)
    };

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for spec in &cfg.presets {
        let settings = parse_settings(spec, n)?;
        let (hm, t_build) = median_time(cfg.timing_runs, || {
            build_hmatrix(cfg, &analysis.pre, &settings, lambda, seed)
        })?;
        let rate = hm.compression_rate();
        rows.push(CompressionRow {
            method: Method::Hm,
            setting: spec.clone(),
            parameter: settings.max_rank,
            stored_entries: hm.stored_entries(),
            compression_rate: rate,
            matched_rate: rate,
            probe_error: probe_error(&hm, &reference, cfg.probes, probe_seed),
            recount: Some(hm.recount()),
            capped_blocks: Some(hm.stats().capped_blocks),
            compensation: Some(hm.compensation()),
        });
        timings.push(RowTiming {
            t_build,
            t_matv: matv(&hm)?,
        });

        if cfg.methods.contains(&Method::Rsvd) {
            let r = matched_rank(rate, n);
            let rc = RsvdConfig::new(r, derive_seed(seed, stream::RSVD))
                .with_oversample(DEFAULT_OVERSAMPLE.min(n - r));
            let unshifted = analysis.operator(net, 0.0);
            let (approx, t_build) = median_time(cfg.timing_runs, || {
                Ok(rsvd(&unshifted, &rc)?.with_shift(lambda))
            })?;
            rows.push(CompressionRow {
                method: Method::Rsvd,
                setting: spec.clone(),
                parameter: r,
                stored_entries: approx.stored_entries(),
                compression_rate: approx.compression_rate(),
                matched_rate: approx.compression_rate(),
                probe_error: probe_error(&approx, &reference, cfg.probes, probe_seed),
                recount: None,
                capped_blocks: None,
                compensation: None,
            });
            timings.push(RowTiming {
                t_build,
                t_matv: matv(&approx)?,
            });
        }

        if cfg.methods.contains(&Method::Kfac) {
            let k = matched_samples(rate, n);
            let mode = KfacMode::Sampled {
                samples: k,
                seed: derive_seed(seed, stream::KFAC),
            };
            let (approx, t_build) = median_time(cfg.timing_runs, || {
                Ok(kfac_build(net, &problem.batch, mode)?.with_shift(lambda))
            })?;
            rows.push(CompressionRow {
                method: Method::Kfac,
                setting: spec.clone(),
                parameter: k,
                stored_entries: approx.stored_entries(),
                compression_rate: approx.compression_rate(),
                matched_rate: approx.backprop_rate(),
                probe_error: probe_error(&approx, &reference, cfg.probes, probe_seed),
                recount: None,
                capped_blocks: None,
                compensation: None,
            });
            timings.push(RowTiming {
                t_build,
                t_matv: matv(&approx)?,
            });
        }
    }
    let out = CompressionReport {
        n_params: n,
        points: problem.batch.len(),
        lambda,
        rows,
        timings,
        warmup: problem.warmup.clone(),
    };
    let mut report = Report::new("compare", cfg, &out)?;
    for (r, t) in out.rows.iter().zip(&out.timings) {
        let key = format!("{}/{}", method_name(r.method), r.setting);
        report.timings.insert(format!("{key}/t_build"), t.t_build);
        report.timings.insert(format!("{key}/t_matv"), t.t_matv);
    }
    report.warnings = problem.warnings;
    Ok((out, report))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub n_params: usize,
    pub points: usize,
    pub storage: Storage,
    /// Bytes of the stored C-tensors.
    pub m_ours: usize,
    /// `4 N²`, a dense single-precision GNH.
    pub m_gnh: u128,
    pub ratio: f64,
}

pub fn memory_for(net: &MlpNetwork<f64>, points: usize, storage: Storage) -> MemoryReport {
    let m_ours = match storage {
        Storage::F32 => c_tensor_bytes::<f64, f32>(net, points),
        Storage::F64 => c_tensor_bytes::<f64, f64>(net, points),
    };
    let n = net.num_params() as u128;
    let m_gnh = 4 * n * n;
    MemoryReport {
        n_params: net.num_params(),
        points,
        storage,
        m_ours,
        m_gnh,
        ratio: m_ours as f64 / m_gnh as f64,
    }
}

/// Memory of the precomputation against a dense GNH for the configured
/// architecture and `n`; nothing is allocated.
pub fn run_memory_report(cfg: &ExperimentConfig) -> Result<(MemoryReport, Report)> {
    cfg.validate()?;
    let net = if cfg.net.is_empty() {
        shape_only_network(cfg)?
    } else {
        load_network(&cfg.net)?
    };
    let out = memory_for(&net, cfg.n, cfg.storage);
    let report = Report::new("memory", cfg, &out)?;
    Ok((out, report))
}

fn shape_only_network(cfg: &ExperimentConfig) -> Result<MlpNetwork<f64>> {
    let extra = cfg.bias.extra();
    let weights = cfg
        .sizes
        .windows(2)
        .map(|w| Matrix::zeros(w[1], w[0] + extra))
        .collect::<Vec<_>>();
    let acts = vec![cfg.activation; weights.len()];
    Ok(MlpNetwork::new(weights, acts, cfg.loss, cfg.bias)?)
}
