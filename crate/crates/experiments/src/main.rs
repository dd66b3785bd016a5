use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gnh_core::hmatrix::{load_hmatrix, probe_error, save_hmatrix, HFactorization, HMatrix};
use gnh_core::io::{save_batch, save_network, sha256_hex};
use gnh_core::mlp::{cg_solve, gradient};
use gnh_core::precompute::GnhPrecomp;
use gnh_core::sampler::{entry_estimate, uniform_baseline_estimate, EstimatorConfig};
use gnh_core::{GnhError, LinearOperator};
use gnh_experiments::config::{
    derive_seed, stream, DataSource, ExperimentConfig, Precond, SamplingScheme, Storage,
};
use gnh_experiments::problem::{build_hmatrix, load_problem, resolve_lambda, Analysis, Problem};
use gnh_experiments::{
    gen_synthetic, run_compression, run_convergence, run_memory_report, warmup_train, Error,
    Report, Result,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "gnh",
    version,
    about = "Gauss-Newton Hessian entries, sampling and hierarchical compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert an MNIST or CIFAR-10 dataset into a batch file.
    Ingest(Opts),
    /// Generate a random network and Gaussian batch.
    Gen(Opts),
    /// SGD warm-up of a network; writes the trained checkpoint.
    Train(Opts),
    /// Build the C-tensor precomputation, optionally caching it.
    Precompute(Opts),
    /// One exact GNH entry.
    Entry(Opts),
    /// One Monte Carlo estimate of a GNH entry.
    Sample(Opts),
    /// Build and save a hierarchical approximation.
    BuildHmatrix(Opts),
    /// Probe error of a hierarchical approximation.
    Probe(Opts),
    /// Solve with the factorization, CG and preconditioned CG.
    Solve(Opts),
    /// Sampling error against sample count, importance vs uniform.
    Convergence(Opts),
    /// Hierarchical matrix against RSVD and K-FAC at matched rates.
    Compare(Opts),
    /// Precomputation memory against a dense single-precision GNH.
    Memory(Opts),
}

/// Every flag sets the configuration key of the same name.
#[derive(Args, Clone, Default)]
struct Opts {
    /// `key = value` file or an earlier JSON report.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` override; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    report: Option<String>,
    #[arg(long)]
    net: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    bias: Option<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    images: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    #[arg(long)]
    cifar: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long = "steps")]
    warmup_steps: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    presets: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    hmatrix: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda_relative: Option<String>,
    #[arg(long)]
    probes: Option<String>,
    #[arg(long)]
    precond: Option<String>,
    #[arg(long)]
    cg_tol: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    sample_counts: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    entries: Option<String>,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    timing_runs: Option<String>,
    #[arg(long)]
    storage: Option<String>,
    #[arg(long)]
    byte_budget: Option<String>,
}

impl Opts {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        let flags: [(&str, &Option<String>); 39] = [
            ("out", &self.out),
            ("report", &self.report),
            ("net", &self.net),
            ("batch", &self.batch),
            ("sizes", &self.sizes),
            ("activation", &self.activation),
            ("loss", &self.loss),
            ("bias", &self.bias),
            ("source", &self.source),
            ("images", &self.images),
            ("labels", &self.labels),
            ("cifar", &self.cifar),
            ("n", &self.n),
            ("warmup_steps", &self.warmup_steps),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("preset", &self.preset),
            ("presets", &self.presets),
            ("metric", &self.metric),
            ("oracle", &self.oracle),
            ("hmatrix", &self.hmatrix),
            ("samples", &self.samples),
            ("delta", &self.delta),
            ("scheme", &self.scheme),
            ("k", &self.k),
            ("m", &self.m),
            ("lambda", &self.lambda),
            ("lambda_relative", &self.lambda_relative),
            ("probes", &self.probes),
            ("precond", &self.precond),
            ("cg_tol", &self.cg_tol),
            ("max_iter", &self.max_iter),
            ("sample_counts", &self.sample_counts),
            ("trials", &self.trials),
            ("entries", &self.entries),
            ("methods", &self.methods),
            ("timing_runs", &self.timing_runs),
            ("storage", &self.storage),
            ("byte_budget", &self.byte_budget),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        for pair in &self.set {
            cfg.apply_override(pair)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<()> {
    let (name, opts) = match &command {
        Command::Ingest(o) => ("ingest", o),
        Command::Gen(o) => ("gen", o),
        Command::Train(o) => ("train", o),
        Command::Precompute(o) => ("precompute", o),
        Command::Entry(o) => ("entry", o),
        Command::Sample(o) => ("sample", o),
        Command::BuildHmatrix(o) => ("build-hmatrix", o),
        Command::Probe(o) => ("probe", o),
        Command::Solve(o) => ("solve", o),
        Command::Convergence(o) => ("convergence", o),
        Command::Compare(o) => ("compare", o),
        Command::Memory(o) => ("memory", o),
    };
    let cfg = opts.resolve()?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    }
    let report = match command {
        Command::Ingest(_) => ingest(&cfg)?,
        Command::Gen(_) => gen(&cfg)?,
        Command::Train(_) => train(&cfg)?,
        Command::Precompute(_) => precompute(&cfg)?,
        Command::Entry(_) => entry(&cfg)?,
        Command::Sample(_) => sample(&cfg)?,
        Command::BuildHmatrix(_) => build(&cfg)?,
        Command::Probe(_) => probe(&cfg)?,
        Command::Solve(_) => solve(&cfg)?,
        Command::Convergence(_) => {
            let (out, report) = run_convergence(&cfg)?;
            if !cfg.out.is_empty() {
                out.csv().save(&cfg.out)?;
            }
            report
        }
        Command::Compare(_) => {
            let (out, report) = run_compression(&cfg)?;
            if !cfg.out.is_empty() {
                out.csv().save(&cfg.out)?;
            }
            report
        }
        Command::Memory(_) => run_memory_report(&cfg)?.1,
    };
    debug_assert_eq!(report.command, name);
    if !cfg.report.is_empty() {
        report.save(&cfg.report)?;
    }
    println!("{}", report.to_json());
    Ok(())
}

fn require_out<'a>(cfg: &'a ExperimentConfig, command: &str) -> Result<&'a str> {
    if cfg.out.is_empty() {
        return Err(Error::config(format!("`{command}` needs --out")));
    }
    Ok(&cfg.out)
}

fn file_hash(path: &str) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn ingest(cfg: &ExperimentConfig) -> Result<Report> {
    if cfg.source == DataSource::Synthetic {
        return Err(Error::config(
            "ingest reads mnist, mnist-autoencoder or cifar; use `gen` for synthetic data",
        ));
    }
    let out = require_out(cfg, "ingest")?;
    let batch = cfg.load_batch(cfg.seed)?;
    save_batch(&batch, out)?;
    Report::new(
        "ingest",
        cfg,
        json!({
            "points": batch.len(),
            "input_dim": batch.input_dim(),
            "label_dim": batch.label_dim(),
            "batch_sha256": file_hash(out)?,
        }),
    )
}

fn gen(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.require_seed("gen")?;
    let out = require_out(cfg, "gen")?;
    let (net, batch) = gen_synthetic(&cfg.synthetic_spec(), derive_seed(seed, stream::DATA))?;
    let (net_path, batch_path) = (format!("{out}.net"), format!("{out}.batch"));
    save_network(&net, &net_path)?;
    save_batch(&batch, &batch_path)?;
    Report::new(
        "gen",
        cfg,
        json!({
            "n_params": net.num_params(),
            "points": batch.len(),
            "net": net_path,
            "batch": batch_path,
            "net_sha256": file_hash(&net_path)?,
            "batch_sha256": file_hash(&batch_path)?,
        }),
    )
}

fn train(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.require_seed("train")?;
    let out = require_out(cfg, "train")?;
    let untrained = ExperimentConfig {
        warmup_steps: 0,
        ..cfg.clone()
    };
    let problem = load_problem(&untrained, Some(seed))?;
    let t = Instant::now();
    let res = warmup_train(
        &problem.net,
        &problem.batch,
        cfg.warmup_steps,
        cfg.lr,
        cfg.batch_size,
        derive_seed(seed, stream::WARMUP),
    )?;
    let seconds = t.elapsed().as_secs_f64();
    save_network(&res.net, out)?;
    let mut report = Report::new(
        "train",
        cfg,
        json!({
            "steps": res.steps,
            "initial_loss": res.initial_loss,
            "final_loss": res.final_loss,
            "step_losses": res.step_losses,
            "net_sha256": file_hash(out)?,
        }),
    )?
    .timing("train", seconds);
    report.warnings.extend(problem.warnings);
    report.warnings.extend(res.warning);
    Ok(report)
}

fn analysed(cfg: &ExperimentConfig) -> Result<(Problem, Analysis)> {
    let problem = load_problem(cfg, cfg.seed)?;
    let analysis = problem.analyse(cfg.byte_budget)?;
    Ok((problem, analysis))
}

fn check_index(k: usize, n: usize) -> Result<()> {
    if k >= n {
        return Err(GnhError::shape(format!("index {k} is out of range for N = {n}")).into());
    }
    Ok(())
}

fn precompute(cfg: &ExperimentConfig) -> Result<Report> {
    let problem = load_problem(cfg, cfg.seed)?;
    let trace = gnh_core::mlp::forward(&problem.net, &problem.batch)?;
    let curv = gnh_core::mlp::loss_curvature(&problem.net, &trace, &problem.batch)?;
    let t = Instant::now();
    let (entries, c_bytes, total, trace_h) = match cfg.storage {
        Storage::F64 => {
            let pre = GnhPrecomp::<f64, f64>::build(
                &problem.net,
                &problem.batch,
                &curv,
                &trace,
                cfg.byte_budget,
            )?;
            if !cfg.out.is_empty() {
                pre.save_cache(&cfg.out, &problem.net, &problem.batch)?;
            }
            (
                pre.c_tensor_entries(),
                pre.c_tensor_bytes(),
                pre.total_bytes(),
                pre.diag().iter().sum::<f64>(),
            )
        }
        Storage::F32 => {
            let pre = GnhPrecomp::<f64, f32>::build(
                &problem.net,
                &problem.batch,
                &curv,
                &trace,
                cfg.byte_budget,
            )?;
            if !cfg.out.is_empty() {
                pre.save_cache(&cfg.out, &problem.net, &problem.batch)?;
            }
            (
                pre.c_tensor_entries(),
                pre.c_tensor_bytes(),
                pre.total_bytes(),
                pre.diag().iter().sum::<f64>(),
            )
        }
    };
    let seconds = t.elapsed().as_secs_f64();
    Ok(Report::new(
        "precompute",
        cfg,
        json!({
            "n_params": problem.num_params(),
            "points": problem.batch.len(),
            "c_tensor_entries": entries,
            "c_tensor_bytes": c_bytes,
            "total_bytes": total,
            "trace": trace_h,
        }),
    )?
    .timing("precompute", seconds))
}

fn entry(cfg: &ExperimentConfig) -> Result<Report> {
    let (problem, a) = analysed(cfg)?;
    let n = problem.num_params();
    check_index(cfg.k, n)?;
    check_index(cfg.m, n)?;
    let (ik, im) = (a.pre.index(cfg.k), a.pre.index(cfg.m));
    Report::new(
        "entry",
        cfg,
        json!({
            "k": cfg.k,
            "m": cfg.m,
            "k_position": [ik.layer, ik.row, ik.col],
            "m_position": [im.layer, im.row, im.col],
            "value": a.pre.entry_exact(cfg.k, cfg.m),
        }),
    )
}

fn sample(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.require_seed("sample")?;
    let (problem, a) = analysed(cfg)?;
    let n = problem.num_params();
    check_index(cfg.k, n)?;
    check_index(cfg.m, n)?;
    let est_cfg = EstimatorConfig::new(cfg.samples, cfg.delta, derive_seed(seed, stream::SAMPLER))?;
    let est = match cfg.scheme {
        SamplingScheme::Importance => entry_estimate(&a.pre, cfg.k, cfg.m, &est_cfg),
        SamplingScheme::Uniform => uniform_baseline_estimate(&a.pre, cfg.k, cfg.m, &est_cfg),
    };
    let exact = a.pre.entry_exact(cfg.k, cfg.m);
    Report::new(
        "sample",
        cfg,
        json!({
            "k": cfg.k,
            "m": cfg.m,
            "value": est.value,
            "samples_used": est.samples_used,
            "bound": est.bound,
            "exact_shortcut": est.exact,
            "exact_value": exact,
            "abs_error": (est.value - exact).abs(),
            "eta": est_cfg.eta(),
            "work": {
                "multiply_adds": est.work.multiply_adds,
                "distribution_ops": est.work.distribution_ops,
                "sample_ops": est.work.sample_ops,
                "search_steps": est.work.search_steps,
            },
        }),
    )
}

/// Saved approximation when `hmatrix` is set, otherwise a fresh build.
fn obtain_hmatrix(
    cfg: &ExperimentConfig,
    problem: &Problem,
    a: &Analysis,
    seed: u64,
) -> Result<HMatrix<f64>> {
    if !cfg.hmatrix.is_empty() {
        let hm = load_hmatrix(&cfg.hmatrix)?;
        if hm.size() != problem.num_params() {
            return Err(GnhError::shape(format!(
                "hmatrix has N = {} but the network has {}",
                hm.size(),
                problem.num_params()
            ))
            .into());
        }
        return Ok(hm);
    }
    let settings = cfg.settings(problem.num_params())?;
    build_hmatrix(cfg, &a.pre, &settings, resolve_lambda(cfg, a), seed)
}

fn build(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.require_seed("build-hmatrix")?;
    let (problem, a) = analysed(cfg)?;
    let settings = cfg.settings(problem.num_params())?;
    let lambda = resolve_lambda(cfg, &a);
    let hm = build_hmatrix(cfg, &a.pre, &settings, lambda, seed)?;
    if !cfg.out.is_empty() {
        save_hmatrix(&hm, &cfg.out)?;
    }
    let st = hm.stats();
    let mut report = Report::new(
        "build-hmatrix",
        cfg,
        json!({
            "n_params": st.n,
            "lambda": lambda,
            "leaf_size": settings.leaf_size,
            "max_rank": settings.max_rank,
            "tol": settings.tol,
            "stored_entries": st.stored_entries,
            "recount": hm.recount(),
            "compression_rate": st.compression_rate,
            "leaves": st.leaves,
            "depth": st.depth,
            "level_max_rank": st.level_max_rank,
            "level_mean_rank": st.level_mean_rank,
            "capped_blocks": st.capped_blocks,
            "compensation": hm.compensation(),
        }),
    )?
    .timing("tree", st.tree_seconds)
    .timing("compress", st.compress_seconds);
    report.warnings = problem.warnings;
    Ok(report)
}

fn probe(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.require_seed("probe")?;
    let (problem, a) = analysed(cfg)?;
    let hm = obtain_hmatrix(cfg, &problem, &a, seed)?;
    let reference = a.operator(&problem.net, hm.lambda());
    let err = probe_error(
        &hm,
        &reference,
        cfg.probes,
        derive_seed(seed, stream::PROBE),
    );
    Report::new(
        "probe",
        cfg,
        json!({
            "n_params": hm.size(),
            "lambda": hm.lambda(),
            "probes": cfg.probes,
            "compression_rate": hm.compression_rate(),
            "probe_error": err,
        }),
    )
}

fn relative_residual(op: &dyn LinearOperator<f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = op.apply(x);
    let num: f64 = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|q| q * q).sum::<f64>().sqrt();
    num / den
}

/// Newton system `(H + λI) p = −g` solved three ways.
fn solve(cfg: &ExperimentConfig) -> Result<Report> {
    let seed = cfg.require_seed("solve")?;
    let (problem, a) = analysed(cfg)?;
    let hm = obtain_hmatrix(cfg, &problem, &a, seed)?;
    let n = hm.size();
    let lambda = hm.lambda();
    let b: Vec<f64> = gradient(&problem.net, &problem.batch)?
        .flatten()
        .iter()
        .map(|g| -g)
        .collect();
    let max_iter = if cfg.max_iter == 0 {
        10 * n
    } else {
        cfg.max_iter
    };
    let reference = a.operator(&problem.net, lambda);
    let unshifted = a.operator(&problem.net, 0.0);
    let mut results = serde_json::Map::new();
    let mut report_times = Vec::new();

    let t = Instant::now();
    let direct = HFactorization::new(&hm).and_then(|f| f.solve(&b));
    report_times.push(("direct", t.elapsed().as_secs_f64()));
    results.insert(
        "direct".into(),
        match direct {
            Ok(x) => json!({
                "factorization_residual": relative_residual(&hm, &x, &b),
                "residual": relative_residual(&reference, &x, &b),
            }),
            Err(e) => json!({ "error": e.to_string() }),
        },
    );
    if matches!(cfg.precond, Precond::None | Precond::Both) {
        let t = Instant::now();
        let r = cg_solve(&unshifted, &b, lambda, cfg.cg_tol, max_iter, None);
        report_times.push(("cg", t.elapsed().as_secs_f64()));
        results.insert(
            "cg".into(),
            json!({ "iterations": r.iterations, "converged": r.converged, "residual": r.relative_residual }),
        );
    }
    if matches!(cfg.precond, Precond::Hmatrix | Precond::Both) {
        let t = Instant::now();
        let shift = hm.compensation();
        let f = HFactorization::with_shift(&hm, shift)?;
        let r = cg_solve(&unshifted, &b, lambda, cfg.cg_tol, max_iter, Some(&f));
        report_times.push(("pcg", t.elapsed().as_secs_f64()));
        results.insert(
            "pcg".into(),
            json!({
                "iterations": r.iterations,
                "converged": r.converged,
                "residual": r.relative_residual,
                "shift": shift,
            }),
        );
    }
    let mut report = Report::new("solve", cfg, serde_json::Value::Object(results))?;
    for (k, s) in report_times {
        report = report.timing(k, s);
    }
    report.warnings = problem.warnings;
    Ok(report)
}
