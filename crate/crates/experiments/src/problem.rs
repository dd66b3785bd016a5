//! Turning a configuration into a network, a batch and its precomputation.

use std::path::Path;

use gnh_core::hmatrix::{ExactOracle, HMatrix, SampledOracle, Settings};
use gnh_core::io::{load_batch, load_network};
use gnh_core::mlp::{forward, loss_curvature, Batch, ForwardTrace, LossCurvature, MlpNetwork};
use gnh_core::precompute::GnhPrecomp;
use gnh_core::sampler::EstimatorConfig;
use gnh_core::{GnhError, GnhOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{derive_seed, stream, DataSource, ExperimentConfig, OracleKind};
use crate::data::{gen_synthetic, ingest_cifar, ingest_mnist, IngestOptions, SyntheticSpec};
use crate::error::{Error, Result};
use crate::train::warmup_train;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WarmupSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub struct Problem {
    pub net: MlpNetwork<f64>,
    pub batch: Batch<f64>,
    pub warmup: Option<WarmupSummary>,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            sizes: self.sizes.clone(),
            activation: self.activation,
            loss: self.loss,
            bias: self.bias,
            n: self.n,
        }
    }

    fn ingest_options(&self, seed: Option<u64>) -> Result<IngestOptions> {
        let opts = IngestOptions {
            autoencoder: self.source == DataSource::MnistAutoencoder,
            n: self.n,
            seed: 0,
        };
        if self.n == 0 {
            return Ok(opts);
        }
        let seed = seed.ok_or_else(|| Error::config("subsampling a dataset needs --seed"))?;
        Ok(IngestOptions {
            seed: derive_seed(seed, stream::DATA),
            ..opts
        })
    }

    /// Batch named by the configuration, without a network.
    pub fn load_batch(&self, seed: Option<u64>) -> Result<Batch<f64>> {
        if !self.batch.is_empty() {
            return Ok(load_batch(&self.batch)?);
        }
        match self.source {
            DataSource::Synthetic => {
                let seed =
                    seed.ok_or_else(|| Error::config("generating synthetic data needs --seed"))?;
                Ok(gen_synthetic(&self.synthetic_spec(), derive_seed(seed, stream::DATA))?.1)
            }
            DataSource::Mnist | DataSource::MnistAutoencoder => {
                if self.images.is_empty() {
                    return Err(Error::config("mnist needs images = <idx file>"));
                }
                let labels = (!self.labels.is_empty()).then(|| Path::new(&self.labels));
                Ok(ingest_mnist(
                    &self.images,
                    labels,
                    self.ingest_options(seed)?,
                )?)
            }
            DataSource::Cifar => Ok(ingest_cifar(&self.cifar, self.ingest_options(seed)?)?),
        }
    }
}

/// Network and batch described by `cfg`, warmed up when `warmup_steps > 0`.
pub fn load_problem(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<Problem> {
    let need_seed = |what: &str| seed.ok_or_else(|| Error::config(format!("{what} needs --seed")));
    let (generated, batch) = if cfg.batch.is_empty() && cfg.source == DataSource::Synthetic {
        let s = need_seed("generating synthetic data")?;
        let (net, batch) = gen_synthetic(&cfg.synthetic_spec(), derive_seed(s, stream::DATA))?;
        (Some(net), batch)
    } else {
        (None, cfg.load_batch(seed)?)
    };
    let net = if !cfg.net.is_empty() {
        load_network(&cfg.net)?
    } else if let Some(net) = generated {
        net
    } else {
        let mut sizes = cfg.sizes.clone();
        if sizes[0] != batch.input_dim() {
            return Err(Error::Core(GnhError::shape(format!(
                "sizes start at {} but the data has {} inputs",
                sizes[0],
                batch.input_dim()
            ))));
        }
        if cfg.source == DataSource::MnistAutoencoder {
            *sizes.last_mut().unwrap() = batch.label_dim();
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(need_seed("a random network")?, stream::NET));
        MlpNetwork::random(&sizes, &[cfg.activation], cfg.loss, cfg.bias, &mut rng)?
    };
    let mut problem = Problem {
        net,
        batch,
        warmup: None,
        warnings: Vec::new(),
    };
    if cfg.warmup_steps > 0 {
        let s = need_seed("warm-up training")?;
        let out = warmup_train(
            &problem.net,
            &problem.batch,
            cfg.warmup_steps,
            cfg.lr,
            cfg.batch_size,
            derive_seed(s, stream::WARMUP),
        )?;
        problem.warmup = Some(WarmupSummary {
            steps: out.steps,
            initial_loss: out.initial_loss,
            final_loss: out.final_loss,
        });
        problem.warnings.extend(out.warning);
        problem.net = out.net;
    }
    Ok(problem)
}

/// Forward trace, loss curvature and precomputation of a problem.
pub struct Analysis {
    pub trace: ForwardTrace<f64>,
    pub curv: LossCurvature<f64>,
    pub pre: GnhPrecomp<f64>,
}

impl Problem {
    pub fn analyse(&self, byte_budget: usize) -> Result<Analysis> {
        let trace = forward(&self.net, &self.batch)?;
        let curv = loss_curvature(&self.net, &trace, &self.batch)?;
        let pre = GnhPrecomp::build(&self.net, &self.batch, &curv, &trace, byte_budget)?;
        Ok(Analysis { trace, curv, pre })
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }
}

impl Analysis {
    /// Matrix-free `H + shift·I`.
    pub fn operator<'a>(&'a self, net: &'a MlpNetwork<f64>, shift: f64) -> GnhOperator<'a, f64> {
        GnhOperator::new(net, &self.trace, &self.curv).with_shift(shift)
    }

    pub fn mean_diag(&self) -> f64 {
        let d = self.pre.diag();
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// Absolute regularization for this precomputation.
pub fn resolve_lambda(cfg: &ExperimentConfig, analysis: &Analysis) -> f64 {
    if cfg.lambda_relative {
        cfg.lambda * analysis.mean_diag()
    } else {
        cfg.lambda
    }
}

/// Hierarchical approximation of `H + λI` through the configured oracle.
pub fn build_hmatrix(
    cfg: &ExperimentConfig,
    pre: &GnhPrecomp<f64>,
    settings: &Settings,
    lambda: f64,
    seed: u64,
) -> Result<HMatrix<f64>> {
    let tree_seed = derive_seed(seed, stream::TREE);
    let hm = match cfg.oracle {
        OracleKind::Exact => HMatrix::build(
            &ExactOracle::new(pre, lambda),
            settings,
            cfg.metric,
            lambda,
            tree_seed,
        )?,
        OracleKind::Sampled => {
            let est =
                EstimatorConfig::new(cfg.samples, cfg.delta, derive_seed(seed, stream::SAMPLER))?;
            HMatrix::build(
                &SampledOracle::new(pre, est, lambda),
                settings,
                cfg.metric,
                lambda,
                tree_seed,
            )?
        }
    };
    Ok(hm)
}
