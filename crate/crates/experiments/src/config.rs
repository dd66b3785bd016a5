//! Resolved experiment configuration.
//!
//! A configuration starts from [`ExperimentConfig::default`] and is updated by
//! a flat `key = value` file, by the `config` object of an earlier JSON
//! report, and finally by individual `key=value` overrides. Keys are the
//! field names below; `-` and `_` are interchangeable. List values are comma
//! separated.

use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use gnh_core::hmatrix::{Metric, Settings, DEFAULT_LAMBDA};
use gnh_core::precompute::DEFAULT_BYTE_BUDGET;
use gnh_core::{Activation, BiasMode, Loss};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic,
    Mnist,
    MnistAutoencoder,
    Cifar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Exact,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    Importance,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precond {
    None,
    Hmatrix,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hm,
    Rsvd,
    Kfac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Storage {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `d_0, d_1, …, d_L`.
    pub sizes: Vec<usize>,
    #[serde(with = "text")]
    pub activation: Activation,
    #[serde(with = "text")]
    pub loss: Loss,
    #[serde(with = "text")]
    pub bias: BiasMode,

    pub source: DataSource,
    /// IDX image and label files.
    pub images: String,
    pub labels: String,
    /// CIFAR-10 binary batch files.
    pub cifar: Vec<String>,
    /// Existing checkpoint and batch files; they take precedence over `source`.
    pub net: String,
    pub batch: String,
    /// Number of points generated, or subsampled from a dataset (0 keeps all).
    pub n: usize,

    pub warmup_steps: usize,
    pub lr: f64,
    pub batch_size: usize,

    /// `low`, `high` or `m/r_o/τ`, e.g. `64/256/1e-5`.
    pub preset: String,
    /// Settings compared by `compare`.
    pub presets: Vec<String>,
    #[serde(with = "text")]
    pub metric: Metric,
    pub oracle: OracleKind,
    pub hmatrix: String,

    pub samples: usize,
    pub delta: f64,
    pub scheme: SamplingScheme,
    pub k: usize,
    pub m: usize,

    /// Regularization; multiplied by the mean of `diag H` when
    /// `lambda_relative` is set.
    pub lambda: f64,
    pub lambda_relative: bool,
    pub probes: usize,

    pub precond: Precond,
    pub cg_tol: f64,
    /// 0 means `10·N`.
    pub max_iter: usize,

    pub sample_counts: Vec<usize>,
    pub trials: usize,
    /// Largest index set used by `convergence`; bigger nets are subsampled.
    pub entries: usize,

    pub methods: Vec<Method>,
    pub timing_runs: usize,
    pub storage: Storage,
    /// Ceiling on the C-tensor allocation in bytes.
    pub byte_budget: usize,

    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: String,
    pub report: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sizes: vec![40, 40, 10],
            activation: Activation::Softplus,
            loss: Loss::CrossEntropy,
            bias: BiasMode::Augmented,
            source: DataSource::Synthetic,
            images: String::new(),
            labels: String::new(),
            cifar: Vec::new(),
            net: String::new(),
            batch: String::new(),
            n: 500,
            warmup_steps: 0,
            lr: 0.1,
            batch_size: 32,
            preset: "low".to_string(),
            presets: vec!["low".to_string(), "high".to_string()],
            metric: Metric::Angle,
            oracle: OracleKind::Exact,
            hmatrix: String::new(),
            samples: 100,
            delta: 0.1,
            scheme: SamplingScheme::Importance,
            k: 0,
            m: 0,
            lambda: DEFAULT_LAMBDA,
            lambda_relative: false,
            probes: 128,
            precond: Precond::Both,
            cg_tol: 1e-8,
            max_iter: 0,
            sample_counts: vec![100, 1_000, 10_000],
            trials: 20,
            entries: 64,
            methods: vec![Method::Hm, Method::Rsvd, Method::Kfac],
            timing_runs: 5,
            storage: Storage::F32,
            byte_budget: DEFAULT_BYTE_BUDGET,
            seed: None,
            threads: None,
            out: String::new(),
            report: String::new(),
        }
    }
}

/// Named random streams derived from the base seed.
pub mod stream {
    pub const DATA: u64 = 0;
    pub const WARMUP: u64 = 1;
    pub const TREE: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const RSVD: u64 = 4;
    pub const KFAC: u64 = 5;
    pub const ENTRIES: u64 = 7;
    pub const SAMPLER: u64 = 8;
    pub const NET: u64 = 9;
}

/// Seed of a named stream; stream 0 is the base seed itself.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

impl ExperimentConfig {
    /// Read a `key = value` file or a JSON report (its `config` object).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::default();
        if text.trim_start().starts_with('{') {
            let v: Value = serde_json::from_str(&text)?;
            let obj = v.get("config").cloned().unwrap_or(v);
            cfg = serde_json::from_value(obj)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        } else {
            cfg.apply_key_values(&text)?;
        }
        Ok(cfg)
    }

    /// Apply every `key = value` line; `#` starts a comment.
    pub fn apply_key_values(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", no + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override `{pair}` is not key=value")))?;
        self.set(k, v)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("config serializes to an object");
        let slot = map
            .get(&key)
            .ok_or_else(|| Error::config(format!("unknown key `{key}`")))?;
        let parsed = parse_like(slot, value.trim());
        map.insert(key.clone(), parsed);
        *self = serde_json::from_value(obj)
            .map_err(|e| Error::config(format!("{key} = {}: {e}", value.trim())))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::config(
                "sizes needs at least two positive layer widths",
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!(
                "delta = {} is outside (0, 1)",
                self.delta
            )));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return Err(Error::config(format!(
                "lambda = {} must be positive",
                self.lambda
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr = {} must be finite and nonnegative",
                self.lr
            )));
        }
        for (name, v) in [
            ("samples", self.samples),
            ("probes", self.probes),
            ("trials", self.trials),
            ("timing_runs", self.timing_runs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.sample_counts.contains(&0) {
            return Err(Error::config("sample_counts must be positive"));
        }
        parse_settings(&self.preset, 1)?;
        for p in &self.presets {
            parse_settings(p, 1)?;
        }
        Ok(())
    }

    /// The base seed, which every stochastic command requires.
    pub fn require_seed(&self, command: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config(format!("`{command}` is stochastic and needs --seed")))
    }

    pub fn settings(&self, n: usize) -> Result<Settings> {
        parse_settings(&self.preset, n)
    }
}

/// `low` / `high` scaled to `n` parameters, or an explicit `m/r_o/τ`.
pub fn parse_settings(spec: &str, n: usize) -> Result<Settings> {
    if let Some(s) = Settings::preset(spec) {
        return Ok(s.scaled_to(n));
    }
    let parts: Vec<&str> = spec.split('/').collect();
    let bad = || {
        Error::config(format!(
            "preset `{spec}` is neither low, high nor m/r_o/tol"
        ))
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let m: usize = parts[0].trim().parse().map_err(|_| bad())?;
    let r: usize = parts[1].trim().parse().map_err(|_| bad())?;
    let tol: f64 = parts[2].trim().parse().map_err(|_| bad())?;
    if m < 2 || tol.is_nan() || tol < 0.0 {
        return Err(bad());
    }
    let mut s = Settings::custom(m, r, tol);
    s.name = spec.trim().to_string();
    Ok(s)
}

fn parse_like(slot: &Value, text: &str) -> Value {
    match slot {
        Value::Array(_) => Value::Array(
            text.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(scalar)
                .collect(),
        ),
        Value::String(_) => Value::String(text.to_string()),
        _ => scalar(text),
    }
}

fn scalar(text: &str) -> Value {
    if let Ok(u) = text.parse::<u64>() {
        Value::from(u)
    } else if let Ok(f) = text.parse::<f64>() {
        Value::from(f)
    } else if let Ok(b) = text.parse::<bool>() {
        Value::from(b)
    } else if text.is_empty() || text == "null" {
        Value::Null
    } else {
        Value::String(text.to_string())
    }
}

/// Serialize through `Display` / `FromStr`.
mod text {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(
        v: &T,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> std::result::Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_values_override_defaults() {
        let mut c = ExperimentConfig::default();
        c.apply_key_values(
            "sizes = 6,4,3 # net\nloss=mse\nbatch-size = 8\nseed=7\n\nmethods=hm,kfac\nlambda=1e-3",
        )
        .unwrap();
        assert_eq!(c.sizes, vec![6, 4, 3]);
        assert_eq!(c.loss, Loss::MeanSquared);
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.methods, vec![Method::Hm, Method::Kfac]);
        assert_eq!(c.lambda, 1e-3);
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("loss", "hinge").is_err());
    }

    #[test]
    fn settings_specs() {
        let s = parse_settings("64/256/1e-5", 10).unwrap();
        assert_eq!((s.leaf_size, s.max_rank, s.tol), (64, 256, 1e-5));
        assert_eq!(parse_settings("high", 2000).unwrap().leaf_size, 256);
        assert!(parse_settings("64/256", 10).is_err());
    }
}
