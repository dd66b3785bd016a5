//! Experiment plumbing around `gnh-core`: configuration, dataset ingestion,
//! synthetic problems, SGD warm-up, the comparison experiments and their
//! reports. The `gnh` binary is a thin command-line layer over this crate.

pub mod config;
pub mod data;
pub mod error;
pub mod problem;
pub mod report;
pub mod runs;
pub mod train;

pub use config::{ExperimentConfig, Method};
pub use data::{gen_synthetic, ingest_cifar, ingest_mnist, IngestOptions, SyntheticSpec};
pub use error::{Error, Result};
pub use problem::{load_problem, Analysis, Problem};
pub use report::{Csv, Report};
pub use runs::{run_compression, run_convergence, run_memory_report};
pub use train::{warmup_train, WarmupOutcome};
