//! Gauss-Newton Hessians of multilayer perceptrons: matrix-free products,
//! per-entry precomputation, Monte Carlo entry sampling, hierarchical
//! compression and the low-rank / Kronecker baselines.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix the common `f64` instantiation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod hmatrix;
pub mod io;
pub mod linalg;
pub mod mlp;
pub mod operator;
pub mod precompute;
pub mod sampler;
pub mod scalar;

pub use error::{GnhError, Result};
pub use linalg::Matrix;
pub use mlp::{Activation, BiasMode, Loss};
pub use operator::{ApproxOperator, FnOperator, GnhOperator, LinearOperator};
pub use scalar::Scalar;

pub type Network = mlp::MlpNetwork<f64>;
pub type DataBatch = mlp::Batch<f64>;
pub type DenseMatrix = linalg::Matrix<f64>;
pub type Precomp = precompute::GnhPrecomp<f64, f64>;
pub type PrecompF32 = precompute::GnhPrecomp<f64, f32>;
pub type HMatrixF64 = hmatrix::HMatrix<f64>;
pub type RsvdF64 = baselines::RsvdApprox<f64>;
pub type KfacF64 = baselines::KfacApprox<f64>;
