//! Comparison approximations: a randomized low-rank eigendecomposition of
//! the GNH and the block-diagonal Kronecker-factored Fisher (K-FAC).
//!
//! Both implement [`ApproxOperator`](crate::ApproxOperator), like the
//! hierarchical matrix.

mod kfac;
mod rsvd;

pub use kfac::{kfac_build, kfac_solve, KfacApprox, KfacMode};
pub use rsvd::{rsvd, RsvdApprox, RsvdConfig, DEFAULT_OVERSAMPLE};
