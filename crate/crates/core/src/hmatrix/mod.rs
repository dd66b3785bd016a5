//! Hierarchical compression of `H + λI` from entry access alone.
//!
//! The index set is split by farthest-point bisection into a balanced binary
//! tree. Leaves keep dense diagonal blocks; under weak admissibility every
//! sibling coupling is approximated as `U Vᵀ` by an interpolative
//! decomposition recompressed to the rank cap, and the lower coupling is the
//! transpose of the upper one.

mod compress;
mod factor;
mod format;
mod oracle;
mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use compress::{sample_size, HMatrix, HStats, LowRank, NodeData, OVERSAMPLING};
pub use factor::HFactorization;
pub use format::{decode_hmatrix, encode_hmatrix, load_hmatrix, save_hmatrix};
pub use oracle::{
    distance, metric_distance, DenseOracle, EntryOracle, ExactOracle, Metric, SampledOracle,
};
pub use tree::{build_tree, IndexTree, TreeNode};

use crate::linalg::Matrix;
use crate::operator::LinearOperator;
use crate::scalar::Scalar;

/// Default regularization, `2⁻²⁶`, whose square is the double unit roundoff.
pub const DEFAULT_LAMBDA: f64 = 1.0 / 67_108_864.0;

/// Leaf size `m`, rank cap `r_o` and truncation tolerance `τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub name: String,
    pub leaf_size: usize,
    pub max_rank: usize,
    pub tol: f64,
}

impl Settings {
    pub fn custom(leaf_size: usize, max_rank: usize, tol: f64) -> Self {
        Settings {
            name: "custom".to_string(),
            leaf_size,
            max_rank,
            tol,
        }
    }

    /// `m = 128, r_o = 128, τ = 5e-2`.
    pub fn low() -> Self {
        Settings {
            name: "low".to_string(),
            leaf_size: 128,
            max_rank: 128,
            tol: 5e-2,
        }
    }

    /// `m = 1024, r_o = 1024, τ = 1e-5`.
    pub fn high() -> Self {
        Settings {
            name: "high".to_string(),
            leaf_size: 1024,
            max_rank: 1024,
            tol: 1e-5,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "low" => Some(Self::low()),
            "high" => Some(Self::high()),
            _ => None,
        }
    }

    /// Halve `m` and `r_o` together while `N < 4m`.
    pub fn scaled_to(&self, n: usize) -> Self {
        let mut s = self.clone();
        while n < 4 * s.leaf_size && s.leaf_size > 2 {
            s.leaf_size /= 2;
            s.max_rank = (s.max_rank / 2).max(1);
        }
        s
    }
}

/// `‖A X − B X‖_F / ‖A X‖_F` for a seeded Gaussian `X` with `probes` columns.
pub fn probe_error<T: Scalar>(
    approx: &dyn LinearOperator<T>,
    reference: &dyn LinearOperator<T>,
    probes: usize,
    seed: u64,
) -> f64 {
    let n = reference.dim();
    assert_eq!(approx.dim(), n, "operators have different sizes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::gaussian(n, probes, &mut rng);
    let hx = reference.apply_block(&x);
    let ax = approx.apply_block(&x);
    let denom = hx.frobenius_norm().f64();
    let num = hx.sub(&ax).frobenius_norm().f64();
    if denom == 0.0 {
        return if num == 0.0 { 0.0 } else { f64::INFINITY };
    }
    num / denom
}
