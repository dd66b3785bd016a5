use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GnhError, Result};
use crate::linalg::{orthonormalize, sym_eigen, Matrix};
use crate::operator::{ApproxOperator, LinearOperator};
use crate::scalar::Scalar;

pub const DEFAULT_OVERSAMPLE: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RsvdConfig {
    pub rank: usize,
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl RsvdConfig {
    /// Oversampling 10 and one power iteration.
    pub fn new(rank: usize, seed: u64) -> Self {
        RsvdConfig {
            rank,
            oversample: DEFAULT_OVERSAMPLE,
            power_iters: 1,
            seed,
        }
    }

    pub fn with_oversample(mut self, p: usize) -> Self {
        self.oversample = p;
        self
    }

    pub fn with_power_iters(mut self, q: usize) -> Self {
        self.power_iters = q;
        self
    }
}

/// `H ≈ Z Λ Zᵀ` with orthonormal `Z` (`N × r`), plus an optional shift.
#[derive(Clone, Debug)]
pub struct RsvdApprox<T> {
    basis: Matrix<T>,
    values: Vec<T>,
    shift: T,
}

/// Randomized range finder on a symmetric operator followed by a
/// Rayleigh-Ritz projection.
pub fn rsvd<T: Scalar>(op: &dyn LinearOperator<T>, cfg: &RsvdConfig) -> Result<RsvdApprox<T>> {
    let n = op.dim();
    let s = cfg.rank + cfg.oversample;
    if s > n {
        return Err(GnhError::shape(format!(
            "rank {} plus oversampling {} exceeds operator size {n}",
            cfg.rank, cfg.oversample
        )));
    }
    if cfg.rank == 0 {
        return Ok(RsvdApprox {
            basis: Matrix::zeros(n, 0),
            values: Vec::new(),
            shift: T::zero(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let omega = Matrix::gaussian(n, s, &mut rng);
    let mut q = orthonormalize(&op.apply_block(&omega));
    for _ in 0..cfg.power_iters {
        q = orthonormalize(&op.apply_block(&q));
    }
    let hq = op.apply_block(&q);
    let mut core = q.tr_matmul(&hq);
    core.symmetrize();
    let (vals, vecs) = sym_eigen(&core);
    let top = vecs.submatrix(0, 0, s, cfg.rank);
    let basis = q.matmul(&top);
    let values = vals[..cfg.rank].iter().map(|&v| v.max(T::zero())).collect();
    Ok(RsvdApprox {
        basis,
        values,
        shift: T::zero(),
    })
}

impl<T: Scalar> RsvdApprox<T> {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn basis(&self) -> &Matrix<T> {
        &self.basis
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    /// Represent `Z Λ Zᵀ + λI`.
    pub fn with_shift(mut self, shift: T) -> Self {
        self.shift = shift;
        self
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let scaled = Matrix::from_fn(self.basis.rows(), self.rank(), |i, j| {
            self.basis[(i, j)] * self.values[j]
        });
        let mut d = scaled.matmul_tr(&self.basis);
        d.add_diag(self.shift);
        d
    }

    /// `(Z Λ Zᵀ + λI)⁻¹ b` for a block of right-hand sides.
    pub fn solve_block(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if self.shift <= T::zero() {
            return Err(GnhError::Definiteness(
                "low-rank approximation needs a positive shift to be inverted".into(),
            ));
        }
        if b.rows() != self.basis.rows() {
            return Err(GnhError::shape(
                "right-hand side does not match operator size",
            ));
        }
        let lambda = self.shift;
        let mut c = self.basis.tr_matmul(b);
        let mut x = b.scale(T::one() / lambda);
        // x = b/λ + Z (diag(1/(Λ+λ)) − I/λ) Zᵀ b
        for j in 0..c.cols() {
            for (i, &v) in self.values.iter().enumerate() {
                c[(i, j)] *= T::one() / (v + lambda) - T::one() / lambda;
            }
        }
        x.axpy(T::one(), &self.basis.matmul(&c));
        Ok(x)
    }
}

impl<T: Scalar> LinearOperator<T> for RsvdApprox<T> {
    fn dim(&self) -> usize {
        self.basis.rows()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.apply_block(&Matrix::column_vector(x)).into_vec()
    }

    fn apply_block(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut c = self.basis.tr_matmul(x);
        for j in 0..c.cols() {
            for (i, &v) in self.values.iter().enumerate() {
                c[(i, j)] *= v;
            }
        }
        let mut y = self.basis.matmul(&c);
        if self.shift != T::zero() {
            y.axpy(self.shift, x);
        }
        y
    }
}

struct RsvdInverse<'a, T>(&'a RsvdApprox<T>);

impl<T: Scalar> LinearOperator<T> for RsvdInverse<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.apply_block(&Matrix::column_vector(x)).into_vec()
    }

    fn apply_block(&self, x: &Matrix<T>) -> Matrix<T> {
        self.0
            .solve_block(x)
            .expect("shift checked when the inverse was created")
    }
}

impl<T: Scalar> ApproxOperator<T> for RsvdApprox<T> {
    /// `N·r` basis entries plus `r` values.
    fn stored_entries(&self) -> usize {
        self.basis.rows() * self.rank() + self.rank()
    }

    fn inverse(&self) -> Result<Box<dyn LinearOperator<T> + '_>> {
        if self.shift <= T::zero() {
            return Err(GnhError::Definiteness(
                "low-rank approximation needs a positive shift to be inverted".into(),
            ));
        }
        Ok(Box::new(RsvdInverse(self)))
    }
}
