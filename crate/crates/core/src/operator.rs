//! Uniform linear-operator interface shared by the exact GNH, the
//! hierarchical approximation and the baselines.

use rayon::prelude::*;

use crate::error::Result;
use crate::linalg::Matrix;
use crate::mlp::{gnh_matvec, ForwardTrace, LossCurvature, MlpNetwork};
use crate::scalar::Scalar;

pub trait LinearOperator<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[T]) -> Vec<T>;

    /// Apply to every column of `x`.
    fn apply_block(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(x.rows(), self.dim(), "operator dimension");
        let cols: Vec<Vec<T>> = (0..x.cols())
            .into_par_iter()
            .map(|j| self.apply(x.col(j)))
            .collect();
        let mut out = Matrix::zeros(self.dim(), x.cols());
        for (j, c) in cols.into_iter().enumerate() {
            out.col_mut(j).copy_from_slice(&c);
        }
        out
    }
}

/// An approximation of a symmetric operator that also offers an
/// approximate inverse.
pub trait ApproxOperator<T: Scalar>: LinearOperator<T> {
    /// Number of stored scalars.
    fn stored_entries(&self) -> usize;

    /// `stored_entries / N²`.
    fn compression_rate(&self) -> f64 {
        let n = self.dim() as f64;
        self.stored_entries() as f64 / (n * n)
    }

    /// Operator applying the approximate inverse.
    fn inverse(&self) -> Result<Box<dyn LinearOperator<T> + '_>>;
}

impl<T: Scalar> LinearOperator<T> for Matrix<T> {
    fn dim(&self) -> usize {
        assert_eq!(self.rows(), self.cols(), "dense operator must be square");
        self.rows()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matvec(x)
    }

    fn apply_block(&self, x: &Matrix<T>) -> Matrix<T> {
        self.matmul(x)
    }
}

/// Matrix-free `H + λI` backed by [`gnh_matvec`].
pub struct GnhOperator<'a, T> {
    net: &'a MlpNetwork<T>,
    trace: &'a ForwardTrace<T>,
    curv: &'a LossCurvature<T>,
    shift: T,
}

impl<'a, T: Scalar> GnhOperator<'a, T> {
    pub fn new(
        net: &'a MlpNetwork<T>,
        trace: &'a ForwardTrace<T>,
        curv: &'a LossCurvature<T>,
    ) -> Self {
        GnhOperator {
            net,
            trace,
            curv,
            shift: T::zero(),
        }
    }

    pub fn with_shift(mut self, shift: T) -> Self {
        self.shift = shift;
        self
    }
}

impl<T: Scalar> LinearOperator<T> for GnhOperator<'_, T> {
    fn dim(&self) -> usize {
        self.net.num_params()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        let mut y =
            gnh_matvec(self.net, self.trace, self.curv, x).expect("vector length matches operator");
        if self.shift != T::zero() {
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi += self.shift * xi;
            }
        }
        y
    }
}

/// Wrap an arbitrary closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnOperator { dim, f }
    }
}

impl<T: Scalar, F: Fn(&[T]) -> Vec<T> + Sync> LinearOperator<T> for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        (self.f)(x)
    }
}
