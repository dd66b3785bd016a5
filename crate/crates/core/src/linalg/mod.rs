//! Small dense linear algebra kernels, generic over [`Scalar`](crate::Scalar).

mod decomp;
mod matrix;

pub use decomp::{orthonormalize, qr_thin, solve_upper, svd, sym_eigen, Cholesky, Lu, PivotedQr};
pub use matrix::{axpy_slice, dot, norm2, Matrix};
