use crate::error::{GnhError, Result};
use crate::linalg::{sym_eigen, Matrix};
use crate::mlp::{Batch, ForwardTrace, Loss, MlpNetwork};
use crate::scalar::Scalar;

/// Per-point output-space curvature `Q_i = (1/n) ∂²f(x_i^L, y_i)` with a
/// symmetric factor `Q_i = R_iᵀ R_i`.
#[derive(Clone, Debug)]
pub struct LossCurvature<T> {
    q_blocks: Vec<Matrix<T>>,
    r_factors: Vec<Matrix<T>>,
}

impl<T: Scalar> LossCurvature<T> {
    pub fn len(&self) -> usize {
        self.q_blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q_blocks.is_empty()
    }

    pub fn q(&self, i: usize) -> &Matrix<T> {
        &self.q_blocks[i]
    }

    pub fn r(&self, i: usize) -> &Matrix<T> {
        &self.r_factors[i]
    }

    pub fn output_dim(&self) -> usize {
        self.q_blocks[0].rows()
    }
}

pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let s: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// `f(x, y)` for one point.
pub fn point_loss<T: Scalar>(loss: Loss, output: &[T], label: &[T]) -> T {
    match loss {
        Loss::MeanSquared => {
            T::of(0.5)
                * output
                    .iter()
                    .zip(label)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<T>()
        }
        Loss::CrossEntropy => {
            let max = output.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + output.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            label.iter().zip(output).map(|(&y, &z)| y * (lse - z)).sum()
        }
    }
}

/// `∂f/∂x` at the network output.
pub fn output_gradient<T: Scalar>(loss: Loss, output: &[T], label: &[T]) -> Vec<T> {
    match loss {
        Loss::MeanSquared => output.iter().zip(label).map(|(&a, &b)| a - b).collect(),
        Loss::CrossEntropy => {
            let p = softmax(output);
            let mass: T = label.iter().copied().sum();
            p.iter()
                .zip(label)
                .map(|(&pj, &yj)| mass * pj - yj)
                .collect()
        }
    }
}

/// Unscaled `∂²f/∂x²` at the network output.
pub fn output_hessian<T: Scalar>(loss: Loss, output: &[T], label: &[T]) -> Matrix<T> {
    let d = output.len();
    match loss {
        Loss::MeanSquared => Matrix::identity(d),
        Loss::CrossEntropy => {
            let p = softmax(output);
            let mass: T = label.iter().copied().sum();
            Matrix::from_fn(d, d, |a, b| {
                let diag = if a == b { p[a] } else { T::zero() };
                mass * (diag - p[a] * p[b])
            })
        }
    }
}

/// Symmetric factor `R` with `RᵀR = Q`; negative eigenvalues are clamped.
pub fn symmetric_factor<T: Scalar>(q: &Matrix<T>) -> Matrix<T> {
    let (vals, vecs) = sym_eigen(q);
    let d = q.rows();
    Matrix::from_fn(d, d, |i, j| vals[i].max(T::zero()).sqrt() * vecs[(j, i)])
}

/// Mean loss `F(w) = (1/n) Σ f(x_i^L, y_i)`.
pub fn mean_loss<T: Scalar>(net: &MlpNetwork<T>, trace: &ForwardTrace<T>, batch: &Batch<T>) -> T {
    let out = trace.output();
    let n = batch.len();
    (0..n)
        .map(|i| point_loss(net.loss(), out.col(i), batch.label(i)))
        .sum::<T>()
        / T::from_usize_lossy(n)
}

pub fn loss_curvature<T: Scalar>(
    net: &MlpNetwork<T>,
    trace: &ForwardTrace<T>,
    batch: &Batch<T>,
) -> Result<LossCurvature<T>> {
    let out = trace.output();
    let n = batch.len();
    if out.cols() != n {
        return Err(GnhError::shape("trace and batch have different sizes"));
    }
    if batch.label_dim() != out.rows() {
        return Err(GnhError::shape(format!(
            "label dimension {} does not match output dimension {}",
            batch.label_dim(),
            out.rows()
        )));
    }
    if !out.is_finite() {
        return Err(GnhError::Numeric("network output is not finite".into()));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut q_blocks = Vec::with_capacity(n);
    let mut r_factors = Vec::with_capacity(n);
    match net.loss() {
        Loss::MeanSquared => {
            let d = out.rows();
            let q = Matrix::identity(d).scale(inv_n);
            let r = Matrix::identity(d).scale(inv_n.sqrt());
            q_blocks.resize(n, q);
            r_factors.resize(n, r);
        }
        Loss::CrossEntropy => {
            for i in 0..n {
                let q = output_hessian(Loss::CrossEntropy, out.col(i), batch.label(i)).scale(inv_n);
                r_factors.push(symmetric_factor(&q));
                q_blocks.push(q);
            }
        }
    }
    Ok(LossCurvature {
        q_blocks,
        r_factors,
    })
}
