//! Back-propagation and the matrix-free Gauss-Newton matvec.

use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::mlp::curvature::{mean_loss, output_gradient};
use crate::mlp::{forward, Batch, ForwardTrace, LossCurvature, MlpNetwork, WeightLayout};
use crate::scalar::Scalar;

/// Per-layer blocks shaped like the weight matrices; `flatten` gives the
/// weight-vector layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector<T> {
    blocks: Vec<Matrix<T>>,
}

impl<T: Scalar> GradientVector<T> {
    pub fn from_blocks(blocks: Vec<Matrix<T>>) -> Self {
        GradientVector { blocks }
    }

    pub fn from_flat(layout: &WeightLayout, flat: &[T]) -> Result<Self> {
        if flat.len() != layout.len() {
            return Err(GnhError::shape(format!(
                "vector has length {}, expected {}",
                flat.len(),
                layout.len()
            )));
        }
        let blocks = (0..layout.num_layers())
            .map(|l| {
                let (r, c) = layout.shape(l);
                Matrix::from_col_major(r, c, flat[layout.layer_range(l)].to_vec())
            })
            .collect();
        Ok(GradientVector { blocks })
    }

    pub fn blocks(&self) -> &[Matrix<T>] {
        &self.blocks
    }

    pub fn block(&self, l: usize) -> &Matrix<T> {
        &self.blocks[l]
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.blocks.iter().map(|b| b.rows() * b.cols()).sum());
        for b in &self.blocks {
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// Intermediate quantities of one matvec: linearized activations `x̂`,
/// adjoints `ẑ` and the output blocks `(Hŵ)^ℓ`.
#[derive(Clone, Debug)]
pub struct MatvecWorkspace<T> {
    /// `x̂^{l+1}`, one column per point.
    pub linearized: Vec<Matrix<T>>,
    /// `ẑ^{l+1}`, one column per point.
    pub adjoints: Vec<Matrix<T>>,
    pub output: GradientVector<T>,
}

fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x * y)
        .collect();
    Matrix::from_col_major(a.rows(), a.cols(), data)
}

/// Back-propagate output adjoints `z^L` (one column per point) and return
/// the per-layer blocks `Σ_i (M^ℓ z^ℓ)(x̄^{ℓ-1})ᵀ` together with the adjoints.
pub(crate) fn backpropagate<T: Scalar>(
    net: &MlpNetwork<T>,
    trace: &ForwardTrace<T>,
    top: Matrix<T>,
) -> (Vec<Matrix<T>>, Vec<Matrix<T>>) {
    let num_layers = net.num_layers();
    let mut blocks = vec![Matrix::zeros(0, 0); num_layers];
    let mut adjoints = vec![Matrix::zeros(0, 0); num_layers];
    let mut z = top;
    for l in (0..num_layers).rev() {
        let delta = hadamard(trace.derivs(l), &z);
        blocks[l] = delta.matmul_tr(trace.layer_input(l));
        let below = if l > 0 {
            net.data_block(l).tr_matmul(&delta)
        } else {
            Matrix::zeros(0, 0)
        };
        adjoints[l] = std::mem::replace(&mut z, below);
    }
    (blocks, adjoints)
}

/// Gradient of `F(w) = (1/n) Σ f(x_i^L, y_i)`.
pub fn gradient<T: Scalar>(net: &MlpNetwork<T>, batch: &Batch<T>) -> Result<GradientVector<T>> {
    let trace = forward(net, batch)?;
    gradient_with_trace(net, &trace, batch)
}

pub fn gradient_with_trace<T: Scalar>(
    net: &MlpNetwork<T>,
    trace: &ForwardTrace<T>,
    batch: &Batch<T>,
) -> Result<GradientVector<T>> {
    let out = trace.output();
    if batch.label_dim() != out.rows() || batch.len() != out.cols() {
        return Err(GnhError::shape("labels do not match the network output"));
    }
    let n = batch.len();
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut top = Matrix::zeros(out.rows(), n);
    for i in 0..n {
        let g = output_gradient(net.loss(), out.col(i), batch.label(i));
        for (dst, v) in top.col_mut(i).iter_mut().zip(g) {
            *dst = v * inv_n;
        }
    }
    let (blocks, _) = backpropagate(net, trace, top);
    Ok(GradientVector { blocks })
}

/// Loss and gradient in one pass.
pub fn loss_and_gradient<T: Scalar>(
    net: &MlpNetwork<T>,
    batch: &Batch<T>,
) -> Result<(T, GradientVector<T>)> {
    let trace = forward(net, batch)?;
    let loss = mean_loss(net, &trace, batch);
    Ok((loss, gradient_with_trace(net, &trace, batch)?))
}

/// `H ŵ = Jᵀ Q J ŵ` via linearized forward and adjoint backward passes.
pub fn gnh_matvec<T: Scalar>(
    net: &MlpNetwork<T>,
    trace: &ForwardTrace<T>,
    curv: &LossCurvature<T>,
    w_hat: &[T],
) -> Result<Vec<T>> {
    Ok(gnh_matvec_workspace(net, trace, curv, w_hat)?
        .output
        .flatten())
}

pub fn gnh_matvec_workspace<T: Scalar>(
    net: &MlpNetwork<T>,
    trace: &ForwardTrace<T>,
    curv: &LossCurvature<T>,
    w_hat: &[T],
) -> Result<MatvecWorkspace<T>> {
    let layout = net.layout();
    let w_hat = GradientVector::from_flat(&layout, w_hat)?;
    let n = trace.num_points();
    if curv.len() != n {
        return Err(GnhError::shape("curvature and trace have different sizes"));
    }
    let num_layers = net.num_layers();
    let mut linearized = Vec::with_capacity(num_layers);
    // x̂^0 = 0, so the first layer only sees the Ŵ x̄ term
    let mut x_hat: Option<Matrix<T>> = None;
    for l in 0..num_layers {
        let mut a = w_hat.block(l).matmul(trace.layer_input(l));
        if let Some(prev) = &x_hat {
            a.axpy(T::one(), &net.data_block(l).matmul(prev));
        }
        let next = hadamard(trace.derivs(l), &a);
        linearized.push(next.clone());
        x_hat = Some(next);
    }
    let x_top = x_hat.expect("at least one layer");
    let mut z_top = Matrix::zeros(x_top.rows(), n);
    for i in 0..n {
        let v = curv.q(i).matvec(x_top.col(i));
        z_top.col_mut(i).copy_from_slice(&v);
    }
    let (blocks, adjoints) = backpropagate(net, trace, z_top);
    Ok(MatvecWorkspace {
        linearized,
        adjoints,
        output: GradientVector { blocks },
    })
}
