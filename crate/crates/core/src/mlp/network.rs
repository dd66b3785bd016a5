use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::mlp::layout::WeightLayout;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Softplus => z.max(T::zero()) + (-z.abs()).exp().ln_1p(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative at the pre-activation `z`. ReLU uses `ṡ(0) = 0`.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Identity => T::one(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = GnhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(GnhError::Capability(format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loss {
    /// `f = ½‖x − y‖²`
    MeanSquared,
    /// Softmax cross-entropy on the output logits.
    CrossEntropy,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::MeanSquared => "mean-squared",
            Loss::CrossEntropy => "cross-entropy",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = GnhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-squared" | "mse" => Ok(Loss::MeanSquared),
            "cross-entropy" | "ce" => Ok(Loss::CrossEntropy),
            other => Err(GnhError::Capability(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BiasMode {
    None,
    /// Every layer input carries an extra constant coordinate equal to one.
    Augmented,
}

impl BiasMode {
    #[inline]
    pub fn extra(self) -> usize {
        match self {
            BiasMode::None => 0,
            BiasMode::Augmented => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BiasMode::None => "none",
            BiasMode::Augmented => "augmented",
        }
    }
}

impl fmt::Display for BiasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasMode {
    type Err = GnhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BiasMode::None),
            "augmented" | "bias" => Ok(BiasMode::Augmented),
            other => Err(GnhError::Capability(format!("unknown bias mode `{other}`"))),
        }
    }
}

/// Fully connected feed-forward network `x^ℓ = s_ℓ(W_ℓ x̄^{ℓ-1})`.
///
/// Layers are indexed from zero in code: `weights[l]` maps the (possibly
/// augmented) activation of layer `l` to the pre-activation of layer `l + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNetwork<T> {
    weights: Vec<Matrix<T>>,
    activations: Vec<Activation>,
    loss: Loss,
    bias: BiasMode,
}

impl<T: Scalar> MlpNetwork<T> {
    pub fn new(
        weights: Vec<Matrix<T>>,
        activations: Vec<Activation>,
        loss: Loss,
        bias: BiasMode,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(GnhError::shape("network needs at least one layer"));
        }
        if weights.len() != activations.len() {
            return Err(GnhError::shape(format!(
                "{} weight matrices but {} activations",
                weights.len(),
                activations.len()
            )));
        }
        for l in 1..weights.len() {
            let expected = weights[l - 1].rows() + bias.extra();
            if weights[l].cols() != expected {
                return Err(GnhError::shape(format!(
                    "layer {l} has {} columns, expected {expected}",
                    weights[l].cols()
                )));
            }
        }
        if weights[0].cols() <= bias.extra() {
            return Err(GnhError::shape("input layer has no data columns"));
        }
        Ok(MlpNetwork {
            weights,
            activations,
            loss,
            bias,
        })
    }

    /// Gaussian weights with variance `1 / fan_in`.
    ///
    /// `sizes` lists `d_0, d_1, …, d_L`; a single activation is broadcast to
    /// every layer.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        activations: &[Activation],
        loss: Loss,
        bias: BiasMode,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(GnhError::shape("need at least input and output sizes"));
        }
        let num_layers = sizes.len() - 1;
        let acts: Vec<Activation> = match activations.len() {
            1 => vec![activations[0]; num_layers],
            k if k == num_layers => activations.to_vec(),
            k => {
                return Err(GnhError::shape(format!(
                    "{k} activations given for {num_layers} layers"
                )))
            }
        };
        let weights = (0..num_layers)
            .map(|l| {
                let cols = sizes[l] + bias.extra();
                let scale = 1.0 / (cols as f64).sqrt();
                Matrix::from_fn(sizes[l + 1], cols, |_, _| {
                    T::of(scale * rng.sample::<f64, _>(StandardNormal))
                })
            })
            .collect();
        Self::new(weights, acts, loss, bias)
    }

    #[inline]
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn weight(&self, l: usize) -> &Matrix<T> {
        &self.weights[l]
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn bias(&self) -> BiasMode {
        self.bias
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols() - self.bias.extra()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    /// `d_0, d_1, …, d_L` (without homogeneous coordinates).
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.weights.iter().map(|w| w.rows()));
        sizes
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum()
    }

    pub fn layout(&self) -> WeightLayout {
        WeightLayout::new(self.weights.iter().map(|w| (w.rows(), w.cols())).collect())
    }

    /// Weight vector `w = [vec(W_1), …, vec(W_L)]`, column-major per layer.
    pub fn weights_flat(&self) -> Vec<T> {
        let mut w = Vec::with_capacity(self.num_params());
        for m in &self.weights {
            w.extend_from_slice(m.as_slice());
        }
        w
    }

    pub fn set_weights_flat(&mut self, w: &[T]) -> Result<()> {
        if w.len() != self.num_params() {
            return Err(GnhError::shape(format!(
                "weight vector has length {}, network has {} parameters",
                w.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for m in &mut self.weights {
            let len = m.rows() * m.cols();
            m.as_mut_slice().copy_from_slice(&w[off..off + len]);
            off += len;
        }
        Ok(())
    }

    pub fn with_weights_flat(&self, w: &[T]) -> Result<Self> {
        let mut out = self.clone();
        out.set_weights_flat(w)?;
        Ok(out)
    }

    /// Leading `data_cols` columns of `W_l`, i.e. the weights acting on the
    /// non-constant coordinates of the layer input.
    pub(crate) fn data_block(&self, l: usize) -> Matrix<T> {
        let w = &self.weights[l];
        let cols = w.cols() - self.bias.extra();
        Matrix::from_col_major(w.rows(), cols, w.as_slice()[..w.rows() * cols].to_vec())
    }
}
