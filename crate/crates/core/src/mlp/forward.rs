use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::mlp::{Batch, BiasMode, MlpNetwork};
use crate::scalar::Scalar;

/// Activations and activation-derivative diagonals of a forward pass.
///
/// All matrices are stored with one column per data point. `inputs[l]` is
/// the input of layer `l` (`x̄^l`, carrying the homogeneous coordinate in
/// augmented mode), `output` is `x^L` and `derivs[l]` holds the diagonal of
/// `M^{l+1} = diag(ṡ(W_{l+1} x̄^l))`.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    inputs: Vec<Matrix<T>>,
    output: Matrix<T>,
    derivs: Vec<Matrix<T>>,
    bias: BiasMode,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn num_points(&self) -> usize {
        self.output.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.derivs.len()
    }

    pub fn bias(&self) -> BiasMode {
        self.bias
    }

    /// `x̄^l` for `l < L`: the (augmented) input of layer `l`.
    pub fn layer_input(&self, l: usize) -> &Matrix<T> {
        &self.inputs[l]
    }

    pub fn output(&self) -> &Matrix<T> {
        &self.output
    }

    /// Diagonal of `M` for layer `l`, one column per point.
    pub fn derivs(&self, l: usize) -> &Matrix<T> {
        &self.derivs[l]
    }

    /// `x^l` without the homogeneous coordinate, `l = 0..=L`.
    pub fn activation(&self, l: usize) -> Matrix<T> {
        if l == self.derivs.len() {
            return self.output.clone();
        }
        let x = &self.inputs[l];
        let rows = x.rows() - self.bias.extra();
        Matrix::from_fn(rows, x.cols(), |i, j| x[(i, j)])
    }
}

fn augment<T: Scalar>(x: &Matrix<T>, bias: BiasMode) -> Matrix<T> {
    match bias {
        BiasMode::None => x.clone(),
        BiasMode::Augmented => {
            let d = x.rows();
            Matrix::from_fn(
                d + 1,
                x.cols(),
                |i, j| if i < d { x[(i, j)] } else { T::one() },
            )
        }
    }
}

/// Forward pass on every point of the batch.
pub fn forward<T: Scalar>(net: &MlpNetwork<T>, batch: &Batch<T>) -> Result<ForwardTrace<T>> {
    forward_inputs(net, batch.inputs())
}

pub fn forward_inputs<T: Scalar>(
    net: &MlpNetwork<T>,
    inputs: &Matrix<T>,
) -> Result<ForwardTrace<T>> {
    if inputs.rows() != net.input_dim() {
        return Err(GnhError::shape(format!(
            "input dimension {} does not match network input {}",
            inputs.rows(),
            net.input_dim()
        )));
    }
    let bias = net.bias();
    let num_layers = net.num_layers();
    let mut layer_inputs = Vec::with_capacity(num_layers);
    let mut derivs = Vec::with_capacity(num_layers);
    let mut current = augment(inputs, bias);
    let mut output = Matrix::zeros(0, 0);
    for (l, act) in net.activations().iter().enumerate() {
        let pre = net.weight(l).matmul(&current);
        let x = pre.map(|z| act.eval(z));
        derivs.push(pre.map(|z| act.derivative(z)));
        layer_inputs.push(current);
        if l + 1 == num_layers {
            output = x;
            current = Matrix::zeros(0, 0);
        } else {
            current = augment(&x, bias);
        }
    }
    Ok(ForwardTrace {
        inputs: layer_inputs,
        output,
        derivs,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{Activation, Loss};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(w: Matrix<f64>, act: Activation) -> MlpNetwork<f64> {
        MlpNetwork::new(vec![w], vec![act], Loss::MeanSquared, BiasMode::None).unwrap()
    }

    #[test]
    fn identity_passes_input_through() {
        let net = single_layer(Matrix::identity(2), Activation::Identity);
        let tr = forward_inputs(&net, &Matrix::column_vector(&[1.0, 0.0])).unwrap();
        assert_eq!(tr.output().col(0), &[1.0, 0.0]);
    }

    #[test]
    fn relu_clamps_fully() {
        let net = single_layer(Matrix::identity(2).scale(-1.0), Activation::Relu);
        let tr = forward_inputs(&net, &Matrix::column_vector(&[1.0, 2.0])).unwrap();
        assert_eq!(tr.output().col(0), &[0.0, 0.0]);
        assert_eq!(tr.derivs(0).col(0), &[0.0, 0.0]);
    }

    #[test]
    fn matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let acts = [Activation::Softplus, Activation::Relu, Activation::Sigmoid];
        for bias in [BiasMode::None, BiasMode::Augmented] {
            let net =
                MlpNetwork::<f64>::random(&[4, 5, 3, 2], &acts, Loss::MeanSquared, bias, &mut rng)
                    .unwrap();
            let x0 = Matrix::<f64>::gaussian(4, 3, &mut rng);
            let tr = forward_inputs(&net, &x0).unwrap();
            for i in 0..3 {
                let mut x = x0.col(i).to_vec();
                for (l, act) in acts.iter().enumerate() {
                    let w = net.weight(l);
                    let mut z = vec![0.0; w.rows()];
                    for r in 0..w.rows() {
                        for c in 0..x.len() {
                            z[r] += w[(r, c)] * x[c];
                        }
                        if bias == BiasMode::Augmented {
                            z[r] += w[(r, x.len())];
                        }
                    }
                    x = z.iter().map(|&v| act.eval(v)).collect();
                }
                for (a, b) in x.iter().zip(tr.output().col(i)) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn wrong_input_dimension_is_shape_error() {
        let net = single_layer(Matrix::identity(2), Activation::Identity);
        let err = forward_inputs(&net, &Matrix::zeros(3, 1));
        assert!(matches!(err, Err(GnhError::Shape(_))));
    }
}
