#![allow(dead_code)]

use gnh_core::mlp::{forward, loss_curvature, Batch, ForwardTrace, LossCurvature, MlpNetwork};
use gnh_core::precompute::{precompute, GnhPrecomp};
use gnh_core::{Activation, BiasMode, Loss, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random net and batch; cross-entropy batches get one-hot labels, squared
/// loss batches Gaussian targets.
pub fn problem(
    sizes: &[usize],
    act: Activation,
    loss: Loss,
    bias: BiasMode,
    n: usize,
    seed: u64,
) -> (MlpNetwork<f64>, Batch<f64>) {
    let mut r = rng(seed);
    let net = MlpNetwork::random(sizes, &[act], loss, bias, &mut r).unwrap();
    let d_out = *sizes.last().unwrap();
    let inputs = gaussian(sizes[0], n, &mut r);
    let batch = match loss {
        Loss::MeanSquared => Batch::new(inputs, gaussian(d_out, n, &mut r)).unwrap(),
        Loss::CrossEntropy => {
            let classes: Vec<usize> = (0..n).map(|_| r.random_range(0..d_out)).collect();
            Batch::from_classes(inputs, &classes, d_out).unwrap()
        }
    };
    (net, batch)
}

pub struct Setup {
    pub net: MlpNetwork<f64>,
    pub batch: Batch<f64>,
    pub trace: ForwardTrace<f64>,
    pub curv: LossCurvature<f64>,
    pub pre: GnhPrecomp<f64>,
}

pub fn setup(net: MlpNetwork<f64>, batch: Batch<f64>) -> Setup {
    let trace = forward(&net, &batch).unwrap();
    let curv = loss_curvature(&net, &trace, &batch).unwrap();
    let pre = precompute(&net, &batch, &curv, &trace).unwrap();
    Setup {
        net,
        batch,
        trace,
        curv,
        pre,
    }
}

pub fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    (a - b).abs() / scale.max(f64::MIN_POSITIVE)
}

pub fn max_rel_matrix_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let scale = b.max_abs().max(f64::MIN_POSITIVE);
    a.sub(b).max_abs() / scale
}
