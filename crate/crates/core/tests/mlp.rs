mod common;

use common::*;
use gnh_core::linalg::{Cholesky, Matrix};
use gnh_core::mlp::{
    cg_solve, dense_gnh_oracle, dense_gnh_oracle_with_limit, forward, forward_inputs, gnh_matvec,
    gradient, loss_curvature, mean_loss, Batch, MlpNetwork,
};
use gnh_core::{io, Activation, BiasMode, GnhError, GnhOperator, Loss};
use proptest::prelude::*;

fn loss_at(net: &MlpNetwork<f64>, batch: &Batch<f64>, w: &[f64]) -> f64 {
    let net = net.with_weights_flat(w).unwrap();
    let tr = forward(&net, batch).unwrap();
    mean_loss(&net, &tr, batch)
}

#[test]
fn gradient_vanishes_at_least_squares_solution() {
    let mut r = rng(11);
    let x = gaussian(3, 12, &mut r);
    let y = gaussian(2, 12, &mut r);
    // W* = Y Xᵀ (X Xᵀ)⁻¹
    let xxt = x.matmul_tr(&x);
    let yxt = y.matmul_tr(&x);
    let chol = Cholesky::new(&xxt).unwrap();
    let w_star = chol.solve_matrix(&yxt.transpose()).transpose();
    let net = MlpNetwork::new(
        vec![w_star],
        vec![Activation::Identity],
        Loss::MeanSquared,
        BiasMode::None,
    )
    .unwrap();
    let batch = Batch::new(x, y).unwrap();
    let g = gradient(&net, &batch).unwrap().flatten();
    assert!(g.iter().all(|v| v.abs() < 1e-10), "{g:?}");
}

#[test]
fn gradient_matches_central_differences() {
    for (bias, seed) in [(BiasMode::None, 1), (BiasMode::Augmented, 2)] {
        for loss in [Loss::MeanSquared, Loss::CrossEntropy] {
            let (net, batch) = problem(&[2, 3, 2], Activation::Softplus, loss, bias, 4, seed);
            let g = gradient(&net, &batch).unwrap().flatten();
            let w = net.weights_flat();
            let h = 1e-5;
            let fd: Vec<f64> = (0..w.len())
                .map(|j| {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[j] += h;
                    wm[j] -= h;
                    (loss_at(&net, &batch, &wp) - loss_at(&net, &batch, &wm)) / (2.0 * h)
                })
                .collect();
            let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn doubling_residual_doubles_linear_gradient() {
    let mut r = rng(5);
    let net = MlpNetwork::random(
        &[3, 2],
        &[Activation::Identity],
        Loss::MeanSquared,
        BiasMode::None,
        &mut r,
    )
    .unwrap();
    let x = gaussian(3, 6, &mut r);
    let out = forward_inputs(&net, &x).unwrap().output().clone();
    let y = gaussian(2, 6, &mut r);
    let resid = out.sub(&y);
    let y2 = out.sub(&resid.scale(2.0));
    let g1 = gradient(&net, &Batch::new(x.clone(), y).unwrap())
        .unwrap()
        .flatten();
    let g2 = gradient(&net, &Batch::new(x, y2).unwrap())
        .unwrap()
        .flatten();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn matvec_of_zero_is_zero() {
    let (net, batch) = problem(
        &[4, 3, 2],
        Activation::Sigmoid,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        5,
        3,
    );
    let s = setup(net, batch);
    let y = gnh_matvec(&s.net, &s.trace, &s.curv, &vec![0.0; s.net.num_params()]).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn matvec_rejects_wrong_length() {
    let (net, batch) = problem(
        &[2, 2],
        Activation::Identity,
        Loss::MeanSquared,
        BiasMode::None,
        2,
        3,
    );
    let s = setup(net, batch);
    assert!(matches!(
        gnh_matvec(&s.net, &s.trace, &s.curv, &[1.0; 3]),
        Err(GnhError::Shape(_))
    ));
}

#[test]
fn single_layer_linear_gnh_matches_hand_assembly() {
    // x1 = (1, 2), x2 = (-1, 0.5); H = (1/n) Σ (x xᵀ) ⊗ I_2 in column-major layout
    let w = Matrix::<f64>::from_f64_rows(&[&[0.2, -0.4], &[1.0, 0.3]]);
    let net = MlpNetwork::new(
        vec![w],
        vec![Activation::Identity],
        Loss::MeanSquared,
        BiasMode::None,
    )
    .unwrap();
    let x = Matrix::<f64>::from_f64_rows(&[&[1.0, -1.0], &[2.0, 0.5]]);
    let batch = Batch::new(x.clone(), Matrix::zeros(2, 2)).unwrap();
    let h = dense_gnh_oracle(&net, &batch).unwrap();
    let gram = x.matmul_tr(&x).scale(0.5);
    for a in 0..4 {
        for b in 0..4 {
            let (ra, ca) = (a % 2, a / 2);
            let (rb, cb) = (b % 2, b / 2);
            let expect = if ra == rb { gram[(ca, cb)] } else { 0.0 };
            assert!((h[(a, b)] - expect).abs() < 1e-14, "({a},{b})");
        }
    }
}

#[test]
fn matvec_columns_match_dense_oracle() {
    let (net, batch) = problem(
        &[3, 4, 3],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        6,
        8,
    );
    let s = setup(net, batch);
    let h = dense_gnh_oracle(&s.net, &s.batch).unwrap();
    let n_params = s.net.num_params();
    for m in [0, 7, n_params - 1] {
        let mut e = vec![0.0; n_params];
        e[m] = 1.0;
        let col = gnh_matvec(&s.net, &s.trace, &s.curv, &e).unwrap();
        for k in 0..n_params {
            assert!((col[k] - h[(k, m)]).abs() < 1e-14);
        }
    }
}

#[test]
fn dense_oracle_is_symmetric_and_psd() {
    for (loss, seed) in [(Loss::MeanSquared, 21), (Loss::CrossEntropy, 22)] {
        let (net, batch) = problem(
            &[5, 4, 3],
            Activation::Relu,
            loss,
            BiasMode::Augmented,
            9,
            seed,
        );
        let h = dense_gnh_oracle(&net, &batch).unwrap();
        let norm = h.frobenius_norm();
        assert!(h.sub(&h.transpose()).frobenius_norm() <= 1e-12 * norm);
        let mut r = rng(seed);
        for _ in 0..100 {
            let x = gaussian(h.rows(), 1, &mut r);
            let quad = gnh_core::linalg::dot(x.as_slice(), &h.matvec(x.as_slice()));
            let xx = gnh_core::linalg::dot(x.as_slice(), x.as_slice());
            assert!(quad >= -1e-10 * norm * xx);
        }
    }
}

#[test]
fn dead_relu_units_give_zero_rows() {
    // second hidden unit has an all-negative incoming row, so it never fires
    let w1 = Matrix::<f64>::from_f64_rows(&[&[1.0, 0.5], &[-1.0, -1.0]]);
    let w2 = Matrix::<f64>::from_f64_rows(&[&[0.7, 1.3]]);
    let net = MlpNetwork::new(
        vec![w1, w2],
        vec![Activation::Relu, Activation::Identity],
        Loss::MeanSquared,
        BiasMode::None,
    )
    .unwrap();
    let x = Matrix::<f64>::from_f64_rows(&[&[1.0, 2.0, 0.5], &[0.5, 1.0, 3.0]]);
    let batch = Batch::new(x, Matrix::zeros(1, 3)).unwrap();
    let h = dense_gnh_oracle(&net, &batch).unwrap();
    // W1 is column-major: flat 1 and 3 are row 1; flat 5 is W2[0, 1]
    for dead in [1, 3, 5] {
        for j in 0..h.cols() {
            assert_eq!(h[(dead, j)], 0.0);
            assert_eq!(h[(j, dead)], 0.0);
        }
    }
    assert!(h[(0, 0)] > 0.0);
}

#[test]
fn dense_oracle_enforces_size_limit() {
    let (net, batch) = problem(
        &[4, 4],
        Activation::Identity,
        Loss::MeanSquared,
        BiasMode::None,
        2,
        1,
    );
    assert!(matches!(
        dense_gnh_oracle_with_limit(&net, &batch, 15),
        Err(GnhError::Resource(_))
    ));
    assert!(dense_gnh_oracle_with_limit(&net, &batch, 16).is_ok());
}

/// `Σ_i J_iᵀ Q_i J_i` with Jacobians from central differences of the output.
fn finite_difference_gnh(net: &MlpNetwork<f64>, batch: &Batch<f64>) -> Matrix<f64> {
    let w = net.weights_flat();
    let n_params = w.len();
    let n = batch.len();
    let h = 1e-6;
    let d_out = net.output_dim();
    let mut jac: Vec<Matrix<f64>> = vec![Matrix::zeros(d_out, n_params); n];
    for j in 0..n_params {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += h;
        wm[j] -= h;
        let op = forward(&net.with_weights_flat(&wp).unwrap(), batch).unwrap();
        let om = forward(&net.with_weights_flat(&wm).unwrap(), batch).unwrap();
        for (i, ji) in jac.iter_mut().enumerate() {
            for a in 0..d_out {
                ji[(a, j)] = (op.output()[(a, i)] - om.output()[(a, i)]) / (2.0 * h);
            }
        }
    }
    let tr = forward(net, batch).unwrap();
    let curv = loss_curvature(net, &tr, batch).unwrap();
    let mut out = Matrix::zeros(n_params, n_params);
    for (i, ji) in jac.iter().enumerate() {
        out.axpy(1.0, &ji.tr_matmul(&curv.q(i).matmul(ji)));
    }
    out
}

#[test]
fn dense_oracle_matches_explicit_jacobian_assembly() {
    let cases = [
        (vec![3, 4, 2], Loss::MeanSquared, BiasMode::None, 31),
        (vec![2, 3, 3], Loss::CrossEntropy, BiasMode::Augmented, 32),
        (vec![2, 3, 2, 2], Loss::CrossEntropy, BiasMode::None, 33),
    ];
    for (sizes, loss, bias, seed) in cases {
        let (net, batch) = problem(&sizes, Activation::Softplus, loss, bias, 5, seed);
        assert!(net.num_params() <= 60);
        let h = dense_gnh_oracle(&net, &batch).unwrap();
        let fd = finite_difference_gnh(&net, &batch);
        assert!(h.sub(&fd).frobenius_norm() <= 1e-5 * h.frobenius_norm());
    }
}

/// Hessian of `F` by central differences of the analytic gradient.
fn finite_difference_hessian(net: &MlpNetwork<f64>, batch: &Batch<f64>) -> Matrix<f64> {
    let w = net.weights_flat();
    let n_params = w.len();
    let h = 1e-5;
    let mut out = Matrix::zeros(n_params, n_params);
    for j in 0..n_params {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += h;
        wm[j] -= h;
        let gp = gradient(&net.with_weights_flat(&wp).unwrap(), batch)
            .unwrap()
            .flatten();
        let gm = gradient(&net.with_weights_flat(&wm).unwrap(), batch)
            .unwrap()
            .flatten();
        for k in 0..n_params {
            out[(k, j)] = (gp[k] - gm[k]) / (2.0 * h);
        }
    }
    out
}

#[test]
fn linear_mse_gnh_equals_hessian() {
    // single linear layer: the output is linear in w, so GNH and Hessian agree
    let (net, batch) = problem(
        &[3, 2],
        Activation::Identity,
        Loss::MeanSquared,
        BiasMode::Augmented,
        7,
        41,
    );
    let h = dense_gnh_oracle(&net, &batch).unwrap();
    let hess = finite_difference_hessian(&net, &batch);
    assert!(max_rel_matrix_err(&h, &hess) < 1e-7);

    // deeper linear nets only agree at zero residual
    let (net, batch) = problem(
        &[3, 3, 2],
        Activation::Identity,
        Loss::MeanSquared,
        BiasMode::None,
        7,
        42,
    );
    let fitted = forward(&net, &batch).unwrap().output().clone();
    let batch = Batch::new(batch.inputs().clone(), fitted).unwrap();
    let h = dense_gnh_oracle(&net, &batch).unwrap();
    let hess = finite_difference_hessian(&net, &batch);
    assert!(max_rel_matrix_err(&h, &hess) < 1e-7);
}

#[test]
fn cg_matches_direct_solve_on_gnh() {
    let (net, batch) = problem(
        &[4, 3, 3],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        10,
        51,
    );
    let s = setup(net, batch);
    let lambda = 1e-3;
    let n_params = s.net.num_params();
    let mut r = rng(52);
    let b = gaussian(n_params, 1, &mut r).into_vec();
    let op = GnhOperator::new(&s.net, &s.trace, &s.curv);
    let res = cg_solve(&op, &b, lambda, 1e-10, n_params, None);
    assert!(res.converged);
    assert!(res.iterations <= n_params);
    assert!(res.relative_residual <= 1e-8);
    let mut h = dense_gnh_oracle(&s.net, &s.batch).unwrap();
    h.add_diag(lambda);
    let x = Cholesky::new(&h).unwrap().solve(&b);
    let diff: f64 = x
        .iter()
        .zip(&res.solution)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff <= 1e-6 * norm);
}

#[test]
fn checkpoint_file_roundtrip_preserves_outputs() {
    let (net, batch) = problem(
        &[4, 5, 3],
        Activation::Sigmoid,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        6,
        61,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.gnh");
    io::save_network(&net, &path).unwrap();
    let back: MlpNetwork<f64> = io::load_network(&path).unwrap();
    assert_eq!(back, net);
    let a = forward(&net, &batch).unwrap();
    let b = forward(&back, &batch).unwrap();
    assert_eq!(a.output(), b.output());
    let bpath = dir.path().join("batch.gnh");
    io::save_batch(&batch, &bpath).unwrap();
    assert_eq!(io::load_batch::<f64>(&bpath).unwrap(), batch);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matvec_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (net, batch) = problem(&[3, 3, 2], Activation::Softplus, Loss::CrossEntropy, BiasMode::Augmented, 4, seed);
        let s = setup(net, batch);
        let n_params = s.net.num_params();
        let mut r = rng(seed + 1);
        let w1 = gaussian(n_params, 1, &mut r).into_vec();
        let w2 = gaussian(n_params, 1, &mut r).into_vec();
        let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
        let lhs = gnh_matvec(&s.net, &s.trace, &s.curv, &mix).unwrap();
        let h1 = gnh_matvec(&s.net, &s.trace, &s.curv, &w1).unwrap();
        let h2 = gnh_matvec(&s.net, &s.trace, &s.curv, &w2).unwrap();
        let scale = lhs.iter().chain(&h1).chain(&h2).fold(0.0f64, |m, v| m.max(v.abs())) * (1.0 + a.abs() + b.abs());
        for i in 0..n_params {
            prop_assert!((lhs[i] - (a * h1[i] + b * h2[i])).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn curvature_factors_reconstruct(seed in 0u64..1000) {
        let (net, batch) = problem(&[3, 4], Activation::Identity, Loss::CrossEntropy, BiasMode::None, 3, seed);
        let tr = forward(&net, &batch).unwrap();
        let curv = loss_curvature(&net, &tr, &batch).unwrap();
        for i in 0..3 {
            let q = curv.q(i);
            let r = curv.r(i);
            let err = r.tr_matmul(r).sub(q).frobenius_norm();
            prop_assert!(err <= 1e-12 * q.frobenius_norm().max(1.0));
        }
    }
}
