mod common;

use common::*;
use gnh_core::linalg::Matrix;
use gnh_core::mlp::{dense_from_trace, gnh_matvec_workspace, Batch, MlpNetwork};
use gnh_core::precompute::{GnhPrecomp, WorkCounter};
use gnh_core::{Activation, BiasMode, Loss};
use proptest::prelude::*;

fn entry_rel(pre_val: f64, oracle: f64, h: &Matrix<f64>, k: usize, m: usize) -> f64 {
    let scale = oracle.abs().max((h[(k, k)] * h[(m, m)]).sqrt());
    rel_err(pre_val, oracle, scale)
}

#[test]
fn c_tensor_matches_explicit_product() {
    let (net, batch) = problem(
        &[4, 5, 3, 2],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        6,
        1,
    );
    let s = setup(net, batch);
    for i in 0..6 {
        // R M^3 W_3 M^2 W_2 M^1 with bias columns dropped
        let diag = |l: usize| Matrix::from_diag(s.trace.derivs(l).col(i));
        let data = |l: usize| {
            let w = s.net.weight(l);
            w.submatrix(0, 0, w.rows(), w.cols() - 1)
        };
        let expect = s
            .curv
            .r(i)
            .matmul(&diag(2))
            .matmul(&data(2))
            .matmul(&diag(1))
            .matmul(&data(1))
            .matmul(&diag(0));
        let got = s.pre.c_tensor(i, 0);
        assert!(got.sub(&expect).frobenius_norm() <= 1e-13 * expect.frobenius_norm().max(1e-300));
    }
}

#[test]
fn recurrence_holds_on_random_slices() {
    let (net, batch) = problem(
        &[5, 6, 4, 3],
        Activation::Sigmoid,
        Loss::MeanSquared,
        BiasMode::None,
        9,
        2,
    );
    let s = setup(net, batch);
    let mut r = rng(3);
    use rand::Rng;
    for _ in 0..20 {
        let i = r.random_range(0..9);
        let l = r.random_range(1..3);
        let lower = s.pre.c_tensor(i, l - 1);
        let mut prod = s.pre.c_tensor(i, l).matmul(s.net.weight(l));
        for (j, &d) in s.trace.derivs(l - 1).col(i).iter().enumerate() {
            for x in prod.col_mut(j) {
                *x *= d;
            }
        }
        assert!(lower.sub(&prod).frobenius_norm() <= 1e-12 * lower.frobenius_norm());
    }
}

#[test]
fn storage_counter_is_exact() {
    let (net, batch) = problem(
        &[7, 5, 4, 3],
        Activation::Relu,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        11,
        4,
    );
    let s = setup(net, batch);
    assert_eq!(s.pre.c_tensor_entries(), 11 * 3 * (5 + 4 + 3));
    assert_eq!(s.pre.c_tensor_bytes(), 8 * 11 * 3 * 12);
}

#[test]
fn v_vector_matches_linearized_forward() {
    let (net, batch) = problem(
        &[3, 4, 3],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        5,
        5,
    );
    let s = setup(net, batch);
    let n_params = s.net.num_params();
    for k in [0, 5, 17, n_params - 1] {
        let mut e = vec![0.0; n_params];
        e[k] = 1.0;
        let ws = gnh_matvec_workspace(&s.net, &s.trace, &s.curv, &e).unwrap();
        let jx = ws.linearized.last().unwrap();
        let ki = s.pre.index(k);
        for i in 0..5 {
            let expect = s.curv.r(i).matvec(jx.col(i));
            let got = s.pre.v_vector(&ki, i);
            for (a, b) in got.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn zero_input_gives_zero_v_vector() {
    let (net, mut batch) = problem(
        &[3, 2],
        Activation::Identity,
        Loss::MeanSquared,
        BiasMode::None,
        2,
        6,
    );
    let mut inputs = batch.inputs().clone();
    inputs[(1, 0)] = 0.0;
    batch = Batch::new(inputs, batch.labels().clone()).unwrap();
    let s = setup(net, batch);
    // weight (row 0, col 1) scales with x_{0,1} = 0 at point 0
    let k = s.pre.layout().compose(0, 0, 1).unwrap();
    assert!(s.pre.v_vector(&k, 0).iter().all(|&v| v == 0.0));
}

#[test]
fn entries_match_dense_oracle() {
    let cases = [
        (vec![6, 4, 3], Loss::MeanSquared, BiasMode::None, 1),
        (vec![6, 4, 3], Loss::CrossEntropy, BiasMode::Augmented, 7),
        (vec![10, 8, 6, 4], Loss::CrossEntropy, BiasMode::None, 64),
        (vec![10, 8, 6, 4], Loss::MeanSquared, BiasMode::Augmented, 7),
        (vec![3, 3, 2], Loss::CrossEntropy, BiasMode::Augmented, 1),
    ];
    for (seed, (sizes, loss, bias, n)) in cases.into_iter().enumerate() {
        let (net, batch) = problem(
            &sizes,
            Activation::Softplus,
            loss,
            bias,
            n,
            100 + seed as u64,
        );
        let s = setup(net, batch);
        let h = dense_from_trace(&s.net, &s.trace, &s.curv).unwrap();
        let n_params = s.net.num_params();
        for k in 0..n_params {
            for m in 0..n_params {
                let e = s.pre.entry_exact(k, m);
                assert!(entry_rel(e, h[(k, m)], &h, k, m) <= 1e-11, "({k},{m})");
            }
        }
        let block = s.pre.dense();
        assert!(max_rel_matrix_err(&block, &h) <= 1e-11);
    }
}

#[test]
fn dead_relu_entries_are_zero() {
    let w1 = Matrix::<f64>::from_f64_rows(&[&[1.0, 0.5], &[-1.0, -1.0]]);
    let w2 = Matrix::<f64>::from_f64_rows(&[&[0.7, 1.3]]);
    let net = MlpNetwork::new(
        vec![w1, w2],
        vec![Activation::Relu, Activation::Identity],
        Loss::MeanSquared,
        BiasMode::None,
    )
    .unwrap();
    let x = Matrix::<f64>::from_f64_rows(&[&[1.0, 2.0], &[0.5, 1.0]]);
    let s = setup(net, Batch::new(x, Matrix::zeros(1, 2)).unwrap());
    for m in 0..6 {
        assert_eq!(s.pre.entry_exact(1, m), 0.0);
    }
}

#[test]
fn diagonal_and_trace_identities() {
    let (net, batch) = problem(
        &[5, 4, 3],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        8,
        9,
    );
    let s = setup(net, batch);
    let h = dense_from_trace(&s.net, &s.trace, &s.curv).unwrap();
    let mut trace = 0.0;
    for k in 0..s.net.num_params() {
        let ki = s.pre.index(k);
        let norms = s.pre.column_norms(&ki);
        assert!(norms.iter().all(|&v| v >= 0.0));
        let sq: f64 = norms.iter().map(|v| v * v).sum();
        assert!(rel_err(sq, s.pre.entry_exact(k, k), sq) <= 1e-11);
        assert!(rel_err(s.pre.diag_entry(k), h[(k, k)], h[(k, k)]) <= 1e-11);
        trace += sq;
    }
    assert!(rel_err(trace, h.trace(), h.trace()) <= 1e-10);
}

#[test]
fn entry_work_is_linear_in_n_and_independent_of_width() {
    let work = |width: usize, n: usize| {
        let (net, batch) = problem(
            &[width, width, 3],
            Activation::Softplus,
            Loss::MeanSquared,
            BiasMode::None,
            n,
            3,
        );
        let s = setup(net, batch);
        let mut w = WorkCounter::default();
        s.pre.entry_exact_counted(1, 2, &mut w);
        w.multiply_adds as f64
    };
    let base = work(4, 20);
    assert!((work(8, 20) / base - 1.0).abs() < 0.2);
    assert!((work(4, 40) / base - 2.0).abs() < 0.4);
}

#[test]
fn single_precision_storage_is_close() {
    let (net, batch) = problem(
        &[5, 4, 3],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        8,
        10,
    );
    let s = setup(net, batch);
    let p32 =
        GnhPrecomp::<f64, f32>::build(&s.net, &s.batch, &s.curv, &s.trace, usize::MAX).unwrap();
    assert_eq!(p32.c_tensor_bytes() * 2, s.pre.c_tensor_bytes());
    for k in 0..10 {
        for m in 0..10 {
            let a = s.pre.entry_exact(k, m);
            let b = p32.entry_exact(k, m);
            let scale = (s.pre.diag_entry(k) * s.pre.diag_entry(m)).sqrt();
            assert!(rel_err(a, b, scale) < 1e-5);
        }
    }
}

#[test]
fn cache_roundtrip_and_staleness() {
    let (net, batch) = problem(
        &[4, 3, 3],
        Activation::Sigmoid,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        5,
        11,
    );
    let s = setup(net, batch);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pre.gnh");
    assert!(GnhPrecomp::<f64>::load_cache(&path, &s.net, &s.batch)
        .unwrap()
        .is_none());
    s.pre.save_cache(&path, &s.net, &s.batch).unwrap();
    let back = GnhPrecomp::<f64>::load_cache(&path, &s.net, &s.batch)
        .unwrap()
        .unwrap();
    for k in 0..s.net.num_params() {
        assert_eq!(back.entry_exact(k, 3), s.pre.entry_exact(k, 3));
    }
    let mut other = s.net.clone();
    let mut w = other.weights_flat();
    w[0] += 1.0;
    other.set_weights_flat(&w).unwrap();
    assert!(GnhPrecomp::<f64>::load_cache(&path, &other, &s.batch)
        .unwrap()
        .is_none());
    let bytes = std::fs::read(&path).unwrap();
    assert!(GnhPrecomp::<f64>::decode(&bytes[..bytes.len() - 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn entries_are_symmetric(seed in 0u64..500) {
        let (net, batch) = problem(&[4, 3, 3], Activation::Softplus, Loss::CrossEntropy, BiasMode::Augmented, 6, seed);
        let s = setup(net, batch);
        let n_params = s.net.num_params();
        let mut r = rng(seed);
        use rand::Rng;
        for _ in 0..200 {
            let k = r.random_range(0..n_params);
            let m = r.random_range(0..n_params);
            let a = s.pre.entry_exact(k, m);
            let b = s.pre.entry_exact(m, k);
            prop_assert!((a - b).abs() <= 1e-13 * a.abs().max(b.abs()).max(1e-300));
        }
    }
}
