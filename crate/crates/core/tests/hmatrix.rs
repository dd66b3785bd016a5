mod common;

use common::*;
use gnh_core::hmatrix::{
    build_tree, decode_hmatrix, distance, encode_hmatrix, probe_error, DenseOracle, EntryOracle,
    ExactOracle, HFactorization, HMatrix, Metric, SampledOracle, Settings,
};
use gnh_core::linalg::{dot, sym_eigen, Matrix};
use gnh_core::mlp::cg_solve;
use gnh_core::sampler::{matrix_estimate, EstimatorConfig};
use gnh_core::{Activation, ApproxOperator, BiasMode, GnhError, GnhOperator, LinearOperator, Loss};
use proptest::prelude::*;

fn gnh_setup(seed: u64) -> Setup {
    let (net, batch) = problem(
        &[12, 12, 6],
        Activation::Softplus,
        Loss::CrossEntropy,
        BiasMode::Augmented,
        40,
        seed,
    );
    setup(net, batch)
}

fn shifted(h: &Matrix<f64>, lambda: f64) -> Matrix<f64> {
    let mut a = h.clone();
    a.add_diag(lambda);
    a
}

fn rank_one_plus_identity(n: usize, seed: u64) -> (Matrix<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let u = gaussian(n, 1, &mut r).into_vec();
    let h = Matrix::from_fn(n, n, |i, j| u[i] * u[j]);
    (h, u)
}

#[test]
fn distance_examples() {
    let h = Matrix::<f64>::from_f64_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
    let o = DenseOracle::new(&h, 0.0);
    assert!((distance(&o, 0, 1, Metric::Angle) - 0.75).abs() < 1e-15);
    assert!((distance(&o, 0, 1, Metric::Gram) - 2f64.sqrt()).abs() < 1e-15);
    for m in [Metric::Angle, Metric::Gram] {
        assert_eq!(distance(&o, 0, 0, m), 0.0);
        assert_eq!(distance(&o, 1, 1, m), 0.0);
    }
    let s = gnh_setup(1);
    let o = ExactOracle::new(&s.pre, 1e-3);
    let mut r = rng(2);
    use rand::Rng;
    for _ in 0..100 {
        let i = r.random_range(0..o.dim());
        let j = r.random_range(0..o.dim());
        for m in [Metric::Angle, Metric::Gram] {
            assert_eq!(distance(&o, i, j, m), distance(&o, j, i, m));
        }
    }
}

#[test]
fn small_problem_is_one_leaf() {
    let h = Matrix::<f64>::identity(8);
    let tree = build_tree(&DenseOracle::new(&h, 0.0), 8, Metric::Angle, 1).unwrap();
    assert_eq!(tree.nodes.len(), 1);
    assert!(tree.root().is_leaf());
    assert!(matches!(
        build_tree(&DenseOracle::new(&h, 0.0), 1, Metric::Angle, 1),
        Err(GnhError::Shape(_))
    ));
}

/// Two dense correlated groups interleaved in the original ordering.
fn two_blocks(n: usize) -> Matrix<f64> {
    Matrix::from_fn(n, n, |i, j| {
        if i % 2 != j % 2 {
            0.0
        } else if i == j {
            1.0
        } else {
            0.8
        }
    })
}

#[test]
fn top_split_recovers_blocks() {
    let h = two_blocks(32);
    for seed in 0..5 {
        let tree = build_tree(&DenseOracle::new(&h, 0.0), 8, Metric::Angle, seed).unwrap();
        let (l, r) = tree.root().children.unwrap();
        let parity = tree.indices(l)[0] % 2;
        assert!(tree.indices(l).iter().all(|&i| i % 2 == parity));
        assert!(tree.indices(r).iter().all(|&i| i % 2 != parity));
    }
}

#[test]
fn block_diagonal_is_reproduced_exactly() {
    let h = two_blocks(64);
    let o = DenseOracle::new(&h, 0.0);
    let settings = Settings::custom(32, 8, 1e-8);
    let hm = HMatrix::build(&o, &settings, Metric::Angle, 0.0, 3).unwrap();
    assert_eq!(hm.rank(0), Some(0));
    let err = probe_error(&hm, &h, 128, 4);
    assert!(err <= 1e-10, "{err}");
}

#[test]
fn identity_plus_rank_one_is_lossless() {
    let (h, _) = rank_one_plus_identity(200, 5);
    let lambda = 1.0;
    let o = DenseOracle::new(&h, lambda);
    let hm = HMatrix::build(
        &o,
        &Settings::custom(16, 4, 1e-12),
        Metric::Angle,
        lambda,
        6,
    )
    .unwrap();
    let err = probe_error(&hm, &shifted(&h, lambda), 128, 7);
    assert!(err <= 1e-10, "{err}");
    assert!(hm.stats().level_max_rank.iter().all(|&r| r <= 1));
}

#[test]
fn tiny_gnh_high_accuracy_compression() {
    let s = gnh_setup(8);
    let n = s.net.num_params();
    let lambda = 1e-4;
    let o = ExactOracle::new(&s.pre, lambda);
    let hm = HMatrix::build(
        &o,
        &Settings::custom(16, n / 2, 1e-5),
        Metric::Angle,
        lambda,
        9,
    )
    .unwrap();
    let reference = GnhOperator::new(&s.net, &s.trace, &s.curv).with_shift(lambda);
    let err = probe_error(&hm, &reference, 128, 10);
    assert!(err <= 1e-3, "{err}");
}

#[test]
fn matvec_identity_and_dense_agreement() {
    let h = Matrix::<f64>::identity(50);
    let hm = HMatrix::build(
        &DenseOracle::new(&h, 0.0),
        &Settings::custom(8, 4, 1e-8),
        Metric::Angle,
        0.0,
        1,
    )
    .unwrap();
    let mut r = rng(11);
    let x = gaussian(50, 1, &mut r).into_vec();
    assert_eq!(hm.matvec(&x).unwrap(), x);

    let s = gnh_setup(12);
    let lambda = 1e-3;
    let o = ExactOracle::new(&s.pre, lambda);
    let hm = HMatrix::build(
        &o,
        &Settings::custom(16, 12, 1e-3),
        Metric::Angle,
        lambda,
        13,
    )
    .unwrap();
    let dense = hm.to_dense();
    assert!(dense.sub(&dense.transpose()).frobenius_norm() <= 1e-12 * dense.frobenius_norm());
    let x = gaussian(hm.size(), 3, &mut r);
    let y = hm.matvec_block(&x).unwrap();
    let yd = dense.matmul(&x);
    assert!(y.sub(&yd).frobenius_norm() <= 1e-12 * yd.frobenius_norm());
    assert!(matches!(hm.matvec(&[1.0; 3]), Err(GnhError::Shape(_))));
}

#[test]
fn storage_accounting_matches_recount() {
    let s = gnh_setup(14);
    let o = ExactOracle::new(&s.pre, 1e-3);
    for settings in [Settings::custom(8, 4, 5e-2), Settings::custom(32, 64, 1e-6)] {
        let hm = HMatrix::build(&o, &settings, Metric::Angle, 1e-3, 15).unwrap();
        assert_eq!(hm.stored_entries(), hm.recount());
        let n = hm.size() as f64;
        assert_eq!(hm.compression_rate(), hm.recount() as f64 / (n * n));
        assert_eq!(ApproxOperator::compression_rate(&hm), hm.compression_rate());
    }
}

#[test]
fn lossless_and_scaled_probe_errors() {
    let s = gnh_setup(16);
    let lambda = 1e-3;
    let h = shifted(&s.pre.dense(), lambda);
    let o = ExactOracle::new(&s.pre, lambda);
    let full = Settings::custom(16, h.rows(), 0.0);
    let hm = HMatrix::build(&o, &full, Metric::Angle, lambda, 17).unwrap();
    assert!(probe_error(&hm, &h, 128, 18) <= 1e-12);
    let half = h.scale(0.5);
    let err = probe_error(&half, &h, 128, 19);
    assert!((err - 0.5).abs() <= 1e-12);
}

#[test]
fn high_settings_beat_low_settings() {
    let s = gnh_setup(20);
    let lambda = 1e-4;
    let o = ExactOracle::new(&s.pre, lambda);
    let reference = GnhOperator::new(&s.net, &s.trace, &s.curv).with_shift(lambda);
    let low = HMatrix::build(&o, &Settings::custom(8, 4, 5e-2), Metric::Angle, lambda, 21).unwrap();
    let high = HMatrix::build(
        &o,
        &Settings::custom(32, 64, 1e-5),
        Metric::Angle,
        lambda,
        21,
    )
    .unwrap();
    let (el, eh) = (
        probe_error(&low, &reference, 128, 22),
        probe_error(&high, &reference, 128, 22),
    );
    assert!(eh <= el, "{eh} vs {el}");
    assert!(high.compression_rate() > low.compression_rate());
}

#[test]
fn gram_metric_also_builds_a_valid_tree() {
    let s = gnh_setup(23);
    let o = ExactOracle::new(&s.pre, 1e-3);
    let tree = build_tree(&o, 16, Metric::Gram, 24).unwrap();
    let mut seen = tree.perm.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..o.dim()).collect::<Vec<_>>());
}

#[test]
fn diagonal_factorization_divides() {
    let d: Vec<f64> = (1..=40).map(|i| i as f64).collect();
    let h = Matrix::from_diag(&d);
    let hm = HMatrix::build(
        &DenseOracle::new(&h, 0.0),
        &Settings::custom(8, 4, 1e-10),
        Metric::Angle,
        0.0,
        1,
    )
    .unwrap();
    let f = HFactorization::new(&hm).unwrap();
    let b = vec![1.0; 40];
    let x = f.solve(&b).unwrap();
    for (xi, di) in x.iter().zip(&d) {
        assert!((xi - 1.0 / di).abs() < 1e-14);
    }
    assert!(f.solve(&vec![0.0; 40]).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn sherman_morrison_agreement() {
    let n = 150;
    let (h, u) = rank_one_plus_identity(n, 25);
    let hm = HMatrix::build(
        &DenseOracle::new(&h, 1.0),
        &Settings::custom(16, 4, 1e-12),
        Metric::Angle,
        1.0,
        26,
    )
    .unwrap();
    let f = HFactorization::new(&hm).unwrap();
    let mut r = rng(27);
    let b = gaussian(n, 1, &mut r).into_vec();
    let x = f.solve(&b).unwrap();
    // (I + uuᵀ)⁻¹ b = b − u (uᵀb) / (1 + uᵀu)
    let coef = dot(&u, &b) / (1.0 + dot(&u, &u));
    for i in 0..n {
        let expect = b[i] - u[i] * coef;
        assert!((x[i] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
    }
}

#[test]
fn solve_is_consistent_with_matvec() {
    let s = gnh_setup(28);
    let lambda = 1e-4;
    let o = ExactOracle::new(&s.pre, lambda);
    let hm = HMatrix::build(
        &o,
        &Settings::custom(16, 32, 1e-5),
        Metric::Angle,
        lambda,
        29,
    )
    .unwrap();
    let f = HFactorization::new(&hm).unwrap();
    let mut r = rng(30);
    for _ in 0..10 {
        let b = gaussian(hm.size(), 1, &mut r).into_vec();
        let x = f.solve(&b).unwrap();
        let hb = hm.matvec(&x).unwrap();
        let res: f64 = hb
            .iter()
            .zip(&b)
            .map(|(a, c)| (a - c).powi(2))
            .sum::<f64>()
            .sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res / nb <= 1e-8, "{}", res / nb);
    }
}

#[test]
fn dominant_shift_gives_scaled_rhs() {
    let s = gnh_setup(31);
    let h = s.pre.dense();
    let norm = h.frobenius_norm();
    let lambda = 100.0 * norm;
    let o = ExactOracle::new(&s.pre, lambda);
    let hm = HMatrix::build(
        &o,
        &Settings::custom(16, 8, 1e-3),
        Metric::Angle,
        lambda,
        32,
    )
    .unwrap();
    let f = HFactorization::new(&hm).unwrap();
    let b = vec![1.0; hm.size()];
    for v in f.solve(&b).unwrap() {
        assert!((v * lambda - 1.0).abs() <= 0.01);
    }
}

#[test]
fn preconditioning_reduces_cg_iterations() {
    let s = gnh_setup(33);
    let lambda = 1e-4;
    let o = ExactOracle::new(&s.pre, lambda);
    let op = GnhOperator::new(&s.net, &s.trace, &s.curv);
    let mut r = rng(35);
    let b = gaussian(s.net.num_params(), 1, &mut r).into_vec();
    let plain = cg_solve(&op, &b, lambda, 1e-8, 5000, None);
    assert!(plain.converged);
    for settings in [
        Settings::custom(16, 16, 1e-3),
        Settings::custom(16, 64, 1e-5),
    ] {
        let hm = HMatrix::build(&o, &settings, Metric::Angle, lambda, 34).unwrap();
        let f = HFactorization::with_shift(&hm, hm.compensation()).unwrap();
        let pre = cg_solve(&op, &b, lambda, 1e-8, 5000, Some(&f));
        assert!(pre.converged);
        assert!(
            pre.iterations < plain.iterations,
            "{} vs {}",
            pre.iterations,
            plain.iterations
        );
    }
}

#[test]
fn compensation_restores_definiteness() {
    let s = gnh_setup(42);
    let lambda = 1e-6;
    let o = ExactOracle::new(&s.pre, lambda);
    let hm = HMatrix::build(
        &o,
        &Settings::custom(16, 8, 1e-2),
        Metric::Angle,
        lambda,
        43,
    )
    .unwrap();
    assert!(hm.compensation() > 0.0);
    let mut d = hm.to_dense();
    d.add_diag(hm.compensation());
    let (vals, _) = sym_eigen(&d);
    assert!(*vals.last().unwrap() > 0.0);
    let h = shifted(&s.pre.dense(), lambda);
    let (gap, _) = sym_eigen(&d.sub(&h));
    assert!(
        *gap.last().unwrap() >= -1e-3 * hm.compensation(),
        "{:?}",
        gap.last()
    );
    let f = HFactorization::with_shift(&hm, hm.compensation()).unwrap();
    let mut r = rng(44);
    let b = gaussian(hm.size(), 1, &mut r).into_vec();
    let x = f.solve(&b).unwrap();
    let back = d.matvec(&x);
    for (p, q) in back.iter().zip(&b) {
        assert!((p - q).abs() <= 1e-8 * (1.0 + q.abs()));
    }
}

#[test]
fn indefinite_leaf_is_reported() {
    let mut h = Matrix::<f64>::identity(20);
    h[(3, 3)] = -1.0;
    let hm = HMatrix::build(
        &DenseOracle::new(&h, 0.0),
        &Settings::custom(5, 2, 1e-8),
        Metric::Gram,
        0.0,
        1,
    )
    .unwrap();
    match HFactorization::new(&hm) {
        Err(GnhError::Definiteness(msg)) => assert!(msg.contains("leaf")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("factorization should fail"),
    }
}

#[test]
fn serialization_roundtrip() {
    let s = gnh_setup(36);
    let o = ExactOracle::new(&s.pre, 1e-3);
    let hm = HMatrix::build(&o, &Settings::custom(16, 8, 1e-4), Metric::Angle, 1e-3, 37).unwrap();
    let bytes = encode_hmatrix(&hm);
    let back: HMatrix<f64> = decode_hmatrix(&bytes).unwrap();
    assert_eq!(back.tree(), hm.tree());
    assert_eq!(back.to_dense(), hm.to_dense());
    assert_eq!(back.lambda(), hm.lambda());
    assert_eq!(back.compensation(), hm.compensation());
    assert_eq!(back.settings(), hm.settings());
    assert!(matches!(
        decode_hmatrix::<f64>(&bytes[..bytes.len() - 8]),
        Err(GnhError::Format { .. })
    ));
}

#[test]
fn sampled_oracle_error_composes() {
    let s = gnh_setup(38);
    let lambda = 1e-4;
    let n = s.net.num_params();
    let cfg = EstimatorConfig::new(2000, 0.1, 39).unwrap();
    let settings = Settings::custom(16, 24, 1e-4);
    let h = shifted(&s.pre.dense(), lambda);
    let idx: Vec<usize> = (0..n).collect();
    let sampled = shifted(&matrix_estimate(&s.pre, &idx, &cfg).unwrap(), lambda);
    let sampling_err = probe_error(&sampled, &h, 128, 40);
    let exact_hm = HMatrix::build(
        &ExactOracle::new(&s.pre, lambda),
        &settings,
        Metric::Angle,
        lambda,
        41,
    )
    .unwrap();
    let compression_err = probe_error(&exact_hm, &h, 128, 40);
    let sampled_hm = HMatrix::build(
        &SampledOracle::new(&s.pre, cfg, lambda),
        &settings,
        Metric::Angle,
        lambda,
        41,
    )
    .unwrap();
    let total = probe_error(&sampled_hm, &h, 128, 40);
    assert!(
        total <= 1.2 * (sampling_err + compression_err),
        "{total} vs {sampling_err} + {compression_err}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tree_partitions_indices(n in 2usize..300, m in 2usize..40, seed in 0u64..100) {
        let mut r = rng(seed);
        let g = gaussian(n, 3, &mut r);
        let h = g.matmul_tr(&g);
        let tree = build_tree(&DenseOracle::new(&h, 1.0), m, Metric::Angle, seed).unwrap();
        let mut seen = tree.perm.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let mut covered = 0;
        for leaf in tree.leaves() {
            let node = tree.node(leaf);
            prop_assert!(node.len <= m);
            prop_assert_eq!(node.start, covered);
            covered += node.len;
        }
        prop_assert_eq!(covered, n);
        let expected_depth = if n <= m { 0 } else { ((n as f64) / (m as f64)).log2().ceil() as usize };
        prop_assert_eq!(tree.depth(), expected_depth);
    }

    #[test]
    fn hmatrix_matvec_is_linear(seed in 0u64..100, a in -2.0f64..2.0) {
        let mut r = rng(seed);
        let g = gaussian(60, 5, &mut r);
        let h = g.matmul_tr(&g);
        let hm = HMatrix::build(&DenseOracle::new(&h, 0.1), &Settings::custom(8, 3, 1e-2), Metric::Angle, 0.1, seed).unwrap();
        let x = gaussian(60, 1, &mut r).into_vec();
        let y = gaussian(60, 1, &mut r).into_vec();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + q).collect();
        let lhs = hm.apply(&mix);
        let hx = hm.apply(&x);
        let hy = hm.apply(&y);
        let scale = lhs.iter().chain(&hx).chain(&hy).fold(0.0f64, |m, v| m.max(v.abs())) * (1.0 + a.abs());
        for i in 0..60 {
            prop_assert!((lhs[i] - (a * hx[i] + hy[i])).abs() <= 1e-13 * scale);
        }
    }
}
