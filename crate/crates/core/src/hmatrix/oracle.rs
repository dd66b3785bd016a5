use rayon::prelude::*;

use crate::linalg::Matrix;
use crate::precompute::GnhPrecomp;
use crate::sampler::{entry_estimate, EstimatorConfig};
use crate::scalar::Scalar;

/// Entry access to a symmetric matrix `H + λI`.
pub trait EntryOracle<T: Scalar>: Sync {
    fn dim(&self) -> usize;

    /// `(H + λI)_{km}`.
    fn entry(&self, k: usize, m: usize) -> T;

    fn diag(&self, k: usize) -> T {
        self.entry(k, k)
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix<T> {
        let data: Vec<Vec<T>> = cols
            .par_iter()
            .map(|&m| rows.iter().map(|&k| self.entry(k, m)).collect())
            .collect();
        Matrix::from_col_major(rows.len(), cols.len(), data.concat())
    }
}

fn add_shift<T: Scalar>(block: &mut Matrix<T>, rows: &[usize], cols: &[usize], lambda: T) {
    if lambda == T::zero() {
        return;
    }
    for (j, &c) in cols.iter().enumerate() {
        for (i, &r) in rows.iter().enumerate() {
            if r == c {
                block[(i, j)] += lambda;
            }
        }
    }
}

/// Oracle over an explicit dense matrix.
pub struct DenseOracle<'a, T> {
    h: &'a Matrix<T>,
    lambda: T,
}

impl<'a, T: Scalar> DenseOracle<'a, T> {
    pub fn new(h: &'a Matrix<T>, lambda: T) -> Self {
        assert_eq!(h.rows(), h.cols(), "dense oracle needs a square matrix");
        DenseOracle { h, lambda }
    }
}

impl<T: Scalar> EntryOracle<T> for DenseOracle<'_, T> {
    fn dim(&self) -> usize {
        self.h.rows()
    }

    fn entry(&self, k: usize, m: usize) -> T {
        // read one triangle so the view is symmetric even if `h` is not
        let (a, b) = if k <= m { (k, m) } else { (m, k) };
        let v = self.h[(a, b)];
        if k == m {
            v + self.lambda
        } else {
            v
        }
    }
}

/// Exact GNH entries from the precomputed C-tensors.
pub struct ExactOracle<'a, T, S = T> {
    pre: &'a GnhPrecomp<T, S>,
    lambda: T,
    diag: Vec<T>,
}

impl<'a, T: Scalar, S: Scalar> ExactOracle<'a, T, S> {
    pub fn new(pre: &'a GnhPrecomp<T, S>, lambda: T) -> Self {
        ExactOracle {
            pre,
            lambda,
            diag: pre.diag(),
        }
    }
}

impl<T: Scalar, S: Scalar> EntryOracle<T> for ExactOracle<'_, T, S> {
    fn dim(&self) -> usize {
        self.pre.num_params()
    }

    fn entry(&self, k: usize, m: usize) -> T {
        if k == m {
            return self.diag[k] + self.lambda;
        }
        let (a, b) = if k <= m { (k, m) } else { (m, k) };
        self.pre.entry_exact(a, b)
    }

    fn diag(&self, k: usize) -> T {
        self.diag[k] + self.lambda
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix<T> {
        let mut b = self.pre.block(rows, cols);
        add_shift(&mut b, rows, cols, self.lambda);
        b
    }
}

/// Monte Carlo GNH entries; the diagonal is exact.
pub struct SampledOracle<'a, T, S = T> {
    pre: &'a GnhPrecomp<T, S>,
    cfg: EstimatorConfig,
    lambda: T,
    diag: Vec<T>,
}

impl<'a, T: Scalar, S: Scalar> SampledOracle<'a, T, S> {
    pub fn new(pre: &'a GnhPrecomp<T, S>, cfg: EstimatorConfig, lambda: T) -> Self {
        SampledOracle {
            pre,
            cfg,
            lambda,
            diag: pre.diag(),
        }
    }
}

impl<T: Scalar, S: Scalar> EntryOracle<T> for SampledOracle<'_, T, S> {
    fn dim(&self) -> usize {
        self.pre.num_params()
    }

    fn entry(&self, k: usize, m: usize) -> T {
        if k == m {
            return self.diag[k] + self.lambda;
        }
        entry_estimate(self.pre, k, m, &self.cfg).value
    }

    fn diag(&self, k: usize) -> T {
        self.diag[k] + self.lambda
    }
}

/// Distance between two indices derived from the matrix entries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    /// `1 − H_ij² / (H_ii H_jj)`.
    #[default]
    Angle,
    /// `√(H_ii − 2H_ij + H_jj)`.
    Gram,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Angle => "angle",
            Metric::Gram => "gram",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = crate::GnhError;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "angle" => Ok(Metric::Angle),
            "gram" => Ok(Metric::Gram),
            other => Err(crate::GnhError::shape(format!("unknown metric `{other}`"))),
        }
    }
}

#[inline]
pub fn metric_distance<T: Scalar>(metric: Metric, hii: T, hjj: T, hij: T) -> T {
    match metric {
        Metric::Angle => T::one() - hij * hij / (hii * hjj),
        Metric::Gram => ((hii + hjj) - T::of(2.0) * hij).max(T::zero()).sqrt(),
    }
}

pub fn distance<T: Scalar>(oracle: &dyn EntryOracle<T>, i: usize, j: usize, metric: Metric) -> T {
    if i == j {
        return T::zero();
    }
    metric_distance(metric, oracle.diag(i), oracle.diag(j), oracle.entry(i, j))
}
