//! Dense factorizations: Cholesky, LU, Householder QR (plain and column
//! pivoted), a tridiagonal QL symmetric eigensolver and a one-sided Jacobi
//! SVD.

use super::matrix::{dot, norm2, Matrix};
use crate::scalar::Scalar;

/// Lower-triangular Cholesky factor, `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Fails with the index of the first non-positive pivot.
    pub fn new(a: &Matrix<T>) -> Result<Self, usize> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "cholesky needs a square matrix");
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(j);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.l.rows();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let mut x = b.clone();
        for j in 0..x.cols() {
            self.solve_in_place(x.col_mut(j));
        }
        x
    }
}

/// LU with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Fails with the column index where an exactly zero pivot appeared.
    pub fn new(a: &Matrix<T>) -> Result<Self, usize> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "lu needs a square matrix");
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(k);
            }
            if p != k {
                piv.swap(p, k);
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                lu[(i, k)] /= d;
            }
            for j in k + 1..n {
                let u = lu[(k, j)];
                if u == T::zero() {
                    continue;
                }
                for i in k + 1..n {
                    let l = lu[(i, k)];
                    lu[(i, j)] -= l * u;
                }
            }
        }
        Ok(Lu { lu, piv })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows();
        let mut x: Vec<T> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve(b.col(j));
            out.col_mut(j).copy_from_slice(&x);
        }
        out
    }
}

/// Build the Householder vector for `x` in place; returns `(beta, alpha)`
/// such that `(I - beta v vᵀ) x = alpha e₁` with `v[0] = 1`.
fn householder<T: Scalar>(x: &mut [T]) -> (T, T) {
    let sigma: T = x[1..].iter().map(|&v| v * v).sum();
    let x0 = x[0];
    if sigma == T::zero() {
        if x0 >= T::zero() {
            x[0] = T::one();
            return (T::zero(), x0);
        }
        // reflect the sign so alpha is nonnegative
        x[0] = T::one();
        return (T::of(2.0), -x0);
    }
    let mu = (x0 * x0 + sigma).sqrt();
    let v0 = if x0 <= T::zero() {
        x0 - mu
    } else {
        -sigma / (x0 + mu)
    };
    let beta = T::of(2.0) * v0 * v0 / (sigma + v0 * v0);
    for v in x[1..].iter_mut() {
        *v /= v0;
    }
    x[0] = T::one();
    (beta, mu)
}

fn apply_reflector<T: Scalar>(v: &[T], beta: T, a: &mut Matrix<T>, row0: usize, col0: usize) {
    if beta == T::zero() {
        return;
    }
    for j in col0..a.cols() {
        let col = &mut a.col_mut(j)[row0..];
        let s = beta * dot(v, col);
        for (c, &vi) in col.iter_mut().zip(v) {
            *c -= s * vi;
        }
    }
}

/// Thin Householder QR: `A = Q R` with `Q` of size `m × min(m, n)`.
pub fn qr_thin<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let (m, n) = a.shape();
    let k = m.min(n);
    let mut work = a.clone();
    let mut reflectors: Vec<(Vec<T>, T)> = Vec::with_capacity(k);
    for j in 0..k {
        let mut v = work.col(j)[j..].to_vec();
        let (beta, alpha) = householder(&mut v);
        apply_reflector(&v, beta, &mut work, j, j + 1);
        work[(j, j)] = alpha;
        for i in j + 1..m {
            work[(i, j)] = T::zero();
        }
        reflectors.push((v, beta));
    }
    let r = Matrix::from_fn(k, n, |i, j| if i <= j { work[(i, j)] } else { T::zero() });
    let mut q = Matrix::from_fn(m, k, |i, j| if i == j { T::one() } else { T::zero() });
    for (j, (v, beta)) in reflectors.iter().enumerate().rev() {
        apply_reflector(v, *beta, &mut q, j, 0);
    }
    (q, r)
}

/// Orthonormal basis for the range of `a` (columns of the thin `Q`).
pub fn orthonormalize<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    qr_thin(a).0
}

/// Column-pivoted Householder QR, `A P = Q R`.
#[derive(Clone, Debug)]
pub struct PivotedQr<T> {
    /// Upper trapezoidal factor, `min(m, n) × n`, columns in pivoted order.
    pub r: Matrix<T>,
    /// `perm[j]` is the original column placed at position `j`.
    pub perm: Vec<usize>,
}

impl<T: Scalar> PivotedQr<T> {
    /// Factorizes at most `max_steps` columns; the remaining rows of `r`
    /// hold the unreduced trailing block.
    pub fn new(a: &Matrix<T>, max_steps: usize) -> Self {
        let (m, n) = a.shape();
        let k = m.min(n).min(max_steps);
        let mut work = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for j in 0..k {
            // norms are recomputed from the trailing block rather than downdated
            let mut best = j;
            let mut best_norm = T::neg_infinity();
            for c in j..n {
                let s: T = work.col(c)[j..].iter().map(|&v| v * v).sum();
                if s > best_norm {
                    best_norm = s;
                    best = c;
                }
            }
            if best != j {
                perm.swap(best, j);
                for i in 0..m {
                    let t = work[(i, j)];
                    work[(i, j)] = work[(i, best)];
                    work[(i, best)] = t;
                }
            }
            let mut v = work.col(j)[j..].to_vec();
            let (beta, alpha) = householder(&mut v);
            apply_reflector(&v, beta, &mut work, j, j + 1);
            work[(j, j)] = alpha;
            for i in j + 1..m {
                work[(i, j)] = T::zero();
            }
        }
        let rows = m.min(n);
        let r = Matrix::from_fn(rows, n, |i, j| {
            if i <= j || j >= k {
                work[(i, j)]
            } else {
                T::zero()
            }
        });
        PivotedQr { r, perm }
    }

    /// Number of leading diagonal entries above `rel_tol * |R₀₀|`, capped.
    pub fn numerical_rank(&self, rel_tol: T, cap: usize) -> usize {
        let k = self.r.rows().min(self.r.cols()).min(cap);
        if k == 0 {
            return 0;
        }
        let r00 = self.r[(0, 0)].abs();
        if !(r00 > T::zero()) {
            return 0;
        }
        let mut rank = 0;
        while rank < k && self.r[(rank, rank)].abs() > rel_tol * r00 {
            rank += 1;
        }
        rank
    }
}

/// Solve `R X = B` for upper-triangular leading `k × k` block of `r`.
pub fn solve_upper<T: Scalar>(r: &Matrix<T>, k: usize, b: &Matrix<T>) -> Matrix<T> {
    let mut x = b.clone();
    for j in 0..x.cols() {
        let col = x.col_mut(j);
        for i in (0..k).rev() {
            let mut s = col[i];
            for l in i + 1..k {
                s -= r[(i, l)] * col[l];
            }
            col[i] = s / r[(i, i)];
        }
    }
    x
}

/// Thin singular value decomposition `A = U diag(σ) Vᵀ` by one-sided Jacobi
/// rotations. Singular values are returned in descending order.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> (Matrix<T>, Vec<T>, Matrix<T>) {
    let (m, n) = a.shape();
    if m < n {
        let (u, s, v) = svd(&a.transpose());
        return (v, s, u);
    }
    let mut w = a.clone();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    let mut norms: Vec<T> = (0..n).map(|j| dot(w.col(j), w.col(j))).collect();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta) = (norms[p], norms[q]);
                if alpha == T::zero() || beta == T::zero() {
                    continue;
                }
                let gamma = dot(w.col(p), w.col(q));
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            break;
        }
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = dot(w.col(j), w.col(j));
        }
    }
    let sigma: Vec<T> = (0..n).map(|j| norm2(w.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        sigma[j]
            .partial_cmp(&sigma[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let u = Matrix::from_fn(m, n, |i, j| {
        let c = order[j];
        if sigma[c] > T::zero() {
            w[(i, c)] / sigma[c]
        } else {
            T::zero()
        }
    });
    let v = v.select_cols(&order);
    (u, order.iter().map(|&c| sigma[c]).collect(), v)
}

fn rotate_cols<T: Scalar>(a: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let m = a.rows();
    let (lo, hi) = a.as_mut_slice().split_at_mut(q * m);
    let cp = &mut lo[p * m..(p + 1) * m];
    let cq = &mut hi[..m];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Eigen-decomposition of a symmetric matrix by Householder reduction to
/// tridiagonal form and implicit QL iteration. Eigenvalues are returned in
/// descending order, eigenvectors as columns.
pub fn sym_eigen<T: Scalar>(a: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "sym_eigen needs a square matrix");
    if n == 0 {
        return (Vec::new(), Matrix::zeros(0, 0));
    }
    let mut v = a.clone();
    v.symmetrize();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| d[i]).collect();
    (values, v.select_cols(&order))
}

/// Overwrites `v` with the orthogonal reduction `Q` of the symmetric input,
/// leaving the tridiagonal in `d` (diagonal) and `e[1..]` (subdiagonal).
fn tridiagonalize<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for &x in &d[..i] {
            scale += x.abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for x in &mut d[..i] {
                *x /= scale;
                h += *x * *x;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for x in &mut e[..i] {
                *x = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                let col = v.col_mut(j);
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                let col = v.col_mut(j);
                for k in 0..=i {
                    col[k] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

/// Diagonalizes the tridiagonal `(d, e)`, accumulating rotations into `v`.
fn tridiagonal_ql<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            for _ in 0..100 {
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (T::of(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for x in &mut d[l + 2..] {
                    *x -= h;
                }
                f += h;
                p = d[m];
                let (mut c, mut c2, mut c3) = (T::one(), T::one(), T::one());
                let el1 = e[l + 1];
                let (mut s, mut s2) = (T::zero(), T::zero());
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = v.as_mut_slice().split_at_mut((i + 1) * n);
                    let ci = &mut lo[i * n..];
                    for (x, y) in ci.iter_mut().zip(hi[..n].iter_mut()) {
                        let t = *y;
                        *y = s * *x + c * t;
                        *x = c * *x - s * t;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
}
