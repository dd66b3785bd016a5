use crate::linalg::{dot, norm2};
use crate::operator::LinearOperator;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct CgResult<T> {
    pub solution: Vec<T>,
    pub iterations: usize,
    /// `‖b − (A + λI) x‖ / ‖b‖` from the explicit residual at exit.
    pub relative_residual: T,
    pub converged: bool,
}

/// Conjugate gradients on `(A + λI) x = b`, optionally preconditioned.
///
/// Non-convergence within `max_iter` is reported through
/// [`CgResult::converged`], not as an error.
pub fn cg_solve<T: Scalar>(
    op: &dyn LinearOperator<T>,
    b: &[T],
    lambda: T,
    tol: T,
    max_iter: usize,
    precond: Option<&dyn LinearOperator<T>>,
) -> CgResult<T> {
    let n = b.len();
    assert_eq!(n, op.dim(), "right-hand side length");
    let apply = |x: &[T]| -> Vec<T> {
        let mut y = op.apply(x);
        if lambda != T::zero() {
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi += lambda * xi;
            }
        }
        y
    };
    let precondition = |r: &[T]| -> Vec<T> {
        match precond {
            Some(p) => p.apply(r),
            None => r.to_vec(),
        }
    };
    let b_norm = norm2(b);
    let mut x = vec![T::zero(); n];
    if b_norm == T::zero() {
        return CgResult {
            solution: x,
            iterations: 0,
            relative_residual: T::zero(),
            converged: true,
        };
    }
    let mut r = b.to_vec();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > T::zero()) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        if norm2(&r) <= tol * b_norm {
            converged = true;
            break;
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        if !(rz_next > T::zero()) {
            break;
        }
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let ax = apply(&x);
    let res: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    let relative_residual = norm2(&res) / b_norm;
    CgResult {
        solution: x,
        iterations,
        relative_residual,
        converged: converged && relative_residual <= tol * T::of(10.0),
    }
}
