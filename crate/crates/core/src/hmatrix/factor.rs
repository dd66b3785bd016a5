use super::compress::{HMatrix, NodeData};
use crate::error::{GnhError, Result};
use crate::linalg::{Cholesky, Lu, Matrix};
use crate::operator::{ApproxOperator, LinearOperator};
use crate::scalar::Scalar;

enum NodeFactor<T> {
    Leaf(Cholesky<T>),
    /// `Y_l = A_l⁻¹ U`, `Y_r = A_r⁻¹ V` and the LU of the coupling core
    /// `[[I, Vᵀ Y_r], [Uᵀ Y_l, I]]`.
    Coupled {
        y_l: Matrix<T>,
        y_r: Matrix<T>,
        core: Option<Lu<T>>,
    },
}

/// Recursive Woodbury factorization of an [`HMatrix`].
pub struct HFactorization<'a, T> {
    hm: &'a HMatrix<T>,
    shift: T,
    factors: Vec<Option<NodeFactor<T>>>,
}

impl<'a, T: Scalar> HFactorization<'a, T> {
    pub fn new(hm: &'a HMatrix<T>) -> Result<Self> {
        Self::with_shift(hm, T::zero())
    }

    /// Factor `H̃ + shift·I`; [`HMatrix::compensation`] is the shift that
    /// keeps a truncated approximation definite.
    pub fn with_shift(hm: &'a HMatrix<T>, shift: T) -> Result<Self> {
        let mut f = HFactorization {
            hm,
            shift,
            factors: (0..hm.tree().nodes.len()).map(|_| None).collect(),
        };
        f.factor(0)?;
        Ok(f)
    }

    fn factor(&mut self, id: usize) -> Result<()> {
        let hm = self.hm;
        let node = hm.tree().node(id);
        let factor = match (hm.node_data(id), node.children) {
            (NodeData::Leaf(d), _) => match Cholesky::new(&shifted(d, self.shift)) {
                Ok(c) => NodeFactor::Leaf(c),
                Err(pivot) => {
                    return Err(GnhError::Definiteness(format!(
                        "leaf {id} (positions {}..{}) fails at pivot {pivot}; increase λ",
                        node.start,
                        node.start + node.len
                    )))
                }
            },
            (NodeData::Coupling(lr), Some((l, r))) => {
                self.factor(l)?;
                self.factor(r)?;
                let k = lr.rank();
                if k == 0 {
                    NodeFactor::Coupled {
                        y_l: Matrix::zeros(lr.u.rows(), 0),
                        y_r: Matrix::zeros(lr.v.rows(), 0),
                        core: None,
                    }
                } else {
                    let y_l = self.solve_node(l, &lr.u);
                    let y_r = self.solve_node(r, &lr.v);
                    let mut core = Matrix::identity(2 * k);
                    core.set_submatrix(0, k, &lr.v.tr_matmul(&y_r));
                    core.set_submatrix(k, 0, &lr.u.tr_matmul(&y_l));
                    let lu = Lu::new(&core).map_err(|_| {
                        GnhError::Definiteness(format!("coupling system of node {id} is singular"))
                    })?;
                    NodeFactor::Coupled {
                        y_l,
                        y_r,
                        core: Some(lu),
                    }
                }
            }
            (NodeData::Coupling(_), None) => unreachable!("coupling stored on a leaf"),
        };
        self.factors[id] = Some(factor);
        Ok(())
    }

    /// Solve with the sub-operator of node `id`, right-hand sides in the
    /// permuted order.
    fn solve_node(&self, id: usize, b: &Matrix<T>) -> Matrix<T> {
        let factor = self.factors[id].as_ref().expect("node factored before use");
        match (factor, self.hm.tree().node(id).children) {
            (NodeFactor::Leaf(c), _) => c.solve_matrix(b),
            (NodeFactor::Coupled { y_l, y_r, core }, Some((l, r))) => {
                let nl = self.hm.tree().node(l).len;
                let nr = self.hm.tree().node(r).len;
                let bl = b.submatrix(0, 0, nl, b.cols());
                let br = b.submatrix(nl, 0, nr, b.cols());
                let (mut xl, mut xr) =
                    rayon::join(|| self.solve_node(l, &bl), || self.solve_node(r, &br));
                if let (Some(core), NodeData::Coupling(lr)) = (core, self.hm.node_data(id)) {
                    let k = lr.rank();
                    let mut t = Matrix::zeros(2 * k, b.cols());
                    t.set_submatrix(0, 0, &lr.v.tr_matmul(&xr));
                    t.set_submatrix(k, 0, &lr.u.tr_matmul(&xl));
                    let s = core.solve_matrix(&t);
                    xl.axpy(-T::one(), &y_l.matmul(&s.submatrix(0, 0, k, b.cols())));
                    xr.axpy(-T::one(), &y_r.matmul(&s.submatrix(k, 0, k, b.cols())));
                }
                let mut x = Matrix::zeros(nl + nr, b.cols());
                x.set_submatrix(0, 0, &xl);
                x.set_submatrix(nl, 0, &xr);
                x
            }
            (NodeFactor::Coupled { .. }, None) => unreachable!("coupling stored on a leaf"),
        }
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn solve_block(&self, b: &Matrix<T>) -> Result<Matrix<T>> {
        if b.rows() != self.hm.size() {
            return Err(GnhError::shape(format!(
                "right-hand side has {} rows, operator has size {}",
                b.rows(),
                self.hm.size()
            )));
        }
        let x = self.solve_node(0, &self.hm.permute(b));
        Ok(self.hm.unpermute(&x))
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        Ok(self.solve_block(&Matrix::column_vector(b))?.into_vec())
    }
}

fn shifted<T: Scalar>(d: &Matrix<T>, shift: T) -> std::borrow::Cow<'_, Matrix<T>> {
    if shift == T::zero() {
        return std::borrow::Cow::Borrowed(d);
    }
    let mut m = d.clone();
    m.add_diag(shift);
    std::borrow::Cow::Owned(m)
}

impl<T: Scalar> LinearOperator<T> for HFactorization<'_, T> {
    fn dim(&self) -> usize {
        self.hm.size()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.solve(x).expect("vector length matches operator")
    }

    fn apply_block(&self, x: &Matrix<T>) -> Matrix<T> {
        self.solve_block(x).expect("block rows match operator")
    }
}

impl<T: Scalar> ApproxOperator<T> for HMatrix<T> {
    fn stored_entries(&self) -> usize {
        HMatrix::stored_entries(self)
    }

    fn inverse(&self) -> Result<Box<dyn LinearOperator<T> + '_>> {
        Ok(Box::new(HFactorization::new(self)?))
    }
}
