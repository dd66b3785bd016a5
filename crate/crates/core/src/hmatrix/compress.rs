use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::oracle::{EntryOracle, Metric};
use super::tree::{build_tree, IndexTree};
use super::Settings;
use crate::error::Result;
use crate::linalg::{qr_thin, solve_upper, svd, Matrix, PivotedQr};
use crate::operator::LinearOperator;
use crate::scalar::Scalar;

/// Extra random columns sampled beyond twice the rank cap.
pub const OVERSAMPLING: usize = 10;

/// Off-diagonal coupling of a node: upper block `≈ U Vᵀ`, lower block
/// `≈ V Uᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRank<T> {
    pub u: Matrix<T>,
    pub v: Matrix<T>,
}

impl<T: Scalar> LowRank<T> {
    pub fn rank(&self) -> usize {
        self.u.cols()
    }
}

/// Per-node payload: dense block for leaves, coupling for internal nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeData<T> {
    Leaf(Matrix<T>),
    Coupling(LowRank<T>),
}

/// Summary of a built approximation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HStats {
    pub n: usize,
    pub stored_entries: usize,
    pub compression_rate: f64,
    pub leaves: usize,
    pub depth: usize,
    /// Largest and mean rank of the couplings on each level (root = 0).
    pub level_max_rank: Vec<usize>,
    pub level_mean_rank: Vec<f64>,
    /// Couplings whose rank hit the cap.
    pub capped_blocks: usize,
    pub tree_seconds: f64,
    pub compress_seconds: f64,
}

/// Hierarchical (HODLR) approximation of `H + λI` with weak admissibility.
#[derive(Clone, Debug)]
pub struct HMatrix<T> {
    tree: IndexTree,
    data: Vec<NodeData<T>>,
    settings: Settings,
    lambda: T,
    /// Estimated spectral norm of each coupling's truncation error, zero for
    /// leaves.
    dropped: Vec<T>,
    capped: usize,
    tree_seconds: f64,
    compress_seconds: f64,
}

/// Columns sampled from a block for rank cap `r_o`: `2 r_o + OVERSAMPLING`.
pub fn sample_size(max_rank: usize) -> usize {
    2 * max_rank + OVERSAMPLING
}

/// Interpolative decomposition `A(rows, cols) ≈ A(rows, J) X` from
/// `sample` random columns, truncated only at working precision.
///
/// Returns the skeleton columns `J` (positions into `cols`) and `Xᵀ`.
fn interpolative<T: Scalar>(
    oracle: &dyn EntryOracle<T>,
    rows: &[usize],
    cols: &[usize],
    sample_cols: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<usize>, Matrix<T>) {
    let (p, q) = (rows.len(), cols.len());
    let eps_floor = T::of(eps_floor(p, q));
    let s = sample_cols.min(q);
    let mut picked = sample(rng, q, s).into_vec();
    picked.sort_unstable();
    let sampled_cols: Vec<usize> = picked.iter().map(|&j| cols[j]).collect();
    let c1 = oracle.block(rows, &sampled_cols);
    // rows that span the sampled column space
    let row_qr = PivotedQr::new(&c1.transpose(), s.min(p));
    let row_rank = row_qr.numerical_rank(eps_floor, s);
    if row_rank == 0 {
        return (Vec::new(), Matrix::zeros(q, 0));
    }
    let skel_rows: Vec<usize> = row_qr.perm[..row_rank].iter().map(|&i| rows[i]).collect();
    let b = oracle.block(&skel_rows, cols);
    let qr = PivotedQr::new(&b, row_rank);
    let k = qr.numerical_rank(eps_floor, row_rank);
    if k == 0 {
        return (Vec::new(), Matrix::zeros(q, 0));
    }
    let r12 = qr.r.submatrix(0, k, k, q - k);
    let t = solve_upper(&qr.r, k, &r12);
    let mut vt = Matrix::zeros(q, k);
    for j in 0..k {
        vt[(qr.perm[j], j)] = T::one();
    }
    for c in 0..q - k {
        let orig = qr.perm[k + c];
        for j in 0..k {
            vt[(orig, j)] = t[(j, c)];
        }
    }
    (qr.perm[..k].to_vec(), vt)
}

fn eps_floor(p: usize, q: usize) -> f64 {
    10.0 * f64::EPSILON * p.max(q) as f64
}

/// Truncate `C Wᵀ` to the singular values above `tol·σ₀`, at most
/// `max_rank` of them; also returns how many exceeded the tolerance and the
/// first discarded singular value.
fn recompress<T: Scalar>(
    c: &Matrix<T>,
    w: &Matrix<T>,
    max_rank: usize,
    tol: f64,
) -> (LowRank<T>, usize, T) {
    let (q1, r1) = qr_thin(c);
    let (q2, r2) = qr_thin(w);
    let (a, sigma, b) = svd(&r1.matmul_tr(&r2));
    let floor = T::of(tol.max(eps_floor(c.rows(), w.rows())));
    let above = match sigma.first() {
        Some(&s0) if s0 > T::zero() => sigma.iter().take_while(|&&s| s > floor * s0).count(),
        _ => 0,
    };
    let k = above.min(max_rank);
    let scaled = Matrix::from_fn(a.rows(), k, |i, j| a[(i, j)] * sigma[j]);
    let u = q1.matmul(&scaled);
    let v = q2.matmul(&b.submatrix(0, 0, b.rows(), k));
    let dropped = sigma.get(k).copied().unwrap_or(T::zero());
    (LowRank { u, v }, above, dropped)
}

/// `‖A − U Vᵀ‖₂` estimated from `2·OVERSAMPLING` fresh random columns.
fn residual_norm<T: Scalar>(
    oracle: &dyn EntryOracle<T>,
    rows: &[usize],
    cols: &[usize],
    lr: &LowRank<T>,
    rng: &mut ChaCha8Rng,
) -> T {
    let q = cols.len();
    let t = (2 * OVERSAMPLING).min(q);
    let picked = sample(rng, q, t).into_vec();
    let fresh: Vec<usize> = picked.iter().map(|&j| cols[j]).collect();
    let mut r = oracle.block(rows, &fresh);
    if lr.rank() > 0 {
        r.axpy(-T::one(), &lr.u.matmul_tr(&lr.v.select_rows(&picked)));
    }
    let (_, sigma, _) = svd(&r);
    let top = sigma.first().copied().unwrap_or(T::zero());
    top * T::of((q as f64 / t as f64).sqrt())
}

impl<T: Scalar> HMatrix<T> {
    /// Tree construction followed by compression.
    pub fn build(
        oracle: &dyn EntryOracle<T>,
        settings: &Settings,
        metric: Metric,
        lambda: T,
        seed: u64,
    ) -> Result<Self> {
        let t0 = Instant::now();
        let tree = build_tree(oracle, settings.leaf_size, metric, seed)?;
        let tree_seconds = t0.elapsed().as_secs_f64();
        let mut hm = Self::compress(oracle, tree, settings, lambda, seed);
        hm.tree_seconds = tree_seconds;
        Ok(hm)
    }

    /// Compress `oracle` on a given tree.
    pub fn compress(
        oracle: &dyn EntryOracle<T>,
        tree: IndexTree,
        settings: &Settings,
        lambda: T,
        seed: u64,
    ) -> Self {
        let t0 = Instant::now();
        let data: Vec<(NodeData<T>, bool, T)> = (0..tree.nodes.len())
            .into_par_iter()
            .map(|id| {
                let node = &tree.nodes[id];
                match node.children {
                    None => {
                        let idx = tree.indices(id);
                        let mut d = oracle.block(idx, idx);
                        d.symmetrize();
                        (NodeData::Leaf(d), false, T::zero())
                    }
                    Some((l, r)) => {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(id as u64 + 1);
                        let rows = tree.indices(l);
                        let cols = tree.indices(r);
                        let (skel, vt) = interpolative(
                            oracle,
                            rows,
                            cols,
                            sample_size(settings.max_rank),
                            &mut rng,
                        );
                        if skel.is_empty() {
                            let empty = LowRank {
                                u: Matrix::zeros(rows.len(), 0),
                                v: Matrix::zeros(cols.len(), 0),
                            };
                            return (NodeData::Coupling(empty), false, T::zero());
                        }
                        let skel_cols: Vec<usize> = skel.iter().map(|&j| cols[j]).collect();
                        let c = oracle.block(rows, &skel_cols);
                        let (lr, above, mut dropped) =
                            recompress(&c, &vt, settings.max_rank, settings.tol);
                        if sample_size(settings.max_rank) < cols.len() {
                            dropped = dropped.max(residual_norm(oracle, rows, cols, &lr, &mut rng));
                        }
                        (NodeData::Coupling(lr), above > settings.max_rank, dropped)
                    }
                }
            })
            .collect();
        let capped = data.iter().filter(|d| d.1).count();
        let dropped = data.iter().map(|d| d.2).collect();
        HMatrix {
            tree,
            data: data.into_iter().map(|d| d.0).collect(),
            settings: settings.clone(),
            lambda,
            dropped,
            capped,
            tree_seconds: 0.0,
            compress_seconds: t0.elapsed().as_secs_f64(),
        }
    }

    pub(crate) fn from_parts(
        tree: IndexTree,
        data: Vec<NodeData<T>>,
        dropped: Vec<T>,
        settings: Settings,
        lambda: T,
    ) -> Self {
        HMatrix {
            tree,
            data,
            settings,
            lambda,
            dropped,
            capped: 0,
            tree_seconds: 0.0,
            compress_seconds: 0.0,
        }
    }

    pub fn tree(&self) -> &IndexTree {
        &self.tree
    }

    pub fn node_data(&self, id: usize) -> &NodeData<T> {
        &self.data[id]
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn size(&self) -> usize {
        self.tree.len()
    }

    /// Rank of the coupling at an internal node.
    pub fn rank(&self, id: usize) -> Option<usize> {
        match &self.data[id] {
            NodeData::Coupling(lr) => Some(lr.rank()),
            NodeData::Leaf(_) => None,
        }
    }

    /// Estimated `‖A − U Vᵀ‖₂` for the coupling of `id`: the first discarded
    /// singular value, or a fresh-column residual estimate when the block
    /// was only partly sampled, whichever is larger.
    pub fn dropped(&self, id: usize) -> T {
        self.dropped[id]
    }

    /// Largest sum of discarded singular values along a root-to-leaf path.
    ///
    /// Each truncated coupling perturbs the operator by a symmetric block
    /// `[[0, E], [Eᵀ, 0]]` whose eigenvalues are `±‖E‖₂`, so `H̃ + c I` with
    /// this `c` bounds `H + λI` from above up to the accuracy of the
    /// discarded-value estimates.
    pub fn compensation(&self) -> T {
        let mut acc = vec![T::zero(); self.tree.nodes.len()];
        let mut worst = T::zero();
        for (id, node) in self.tree.nodes.iter().enumerate() {
            match node.children {
                Some((l, r)) => {
                    let below = acc[id] + self.dropped[id];
                    acc[l] = below;
                    acc[r] = below;
                }
                None => worst = worst.max(acc[id]),
            }
        }
        worst
    }

    /// `Σ_leaf m² + Σ_node rank·(rows + cols)` from the tree and ranks.
    pub fn stored_entries(&self) -> usize {
        self.tree
            .nodes
            .iter()
            .enumerate()
            .map(|(id, node)| match node.children {
                None => node.len * node.len,
                Some(_) => self.rank(id).unwrap_or(0) * node.len,
            })
            .sum()
    }

    /// Stored scalars counted from the allocated blocks.
    pub fn recount(&self) -> usize {
        self.data
            .iter()
            .map(|d| match d {
                NodeData::Leaf(m) => m.as_slice().len(),
                NodeData::Coupling(lr) => lr.u.as_slice().len() + lr.v.as_slice().len(),
            })
            .sum()
    }

    pub fn compression_rate(&self) -> f64 {
        let n = self.size() as f64;
        self.stored_entries() as f64 / (n * n)
    }

    pub fn stats(&self) -> HStats {
        let depth = self.tree.depth();
        let mut max_rank = vec![0usize; depth + 1];
        let mut sum_rank = vec![0usize; depth + 1];
        let mut count = vec![0usize; depth + 1];
        for (id, node) in self.tree.nodes.iter().enumerate() {
            if let Some(r) = self.rank(id) {
                max_rank[node.level] = max_rank[node.level].max(r);
                sum_rank[node.level] += r;
                count[node.level] += 1;
            }
        }
        let levels = count.iter().rposition(|&c| c > 0).map_or(0, |l| l + 1);
        HStats {
            n: self.size(),
            stored_entries: self.stored_entries(),
            compression_rate: self.compression_rate(),
            leaves: self.tree.leaves().count(),
            depth,
            level_max_rank: max_rank[..levels].to_vec(),
            level_mean_rank: (0..levels)
                .map(|l| sum_rank[l] as f64 / count[l] as f64)
                .collect(),
            capped_blocks: self.capped,
            tree_seconds: self.tree_seconds,
            compress_seconds: self.compress_seconds,
        }
    }

    /// Product with a block of vectors given in the permuted order.
    fn apply_permuted(&self, id: usize, x: &Matrix<T>) -> Matrix<T> {
        match (&self.data[id], self.tree.nodes[id].children) {
            (NodeData::Leaf(d), _) => d.matmul(x),
            (NodeData::Coupling(lr), Some((l, r))) => {
                let nl = self.tree.nodes[l].len;
                let nr = self.tree.nodes[r].len;
                let xl = x.submatrix(0, 0, nl, x.cols());
                let xr = x.submatrix(nl, 0, nr, x.cols());
                let (mut yl, mut yr) = rayon::join(
                    || self.apply_permuted(l, &xl),
                    || self.apply_permuted(r, &xr),
                );
                if lr.rank() > 0 {
                    yl.axpy(T::one(), &lr.u.matmul(&lr.v.tr_matmul(&xr)));
                    yr.axpy(T::one(), &lr.v.matmul(&lr.u.tr_matmul(&xl)));
                }
                let mut y = Matrix::zeros(nl + nr, x.cols());
                y.set_submatrix(0, 0, &yl);
                y.set_submatrix(nl, 0, &yr);
                y
            }
            (NodeData::Coupling(_), None) => unreachable!("coupling stored on a leaf"),
        }
    }

    pub(crate) fn permute(&self, x: &Matrix<T>) -> Matrix<T> {
        x.select_rows(&self.tree.perm)
    }

    pub(crate) fn unpermute(&self, y: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(y.rows(), y.cols());
        for j in 0..y.cols() {
            let src = y.col(j);
            let dst = out.col_mut(j);
            for (t, &p) in self.tree.perm.iter().enumerate() {
                dst[p] = src[t];
            }
        }
        out
    }

    /// `y = H̃ x` for a block of vectors in the original ordering.
    pub fn matvec_block(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.rows() != self.size() {
            return Err(crate::GnhError::shape(format!(
                "block has {} rows, operator has size {}",
                x.rows(),
                self.size()
            )));
        }
        Ok(self.unpermute(&self.apply_permuted(0, &self.permute(x))))
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.matvec_block(&Matrix::column_vector(x))?.into_vec())
    }

    /// Dense expansion of the represented operator.
    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.size();
        let mut out = Matrix::zeros(n, n);
        self.expand(0, &mut out);
        out
    }

    fn expand(&self, id: usize, out: &mut Matrix<T>) {
        let node = &self.tree.nodes[id];
        match (&self.data[id], node.children) {
            (NodeData::Leaf(d), _) => {
                let idx = self.tree.indices(id);
                for (j, &c) in idx.iter().enumerate() {
                    for (i, &r) in idx.iter().enumerate() {
                        out[(r, c)] = d[(i, j)];
                    }
                }
            }
            (NodeData::Coupling(lr), Some((l, r))) => {
                let block = lr.u.matmul_tr(&lr.v);
                let rows = self.tree.indices(l);
                let cols = self.tree.indices(r);
                for (j, &c) in cols.iter().enumerate() {
                    for (i, &rr) in rows.iter().enumerate() {
                        out[(rr, c)] = block[(i, j)];
                        out[(c, rr)] = block[(i, j)];
                    }
                }
                self.expand(l, out);
                self.expand(r, out);
            }
            (NodeData::Coupling(_), None) => unreachable!("coupling stored on a leaf"),
        }
    }
}

impl<T: Scalar> LinearOperator<T> for HMatrix<T> {
    fn dim(&self) -> usize {
        self.size()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matvec(x).expect("vector length matches operator")
    }

    fn apply_block(&self, x: &Matrix<T>) -> Matrix<T> {
        self.matvec_block(x).expect("block rows match operator")
    }
}
