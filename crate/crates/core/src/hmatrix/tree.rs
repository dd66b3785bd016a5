use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::{metric_distance, EntryOracle, Metric};
use crate::error::{GnhError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    /// First position of the node in the permuted order.
    pub start: usize,
    pub len: usize,
    pub children: Option<(usize, usize)>,
    pub level: usize,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Balanced binary partition of `0..N`. Nodes are stored in preorder with
/// the root at id 0; each node owns a contiguous range of `perm`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexTree {
    /// `perm[t]` is the original index placed at position `t`.
    pub perm: Vec<usize>,
    pub nodes: Vec<TreeNode>,
    pub leaf_size: usize,
}

impl IndexTree {
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    /// Original indices covered by a node.
    pub fn indices(&self, id: usize) -> &[usize] {
        &self.perm[self.nodes[id].range()]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf())
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Position of every original index in the permuted order.
    pub fn inverse_perm(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (t, &p) in self.perm.iter().enumerate() {
            inv[p] = t;
        }
        inv
    }

    /// Rebuild from serialized parts, checking the structure.
    pub fn from_parts(perm: Vec<usize>, nodes: Vec<TreeNode>, leaf_size: usize) -> Result<Self> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(GnhError::shape("permutation is not a bijection"));
            }
        }
        if nodes.is_empty() || nodes[0].start != 0 || nodes[0].len != n {
            return Err(GnhError::shape("root must cover every index"));
        }
        for node in &nodes {
            if let Some((l, r)) = node.children {
                let (a, b) = match (nodes.get(l), nodes.get(r)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(GnhError::shape("child id out of range")),
                };
                if a.start != node.start || b.start != a.start + a.len || a.len + b.len != node.len
                {
                    return Err(GnhError::shape("children do not split their parent"));
                }
            }
        }
        Ok(IndexTree {
            perm,
            nodes,
            leaf_size,
        })
    }
}

/// Recursive farthest-point bisection.
///
/// At each node a random start `s` is drawn, `a` is the index farthest from
/// `s`, `b` the index farthest from `a`; indices are ordered by
/// `d(i, a) − d(i, b)` (ties by original index) and the first half forms the
/// left child.
pub fn build_tree<T: Scalar>(
    oracle: &dyn EntryOracle<T>,
    leaf_size: usize,
    metric: Metric,
    seed: u64,
) -> Result<IndexTree> {
    if leaf_size < 2 {
        return Err(GnhError::shape(format!("leaf size {leaf_size} is below 2")));
    }
    let n = oracle.dim();
    let diag: Vec<T> = (0..n).map(|i| oracle.diag(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut nodes = Vec::new();
    split(
        oracle, &diag, metric, &mut rng, &mut perm, 0, n, 0, leaf_size, &mut nodes,
    );
    Ok(IndexTree {
        perm,
        nodes,
        leaf_size,
    })
}

#[allow(clippy::too_many_arguments)]
fn split<T: Scalar>(
    oracle: &dyn EntryOracle<T>,
    diag: &[T],
    metric: Metric,
    rng: &mut ChaCha8Rng,
    perm: &mut [usize],
    start: usize,
    len: usize,
    level: usize,
    leaf_size: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    nodes.push(TreeNode {
        start,
        len,
        children: None,
        level,
    });
    if len <= leaf_size {
        return id;
    }
    let idx = &mut perm[start..start + len];
    idx.sort_unstable();
    let dist_from = |s: usize, idx: &[usize]| -> Vec<T> {
        let row = oracle.block(&[s], idx);
        idx.iter()
            .enumerate()
            .map(|(j, &i)| {
                if i == s {
                    T::zero()
                } else {
                    metric_distance(metric, diag[s], diag[i], row[(0, j)])
                }
            })
            .collect()
    };
    let argmax = |d: &[T]| {
        let mut best = 0;
        for (j, &v) in d.iter().enumerate() {
            if v > d[best] {
                best = j;
            }
        }
        best
    };
    let s0 = idx[rng.random_range(0..len)];
    let a = idx[argmax(&dist_from(s0, idx))];
    let da = dist_from(a, idx);
    let b = idx[argmax(&da)];
    let db = dist_from(b, idx);
    let mut order: Vec<(T, usize)> = (0..len).map(|j| (da[j] - db[j], idx[j])).collect();
    order.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.1.cmp(&y.1))
    });
    for (slot, (_, i)) in idx.iter_mut().zip(order) {
        *slot = i;
    }
    let half = len.div_ceil(2);
    let left = split(
        oracle,
        diag,
        metric,
        rng,
        perm,
        start,
        half,
        level + 1,
        leaf_size,
        nodes,
    );
    let right = split(
        oracle,
        diag,
        metric,
        rng,
        perm,
        start + half,
        len - half,
        level + 1,
        leaf_size,
        nodes,
    );
    nodes[id].children = Some((left, right));
    id
}
