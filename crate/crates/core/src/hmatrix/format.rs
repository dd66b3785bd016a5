//! `gnh-hmatrix 1` container.
//!
//! Header lines: `size`, `leaf-size`, `max-rank`, `tol`, `lambda`,
//! `preset`, `nodes`, then one `node <id> start <s> len <n> children <l> <r>
//! rank <k> dropped <σ>` line per node in preorder (`children - -` for
//! leaves, rank 0).
//!
//! Payload: the permutation as `size` little-endian `u64`, then per node in
//! id order either the `len × len` leaf block or `U` (`len_l × k`) followed
//! by `V` (`len_r × k`), all column-major `f64`.

use std::fs;
use std::path::Path;

use super::compress::{HMatrix, LowRank, NodeData};
use super::tree::{IndexTree, TreeNode};
use super::Settings;
use crate::error::{GnhError, Result};
use crate::io::{self, Header, PayloadReader};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub fn encode_hmatrix<T: Scalar>(hm: &HMatrix<T>) -> Vec<u8> {
    let s = hm.settings();
    let tree = hm.tree();
    let mut h = Header::new("gnh-hmatrix", 1);
    h.push("size", &[&hm.size()]);
    h.push("leaf-size", &[&s.leaf_size]);
    h.push("max-rank", &[&s.max_rank]);
    h.push("tol", &[&s.tol]);
    h.push("lambda", &[&hm.lambda().f64()]);
    h.push("preset", &[&s.name]);
    h.push("nodes", &[&tree.nodes.len()]);
    for (id, node) in tree.nodes.iter().enumerate() {
        let (l, r) = match node.children {
            Some((l, r)) => (l.to_string(), r.to_string()),
            None => ("-".to_string(), "-".to_string()),
        };
        let rank = hm.rank(id).unwrap_or(0);
        h.push(
            "node",
            &[
                &id,
                &"start",
                &node.start,
                &"len",
                &node.len,
                &"children",
                &l,
                &r,
                &"rank",
                &rank,
                &"dropped",
                &hm.dropped(id).f64(),
            ],
        );
    }
    let mut payload = Vec::new();
    io::push_u64s(&mut payload, tree.perm.iter().map(|&p| p as u64));
    for id in 0..tree.nodes.len() {
        match hm.node_data(id) {
            NodeData::Leaf(d) => io::push_f64s(&mut payload, d.as_slice()),
            NodeData::Coupling(lr) => {
                io::push_f64s(&mut payload, lr.u.as_slice());
                io::push_f64s(&mut payload, lr.v.as_slice());
            }
        }
    }
    io::encode(&h, &payload)
}

pub fn decode_hmatrix<T: Scalar>(bytes: &[u8]) -> Result<HMatrix<T>> {
    let (h, payload) = io::decode(bytes, "gnh-hmatrix")?;
    let n: usize = h.value("size")?;
    let settings = Settings {
        name: h.value("preset")?,
        leaf_size: h.value("leaf-size")?,
        max_rank: h.value("max-rank")?,
        tol: h.value("tol")?,
    };
    let lambda = T::of(h.value::<f64>("lambda")?);
    let count: usize = h.value("nodes")?;
    let mut nodes = Vec::with_capacity(count);
    let mut ranks = Vec::with_capacity(count);
    let mut levels: Vec<usize> = Vec::with_capacity(count);
    let mut dropped = Vec::with_capacity(count);
    for (vals, off) in h.all("node") {
        let bad = || GnhError::format(off, "malformed node line");
        if vals.len() != 12
            || vals[1] != "start"
            || vals[3] != "len"
            || vals[5] != "children"
            || vals[8] != "rank"
            || vals[10] != "dropped"
        {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad());
        if num(&vals[0])? != nodes.len() {
            return Err(GnhError::format(off, "nodes out of order"));
        }
        let children = match (vals[6].as_str(), vals[7].as_str()) {
            ("-", "-") => None,
            (l, r) => Some((num(l)?, num(r)?)),
        };
        nodes.push(TreeNode {
            start: num(&vals[2])?,
            len: num(&vals[4])?,
            children,
            level: 0,
        });
        ranks.push(num(&vals[9])?);
        dropped.push(T::of(vals[11].parse::<f64>().map_err(|_| bad())?));
        levels.push(0);
    }
    if nodes.len() != count {
        return Err(GnhError::format(0, "node count does not match node lines"));
    }
    for id in 0..nodes.len() {
        if let Some((l, r)) = nodes[id].children {
            if l <= id || r <= id || l >= count || r >= count {
                return Err(GnhError::format(
                    0,
                    format!("node {id} has invalid children"),
                ));
            }
            levels[l] = levels[id] + 1;
            levels[r] = levels[id] + 1;
        }
    }
    for (node, level) in nodes.iter_mut().zip(&levels) {
        node.level = *level;
    }
    let base = (bytes.len() - payload.len()) as u64;
    let mut reader = PayloadReader::new(payload, base);
    let perm: Vec<usize> = reader.u64s(n)?.into_iter().map(|p| p as usize).collect();
    let mut data = Vec::with_capacity(count);
    for (id, node) in nodes.iter().enumerate() {
        match node.children {
            None => data.push(NodeData::Leaf(Matrix::from_col_major(
                node.len,
                node.len,
                reader.f64s(node.len * node.len)?,
            ))),
            Some((l, r)) => {
                let k = ranks[id];
                let (nl, nr) = (nodes[l].len, nodes[r].len);
                let u = Matrix::from_col_major(nl, k, reader.f64s(nl * k)?);
                let v = Matrix::from_col_major(nr, k, reader.f64s(nr * k)?);
                data.push(NodeData::Coupling(LowRank { u, v }));
            }
        }
    }
    reader.finish()?;
    let tree = IndexTree::from_parts(perm, nodes, settings.leaf_size)
        .map_err(|e| GnhError::format(0, format!("inconsistent tree: {e}")))?;
    Ok(HMatrix::from_parts(tree, data, dropped, settings, lambda))
}

pub fn save_hmatrix<T: Scalar>(hm: &HMatrix<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_hmatrix(hm))?;
    Ok(())
}

pub fn load_hmatrix<T: Scalar>(path: impl AsRef<Path>) -> Result<HMatrix<T>> {
    decode_hmatrix(&fs::read(path)?)
}
