//! Compressed representation of `R_i J_i` for O(d_L n) entry access.
//!
//! For every point `i` and layer `l` the precomputation stores
//! `C_i^l = R_i M_i^L W_L … W_{l+1} M_i^l`, a `d_L × d_l` matrix. The column
//! of `R_i J_i` belonging to weight `k = (l, μ, ν)` is then
//! `v_k(i) = C_i^l(:, μ) · x̄_{i,ν}^{l}`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{GnhError, Result};
use crate::io::{self, Header, PayloadReader};
use crate::linalg::Matrix;
use crate::mlp::{
    Batch, BiasMode, ForwardTrace, LossCurvature, MlpNetwork, WeightIndex, WeightLayout,
};
use crate::scalar::{cast, Scalar};

/// Default ceiling on the C-tensor allocation.
pub const DEFAULT_BYTE_BUDGET: usize = 4 << 30;

/// Instrumented operation counts accumulated by the counted entry paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorkCounter {
    /// Multiply-adds spent forming and contracting v-vectors.
    pub multiply_adds: u64,
    /// Per-point terms evaluated while building a sampling distribution.
    pub distribution_ops: u64,
    /// Multiply-adds spent on drawn samples.
    pub sample_ops: u64,
    /// Binary-search steps spent drawing samples.
    pub search_steps: u64,
}

impl WorkCounter {
    pub fn total(&self) -> u64 {
        self.multiply_adds + self.distribution_ops + self.sample_ops + self.search_steps
    }

    pub fn merge(&mut self, other: &WorkCounter) {
        self.multiply_adds += other.multiply_adds;
        self.distribution_ops += other.distribution_ops;
        self.sample_ops += other.sample_ops;
        self.search_steps += other.search_steps;
    }
}

/// Precomputed C-tensors and column norms. `T` is the arithmetic type, `S`
/// the storage type of the C-tensors.
#[derive(Clone, Debug)]
pub struct GnhPrecomp<T, S = T> {
    layout: WeightLayout,
    bias: BiasMode,
    n: usize,
    d_out: usize,
    dims: Vec<usize>,
    /// Per layer: point `i` occupies `i·d_L·d_l ..`, column-major `d_L × d_l`.
    c_tensors: Vec<Vec<S>>,
    /// Per layer: `x̄^l`, one column per point.
    inputs: Vec<Matrix<T>>,
    /// Per layer: `‖C_i^l(:, μ)‖` at `i·d_l + μ`.
    c_norms: Vec<Vec<T>>,
}

/// Bytes the C-tensors of `net` on `n` points occupy with `S` storage.
pub fn c_tensor_bytes<T: Scalar, S: Scalar>(net: &MlpNetwork<T>, n: usize) -> usize {
    let d_out = net.output_dim();
    net.weights()
        .iter()
        .map(|w| n * d_out * w.rows())
        .sum::<usize>()
        * S::BYTES
}

pub fn precompute<T: Scalar>(
    net: &MlpNetwork<T>,
    batch: &Batch<T>,
    curv: &LossCurvature<T>,
    trace: &ForwardTrace<T>,
) -> Result<GnhPrecomp<T, T>> {
    GnhPrecomp::build(net, batch, curv, trace, DEFAULT_BYTE_BUDGET)
}

impl<T: Scalar, S: Scalar> GnhPrecomp<T, S> {
    pub fn build(
        net: &MlpNetwork<T>,
        batch: &Batch<T>,
        curv: &LossCurvature<T>,
        trace: &ForwardTrace<T>,
        byte_budget: usize,
    ) -> Result<Self> {
        let n = trace.num_points();
        if batch.len() != n || curv.len() != n || trace.num_layers() != net.num_layers() {
            return Err(GnhError::shape("batch, trace and curvature disagree"));
        }
        let bytes = c_tensor_bytes::<T, S>(net, n);
        if bytes > byte_budget {
            return Err(GnhError::Resource(format!(
                "C-tensors need {bytes} bytes, budget is {byte_budget}"
            )));
        }
        let num_layers = net.num_layers();
        let d_out = net.output_dim();
        let dims: Vec<usize> = net.weights().iter().map(|w| w.rows()).collect();
        let data_blocks: Vec<Matrix<T>> = (0..num_layers).map(|l| net.data_block(l)).collect();

        let per_point = |i: usize| -> Vec<Matrix<T>> {
            let mut out = vec![Matrix::zeros(0, 0); num_layers];
            let mut c = curv.r(i).clone();
            scale_columns(&mut c, trace.derivs(num_layers - 1).col(i));
            for l in (0..num_layers).rev() {
                let next = if l > 0 {
                    let mut below = c.matmul(&data_blocks[l]);
                    scale_columns(&mut below, trace.derivs(l - 1).col(i));
                    below
                } else {
                    Matrix::zeros(0, 0)
                };
                out[l] = std::mem::replace(&mut c, next);
            }
            out
        };

        let mut c_tensors: Vec<Vec<S>> = dims
            .iter()
            .map(|&d| Vec::with_capacity(n * d_out * d))
            .collect();
        let mut c_norms: Vec<Vec<T>> = dims.iter().map(|&d| Vec::with_capacity(n * d)).collect();
        const CHUNK: usize = 256;
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            let blocks: Vec<Vec<Matrix<T>>> = (start..end).into_par_iter().map(per_point).collect();
            for point in blocks {
                for (l, c) in point.into_iter().enumerate() {
                    c_tensors[l].extend(c.as_slice().iter().map(|&x| cast::<T, S>(x)));
                    for mu in 0..dims[l] {
                        let col =
                            &c_tensors[l][c_tensors[l].len() - (dims[l] - mu) * d_out..][..d_out];
                        let sq: T = col.iter().map(|&x| cast::<S, T>(x).powi(2)).sum();
                        c_norms[l].push(sq.sqrt());
                    }
                }
            }
        }
        Ok(GnhPrecomp {
            layout: net.layout(),
            bias: net.bias(),
            n,
            d_out,
            dims,
            c_tensors,
            inputs: (0..num_layers)
                .map(|l| trace.layer_input(l).clone())
                .collect(),
            c_norms,
        })
    }

    pub fn num_points(&self) -> usize {
        self.n
    }

    pub fn output_dim(&self) -> usize {
        self.d_out
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn bias(&self) -> BiasMode {
        self.bias
    }

    #[inline]
    pub fn index(&self, flat: usize) -> WeightIndex {
        self.layout.index(flat)
    }

    /// Number of stored C-tensor scalars, `Σ_l n·d_L·d_l`.
    pub fn c_tensor_entries(&self) -> usize {
        self.c_tensors.iter().map(Vec::len).sum()
    }

    pub fn c_tensor_bytes(&self) -> usize {
        self.c_tensor_entries() * S::BYTES
    }

    /// Bytes of everything held: C-tensors, retained inputs and norms.
    pub fn total_bytes(&self) -> usize {
        let inputs: usize = self.inputs.iter().map(|x| x.rows() * x.cols()).sum();
        let norms: usize = self.c_norms.iter().map(Vec::len).sum();
        self.c_tensor_bytes() + (inputs + norms) * T::BYTES
    }

    /// `C_i^l` as a dense `d_L × d_l` matrix.
    pub fn c_tensor(&self, i: usize, l: usize) -> Matrix<T> {
        let size = self.d_out * self.dims[l];
        let block = &self.c_tensors[l][i * size..(i + 1) * size];
        Matrix::from_col_major(
            self.d_out,
            self.dims[l],
            block.iter().map(|&x| cast(x)).collect(),
        )
    }

    /// Retained layer input `x̄^l`.
    pub fn layer_input(&self, l: usize) -> &Matrix<T> {
        &self.inputs[l]
    }

    #[inline]
    fn column(&self, i: usize, l: usize, mu: usize) -> &[S] {
        let off = (i * self.dims[l] + mu) * self.d_out;
        &self.c_tensors[l][off..off + self.d_out]
    }

    #[inline]
    fn scale(&self, i: usize, k: &WeightIndex) -> T {
        self.inputs[k.layer][(k.col, i)]
    }

    /// `v_k(i) = R_i J_i e_k`.
    pub fn v_vector(&self, k: &WeightIndex, i: usize) -> Vec<T> {
        let s = self.scale(i, k);
        self.column(i, k.layer, k.row)
            .iter()
            .map(|&c| cast::<S, T>(c) * s)
            .collect()
    }

    /// `v_k(i)ᵀ v_m(i)`.
    #[inline]
    pub fn v_dot(&self, k: &WeightIndex, m: &WeightIndex, i: usize) -> T {
        let s = self.scale(i, k) * self.scale(i, m);
        if s == T::zero() {
            return T::zero();
        }
        let a = self.column(i, k.layer, k.row);
        let b = self.column(i, m.layer, m.row);
        let mut acc = T::zero();
        for (&x, &y) in a.iter().zip(b) {
            acc += cast::<S, T>(x) * cast::<S, T>(y);
        }
        acc * s
    }

    /// `‖v_k(i)‖ = ‖C_i^l(:, μ)‖ · |x̄_{i,ν}^l|`.
    #[inline]
    pub fn column_norm(&self, k: &WeightIndex, i: usize) -> T {
        self.c_norms[k.layer][i * self.dims[k.layer] + k.row] * self.scale(i, k).abs()
    }

    /// `‖v_k(i)‖` for all points.
    pub fn column_norms(&self, k: &WeightIndex) -> Vec<T> {
        (0..self.n).map(|i| self.column_norm(k, i)).collect()
    }

    /// Exact `H_km = Σ_i v_k(i)ᵀ v_m(i)`.
    pub fn entry_exact(&self, k: usize, m: usize) -> T {
        let (k, m) = (self.index(k), self.index(m));
        (0..self.n).map(|i| self.v_dot(&k, &m, i)).sum()
    }

    pub fn entry_exact_counted(&self, k: usize, m: usize, work: &mut WorkCounter) -> T {
        work.multiply_adds += (self.n * (self.d_out + 2)) as u64;
        self.entry_exact(k, m)
    }

    /// `H_kk = Σ_i ‖v_k(i)‖²`.
    pub fn diag_entry(&self, k: usize) -> T {
        let k = self.index(k);
        (0..self.n).map(|i| self.column_norm(&k, i).powi(2)).sum()
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.num_params())
            .into_par_iter()
            .map(|k| self.diag_entry(k))
            .collect()
    }

    /// Exact sub-block `H(rows, cols)` by stacked v-vector products.
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> Matrix<T> {
        let ri: Vec<WeightIndex> = rows.iter().map(|&k| self.index(k)).collect();
        let ci: Vec<WeightIndex> = cols.iter().map(|&k| self.index(k)).collect();
        let chunk = (1 << 20) / (self.d_out * (rows.len() + cols.len()).max(1));
        let chunk = chunk.clamp(1, self.n);
        let starts: Vec<usize> = (0..self.n).step_by(chunk).collect();
        let partials: Vec<Matrix<T>> = starts
            .into_par_iter()
            .map(|s| {
                let e = (s + chunk).min(self.n);
                let a = self.stacked(&ri, s, e);
                let b = self.stacked(&ci, s, e);
                a.tr_matmul(&b)
            })
            .collect();
        // summed in chunk order so the result does not depend on scheduling
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for p in &partials {
            out.axpy(T::one(), p);
        }
        out
    }

    fn stacked(&self, idx: &[WeightIndex], start: usize, end: usize) -> Matrix<T> {
        let d = self.d_out;
        let mut out = Matrix::zeros((end - start) * d, idx.len());
        for (j, k) in idx.iter().enumerate() {
            let col = out.col_mut(j);
            for i in start..end {
                let s = self.scale(i, k);
                if s == T::zero() {
                    continue;
                }
                let dst = &mut col[(i - start) * d..(i - start + 1) * d];
                for (o, &c) in dst.iter_mut().zip(self.column(i, k.layer, k.row)) {
                    *o = cast::<S, T>(c) * s;
                }
            }
        }
        out
    }

    /// Dense `H` through [`GnhPrecomp::block`].
    pub fn dense(&self) -> Matrix<T> {
        let all: Vec<usize> = (0..self.num_params()).collect();
        self.block(&all, &all)
    }

    /// Serialize together with the content hashes of the checkpoint and batch
    /// this precomputation was built from.
    pub fn encode(&self, checkpoint_key: &str, batch_key: &str) -> Vec<u8> {
        let mut h = Header::new("gnh-precomp", 1);
        h.push("checkpoint-sha256", &[&checkpoint_key]);
        h.push("batch-sha256", &[&batch_key]);
        h.push("storage", &[&S::NAME]);
        h.push("points", &[&self.n]);
        h.push("output-dim", &[&self.d_out]);
        h.push("bias", &[&self.bias]);
        h.push("layers", &[&self.dims.len()]);
        for l in 0..self.dims.len() {
            let (r, c) = self.layout.shape(l);
            h.push("layer", &[&l, &"rows", &r, &"cols", &c]);
        }
        let mut payload = Vec::with_capacity(self.c_tensor_bytes());
        for block in &self.c_tensors {
            for &x in block {
                x.write_le(&mut payload);
            }
        }
        for x in &self.inputs {
            io::push_f64s(&mut payload, x.as_slice());
        }
        io::encode(&h, &payload)
    }

    /// Inverse of [`GnhPrecomp::encode`]; returns the decoded value and the
    /// two stored keys.
    pub fn decode(bytes: &[u8]) -> Result<(Self, String, String)> {
        let (h, payload) = io::decode(bytes, "gnh-precomp")?;
        let storage: String = h.value("storage")?;
        if storage != S::NAME {
            return Err(GnhError::format(
                0,
                format!("stored as {storage}, expected {}", S::NAME),
            ));
        }
        let n: usize = h.value("points")?;
        let d_out: usize = h.value("output-dim")?;
        let bias: BiasMode = h.value::<String>("bias")?.parse()?;
        let mut shapes = Vec::new();
        for (vals, off) in h.all("layer") {
            let bad = || GnhError::format(off, "malformed layer line");
            if vals.len() != 5 {
                return Err(bad());
            }
            shapes.push((
                vals[2].parse::<usize>().map_err(|_| bad())?,
                vals[4].parse::<usize>().map_err(|_| bad())?,
            ));
        }
        if shapes.len() != h.value::<usize>("layers")? {
            return Err(GnhError::format(
                0,
                "layer count does not match layer lines",
            ));
        }
        let base = (bytes.len() - payload.len()) as u64;
        let dims: Vec<usize> = shapes.iter().map(|s| s.0).collect();
        let mut pos = 0usize;
        let mut c_tensors = Vec::new();
        for &d in &dims {
            let len = n * d_out * d * S::BYTES;
            let raw = payload
                .get(pos..pos + len)
                .ok_or_else(|| GnhError::format(base + pos as u64, "payload ends early"))?;
            c_tensors.push(
                raw.chunks_exact(S::BYTES)
                    .map(S::read_le)
                    .collect::<Vec<S>>(),
            );
            pos += len;
        }
        let mut reader = PayloadReader::new(&payload[pos..], base + pos as u64);
        let mut inputs = Vec::new();
        for &(_, c) in &shapes {
            inputs.push(Matrix::from_col_major(c, n, reader.f64s(c * n)?));
        }
        reader.finish()?;
        let c_norms = c_tensors
            .iter()
            .map(|block| {
                block
                    .chunks_exact(d_out)
                    .map(|col| {
                        col.iter()
                            .map(|&x| cast::<S, T>(x).powi(2))
                            .sum::<T>()
                            .sqrt()
                    })
                    .collect()
            })
            .collect();
        let pre = GnhPrecomp {
            layout: WeightLayout::new(shapes),
            bias,
            n,
            d_out,
            dims,
            c_tensors,
            inputs,
            c_norms,
        };
        let ck: String = h.value("checkpoint-sha256")?;
        let bk: String = h.value("batch-sha256")?;
        Ok((pre, ck, bk))
    }

    /// Write a cache file keyed by the network and batch contents.
    pub fn save_cache(
        &self,
        path: impl AsRef<Path>,
        net: &MlpNetwork<T>,
        batch: &Batch<T>,
    ) -> Result<()> {
        let (ck, bk) = cache_keys(net, batch);
        fs::write(path, self.encode(&ck, &bk))?;
        Ok(())
    }

    /// Load a cache file if it exists and was built from exactly `net` and
    /// `batch`; `Ok(None)` when absent or stale.
    pub fn load_cache(
        path: impl AsRef<Path>,
        net: &MlpNetwork<T>,
        batch: &Batch<T>,
    ) -> Result<Option<Self>> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(None);
        }
        let (pre, ck, bk) = Self::decode(&fs::read(path)?)?;
        let (want_ck, want_bk) = cache_keys(net, batch);
        Ok((ck == want_ck && bk == want_bk).then_some(pre))
    }
}

/// SHA-256 content keys of the encoded checkpoint and batch.
pub fn cache_keys<T: Scalar>(net: &MlpNetwork<T>, batch: &Batch<T>) -> (String, String) {
    (
        io::sha256_hex(&io::encode_network(net)),
        io::sha256_hex(&io::encode_batch(batch)),
    )
}

fn scale_columns<T: Scalar>(c: &mut Matrix<T>, d: &[T]) {
    for (j, &s) in d.iter().enumerate() {
        for x in c.col_mut(j) {
            *x *= s;
        }
    }
}
