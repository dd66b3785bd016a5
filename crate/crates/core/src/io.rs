//! Self-describing binary containers.
//!
//! Every file starts with an ASCII header of newline-terminated lines:
//!
//! ```text
//! <magic> <version>
//! <key> <value> ...
//! ...
//! payload <byte-count>
//! end
//! ```
//!
//! followed by exactly `<byte-count>` payload bytes. Floating point payloads
//! are little-endian IEEE-754 `f64`; integer payloads are little-endian
//! `u64`.
//!
//! Network checkpoints (`gnh-network 1`) carry:
//!
//! ```text
//! layers <L>
//! layer <l> rows <r> cols <c> activation <name>     (one per layer)
//! loss <mean-squared|cross-entropy>
//! bias <none|augmented>
//! ```
//!
//! with `Σ r·c` weights in layer order, column-major within a layer.
//!
//! Batches (`gnh-batch 1`) carry `points`, `input-dim` and `label-dim`; the
//! payload holds the inputs (one point after another) followed by the labels.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::mlp::{Activation, Batch, BiasMode, Loss, MlpNetwork};
use crate::scalar::Scalar;

/// Parsed header: key followed by its whitespace separated values.
#[derive(Clone, Debug, Default)]
pub struct Header {
    pub magic: String,
    pub version: u32,
    pub lines: Vec<(String, Vec<String>, u64)>,
}

impl Header {
    pub fn new(magic: &str, version: u32) -> Self {
        Header {
            magic: magic.to_string(),
            version,
            lines: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, values: &[&dyn std::fmt::Display]) {
        self.lines.push((
            key.to_string(),
            values.iter().map(|v| v.to_string()).collect(),
            0,
        ));
    }

    pub fn get(&self, key: &str) -> Result<&[String]> {
        self.lines
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_slice())
            .ok_or_else(|| GnhError::format(0, format!("missing header key `{key}`")))
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = (&'a [String], u64)> + 'a {
        self.lines
            .iter()
            .filter(move |(k, _, _)| k == key)
            .map(|(_, v, off)| (v.as_slice(), *off))
    }

    pub fn value<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let (vals, off) = self
            .lines
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, o)| (v, *o))
            .ok_or_else(|| GnhError::format(0, format!("missing header key `{key}`")))?;
        vals.first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| GnhError::format(off, format!("bad value for `{key}`")))
    }
}

pub fn encode(header: &Header, payload: &[u8]) -> Vec<u8> {
    let mut text = format!("{} {}\n", header.magic, header.version);
    for (k, vals, _) in &header.lines {
        text.push_str(k);
        for v in vals {
            text.push(' ');
            text.push_str(v);
        }
        text.push('\n');
    }
    text.push_str(&format!("payload {}\nend\n", payload.len()));
    let mut out = text.into_bytes();
    out.extend_from_slice(payload);
    out
}

/// Split a container into header and payload, validating magic and length.
pub fn decode<'a>(bytes: &'a [u8], magic: &str) -> Result<(Header, &'a [u8])> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(String, u64)> {
        let start = *pos;
        let rel = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| GnhError::format(start as u64, "unterminated header line"))?;
        *pos = start + rel + 1;
        let line = std::str::from_utf8(&bytes[start..start + rel])
            .map_err(|_| GnhError::format(start as u64, "header is not valid UTF-8"))?;
        Ok((line.to_string(), start as u64))
    };
    let (first, _) = next_line(&mut pos)?;
    let mut parts = first.split_whitespace();
    let found = parts.next().unwrap_or("");
    if found != magic {
        return Err(GnhError::format(
            0,
            format!("expected `{magic}`, found `{found}`"),
        ));
    }
    let version = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| GnhError::format(0, "missing version"))?;
    let mut header = Header::new(magic, version);
    let mut payload_len: Option<usize> = None;
    loop {
        let (line, off) = next_line(&mut pos)?;
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else { continue };
        match key {
            "end" => break,
            "payload" => {
                payload_len = Some(
                    parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| GnhError::format(off, "bad payload length"))?,
                );
            }
            _ => header
                .lines
                .push((key.to_string(), parts.map(str::to_string).collect(), off)),
        }
    }
    let len = payload_len.ok_or_else(|| GnhError::format(pos as u64, "missing payload length"))?;
    let available = bytes.len() - pos;
    if available < len {
        return Err(GnhError::format(
            bytes.len() as u64,
            format!("payload truncated: expected {len} bytes, found {available}"),
        ));
    }
    if available > len {
        return Err(GnhError::format(
            (pos + len) as u64,
            "trailing bytes after payload",
        ));
    }
    Ok((header, &bytes[pos..]))
}

/// Sequential little-endian reader over a payload.
pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8], base: u64) -> Self {
        PayloadReader {
            bytes,
            pos: 0,
            base,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GnhError::format(
                self.base + self.pos as u64,
                "payload ends early",
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn f64s<T: Scalar>(&mut self, count: usize) -> Result<Vec<T>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| T::of(f64::read_le(c)))
            .collect())
    }

    pub fn u64s(&mut self, count: usize) -> Result<Vec<u64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("chunk of eight")))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(GnhError::format(
                self.base + self.pos as u64,
                "unused payload bytes",
            ));
        }
        Ok(())
    }
}

pub fn push_f64s<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    out.reserve(values.len() * 8);
    for &v in values {
        out.extend_from_slice(&v.f64().to_le_bytes());
    }
}

pub fn push_u64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = u64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn payload_offset(bytes: &[u8], payload: &[u8]) -> u64 {
    (bytes.len() - payload.len()) as u64
}

pub fn encode_network<T: Scalar>(net: &MlpNetwork<T>) -> Vec<u8> {
    let mut h = Header::new("gnh-network", 1);
    h.push("layers", &[&net.num_layers()]);
    for (l, w) in net.weights().iter().enumerate() {
        h.push(
            "layer",
            &[
                &l,
                &"rows",
                &w.rows(),
                &"cols",
                &w.cols(),
                &"activation",
                &net.activations()[l],
            ],
        );
    }
    h.push("loss", &[&net.loss()]);
    h.push("bias", &[&net.bias()]);
    let mut payload = Vec::new();
    for w in net.weights() {
        push_f64s(&mut payload, w.as_slice());
    }
    encode(&h, &payload)
}

pub fn decode_network<T: Scalar>(bytes: &[u8]) -> Result<MlpNetwork<T>> {
    let (h, payload) = decode(bytes, "gnh-network")?;
    let num_layers: usize = h.value("layers")?;
    let loss: Loss = h
        .get("loss")?
        .first()
        .map(|s| s.parse())
        .transpose()?
        .ok_or_else(|| GnhError::format(0, "empty loss"))?;
    let bias: BiasMode = h
        .get("bias")?
        .first()
        .map(|s| s.parse())
        .transpose()?
        .ok_or_else(|| GnhError::format(0, "empty bias"))?;
    let mut shapes = Vec::new();
    let mut acts = Vec::new();
    for (vals, off) in h.all("layer") {
        let bad = || GnhError::format(off, "malformed layer line");
        if vals.len() != 7 || vals[1] != "rows" || vals[3] != "cols" || vals[5] != "activation" {
            return Err(bad());
        }
        let l: usize = vals[0].parse().map_err(|_| bad())?;
        if l != shapes.len() {
            return Err(GnhError::format(off, "layers out of order"));
        }
        let r: usize = vals[2].parse().map_err(|_| bad())?;
        let c: usize = vals[4].parse().map_err(|_| bad())?;
        shapes.push((r, c));
        acts.push(vals[6].parse::<Activation>().map_err(|_| bad())?);
    }
    if shapes.len() != num_layers {
        return Err(GnhError::format(
            0,
            "layer count does not match layer lines",
        ));
    }
    let mut reader = PayloadReader::new(payload, payload_offset(bytes, payload));
    let mut weights = Vec::with_capacity(num_layers);
    for &(r, c) in &shapes {
        weights.push(Matrix::from_col_major(r, c, reader.f64s(r * c)?));
    }
    reader.finish()?;
    MlpNetwork::new(weights, acts, loss, bias)
}

pub fn save_network<T: Scalar>(net: &MlpNetwork<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_network(net))?;
    Ok(())
}

pub fn load_network<T: Scalar>(path: impl AsRef<Path>) -> Result<MlpNetwork<T>> {
    decode_network(&fs::read(path)?)
}

pub fn encode_batch<T: Scalar>(batch: &Batch<T>) -> Vec<u8> {
    let mut h = Header::new("gnh-batch", 1);
    h.push("points", &[&batch.len()]);
    h.push("input-dim", &[&batch.input_dim()]);
    h.push("label-dim", &[&batch.label_dim()]);
    let mut payload = Vec::new();
    push_f64s(&mut payload, batch.inputs().as_slice());
    push_f64s(&mut payload, batch.labels().as_slice());
    encode(&h, &payload)
}

pub fn decode_batch<T: Scalar>(bytes: &[u8]) -> Result<Batch<T>> {
    let (h, payload) = decode(bytes, "gnh-batch")?;
    let n: usize = h.value("points")?;
    let d_in: usize = h.value("input-dim")?;
    let d_out: usize = h.value("label-dim")?;
    let mut reader = PayloadReader::new(payload, payload_offset(bytes, payload));
    let inputs = Matrix::from_col_major(d_in, n, reader.f64s(d_in * n)?);
    let labels = Matrix::from_col_major(d_out, n, reader.f64s(d_out * n)?);
    reader.finish()?;
    Batch::new(inputs, labels)
}

pub fn save_batch<T: Scalar>(batch: &Batch<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_batch(batch))?;
    Ok(())
}

pub fn load_batch<T: Scalar>(path: impl AsRef<Path>) -> Result<Batch<T>> {
    decode_batch(&fs::read(path)?)
}
