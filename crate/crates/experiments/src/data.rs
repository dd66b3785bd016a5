//! Dataset ingestion and synthetic problems.
//!
//! MNIST is read from the IDX files (`0x00000803` images, `0x00000801`
//! labels, big-endian dimensions, unsigned bytes). CIFAR-10 is read from the
//! binary batches: records of one label byte followed by 3072 pixel bytes.
//! Pixels are scaled to `[0, 1]`.

use std::fs;
use std::path::Path;

use gnh_core::mlp::{Batch, MlpNetwork};
use gnh_core::{Activation, BiasMode, GnhError, Loss, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IDX_IMAGES: u32 = 0x0000_0803;
pub const IDX_LABELS: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 1 + 3072;
const CLASSES: usize = 10;

/// Decoded IDX file of unsigned bytes.
#[derive(Clone, Debug)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
    /// Byte offset of the first data byte.
    pub data_offset: usize,
}

pub fn parse_idx(bytes: &[u8], magic: u32) -> gnh_core::Result<Idx> {
    if bytes.len() < 4 {
        return Err(GnhError::format(
            bytes.len() as u64,
            "file ends inside the magic number",
        ));
    }
    let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if found != magic {
        return Err(GnhError::format(
            0,
            format!("magic 0x{found:08x}, expected 0x{magic:08x}"),
        ));
    }
    let ndim = (magic & 0xff) as usize;
    let data_offset = 4 + 4 * ndim;
    if bytes.len() < data_offset {
        return Err(GnhError::format(
            bytes.len() as u64,
            "file ends inside the dimension header",
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()) as usize)
        .collect();
    if dims[1..].contains(&0) {
        return Err(GnhError::format(8, "zero-sized item dimension"));
    }
    let total: usize = dims.iter().product();
    let have = bytes.len() - data_offset;
    if have < total {
        return Err(GnhError::format(
            bytes.len() as u64,
            format!("truncated: {total} data bytes expected, {have} present"),
        ));
    }
    if have > total {
        return Err(GnhError::format(
            (data_offset + total) as u64,
            "trailing bytes after the data",
        ));
    }
    Ok(Idx {
        dims,
        data: bytes[data_offset..].to_vec(),
        data_offset,
    })
}

pub fn read_idx(path: impl AsRef<Path>, magic: u32) -> gnh_core::Result<Idx> {
    parse_idx(&fs::read(path)?, magic)
}

/// Seeded choice of `n` of `total` points in increasing order, or all of them
/// when `n` is 0 or at least `total`.
pub fn subsample_indices(total: usize, n: usize, seed: u64) -> Vec<usize> {
    if n == 0 || n >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, n).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestOptions {
    /// Labels equal the inputs instead of one-hot classes.
    pub autoencoder: bool,
    /// Number of points kept (0 keeps all).
    pub n: usize,
    pub seed: u64,
}

/// MNIST images (and labels, unless building an autoencoder batch).
pub fn ingest_mnist(
    images: impl AsRef<Path>,
    labels: Option<&Path>,
    opts: IngestOptions,
) -> gnh_core::Result<Batch<f64>> {
    let img = read_idx(images, IDX_IMAGES)?;
    let count = img.dims[0];
    let dim = img.dims[1] * img.dims[2];
    let classes = match (opts.autoencoder, labels) {
        (true, _) => None,
        (false, Some(path)) => {
            let lab = read_idx(path, IDX_LABELS)?;
            if lab.dims[0] != count {
                return Err(GnhError::shape(format!(
                    "{count} images but {} labels",
                    lab.dims[0]
                )));
            }
            if let Some(pos) = lab.data.iter().position(|&c| c as usize >= CLASSES) {
                return Err(GnhError::format(
                    (lab.data_offset + pos) as u64,
                    format!("label {} is not a digit", lab.data[pos]),
                ));
            }
            Some(lab.data)
        }
        (false, None) => return Err(GnhError::shape("a classifier batch needs a label file")),
    };
    let keep = subsample_indices(count, opts.n, opts.seed);
    let inputs = pixels(&img.data, dim, dim, &keep, 0);
    match classes {
        None => Batch::new(inputs.clone(), inputs),
        Some(c) => {
            let chosen: Vec<usize> = keep.iter().map(|&i| c[i] as usize).collect();
            Batch::from_classes(inputs, &chosen, CLASSES)
        }
    }
}

/// CIFAR-10 binary batches concatenated in the given order.
pub fn ingest_cifar<P: AsRef<Path>>(
    files: &[P],
    opts: IngestOptions,
) -> gnh_core::Result<Batch<f64>> {
    if files.is_empty() {
        return Err(GnhError::shape("no CIFAR-10 batch files given"));
    }
    let mut records = Vec::new();
    for f in files {
        let bytes = fs::read(f)?;
        let whole = bytes.len() - bytes.len() % CIFAR_RECORD;
        if whole != bytes.len() {
            return Err(GnhError::format(
                whole as u64,
                format!(
                    "truncated record: {} bytes left, records are {CIFAR_RECORD}",
                    bytes.len() - whole
                ),
            ));
        }
        for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
            if rec[0] as usize >= CLASSES {
                return Err(GnhError::format(
                    (r * CIFAR_RECORD) as u64,
                    format!("label {} is not a CIFAR-10 class", rec[0]),
                ));
            }
        }
        records.extend_from_slice(&bytes);
    }
    let count = records.len() / CIFAR_RECORD;
    let keep = subsample_indices(count, opts.n, opts.seed);
    let inputs = pixels(&records, CIFAR_RECORD, CIFAR_RECORD - 1, &keep, 1);
    if opts.autoencoder {
        return Batch::new(inputs.clone(), inputs);
    }
    let classes: Vec<usize> = keep
        .iter()
        .map(|&i| records[i * CIFAR_RECORD] as usize)
        .collect();
    Batch::from_classes(inputs, &classes, CLASSES)
}

fn pixels(bytes: &[u8], stride: usize, dim: usize, keep: &[usize], skip: usize) -> Matrix<f64> {
    let mut m = Matrix::zeros(dim, keep.len());
    for (j, &i) in keep.iter().enumerate() {
        let src = &bytes[i * stride + skip..i * stride + skip + dim];
        for (dst, &b) in m.col_mut(j).iter_mut().zip(src) {
            *dst = b as f64 / 255.0;
        }
    }
    m
}

/// Layer widths and model choices of a generated problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
    pub loss: Loss,
    pub bias: BiasMode,
    pub n: usize,
}

/// Random network with `1/√fan-in` Gaussian weights and standard normal
/// inputs. Cross-entropy labels are uniform classes, squared-loss targets
/// standard normal.
pub fn gen_synthetic(
    spec: &SyntheticSpec,
    seed: u64,
) -> gnh_core::Result<(MlpNetwork<f64>, Batch<f64>)> {
    if spec.n == 0 {
        return Err(GnhError::shape("a batch needs at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = MlpNetwork::random(
        &spec.sizes,
        &[spec.activation],
        spec.loss,
        spec.bias,
        &mut rng,
    )?;
    let d_out = net.output_dim();
    let inputs = Matrix::gaussian(spec.sizes[0], spec.n, &mut rng);
    let batch = match spec.loss {
        Loss::MeanSquared => Batch::new(inputs, Matrix::gaussian(d_out, spec.n, &mut rng))?,
        Loss::CrossEntropy => {
            let classes: Vec<usize> = (0..spec.n).map(|_| rng.random_range(0..d_out)).collect();
            Batch::from_classes(inputs, &classes, d_out)?
        }
    };
    Ok((net, batch))
}
