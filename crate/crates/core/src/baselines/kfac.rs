use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{GnhError, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::mlp::{
    forward, output_hessian, softmax, symmetric_factor, Batch, Loss, MlpNetwork, WeightLayout,
};
use crate::operator::{ApproxOperator, LinearOperator};
use crate::scalar::Scalar;

const CHUNK: usize = 32;

/// How the expectation over predictive labels is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KfacMode {
    /// Closed form: `E[z zᵀ] = ∂²f` at the output.
    Exact,
    /// `samples` labels per data point from the predictive distribution.
    Sampled { samples: usize, seed: u64 },
}

/// Block-diagonal `A_ℓ ⊗ G_ℓ` approximation of the Fisher matrix.
#[derive(Clone, Debug)]
pub struct KfacApprox<T> {
    layout: WeightLayout,
    a: Vec<Matrix<T>>,
    g: Vec<Matrix<T>>,
    mode: KfacMode,
    output_dim: usize,
    shift: T,
}

struct Accum<T> {
    a: Vec<Matrix<T>>,
    g: Vec<Matrix<T>>,
}

impl<T: Scalar> Accum<T> {
    fn zeros(layout: &WeightLayout) -> Self {
        let shapes: Vec<_> = (0..layout.num_layers()).map(|l| layout.shape(l)).collect();
        Accum {
            a: shapes.iter().map(|&(_, c)| Matrix::zeros(c, c)).collect(),
            g: shapes.iter().map(|&(r, _)| Matrix::zeros(r, r)).collect(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (x, y) in self.a.iter_mut().zip(&other.a) {
            x.axpy(T::one(), y);
        }
        for (x, y) in self.g.iter_mut().zip(&other.g) {
            x.axpy(T::one(), y);
        }
        self
    }
}

fn sample_adjoints<T: Scalar>(loss: Loss, out: &[T], k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let d = out.len();
    let mut z = Matrix::zeros(d, k);
    match loss {
        Loss::CrossEntropy => {
            let p = softmax(out);
            for s in 0..k {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut y = d - 1;
                for (j, pj) in p.iter().enumerate() {
                    acc += pj.f64();
                    if u < acc {
                        y = j;
                        break;
                    }
                }
                let col = z.col_mut(s);
                col.copy_from_slice(&p);
                col[y] -= T::one();
            }
        }
        Loss::MeanSquared => {
            for v in z.as_mut_slice() {
                let e: f64 = rng.sample(StandardNormal);
                *v = T::of(-e);
            }
        }
    }
    z
}

/// Accumulate the per-layer second moments over the batch.
pub fn kfac_build<T: Scalar>(
    net: &MlpNetwork<T>,
    batch: &Batch<T>,
    mode: KfacMode,
) -> Result<KfacApprox<T>> {
    let loss = net.loss();
    if let KfacMode::Sampled { samples: 0, .. } = mode {
        return Err(GnhError::shape("K-FAC needs at least one sample per point"));
    }
    let trace = forward(net, batch)?;
    let layout = net.layout();
    let num_layers = net.num_layers();
    let d_out = net.output_dim();
    let data_blocks: Vec<Matrix<T>> = (0..num_layers).map(|l| net.data_block(l)).collect();
    let n = batch.len();
    let mut first_label = vec![T::zero(); d_out];
    first_label[0] = T::one();

    let point = |acc: &mut Accum<T>, i: usize| {
        let out = trace.output().col(i);
        let (mut z, weight) = match mode {
            KfacMode::Exact => (
                symmetric_factor(&output_hessian(loss, out, &first_label)).transpose(),
                T::one(),
            ),
            KfacMode::Sampled { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                (
                    sample_adjoints(loss, out, samples, &mut rng),
                    T::one() / T::from_usize_lossy(samples),
                )
            }
        };
        for l in (0..num_layers).rev() {
            let x = trace.layer_input(l).col(i);
            let xm = Matrix::column_vector(x);
            acc.a[l].axpy(T::one(), &xm.matmul_tr(&xm));
            let derivs = trace.derivs(l);
            let delta = Matrix::from_fn(z.rows(), z.cols(), |r, c| derivs[(r, i)] * z[(r, c)]);
            acc.g[l].axpy(weight, &delta.matmul_tr(&delta));
            if l > 0 {
                z = data_blocks[l].tr_matmul(&delta);
            }
        }
    };
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let partials: Vec<Accum<T>> = starts
        .into_par_iter()
        .map(|s| {
            let mut acc = Accum::zeros(&layout);
            for i in s..(s + CHUNK).min(n) {
                point(&mut acc, i);
            }
            acc
        })
        .collect();
    let acc = partials
        .into_iter()
        .fold(Accum::zeros(&layout), Accum::merge);

    let inv_n = T::one() / T::from_usize_lossy(n);
    let finish = |mut m: Matrix<T>| {
        m.scale_mut(inv_n);
        m.symmetrize();
        m
    };
    Ok(KfacApprox {
        layout,
        a: acc.a.into_iter().map(finish).collect(),
        g: acc.g.into_iter().map(finish).collect(),
        mode,
        output_dim: d_out,
        shift: T::zero(),
    })
}

/// Per layer `(G_ℓ + √λ I)⁻¹ Ḡ_ℓ (A_ℓ + √λ I)⁻¹`, with `Ḡ_ℓ` the layer's
/// slice of `g` reshaped column-major.
pub fn kfac_solve<T: Scalar>(approx: &KfacApprox<T>, g: &[T], lambda: T) -> Result<Vec<T>> {
    if lambda < T::zero() {
        return Err(GnhError::Definiteness("damping must be nonnegative".into()));
    }
    if g.len() != approx.layout.len() {
        return Err(GnhError::shape(format!(
            "vector has length {}, expected {}",
            g.len(),
            approx.layout.len()
        )));
    }
    let damp = lambda.sqrt();
    let mut out = Vec::with_capacity(g.len());
    for l in 0..approx.layout.num_layers() {
        let (r, c) = approx.layout.shape(l);
        let factor = |m: &Matrix<T>, name: &str| {
            let mut d = m.clone();
            d.add_diag(damp);
            Cholesky::new(&d).map_err(|pivot| {
                GnhError::Definiteness(format!(
                    "factor {name} of layer {l} is singular at pivot {pivot}; add damping"
                ))
            })
        };
        let ca = factor(&approx.a[l], "A")?;
        let cg = factor(&approx.g[l], "G")?;
        let gbar = Matrix::from_col_major(r, c, g[approx.layout.layer_range(l)].to_vec());
        let y = cg.solve_matrix(&gbar);
        let x = ca.solve_matrix(&y.transpose()).transpose();
        out.extend_from_slice(x.as_slice());
    }
    Ok(out)
}

impl<T: Scalar> KfacApprox<T> {
    /// Assemble from given factors; `a[l]` is `cols × cols` and `g[l]` is
    /// `rows × rows` for layer `l` of `layout`.
    pub fn from_factors(
        layout: WeightLayout,
        a: Vec<Matrix<T>>,
        g: Vec<Matrix<T>>,
    ) -> Result<Self> {
        if a.len() != layout.num_layers() || g.len() != layout.num_layers() {
            return Err(GnhError::shape("one factor pair per layer is required"));
        }
        for l in 0..layout.num_layers() {
            let (r, c) = layout.shape(l);
            if a[l].shape() != (c, c) || g[l].shape() != (r, r) {
                return Err(GnhError::shape(format!(
                    "factor shapes of layer {l} do not match {r}×{c}"
                )));
            }
        }
        let output_dim = layout.shape(layout.num_layers() - 1).0;
        Ok(KfacApprox {
            layout,
            a,
            g,
            mode: KfacMode::Exact,
            output_dim,
            shift: T::zero(),
        })
    }

    pub fn num_layers(&self) -> usize {
        self.a.len()
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    /// Input second moment of layer `l`.
    pub fn a(&self, l: usize) -> &Matrix<T> {
        &self.a[l]
    }

    /// Back-propagated gradient second moment of layer `l`.
    pub fn g(&self, l: usize) -> &Matrix<T> {
        &self.g[l]
    }

    pub fn mode(&self) -> KfacMode {
        self.mode
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    /// Damping used by the operator and its inverse.
    pub fn with_shift(mut self, shift: T) -> Self {
        self.shift = shift;
        self
    }

    /// Back-propagations per data point.
    pub fn backprops_per_point(&self) -> usize {
        match self.mode {
            KfacMode::Exact => self.output_dim,
            KfacMode::Sampled { samples, .. } => samples,
        }
    }

    /// `k / N`, the cost-based compression figure.
    pub fn backprop_rate(&self) -> f64 {
        self.backprops_per_point() as f64 / self.layout.len() as f64
    }

    /// `A_ℓ ⊗ G_ℓ` as a dense block.
    pub fn dense_block(&self, l: usize) -> Matrix<T> {
        let (a, g) = (&self.a[l], &self.g[l]);
        let (r, c) = (g.rows(), a.rows());
        Matrix::from_fn(r * c, r * c, |p, q| a[(p / r, q / r)] * g[(p % r, q % r)])
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.layout.len();
        let mut d = Matrix::zeros(n, n);
        for l in 0..self.num_layers() {
            let off = self.layout.offset(l);
            d.set_submatrix(off, off, &self.dense_block(l));
        }
        d.add_diag(self.shift);
        d
    }
}

impl<T: Scalar> LinearOperator<T> for KfacApprox<T> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.layout.len(), "vector length matches operator");
        let mut out = Vec::with_capacity(x.len());
        for l in 0..self.num_layers() {
            let (r, c) = self.layout.shape(l);
            let xm = Matrix::from_col_major(r, c, x[self.layout.layer_range(l)].to_vec());
            // (A ⊗ G) vec(X) = vec(G X A)
            let mut y = self.g[l].matmul(&xm).matmul(&self.a[l]);
            if self.shift != T::zero() {
                y.axpy(self.shift, &xm);
            }
            out.extend_from_slice(y.as_slice());
        }
        out
    }
}

struct KfacInverse<'a, T>(&'a KfacApprox<T>);

impl<T: Scalar> LinearOperator<T> for KfacInverse<'_, T> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        kfac_solve(self.0, x, self.0.shift).expect("factors checked when the inverse was created")
    }
}

impl<T: Scalar> ApproxOperator<T> for KfacApprox<T> {
    /// True factor storage `Σ_ℓ (d_in² + d_out²)`.
    fn stored_entries(&self) -> usize {
        self.a
            .iter()
            .chain(&self.g)
            .map(|m| m.rows() * m.cols())
            .sum()
    }

    fn inverse(&self) -> Result<Box<dyn LinearOperator<T> + '_>> {
        kfac_solve(self, &vec![T::zero(); self.dim()], self.shift)?;
        Ok(Box::new(KfacInverse(self)))
    }
}
