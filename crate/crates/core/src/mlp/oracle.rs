use rayon::prelude::*;

use crate::error::{GnhError, Result};
use crate::linalg::Matrix;
use crate::mlp::{
    forward, gnh_matvec, loss_curvature, Batch, ForwardTrace, LossCurvature, MlpNetwork,
};
use crate::scalar::Scalar;

/// Largest `N` materialized by [`dense_gnh_oracle`] unless overridden.
pub const DEFAULT_DENSE_LIMIT: usize = 20_000;

/// Dense `H` assembled column by column from `H e_m`.
pub fn dense_gnh_oracle<T: Scalar>(net: &MlpNetwork<T>, batch: &Batch<T>) -> Result<Matrix<T>> {
    dense_gnh_oracle_with_limit(net, batch, DEFAULT_DENSE_LIMIT)
}

pub fn dense_gnh_oracle_with_limit<T: Scalar>(
    net: &MlpNetwork<T>,
    batch: &Batch<T>,
    limit: usize,
) -> Result<Matrix<T>> {
    let n_params = net.num_params();
    if n_params > limit {
        return Err(GnhError::Resource(format!(
            "dense GNH with N = {n_params} exceeds the limit of {limit}"
        )));
    }
    let trace = forward(net, batch)?;
    let curv = loss_curvature(net, &trace, batch)?;
    dense_from_trace(net, &trace, &curv)
}

pub fn dense_from_trace<T: Scalar>(
    net: &MlpNetwork<T>,
    trace: &ForwardTrace<T>,
    curv: &LossCurvature<T>,
) -> Result<Matrix<T>> {
    let n_params = net.num_params();
    let columns: Vec<Vec<T>> = (0..n_params)
        .into_par_iter()
        .map(|m| {
            let mut e = vec![T::zero(); n_params];
            e[m] = T::one();
            gnh_matvec(net, trace, curv, &e)
        })
        .collect::<Result<_>>()?;
    let mut h = Matrix::zeros(n_params, n_params);
    for (m, c) in columns.into_iter().enumerate() {
        h.col_mut(m).copy_from_slice(&c);
    }
    Ok(h)
}
