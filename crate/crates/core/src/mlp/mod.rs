//! Network definition, forward pass, loss curvature, back-propagation and
//! the matrix-free Gauss-Newton matvec.

mod backprop;
mod batch;
mod cg;
mod curvature;
mod forward;
mod layout;
mod network;
mod oracle;

pub use backprop::{
    gnh_matvec, gnh_matvec_workspace, gradient, gradient_with_trace, loss_and_gradient,
    GradientVector, MatvecWorkspace,
};
pub use batch::Batch;
pub use cg::{cg_solve, CgResult};
pub(crate) use curvature::softmax;
pub use curvature::{
    loss_curvature, mean_loss, output_gradient, output_hessian, point_loss, symmetric_factor,
    LossCurvature,
};
pub use forward::{forward, forward_inputs, ForwardTrace};
pub use layout::{WeightIndex, WeightLayout};
pub use network::{Activation, BiasMode, Loss, MlpNetwork};
pub use oracle::{
    dense_from_trace, dense_gnh_oracle, dense_gnh_oracle_with_limit, DEFAULT_DENSE_LIMIT,
};
