//! Differentiable layer kernels on `[N, C, H, W]` tensors.

mod activation;
mod conv;
mod pool;

pub use activation::{
    l2_normalize_scale, l2_normalize_scale_backward, relu, relu_backward, softmax, softmax_backward, L2_NORM_EPS,
};
pub use conv::{conv2d, conv2d_backward, conv2d_forward, conv2d_grad, ConvGeometry, ConvGrads, ConvParams};
pub use pool::{maxpool2d, maxpool2d_backward, PoolGeometry};
