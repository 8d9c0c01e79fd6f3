//! Tensor kernels. Each forward kernel has a matching gradient routine used by the tape.

mod conv;
mod elementwise;
mod linear;
mod resample;

pub use conv::{conv2d, conv2d_backward, ConvGeom, ConvGrads};
pub use elementwise::{
    add, concat, l1_diff, l1_diff_backward, mul_channel, mul_channel_backward, narrow, narrow_backward_into, relu,
    sigmoid,
};
pub use linear::{affine, affine_backward, global_avg_pool, global_avg_pool_backward, AffineGrads};
pub use resample::{
    max_pool2, max_pool2_backward, pixel_shuffle, pixel_shuffle_shape, resize_bilinear, resize_bilinear_backward,
    ShuffleDirection,
};
