//! Differentiable layer primitives recorded on a [`crate::Tape`].

pub mod activation;
pub mod conv;
pub mod deform;
pub mod elementwise;
pub mod loss;
pub mod norm;
pub mod resample;

pub use activation::{relu, sigmoid};
pub use conv::{conv2d, ConvParams};
pub use deform::{
    bilinear_sample, bilinear_sample_grad, deform_conv_v1, deform_conv_v2, grid_sample,
    offset_predictor, OffsetField,
};
pub use elementwise::{add, concat_channels, mul, scale, slice_channels, split_channels, sum};
pub use loss::{softmax_channels, softmax_cross_entropy};
pub use norm::{batch_norm, BnState, Mode};
pub use resample::{adaptive_avg_pool, broadcast_spatial, resize_bilinear, upsample_bilinear};
