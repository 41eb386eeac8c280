//! A small semantic-segmentation framework built around atrous, deformable
//! and modulated deformable convolution.
//!
//! Everything numeric is generic over [`Scalar`] so the same graph can run
//! in single precision for training and in double precision for gradient
//! checking. The aliases at the bottom of this file name the concrete
//! instantiations used by the tools.

pub mod backbone;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ops;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{backward, Tape, Var};
pub use tensor::{Labels, Shape, Tensor};

/// Reserved label value excluded from the loss and from every metric.
pub const IGNORE_INDEX: u8 = 255;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type SegModel32 = model::SegModel<f32>;
pub type SegModel64 = model::SegModel<f64>;
