//! Rotation-invariant image classification built from polar resampling and
//! convolutions that wrap around the angle axis.
//!
//! An image is resampled onto a polar grid ([`polar::to_polar`]) so that
//! rotating it becomes a cyclic shift of rows. Convolutions with
//! [`conv::PadMode::Cylindrical`] wrap that axis, which keeps their outputs
//! equivariant to the shift; [`winograd`] provides the same operation via
//! F(2x2, 3x3) minimal filtering.

pub mod conv;
pub mod dataset;
mod error;
pub mod network;
pub mod pnm;
pub mod polar;
pub mod receptive;
pub mod tensor;
pub mod winograd;

pub use conv::{
    conv2d, conv2d_backward, conv2d_direct, ConvAlgorithm, ConvSpec, FilterBank, PadMode,
};
pub use error::{Error, Result};
pub use network::{convert_to_cycnn, count_params, Layer, Model};
pub use polar::{to_polar, ImageGrid, PolarConfig, PolarMode};
pub use tensor::{cyclic_shift_rows, Scalar, Shape, Tensor};
pub use winograd::conv2d_winograd;
