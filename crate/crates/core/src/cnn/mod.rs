//! From-scratch convolutional pixel classifier.

pub mod adam;
pub mod layers;
mod model;
mod tensor;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use model::{CnnConfig, CnnModel, ConvBlock, EpochRecord, Precision};
pub use tensor::{Scalar, Tensor};
