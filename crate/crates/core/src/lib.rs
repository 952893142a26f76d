//! Power-efficient video super-resolution: kernels, model zoo, structural
//! re-parametrization, data pipeline, training and challenge scoring.

pub mod data;
pub mod error;
pub mod eval;
pub mod reparam;
pub mod tensor;
pub mod train;
pub mod weights;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{ConvParams, Tensor};
