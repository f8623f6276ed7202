//! H-GPE: a lightweight vision backbone built from strip-pooling gates,
//! windowed self-attention and inverted residual blocks, together with the
//! tensor kernels, reverse-mode differentiation and complexity accounting
//! needed to build, train and measure it on a CPU.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the two precisions used in practice.

pub mod analysis;
pub mod autodiff;
pub mod backbone;
pub mod blocks;
pub mod error;
pub mod io;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape, Tensor};

/// Double precision tensor, used for gradient checks and tests.
pub type Tensor64 = Tensor<f64>;
/// Single precision tensor, used for inference.
pub type Tensor32 = Tensor<f32>;
