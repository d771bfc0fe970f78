//! Training-free high-resolution diffusion machinery at desk scale.
//!
//! Neighborhood patch attention, latent frequency mixing, structure
//! guidance and a staged upscaling pipeline around a seeded toy denoiser,
//! plus an analytic cost model. Numeric code is generic over [`Scalar`];
//! the aliases below fix it to `f64`.

pub mod attention;
pub mod diffusion;
pub mod error;
pub mod flops;
pub mod guidance;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::SpatialTensor<f64>;
pub type Tokens = attention::TokenMatrix<f64>;
pub type Context = attention::ContextTokens<f64>;
pub type Codec = guidance::ToyCodec<f64>;
pub type Denoiser = diffusion::ToyDenoiser<f64>;
pub type Run = diffusion::PipelineRun<f64>;
