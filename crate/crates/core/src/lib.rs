//! Learned image compression with a scale hyperprior, and texture
//! classification directly on the quantized latents.

pub mod classifiers;
pub mod codec;
pub mod data;
pub mod entropy;
pub mod error;
pub mod metrics;
pub mod pipeline;

pub use error::{LcrError, Result};
