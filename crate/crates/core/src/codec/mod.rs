//! Scale-hyperprior codec: transforms, quantization, rate model, training.

pub mod config;
pub mod model;
pub mod quantize;
pub mod train;

pub use config::{lambda_for_quality, CodecConfig, HYPER_STRIDE, LATENT_STRIDE, P_MIN, SIGMA_FLOOR};
pub use model::{crop_tensor, pad_to_multiple, padded_extent, rate_bits, Codec, Encoded, LatentPair};
pub use quantize::{noise_proxy, quantize};
pub use train::{batch_objective, rd_loss, train_codec, train_codec_with, CodecEpochLog, CodecTrainConfig};
