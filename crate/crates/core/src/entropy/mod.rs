//! Lossless coding of quantized latents: CDF tables, the range coder, and
//! the `.lsc` container.

pub mod bitstream;
pub mod cdf;
pub mod coder;

pub use bitstream::{parse, serialize, BitstreamHeader, HEADER_LEN};
pub use cdf::{build_cdf, grid_tables, snap_sigma, table_for_sigma, CdfTable, SUPPORT_RADIUS};
pub use coder::{decode_symbols, encode_symbols, model_bits};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EntropyError {
    #[error("stream is truncated")]
    Truncated,
    #[error("stream length mismatch: expected {expected} bytes, found {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
}

/// Tables for a latent field: one per element, from its scale.
pub fn tables_for_scales(sigmas: &[f32]) -> Vec<&'static CdfTable> {
    sigmas.iter().map(|&s| table_for_sigma(s)).collect()
}

/// Converts a whole-valued f32 slice to coder symbols.
pub fn to_symbols(values: &[f32]) -> Vec<i32> {
    values.iter().map(|&v| v as i32).collect()
}
