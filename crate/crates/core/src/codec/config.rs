use lcr_tensor::Preamble;

use crate::error::{LcrError, Result};

/// Floor of every predicted scale: `σ = SIGMA_FLOOR + exp(·)`.
pub const SIGMA_FLOOR: f32 = 0.05;

/// Per-symbol probability floor of the rate model.
pub const P_MIN: f64 = 1.0 / 65536.0;

/// Spatial reduction of the analysis transform.
pub const LATENT_STRIDE: usize = 16;

/// Spatial reduction from image to hyper-latent; inputs are padded to a
/// multiple of this.
pub const HYPER_STRIDE: usize = 64;

/// Weight of the `1 − MS-SSIM` term at quality level `q` (1..=8):
/// `2.4 · 2^(q−1)`. Since the distortion term is bounded by 1, smaller
/// weights make an empty latent the rate-distortion optimum.
pub fn lambda_for_quality(q: u8) -> f32 {
    2.4 * 2f32.powi(q as i32 - 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    /// Width `F` of the hidden transform layers.
    pub filters: usize,
    /// Latent channels `C`.
    pub latent_channels: usize,
    pub hyper_channels: usize,
    pub quality_index: u8,
    pub lambda: f32,
    pub sigma_floor: f32,
}

impl CodecConfig {
    /// `F = 32, C = 32`, 16 hyper channels.
    pub fn toy(quality_index: u8) -> Self {
        Self::with_widths(32, 32, 16, quality_index)
    }

    /// `F = 192, C = 192`, 128 hyper channels.
    pub fn full(quality_index: u8) -> Self {
        Self::with_widths(192, 192, 128, quality_index)
    }

    pub fn with_widths(filters: usize, latent: usize, hyper: usize, quality_index: u8) -> Self {
        Self {
            filters,
            latent_channels: latent,
            hyper_channels: hyper,
            quality_index,
            lambda: lambda_for_quality(quality_index),
            sigma_floor: SIGMA_FLOOR,
        }
    }

    pub fn preset(name: &str, quality_index: u8) -> Result<Self> {
        let c = match name {
            "toy" => Self::toy(quality_index),
            "full" => Self::full(quality_index),
            other => return Err(LcrError::Config(format!("unknown codec preset {other:?}"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=8).contains(&self.quality_index) {
            return Err(LcrError::Config(format!(
                "quality index {} outside 1..=8",
                self.quality_index
            )));
        }
        if self.filters == 0 || self.latent_channels == 0 || self.hyper_channels == 0 {
            return Err(LcrError::Config("codec widths must be positive".into()));
        }
        if self.latent_channels > u16::MAX as usize || self.hyper_channels > u16::MAX as usize {
            return Err(LcrError::Config("channel counts must fit in 16 bits".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LcrError::Config(format!("lambda {} is not a nonnegative number", self.lambda)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(LcrError::Config("sigma floor must be positive".into()));
        }
        Ok(())
    }

    pub fn to_preamble(&self) -> Preamble {
        let mut p = Preamble::new();
        p.insert("kind".into(), "codec".into());
        p.insert("filters".into(), self.filters.to_string());
        p.insert("latent_channels".into(), self.latent_channels.to_string());
        p.insert("hyper_channels".into(), self.hyper_channels.to_string());
        p.insert("quality_index".into(), self.quality_index.to_string());
        p.insert("lambda".into(), self.lambda.to_string());
        p.insert("sigma_floor".into(), self.sigma_floor.to_string());
        p
    }

    pub fn from_preamble(p: &Preamble) -> Result<Self> {
        if p.get("kind").map(String::as_str) != Some("codec") {
            return Err(LcrError::Config("checkpoint does not hold a codec".into()));
        }
        fn field<T: std::str::FromStr>(p: &Preamble, key: &str) -> Result<T> {
            p.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| LcrError::Config(format!("codec checkpoint lacks a valid {key}")))
        }
        let c = Self {
            filters: field(p, "filters")?,
            latent_channels: field(p, "latent_channels")?,
            hyper_channels: field(p, "hyper_channels")?,
            quality_index: field(p, "quality_index")?,
            lambda: field(p, "lambda")?,
            sigma_floor: field(p, "sigma_floor")?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_ladder_doubles() {
        assert!((lambda_for_quality(1) - 2.4).abs() < 1e-6);
        for q in 1..8 {
            assert!((lambda_for_quality(q + 1) / lambda_for_quality(q) - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn preamble_round_trip() {
        let c = CodecConfig::toy(5);
        assert_eq!(CodecConfig::from_preamble(&c.to_preamble()).unwrap(), c);
    }

    #[test]
    fn invalid_quality_rejected() {
        assert!(CodecConfig::preset("toy", 0).is_err());
        assert!(CodecConfig::preset("toy", 9).is_err());
        assert!(CodecConfig::preset("huge", 1).is_err());
    }
}
