//! Analysis / synthesis transforms, the hyper path, and real-bitstream
//! encode/decode.

use std::sync::atomic::{AtomicUsize, Ordering};

use lcr_tensor::init::{seeded_rng, Rng};
use lcr_tensor::layers::{Conv2d, ConvTranspose2d, Gdn};
use lcr_tensor::ops::gaussian_symbol_bits;
use lcr_tensor::{Checkpoint, Graph, ParamId, ParamStore, Tensor, Var};

use super::config::{CodecConfig, HYPER_STRIDE, LATENT_STRIDE, P_MIN};
use super::quantize::quantize;
use crate::entropy::{self, BitstreamHeader};
use crate::error::{LcrError, Result};

/// Quantized latent `ŷ` and its predicted scales `σ̂`, both `N×C×h×w`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub y_hat: Tensor,
    pub sigma_hat: Tensor,
}

/// Everything produced while encoding one image.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub latents: LatentPair,
    pub z_hat: Tensor,
}

pub struct Codec {
    config: CodecConfig,
    store: ParamStore,
    analysis: Vec<Conv2d>,
    analysis_gdn: Vec<Gdn>,
    synthesis: Vec<ConvTranspose2d>,
    synthesis_igdn: Vec<Gdn>,
    hyper_analysis: Vec<Conv2d>,
    hyper_synthesis_up: Vec<ConvTranspose2d>,
    hyper_synthesis_out: Conv2d,
    z_scale: ParamId,
    synthesis_calls: AtomicUsize,
}

impl Codec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let (f, c, h) = (config.filters, config.latent_channels, config.hyper_channels);
        let widths = [3, f, f, f, c];
        let analysis = (0..4)
            .map(|i| Conv2d::new(&mut store, &format!("ga.conv{i}"), widths[i], widths[i + 1], 5, 2, 2, true, rng))
            .collect();
        let analysis_gdn = (0..3)
            .map(|i| Gdn::new(&mut store, &format!("ga.gdn{i}"), f, false))
            .collect();
        let synthesis: Vec<ConvTranspose2d> = (0..4)
            .map(|i| {
                ConvTranspose2d::new(
                    &mut store,
                    &format!("gs.deconv{i}"),
                    widths[4 - i],
                    widths[3 - i],
                    5,
                    2,
                    2,
                    1,
                    true,
                    rng,
                )
            })
            .collect();
        let synthesis_igdn = (0..3)
            .map(|i| Gdn::new(&mut store, &format!("gs.igdn{i}"), f, true))
            .collect();
        let hyper_analysis = vec![
            Conv2d::new(&mut store, "ha.conv0", c, h, 3, 1, 1, true, rng),
            Conv2d::new(&mut store, "ha.conv1", h, h, 5, 2, 2, true, rng),
            Conv2d::new(&mut store, "ha.conv2", h, h, 5, 2, 2, true, rng),
        ];
        let hyper_synthesis_up = vec![
            ConvTranspose2d::new(&mut store, "hs.deconv0", h, h, 5, 2, 2, 1, true, rng),
            ConvTranspose2d::new(&mut store, "hs.deconv1", h, h, 5, 2, 2, 1, true, rng),
        ];
        let hyper_synthesis_out = Conv2d::new(&mut store, "hs.conv2", h, c, 3, 1, 1, true, rng);
        // Small output weights start every σ̂ near floor + 1.
        let w = hyper_synthesis_out.weight;
        let scaled = store.value(w).map(|v| v * 0.1);
        store.set_value(w, scaled)?;
        // Inverse GDN amplifies large activations, so the synthesis chain
        // starts at half the fan-in scale; the output bias starts at mid-gray.
        for d in &synthesis {
            let d: &ConvTranspose2d = d;
            let scaled = store.value(d.weight).map(|v| v * 0.5);
            store.set_value(d.weight, scaled)?;
        }
        if let Some(b) = synthesis.last().and_then(|d: &ConvTranspose2d| d.bias) {
            store.set_value(b, Tensor::full(&[3], 0.5))?;
        }
        let z_scale = store.add("z_prior.log_scale", Tensor::zeros(&[h]), true);
        Ok(Self {
            config,
            store,
            analysis,
            analysis_gdn,
            synthesis,
            synthesis_igdn,
            hyper_analysis,
            hyper_synthesis_up,
            hyper_synthesis_out,
            z_scale,
            synthesis_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Number of synthesis-transform evaluations since construction.
    pub fn synthesis_calls(&self) -> usize {
        self.synthesis_calls.load(Ordering::SeqCst)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store, self.config.to_preamble())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = CodecConfig::from_preamble(&ckpt.preamble)?;
        let mut codec = Self::new(config, 0)?;
        ckpt.load_into(&mut codec.store)?;
        Ok(codec)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(self.checkpoint().save(path)?)
    }

    pub fn analysis(&self, g: &mut Graph, x: &Var) -> Result<Var> {
        if x.shape().len() != 4 || x.shape()[1] != 3 {
            return Err(LcrError::Invalid(format!(
                "analysis expects N×3×H×W RGB input, got {:?}",
                x.shape()
            )));
        }
        let mut h = x.clone();
        for (i, conv) in self.analysis.iter().enumerate() {
            h = conv.forward(g, &self.store, &h)?;
            if let Some(gdn) = self.analysis_gdn.get(i) {
                h = gdn.forward(g, &self.store, &h)?;
            }
        }
        Ok(h)
    }

    /// Unclamped synthesis; training uses this directly.
    pub fn synthesis(&self, g: &mut Graph, y: &Var) -> Result<Var> {
        self.synthesis_calls.fetch_add(1, Ordering::SeqCst);
        let mut h = y.clone();
        for (i, deconv) in self.synthesis.iter().enumerate() {
            h = deconv.forward(g, &self.store, &h)?;
            if let Some(igdn) = self.synthesis_igdn.get(i) {
                h = igdn.forward(g, &self.store, &h)?;
            }
        }
        Ok(h)
    }

    pub fn hyper_analysis(&self, g: &mut Graph, y: &Var) -> Result<Var> {
        let mut h = g.abs(y);
        for (i, conv) in self.hyper_analysis.iter().enumerate() {
            h = conv.forward(g, &self.store, &h)?;
            if i + 1 < self.hyper_analysis.len() {
                h = g.relu(&h);
            }
        }
        Ok(h)
    }

    /// Scales for a latent of spatial size `latent_hw`; always ≥ the floor.
    pub fn hyper_synthesis(&self, g: &mut Graph, z: &Var, latent_hw: (usize, usize)) -> Result<Var> {
        let mut h = z.clone();
        for deconv in &self.hyper_synthesis_up {
            h = deconv.forward(g, &self.store, &h)?;
            h = g.relu(&h);
        }
        h = self.hyper_synthesis_out.forward(g, &self.store, &h)?;
        let (lh, lw) = latent_hw;
        if h.shape()[2] < lh || h.shape()[3] < lw {
            return Err(LcrError::Invalid(format!(
                "hyper-synthesis output {:?} cannot cover a {lh}×{lw} latent",
                h.shape()
            )));
        }
        if h.shape()[2] != lh || h.shape()[3] != lw {
            h = g.crop(&h, 0, 0, lh, lw)?;
        }
        let e = g.exp(&h);
        Ok(g.add_scalar(&e, self.config.sigma_floor))
    }

    /// Per-channel scales of the factorized hyper-latent prior.
    pub fn z_scales(&self, g: &mut Graph) -> Var {
        let raw = g.param(&self.store, self.z_scale);
        let e = g.exp(&raw);
        g.add_scalar(&e, self.config.sigma_floor)
    }

    /// Rounded latents and scales for an input whose sides are multiples of 64.
    pub fn latents(&self, x: &Tensor) -> Result<(LatentPair, Tensor)> {
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let y = self.analysis(&mut g, &xv)?;
        let z = self.hyper_analysis(&mut g, &y)?;
        let z_hat = quantize(z.value());
        let zv = g.constant(z_hat.clone());
        let (lh, lw) = (y.shape()[2], y.shape()[3]);
        let sigma = self.hyper_synthesis(&mut g, &zv, (lh, lw))?;
        Ok((
            LatentPair {
                y_hat: quantize(y.value()),
                sigma_hat: sigma.into_tensor(),
            },
            z_hat,
        ))
    }

    /// Synthesis at inference: output clamped to `[0, 1]`.
    pub fn reconstruct(&self, y_hat: &Tensor) -> Result<Tensor> {
        let mut g = Graph::inference();
        let y = g.constant(y_hat.clone());
        Ok(self.synthesis(&mut g, &y)?.value().map(|v| v.clamp(0.0, 1.0)))
    }

    /// Model rate of a latent pair in bits (continuous scales).
    pub fn latent_bits(pair: &LatentPair) -> f64 {
        rate_bits(pair.y_hat.data(), pair.sigma_hat.data())
    }

    /// Model rate of a hyper-latent in bits under the per-channel prior.
    pub fn hyper_bits(&self, z_hat: &Tensor) -> Result<f64> {
        let sigmas = self.z_sigma_map(z_hat)?;
        Ok(rate_bits(z_hat.data(), &sigmas))
    }

    fn z_sigma_map(&self, z_hat: &Tensor) -> Result<Vec<f32>> {
        let (n, c, h, w) = z_hat.dims4()?;
        let mut g = Graph::inference();
        let scales = self.z_scales(&mut g);
        if c != scales.shape()[0] {
            return Err(LcrError::Invalid(format!(
                "hyper-latent has {c} channels, prior has {}",
                scales.shape()[0]
            )));
        }
        let mut out = Vec::with_capacity(n * c * h * w);
        for _ in 0..n {
            for &s in scales.value().data() {
                out.extend(std::iter::repeat_n(s, h * w));
            }
        }
        Ok(out)
    }

    /// Encodes one `1×3×H×W` image in `[0, 1]` into a complete `.lsc` stream.
    pub fn encode(&self, image: &Tensor) -> Result<Encoded> {
        let (n, c, h, w) = image.dims4()?;
        if n != 1 || c != 3 {
            return Err(LcrError::Invalid(format!(
                "encode expects a single RGB image, got {:?}",
                image.shape()
            )));
        }
        let padded = pad_to_multiple(image, HYPER_STRIDE)?;
        let (latents, z_hat) = self.latents(&padded)?;
        let z_tables = entropy::tables_for_scales(&self.z_sigma_map(&z_hat)?);
        let z_bytes = entropy::encode_symbols(&entropy::to_symbols(z_hat.data()), &z_tables);
        let y_tables = entropy::tables_for_scales(latents.sigma_hat.data());
        let y_bytes =
            entropy::encode_symbols(&entropy::to_symbols(latents.y_hat.data()), &y_tables);
        let header = BitstreamHeader {
            quality_index: self.config.quality_index,
            true_height: h as u32,
            true_width: w as u32,
            latent_channels: self.config.latent_channels as u16,
            hyper_channels: self.config.hyper_channels as u16,
            z_len: 0,
            y_len: 0,
        };
        Ok(Encoded {
            bytes: entropy::serialize(&header, &z_bytes, &y_bytes),
            latents,
            z_hat,
        })
    }

    /// Parses a stream and entropy-decodes `ẑ`, `σ̂`, and `ŷ` without running
    /// the synthesis transform.
    pub fn decode_latents(&self, bytes: &[u8]) -> Result<(BitstreamHeader, LatentPair)> {
        let (header, z_bytes, y_bytes) = entropy::parse(bytes)?;
        if header.latent_channels as usize != self.config.latent_channels
            || header.hyper_channels as usize != self.config.hyper_channels
        {
            return Err(LcrError::Invalid(format!(
                "stream has {}/{} channels, codec has {}/{}",
                header.latent_channels,
                header.hyper_channels,
                self.config.latent_channels,
                self.config.hyper_channels
            )));
        }
        let (ph, pw) = (
            padded_extent(header.true_height as usize),
            padded_extent(header.true_width as usize),
        );
        if ph == 0 || pw == 0 {
            return Err(LcrError::Invalid("stream records an empty image".into()));
        }
        let hc = self.config.hyper_channels;
        let z_shape = [1, hc, ph / HYPER_STRIDE, pw / HYPER_STRIDE];
        let z_sig = self.z_sigma_map(&Tensor::zeros(&z_shape))?;
        let z_vals = entropy::decode_symbols(z_bytes, &entropy::tables_for_scales(&z_sig))?;
        let z_hat = Tensor::new(&z_shape, z_vals.iter().map(|&v| v as f32).collect())?
            .into_integral()?;
        let (lh, lw) = (ph / LATENT_STRIDE, pw / LATENT_STRIDE);
        let mut g = Graph::inference();
        let zv = g.constant(z_hat);
        let sigma_hat = self.hyper_synthesis(&mut g, &zv, (lh, lw))?.into_tensor();
        let y_vals =
            entropy::decode_symbols(y_bytes, &entropy::tables_for_scales(sigma_hat.data()))?;
        let y_hat = Tensor::new(sigma_hat.shape(), y_vals.iter().map(|&v| v as f32).collect())?
            .into_integral()?;
        Ok((header, LatentPair { y_hat, sigma_hat }))
    }

    /// Full decode: latents, synthesis, crop to the recorded size.
    pub fn decode(&self, bytes: &[u8]) -> Result<(BitstreamHeader, Tensor)> {
        let (header, pair) = self.decode_latents(bytes)?;
        let full = self.reconstruct(&pair.y_hat)?;
        let img = crop_tensor(&full, header.true_height as usize, header.true_width as usize)?;
        Ok((header, img))
    }

    pub(crate) fn rng_for(seed: u64, stream: u64) -> Rng {
        seeded_rng(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// `Σ −log2 P(v | σ)` with each probability clamped to `[P_MIN, 1 − P_MIN]`.
pub fn rate_bits(values: &[f32], sigmas: &[f32]) -> f64 {
    values
        .iter()
        .zip(sigmas)
        .map(|(&v, &s)| gaussian_symbol_bits(v as f64, s as f64, P_MIN))
        .sum()
}

pub fn padded_extent(n: usize) -> usize {
    n.div_ceil(HYPER_STRIDE) * HYPER_STRIDE
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads the bottom and right edges up to the next multiple.
pub fn pad_to_multiple(x: &Tensor, multiple: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in 0..n * c {
        for r in 0..ph {
            let row = &src[(plane * h + reflect(r, h)) * w..][..w];
            out.extend((0..pw).map(|col| row[reflect(col, w)]));
        }
    }
    Ok(Tensor::new(&[n, c, ph, pw], out)?)
}

/// Top-left `h × w` window of every plane.
pub fn crop_tensor(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, xh, xw) = x.dims4()?;
    if h > xh || w > xw {
        return Err(LcrError::Invalid(format!("cannot crop {xh}×{xw} to {h}×{w}")));
    }
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in x.data().chunks(xh * xw) {
        for r in 0..h {
            out.extend_from_slice(&plane[r * xw..r * xw + w]);
        }
    }
    Ok(Tensor::new(&[n, c, h, w], out)?)
}
