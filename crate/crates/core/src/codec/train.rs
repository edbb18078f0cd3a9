//! Rate-distortion training with the additive-noise quantization proxy.

use lcr_tensor::{Graph, ParamStore, Sgd, SgdConfig, Tensor, Var};
use rand::seq::SliceRandom;

use super::config::P_MIN;
use super::model::Codec;
use super::quantize::noise_proxy;
use crate::error::{LcrError, Result};
use crate::metrics::ms_ssim_var;

/// `bits / num_pixels + λ·(1 − MS-SSIM(x, x̂))`.
pub fn rd_loss(
    g: &mut Graph,
    x: &Var,
    x_hat: &Var,
    total_bits: &Var,
    num_pixels: usize,
    lambda: f32,
) -> Result<Var> {
    let bpp = g.scale(total_bits, 1.0 / num_pixels as f32);
    if lambda == 0.0 {
        return Ok(bpp);
    }
    let ms = ms_ssim_var(g, x, x_hat)?;
    let dist = g.scale(&ms, -lambda);
    let dist = g.add_scalar(&dist, lambda);
    Ok(g.add(&bpp, &dist)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for CodecTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            learning_rate: 0.03,
            momentum: 0.9,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

/// Mean per-batch statistics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct CodecEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub bpp: f64,
    pub ms_ssim: f64,
}

/// Loss, estimated bpp, and MS-SSIM of one batch, recorded on `g`.
pub fn batch_objective(
    codec: &Codec,
    g: &mut Graph,
    batch: &Tensor,
    rng: &mut lcr_tensor::init::Rng,
) -> Result<(Var, f64, f64)> {
    let (n, _, h, w) = batch.dims4()?;
    let x = g.constant(batch.clone());
    let y = codec.analysis(g, &x)?;
    let z = codec.hyper_analysis(g, &y)?;
    let z_tilde = noise_proxy(g, &z, rng);
    let sigma = codec.hyper_synthesis(g, &z_tilde, (y.shape()[2], y.shape()[3]))?;
    let y_tilde = noise_proxy(g, &y, rng);
    let x_hat = codec.synthesis(g, &y_tilde)?;

    let y_bits = g.gaussian_bits(&y_tilde, &sigma, P_MIN)?;
    let zs = codec.z_scales(g);
    let z_shape: [usize; 4] = z_tilde.shape().try_into().expect("4-d");
    let z_sigma = g.broadcast_channels(&zs, &z_shape)?;
    let z_bits = g.gaussian_bits(&z_tilde, &z_sigma, P_MIN)?;
    let bits = g.add(&y_bits, &z_bits)?;
    let pixels = n * h * w;
    let loss = rd_loss(g, &x, &x_hat, &bits, pixels, codec.config().lambda)?;
    let mut probe = Graph::inference();
    let ms = {
        let a = probe.constant(batch.clone());
        let b = probe.constant(x_hat.value().clone());
        ms_ssim_var(&mut probe, &a, &b)?.value().item() as f64
    };
    Ok((loss, bits.value().item() as f64 / pixels as f64, ms))
}

/// Trains on `images` (each `1×3×H×W` or `3×H×W`, all the same size).
/// A non-finite loss or gradient restores the parameters from the end of the
/// last completed epoch and returns [`LcrError::Numeric`].
pub fn train_codec(
    codec: &mut Codec,
    images: &[Tensor],
    cfg: &CodecTrainConfig,
) -> Result<Vec<CodecEpochLog>> {
    train_codec_with(codec, images, cfg, |_| {})
}

pub fn train_codec_with(
    codec: &mut Codec,
    images: &[Tensor],
    cfg: &CodecTrainConfig,
    mut on_epoch: impl FnMut(&CodecEpochLog),
) -> Result<Vec<CodecEpochLog>> {
    if images.is_empty() {
        return Err(LcrError::Data("no training images".into()));
    }
    if cfg.batch_size == 0 {
        return Err(LcrError::Config("batch size must be positive".into()));
    }
    let mut sgd = Sgd::new(SgdConfig {
        learning_rate: cfg.learning_rate,
        momentum: cfg.momentum,
        weight_decay: 0.0,
        schedule: vec![],
    })?;
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut last_good: ParamStore = codec.store().clone();
    for epoch in 0..cfg.epochs {
        let mut rng = Codec::rng_for(cfg.seed, epoch as u64);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut bpp_sum, mut ms_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<Tensor> = chunk.iter().map(|&i| images[i].clone()).collect();
            let batch = Tensor::stack(&items)?;
            let mut g = Graph::new();
            let step = batch_objective(codec, &mut g, &batch, &mut rng).and_then(|(loss, bpp, ms)| {
                let l = loss.value().item() as f64;
                if !l.is_finite() {
                    return Err(LcrError::Numeric(format!("non-finite loss in epoch {}", epoch + 1)));
                }
                g.backward(&loss, codec.store_mut())?;
                if let Some(c) = cfg.clip_norm {
                    codec.store_mut().clip_grad_norm(c);
                }
                sgd.step(codec.store_mut())?;
                Ok((l, bpp, ms))
            });
            match step {
                Ok((l, bpp, ms)) => {
                    loss_sum += l;
                    bpp_sum += bpp;
                    ms_sum += ms;
                    batches += 1;
                }
                Err(e) => {
                    *codec.store_mut() = last_good;
                    codec.store_mut().zero_grads();
                    return Err(match e {
                        LcrError::Tensor(lcr_tensor::TensorError::NonFinite(m)) => LcrError::Numeric(m),
                        other => other,
                    });
                }
            }
        }
        let log = CodecEpochLog {
            epoch: epoch + 1,
            loss: loss_sum / batches as f64,
            bpp: bpp_sum / batches as f64,
            ms_ssim: ms_sum / batches as f64,
        };
        on_epoch(&log);
        logs.push(log);
        last_good = codec.store().clone();
    }
    Ok(logs)
}
