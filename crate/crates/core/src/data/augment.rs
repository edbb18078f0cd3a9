//! Pixel- and latent-domain augmentation, reproducible from a per-sample seed.

use lcr_tensor::init::{seeded_rng, Rng};
use lcr_tensor::Tensor;
use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::codec::LatentPair;
use crate::error::{LcrError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PixelAugment {
    pub resize_to: usize,
    pub crop: usize,
    pub flip_prob: f64,
    /// Per-channel multiplicative jitter drawn from `[1 − a, 1 + a]`.
    pub jitter: f32,
    pub pca_noise_std: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentAugment {
    pub resize_to: usize,
    pub crop: usize,
    pub flip_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub pixel: PixelAugment,
    pub latent: LatentAugment,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            pixel: PixelAugment {
                resize_to: 256,
                crop: 224,
                flip_prob: 0.5,
                jitter: 0.4,
                pca_noise_std: 0.1,
            },
            latent: LatentAugment {
                resize_to: 32,
                crop: 28,
                flip_prob: 0.5,
            },
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pixel.crop == 0 || self.pixel.crop > self.pixel.resize_to {
            return Err(LcrError::Config(format!(
                "pixel crop {} must lie in 1..={}",
                self.pixel.crop, self.pixel.resize_to
            )));
        }
        if self.latent.crop == 0 || self.latent.crop > self.latent.resize_to {
            return Err(LcrError::Config(format!(
                "latent crop {} must lie in 1..={}",
                self.latent.crop, self.latent.resize_to
            )));
        }
        for p in [self.pixel.flip_prob, self.latent.flip_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(LcrError::Config(format!("flip probability {p} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.pixel.jitter) || !(self.pixel.pca_noise_std >= 0.0) {
            return Err(LcrError::Config("jitter must lie in [0, 1) and PCA noise be nonnegative".into()));
        }
        Ok(())
    }
}

/// Principal axes of the RGB pixel distribution, for lighting noise.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaLighting {
    pub eigenvalues: [f32; 3],
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    pub eigenvectors: [[f32; 3]; 3],
}

impl PcaLighting {
    /// Fits the pixel covariance of `images` (each `[1×]3×H×W`).
    pub fn fit(images: &[Tensor]) -> Result<Self> {
        let mut sum = [0f64; 3];
        let mut outer = [[0f64; 3]; 3];
        let mut count = 0usize;
        for img in images {
            let (c, h, w) = chw(img)?;
            if c != 3 {
                return Err(LcrError::Invalid(format!("expected RGB, got {c} channels")));
            }
            let hw = h * w;
            let d = img.data();
            for i in 0..hw {
                let px = [d[i] as f64, d[hw + i] as f64, d[2 * hw + i] as f64];
                for a in 0..3 {
                    sum[a] += px[a];
                    for b in 0..3 {
                        outer[a][b] += px[a] * px[b];
                    }
                }
            }
            count += hw;
        }
        if count < 2 {
            return Err(LcrError::Data("PCA lighting needs at least two pixels".into()));
        }
        let n = count as f64;
        let cov = Matrix3::from_fn(|a, b| (outer[a][b] - sum[a] * sum[b] / n) / (n - 1.0));
        let eig = SymmetricEigen::new(cov);
        let mut eigenvalues = [0f32; 3];
        let mut eigenvectors = [[0f32; 3]; 3];
        for k in 0..3 {
            eigenvalues[k] = eig.eigenvalues[k].max(0.0) as f32;
            for r in 0..3 {
                eigenvectors[r][k] = eig.eigenvectors[(r, k)] as f32;
            }
        }
        Ok(Self { eigenvalues, eigenvectors })
    }

    /// Per-channel offset `V·(α ⊙ λ)` with `α ~ N(0, std²)`.
    pub fn offset(&self, std: f32, rng: &mut Rng) -> [f32; 3] {
        let alpha: [f32; 3] = std::array::from_fn(|_| {
            let z: f32 = StandardNormal.sample(rng);
            z * std
        });
        std::array::from_fn(|r| {
            (0..3)
                .map(|k| self.eigenvectors[r][k] * alpha[k] * self.eigenvalues[k])
                .sum()
        })
    }
}

fn chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        [1, c, h, w] => Ok((c, h, w)),
        ref s => Err(LcrError::Invalid(format!("expected a single C×H×W image, got {s:?}"))),
    }
}

/// Bilinear resize of a `[1×]C×H×W` tensor to `C×oh×ow`. With
/// `align_corners` the corner samples map onto each other exactly; otherwise
/// pixel centres are aligned.
pub fn resize_bilinear(t: &Tensor, oh: usize, ow: usize, align_corners: bool) -> Result<Tensor> {
    let (c, h, w) = chw(t)?;
    if oh == 0 || ow == 0 || h == 0 || w == 0 {
        return Err(LcrError::Invalid("cannot resize an empty extent".into()));
    }
    if (oh, ow) == (h, w) {
        return Ok(Tensor::new(&[c, h, w], t.data().to_vec())?);
    }
    let coord = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, f32) {
        let src = if align_corners {
            if n_out == 1 {
                0.0
            } else {
                o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            }
        } else {
            ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0)
        };
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let rows: Vec<_> = (0..oh).map(|y| coord(y, oh, h)).collect();
    let cols: Vec<_> = (0..ow).map(|x| coord(x, ow, w)).collect();
    let d = t.data();
    Ok(Tensor::from_fn(&[c, oh, ow], |i| {
        let (ch, y, x) = (i / (oh * ow), (i / ow) % oh, i % ow);
        let (y0, y1, fy) = rows[y];
        let (x0, x1, fx) = cols[x];
        let p = |yy: usize, xx: usize| d[ch * h * w + yy * w + xx];
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }))
}

/// `C×size×size` window at `(top, left)`, optionally mirrored horizontally.
pub fn crop_flip(t: &Tensor, top: usize, left: usize, size: usize, flip: bool) -> Result<Tensor> {
    let (c, h, w) = chw(t)?;
    if top + size > h || left + size > w {
        return Err(LcrError::Invalid(format!(
            "{size}² window at ({top}, {left}) exceeds {h}×{w}"
        )));
    }
    let d = t.data();
    Ok(Tensor::from_fn(&[c, size, size], |i| {
        let (ch, y, x) = (i / (size * size), (i / size) % size, i % size);
        let xx = if flip { size - 1 - x } else { x };
        d[ch * h * w + (top + y) * w + left + xx]
    }))
}

/// Random geometric draw shared by every tensor of one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub flip: bool,
}

impl Window {
    pub fn center(resize_to: usize, crop: usize) -> Self {
        let o = (resize_to - crop) / 2;
        Self { top: o, left: o, flip: false }
    }

    pub fn random(resize_to: usize, crop: usize, flip_prob: f64, rng: &mut Rng) -> Self {
        let top = rng.random_range(0..=resize_to - crop);
        let left = rng.random_range(0..=resize_to - crop);
        Self { top, left, flip: rng.random_bool(flip_prob) }
    }
}

/// `3×crop×crop` training input. `sample_seed = None` selects evaluation
/// mode: resize plus centre crop, no noise. `pca = None` skips lighting noise.
pub fn augment_pixel(
    image: &Tensor,
    cfg: &AugmentationConfig,
    pca: Option<&PcaLighting>,
    sample_seed: Option<u64>,
) -> Result<Tensor> {
    let (c, _, _) = chw(image)?;
    if c != 3 {
        return Err(LcrError::Invalid(format!("expected an RGB image, got {c} channels")));
    }
    let p = &cfg.pixel;
    let resized = resize_bilinear(image, p.resize_to, p.resize_to, false)?;
    let Some(seed) = sample_seed else {
        let win = Window::center(p.resize_to, p.crop);
        return crop_flip(&resized, win.top, win.left, p.crop, false);
    };
    let mut rng = seeded_rng(seed);
    let win = Window::random(p.resize_to, p.crop, p.flip_prob, &mut rng);
    let mut out = crop_flip(&resized, win.top, win.left, p.crop, win.flip)?;
    let scale: [f32; 3] = std::array::from_fn(|_| rng.random_range(1.0 - p.jitter..=1.0 + p.jitter));
    let shift = match pca {
        Some(pca) if p.pca_noise_std > 0.0 => pca.offset(p.pca_noise_std, &mut rng),
        _ => [0.0; 3],
    };
    let plane = p.crop * p.crop;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = i / plane;
        *v = *v * scale[ch] + shift[ch];
    }
    Ok(out)
}

/// Resizes `ŷ` and `σ̂` (corner-aligned bilinear) and applies one shared
/// crop and flip; `sample_seed = None` takes the centre crop.
pub fn augment_latent(
    pair: &LatentPair,
    cfg: &AugmentationConfig,
    sample_seed: Option<u64>,
) -> Result<LatentPair> {
    if pair.y_hat.shape() != pair.sigma_hat.shape() {
        return Err(LcrError::Invalid(format!(
            "ŷ {:?} and σ̂ {:?} differ in shape",
            pair.y_hat.shape(),
            pair.sigma_hat.shape()
        )));
    }
    let l = &cfg.latent;
    let win = match sample_seed {
        Some(seed) => Window::random(l.resize_to, l.crop, l.flip_prob, &mut seeded_rng(seed)),
        None => Window::center(l.resize_to, l.crop),
    };
    let apply = |t: &Tensor| -> Result<Tensor> {
        let r = resize_bilinear(t, l.resize_to, l.resize_to, true)?;
        crop_flip(&r, win.top, win.left, l.crop, win.flip)
    };
    Ok(LatentPair {
        y_hat: apply(&pair.y_hat)?,
        sigma_hat: apply(&pair.sigma_hat)?,
    })
}
