//! PSNR, SSIM, MS-SSIM, bits per pixel, and Top-k accuracy.

use std::io::{BufRead, Write};

use lcr_tensor::{Graph, Tensor, Var};

use crate::error::{LcrError, Result};

pub const SSIM_K1: f32 = 0.01;
pub const SSIM_K2: f32 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_WINDOW_SIGMA: f64 = 1.5;
pub const MS_SSIM_WEIGHTS: [f32; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Floor applied to per-scale MS-SSIM terms before exponentiation; negative
/// contrast-structure values would otherwise make fractional powers undefined.
pub const MS_SSIM_TERM_FLOOR: f32 = 1e-6;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> Vec<f32> {
    let c = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_WINDOW_SIGMA.powi(2))).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| (v / s) as f32).collect()
}

/// Peak signal-to-noise ratio over all pixels and channels jointly.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(x: &Tensor, x_hat: &Tensor, peak: f64) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(LcrError::Invalid(format!(
            "psnr on shapes {:?} and {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let se: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let mse = se / x.numel() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Scales usable for an `h × w` image: every scale must still fit the window.
pub fn ms_ssim_scales(h: usize, w: usize) -> usize {
    let mut side = h.min(w);
    let mut m = 0;
    while m < MS_SSIM_WEIGHTS.len() && side >= SSIM_WINDOW {
        m += 1;
        side /= 2;
    }
    m
}

/// Per-plane means `[N×C]` of the SSIM map and of the contrast-structure map.
fn ssim_terms(g: &mut Graph, x: &Var, y: &Var, taps: &[f32]) -> Result<(Var, Var)> {
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_x = g.separable_blur(x, taps)?;
    let mu_y = g.separable_blur(y, taps)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.separable_blur(&xx, taps)?;
    let e_yy = g.separable_blur(&yy, taps)?;
    let e_xy = g.separable_blur(&xy, taps)?;
    let mu_xx = g.mul(&mu_x, &mu_x)?;
    let mu_yy = g.mul(&mu_y, &mu_y)?;
    let mu_xy = g.mul(&mu_x, &mu_y)?;
    let var_x = g.sub(&e_xx, &mu_xx)?;
    let var_y = g.sub(&e_yy, &mu_yy)?;
    let cov = g.sub(&e_xy, &mu_xy)?;

    let cs_num = g.scale(&cov, 2.0);
    let cs_num = g.add_scalar(&cs_num, c2);
    let cs_den = g.add(&var_x, &var_y)?;
    let cs_den = g.add_scalar(&cs_den, c2);
    let cs = g.div(&cs_num, &cs_den)?;

    let l_num = g.scale(&mu_xy, 2.0);
    let l_num = g.add_scalar(&l_num, c1);
    let l_den = g.add(&mu_xx, &mu_yy)?;
    let l_den = g.add_scalar(&l_den, c1);
    let lum = g.div(&l_num, &l_den)?;
    let map = g.mul(&lum, &cs)?;
    Ok((g.mean_spatial(&map)?, g.mean_spatial(&cs)?))
}

fn check_pair(x: &Var, y: &Var) -> Result<(usize, usize)> {
    if x.shape() != y.shape() || x.shape().len() != 4 {
        return Err(LcrError::Invalid(format!(
            "structural similarity needs two equal N×C×H×W tensors, got {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if h.min(w) < SSIM_WINDOW {
        return Err(LcrError::Invalid(format!(
            "{h}×{w} image is smaller than the {SSIM_WINDOW}-pixel window"
        )));
    }
    Ok((h, w))
}

/// Mean single-scale SSIM over all planes, as a graph scalar.
pub fn ssim_var(g: &mut Graph, x: &Var, y: &Var) -> Result<Var> {
    check_pair(x, y)?;
    let (s, _) = ssim_terms(g, x, y, &gaussian_window())?;
    Ok(g.mean(&s))
}

/// MS-SSIM averaged over all planes, as a differentiable graph scalar. Images
/// too small for five scales use the leading scales with renormalized weights.
pub fn ms_ssim_var(g: &mut Graph, x: &Var, y: &Var) -> Result<Var> {
    let (h, w) = check_pair(x, y)?;
    let m = ms_ssim_scales(h, w);
    let norm: f32 = MS_SSIM_WEIGHTS[..m].iter().sum();
    let taps = gaussian_window();
    let (mut x, mut y) = (x.clone(), y.clone());
    let mut product: Option<Var> = None;
    for (j, &w) in MS_SSIM_WEIGHTS[..m].iter().enumerate() {
        let (s, cs) = ssim_terms(g, &x, &y, &taps)?;
        let term = if j + 1 == m { s } else { cs };
        let term = g.clamp_min(&term, MS_SSIM_TERM_FLOOR);
        let term = g.powf(&term, w / norm);
        product = Some(match product {
            None => term,
            Some(p) => g.mul(&p, &term)?,
        });
        if j + 1 < m {
            x = g.avg_pool2x2(&x)?;
            y = g.avg_pool2x2(&y)?;
        }
    }
    Ok(g.mean(&product.expect("at least one scale")))
}

pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::inference();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    Ok(ssim_var(&mut g, &a, &b)?.value().item() as f64)
}

pub fn ms_ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::inference();
    let (a, b) = (g.constant(x.clone()), g.constant(y.clone()));
    Ok(ms_ssim_var(&mut g, &a, &b)?.value().item() as f64)
}

/// Bits per pixel of a stream over the true image area.
pub fn bpp(stream_bytes: usize, height: usize, width: usize) -> f64 {
    8.0 * stream_bytes as f64 / (height * width) as f64
}

/// Percentage of samples whose label is among the first `k` ranked predictions.
pub fn accuracy_topk(ranked: &[Vec<usize>], labels: &[usize], k: usize) -> Result<f64> {
    if ranked.len() != labels.len() {
        return Err(LcrError::Invalid(format!(
            "{} predictions for {} labels",
            ranked.len(),
            labels.len()
        )));
    }
    if ranked.is_empty() {
        return Err(LcrError::Invalid("accuracy of an empty set".into()));
    }
    if let Some(r) = ranked.iter().find(|r| r.len() < k) {
        return Err(LcrError::Invalid(format!(
            "top-{k} requested but a ranking has only {} entries",
            r.len()
        )));
    }
    let hits = ranked
        .iter()
        .zip(labels)
        .filter(|(r, l)| r[..k].contains(l))
        .count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// One row of per-image quality results.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub image_id: String,
    pub quality_index: u8,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
}

pub const QUALITY_CSV_HEADER: &str = "image_id,quality_index,bpp,psnr_db,ssim,ms_ssim";

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

impl QualityReport {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.image_id,
            self.quality_index,
            fmt_f64(self.bpp),
            fmt_f64(self.psnr_db),
            fmt_f64(self.ssim),
            fmt_f64(self.ms_ssim)
        )
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(LcrError::Data(format!("expected 6 fields in {line:?}")));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| LcrError::Data(format!("bad number {s:?} in {line:?}")))
        };
        Ok(Self {
            image_id: f[0].to_string(),
            quality_index: f[1]
                .parse()
                .map_err(|_| LcrError::Data(format!("bad quality in {line:?}")))?,
            bpp: num(f[2])?,
            psnr_db: num(f[3])?,
            ssim: num(f[4])?,
            ms_ssim: num(f[5])?,
        })
    }
}

pub fn write_quality_csv(out: &mut impl Write, rows: &[QualityReport]) -> Result<()> {
    writeln!(out, "{QUALITY_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv_row())?;
    }
    Ok(())
}

pub fn read_quality_csv(input: impl BufRead) -> Result<Vec<QualityReport>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != QUALITY_CSV_HEADER {
        return Err(LcrError::Data("missing quality CSV header".into()));
    }
    lines
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| QualityReport::from_csv_row(&l?))
        .collect()
}
