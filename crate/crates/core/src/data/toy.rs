//! Procedural texture classes for desk-scale experiments.

use std::f32::consts::PI;
use std::path::Path;

use lcr_tensor::init::{seeded_rng, Rng};
use lcr_tensor::Tensor;
use rand::Rng as _;

use super::image_io::save_rgb;
use super::manifest::{DatasetManifest, Record, Split};
use crate::error::{LcrError, Result};

const FAMILIES: [&str; 3] = ["grating", "noise", "checker"];

/// Class names: texture family plus class index, e.g. `grating_0`, `noise_1`.
pub fn toy_class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes)
        .map(|c| format!("{}_{c}", FAMILIES[c % FAMILIES.len()]))
        .collect()
}

fn tint(class: usize, num_classes: usize) -> [f32; 3] {
    // Evenly spaced hues, moderately saturated.
    let hue = class as f32 / num_classes.max(1) as f32;
    let mut rgb = [0.0; 3];
    for (k, v) in rgb.iter_mut().enumerate() {
        let phase = 2.0 * PI * (hue + k as f32 / 3.0);
        *v = 0.7 + 0.3 * phase.cos();
    }
    rgb
}

fn bilinear_sample(grid: &[f32], g: usize, u: f32, v: f32) -> f32 {
    let (x, y) = (u * (g - 1) as f32, v * (g - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(g - 1), (y0 + 1).min(g - 1));
    let (fx, fy) = (x - x0 as f32, y - y0 as f32);
    let top = grid[y0 * g + x0] * (1.0 - fx) + grid[y0 * g + x1] * fx;
    let bot = grid[y1 * g + x0] * (1.0 - fx) + grid[y1 * g + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

fn pattern(class: usize, num_classes: usize, size: usize, rng: &mut Rng) -> Vec<f32> {
    let n = size * size;
    match class % FAMILIES.len() {
        0 => {
            // Oriented sinusoid; each grating class owns an orientation band.
            let band = PI * (class / FAMILIES.len()) as f32 / num_classes.div_ceil(3) as f32;
            let theta = band + rng.random_range(-0.2..0.2);
            let freq = rng.random_range(6.0..12.0) / size as f32;
            let phase = rng.random_range(0.0..2.0 * PI);
            let (c, s) = (theta.cos(), theta.sin());
            (0..n)
                .map(|i| {
                    let (x, y) = ((i % size) as f32, (i / size) as f32);
                    0.5 + 0.5 * (2.0 * PI * freq * (c * x + s * y) + phase).sin()
                })
                .collect()
        }
        1 => {
            // Smooth blobs: coarse white noise, bilinearly upsampled.
            let g = 8 + 4 * (class / FAMILIES.len());
            let grid: Vec<f32> = (0..g * g).map(|_| rng.random::<f32>()).collect();
            (0..n)
                .map(|i| {
                    let u = (i % size) as f32 / (size - 1) as f32;
                    let v = (i / size) as f32 / (size - 1) as f32;
                    bilinear_sample(&grid, g, u, v)
                })
                .collect()
        }
        _ => {
            let cell = rng.random_range(10.0..20.0) * (1.0 + (class / FAMILIES.len()) as f32 * 0.5);
            let theta: f32 = rng.random_range(0.0..PI / 2.0);
            let (c, s) = (theta.cos(), theta.sin());
            let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            (0..n)
                .map(|i| {
                    let (x, y) = ((i % size) as f32 + ox, (i / size) as f32 + oy);
                    let (u, v) = (c * x + s * y, -s * x + c * y);
                    let parity = ((u / cell).floor() + (v / cell).floor()) as i64;
                    if parity.rem_euclid(2) == 0 { 0.85 } else { 0.15 }
                })
                .collect()
        }
    }
}

/// Renders texture `index` of `class` as a `1×3×size×size` tensor in `[0, 1]`.
pub fn render_texture(class: usize, num_classes: usize, index: usize, size: usize, seed: u64) -> Tensor {
    let mut rng = seeded_rng(
        seed ^ ((class as u64) << 40) ^ (index as u64).wrapping_mul(0x2545_F491_4F6C_DD1D),
    );
    let p = pattern(class, num_classes, size, &mut rng);
    let base = tint(class, num_classes);
    let jitter: Vec<f32> = (0..3).map(|_| rng.random_range(-0.08..0.08)).collect();
    let n = size * size;
    let mut data = Vec::with_capacity(3 * n);
    for k in 0..3 {
        let t = (base[k] + jitter[k]).clamp(0.0, 1.0);
        data.extend(p.iter().map(|&v| {
            let grain = rng.random_range(-0.03..0.03);
            (t * (0.2 + 0.75 * v) + grain).clamp(0.0, 1.0)
        }));
    }
    Tensor::new(&[1, 3, size, size], data).expect("consistent size")
}

/// Split sizes for `n` items: 70 / 15 / 15, rounding train and validation.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let train = (n as f64 * 0.7).round() as usize;
    let val = ((n as f64 * 0.15).round() as usize).min(n - train);
    [train, val, n - train - val]
}

/// Writes `num_classes × per_class` PNG textures under `out_dir` together with
/// `manifest.tsv` and its sidecar. Deterministic in `seed`.
pub fn synth_toy_textures(
    out_dir: impl AsRef<Path>,
    num_classes: usize,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if size == 0 || size % 64 != 0 {
        return Err(LcrError::Config(format!("toy image size {size} is not a multiple of 64")));
    }
    if num_classes == 0 || per_class == 0 {
        return Err(LcrError::Config("toy set needs at least one class and one image".into()));
    }
    let out_dir = out_dir.as_ref();
    let names = toy_class_names(num_classes);
    let [n_train, n_val, _] = split_sizes(per_class);
    let jobs: Vec<(usize, usize)> = (0..num_classes)
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .collect();
    for name in &names {
        std::fs::create_dir_all(out_dir.join(name))?;
    }
    let written: Vec<Result<Record>> = lcr_tensor::par::map_slice(&jobs, |&(c, i)| {
        let rel = Path::new(&names[c]).join(format!("{i:04}.png"));
        save_rgb(out_dir.join(&rel), &render_texture(c, num_classes, i, size, seed))?;
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        Ok(Record { path: rel, label: c, split })
    });
    let manifest = DatasetManifest {
        records: written.into_iter().collect::<Result<_>>()?,
        class_names: names,
        provenance: format!(
            "synthetic toy textures: {num_classes} classes x {per_class} images, {size}x{size}, seed {seed}"
        ),
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}
