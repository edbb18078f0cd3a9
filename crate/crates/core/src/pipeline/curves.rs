//! Accuracy-versus-quality curves and latent summary panels.

use std::path::Path;

use lcr_tensor::Tensor;

use super::config::Workflow;
use super::report::EvaluationRow;
use crate::error::{LcrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Bpp,
    Psnr,
    Ssim,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Bpp, Axis::Psnr, Axis::Ssim];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Bpp => "bpp",
            Axis::Psnr => "psnr_db",
            Axis::Ssim => "ssim",
        }
    }

    fn of(self, r: &EvaluationRow) -> Option<f64> {
        match self {
            Axis::Bpp => r.bpp,
            Axis::Psnr => r.psnr_db,
            Axis::Ssim => r.ssim,
        }
    }
}

/// One accuracy curve: `(x, accuracy %, quality index)` sorted by `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub workflow: Workflow,
    pub axis: Axis,
    pub k: usize,
    pub points: Vec<(f64, f64, u8)>,
}

/// Builds the Top-1 and Top-5 series of every workflow against bpp, PSNR,
/// and SSIM. A row without a reconstruction metric (compressed domain)
/// borrows it from another row of the same quality index, since the same
/// codec produced both. Returns the series plus warnings for single-point
/// series.
pub fn emit_curves(rows: &[EvaluationRow]) -> (Vec<Series>, Vec<String>) {
    let mut series = Vec::new();
    let mut warnings = Vec::new();
    let mut workflows: Vec<Workflow> = rows.iter().map(|r| r.workflow).collect();
    workflows.dedup();
    workflows.sort_by_key(|w| w.as_str());
    workflows.dedup();
    for wf in workflows {
        for axis in Axis::ALL {
            let mut pts: Vec<(f64, f64, f64, u8)> = rows
                .iter()
                .filter(|r| r.workflow == wf)
                .filter_map(|r| {
                    let q = r.quality_index?;
                    let x = axis.of(r).or_else(|| {
                        rows.iter()
                            .filter(|o| o.quality_index == Some(q))
                            .find_map(|o| axis.of(o))
                    })?;
                    x.is_finite().then_some((x, r.top1, r.top5, q))
                })
                .collect();
            if pts.is_empty() {
                continue;
            }
            pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.3.cmp(&b.3)));
            if pts.len() < 2 {
                warnings.push(format!("{wf} vs {}: single point, no curve", axis.as_str()));
            }
            for (k, pick) in [(1usize, 1usize), (5, 2)] {
                let points = pts
                    .iter()
                    .map(|p| (p.0, if pick == 1 { p.1 } else { p.2 }, p.3))
                    .collect();
                series.push(Series { workflow: wf, axis, k, points });
            }
        }
    }
    (series, warnings)
}

pub const CURVE_CSV_HEADER: &str = "workflow,k,quality_index,x,accuracy";

/// Writes `curves_<axis>.csv` per axis into `dir`; returns the paths.
pub fn write_curves(dir: impl AsRef<Path>, series: &[Series]) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for axis in Axis::ALL {
        let mut text = format!("{CURVE_CSV_HEADER}\n");
        for s in series.iter().filter(|s| s.axis == axis) {
            for (x, acc, q) in &s.points {
                text.push_str(&format!("{},{},{q},{x:.6},{acc:.4}\n", s.workflow, s.k));
            }
        }
        let path = dir.join(format!("curves_{}.csv", axis.as_str()));
        std::fs::write(&path, text)?;
        out.push(path);
    }
    Ok(out)
}

/// Channel sum of a `[1×]C×H×W` tensor, min-max scaled to 8-bit gray.
/// A constant map renders as mid-gray.
pub fn channel_sum_map(t: &Tensor) -> Result<(Vec<u8>, usize, usize)> {
    let (c, h, w) = match *t.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        ref s => return Err(LcrError::Invalid(format!("expected C×H×W, got {s:?}"))),
    };
    let plane = h * w;
    let mut sum = vec![0f64; plane];
    for ch in 0..c {
        for (s, &v) in sum.iter_mut().zip(&t.data()[ch * plane..(ch + 1) * plane]) {
            *s += v as f64;
        }
    }
    let lo = sum.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pixels = sum
        .iter()
        .map(|&v| {
            if hi > lo {
                (255.0 * (v - lo) / (hi - lo)).round() as u8
            } else {
                128
            }
        })
        .collect();
    Ok((pixels, w, h))
}
