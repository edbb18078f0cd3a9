//! f64 reference implementations and a central-difference gradient oracle.
//! Written independently of the library kernels (direct loops, no GEMM).
#![allow(dead_code)]

use lcr_tensor::init::{normal, seeded_rng};
use lcr_tensor::Tensor;

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    normal(shape, 1.0, &mut seeded_rng(seed))
}

pub fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err(analytic: &Tensor, numeric: &[f64]) -> f64 {
    let a = to64(analytic);
    let diff: f64 = a.iter().zip(numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-30)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn conv2d(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (o, kk): (usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kk) / stride + 1;
    let ow = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                    for ic in 0..c {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                    * k[((oc * c + ic) * kk + ky) * kk + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Transposed convolution by direct scattering: every input pixel stamps
/// its kernel slice onto the strided output lattice.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_transpose(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (co, kk): (usize, usize),
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + kk + out_pad - 2 * pad;
    let ow = (w - 1) * stride + kk + out_pad - 2 * pad;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x[((b * c + ic) * h + y) * w + xx];
                    for oc in 0..co {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let oy = (y * stride + ky) as isize - pad as isize;
                                let ox = (xx * stride + kx) as isize - pad as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out[((b * co + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    v * k[((ic * co + oc) * kk + ky) * kk + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn gdn(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    beta: &[f64],
    gamma: &[f64],
    inverse: bool,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for p in 0..h * w {
            for i in 0..c {
                let mut s = beta[i];
                for j in 0..c {
                    let xj = x[(b * c + j) * h * w + p];
                    s += gamma[i * c + j] * xj * xj;
                }
                let idx = (b * c + i) * h * w + p;
                out[idx] = if inverse { x[idx] * s.sqrt() } else { x[idx] / s.sqrt() };
            }
        }
    }
    out
}

pub fn batch_norm_train(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    eps: f64,
) -> Vec<f64> {
    let m = (n * h * w) as f64;
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let vals: Vec<usize> = (0..n)
            .flat_map(|b| (0..h * w).map(move |p| (b * c + ch) * h * w + p))
            .collect();
        let mean = vals.iter().map(|&i| x[i]).sum::<f64>() / m;
        let var = vals.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / m;
        for &i in &vals {
            out[i] = weight[ch] * (x[i] - mean) / (var + eps).sqrt() + bias[ch];
        }
    }
    out
}

pub fn max_pool3x3s2(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) / 2 + 1;
    let ow = (w - 1) / 2 + 1;
    let mut out = vec![f64::NEG_INFINITY; n * c * oh * ow];
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            let v = x[(p * h + iy as usize) * w + ix as usize];
                            let o = &mut out[(p * oh + oy) * ow + ox];
                            *o = o.max(v);
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn global_avg_pool(x: &[f64], planes: usize) -> Vec<f64> {
    let per = x.len() / planes;
    x.chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect()
}

pub fn linear(x: &[f64], n: usize, f: usize, w: &[f64], o: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            out[i * o + j] = b[j] + (0..f).map(|p| x[i * f + p] * w[j * f + p]).sum::<f64>();
        }
    }
    out
}

pub fn cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let n = labels.len();
    logits
        .chunks(k)
        .zip(labels)
        .map(|(row, &l)| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum::<f64>()
        / n as f64
}

pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    logits
        .chunks(k)
        .flat_map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect()
}
