//! Network building blocks: batch norm, pooling, linear, softmax and
//! cross-entropy, channel concatenation and cropping.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::linalg::{gemm, gemm_nt, gemm_tn};
use crate::par;
use crate::tensor::Tensor;

pub const BATCH_NORM_EPS: f32 = 1e-5;

/// Per-channel batch statistics from a training forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Unbiased variance, as folded into running statistics.
    pub var: Tensor,
}

fn channel_moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let count = n * hw;
    let mut sum = vec![0.0f64; c];
    let mut sq = vec![0.0f64; c];
    for (i, plane) in x.data().chunks(hw).enumerate() {
        let ch = i % c;
        for &v in plane {
            sum[ch] += v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    for (i, plane) in x.data().chunks(hw).enumerate() {
        let ch = i % c;
        let m = mean[ch];
        for &v in plane {
            let d = v as f64 - m;
            sq[ch] += d * d;
        }
    }
    let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
    Ok((mean, var, count))
}

fn check_channel_vec(v: &Var, c: usize, op: &'static str) -> Result<()> {
    if v.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op,
            detail: format!("per-channel vector {:?} vs {c} channels", v.shape()),
        });
    }
    Ok(())
}

impl Graph {
    /// Batch norm with batch statistics; returns the statistics for the
    /// caller's running averages.
    pub fn batch_norm_train(
        &mut self,
        x: &Var,
        weight: &Var,
        bias: &Var,
    ) -> Result<(Var, BatchStats)> {
        let (n, c, h, w) = x.value().dims4()?;
        check_channel_vec(weight, c, "batch_norm")?;
        check_channel_vec(bias, c, "batch_norm")?;
        let (mean, var, count) = channel_moments(x.value())?;
        if count < 2 {
            return Err(TensorError::InvalidArgument(
                "batch norm in training mode needs more than one value per channel".into(),
            ));
        }
        let hw = h * w;
        let inv_std: Vec<f32> = var
            .iter()
            .map(|v| (1.0 / (v + BATCH_NORM_EPS as f64).sqrt()) as f32)
            .collect();
        let (wd, bd) = (weight.value().data(), bias.value().data());
        let mut xhat = vec![0.0f32; n * c * hw];
        let mut out = vec![0.0f32; n * c * hw];
        for (i, (xp, (hp, op))) in x
            .value()
            .data()
            .chunks(hw)
            .zip(xhat.chunks_mut(hw).zip(out.chunks_mut(hw)))
            .enumerate()
        {
            let ch = i % c;
            let (m, s) = (mean[ch] as f32, inv_std[ch]);
            for ((&xv, hv), ov) in xp.iter().zip(hp.iter_mut()).zip(op.iter_mut()) {
                *hv = (xv - m) * s;
                *ov = wd[ch] * *hv + bd[ch];
            }
        }
        let stats = BatchStats {
            mean: Tensor::from_parts(vec![c], mean.iter().map(|&v| v as f32).collect()),
            var: Tensor::from_parts(
                vec![c],
                var.iter()
                    .map(|&v| (v * count as f64 / (count - 1) as f64) as f32)
                    .collect(),
            ),
        };
        let out = Tensor::from_parts(vec![n, c, h, w], out);
        let wv = weight.arc();
        let var = self.record(out, &[x, weight, bias], move |g, needs| {
            let gd = g.data();
            let mut sum_g = vec![0.0f64; c];
            let mut sum_gx = vec![0.0f64; c];
            for (i, (gp, hp)) in gd.chunks(hw).zip(xhat.chunks(hw)).enumerate() {
                let ch = i % c;
                for (&gv, &hv) in gp.iter().zip(hp) {
                    sum_g[ch] += gv as f64;
                    sum_gx[ch] += gv as f64 * hv as f64;
                }
            }
            let dx = needs[0].then(|| {
                let m = count as f64;
                let mut dx = vec![0.0f32; gd.len()];
                for (i, ((dp, gp), hp)) in dx
                    .chunks_mut(hw)
                    .zip(gd.chunks(hw))
                    .zip(xhat.chunks(hw))
                    .enumerate()
                {
                    let ch = i % c;
                    let scale = wv.data()[ch] as f64 * inv_std[ch] as f64 / m;
                    for ((d, &gv), &hv) in dp.iter_mut().zip(gp).zip(hp) {
                        *d = (scale * (m * gv as f64 - sum_g[ch] - hv as f64 * sum_gx[ch])) as f32;
                    }
                }
                Tensor::from_parts(vec![n, c, h, w], dx)
            });
            let dw = needs[1]
                .then(|| Tensor::from_parts(vec![c], sum_gx.iter().map(|&v| v as f32).collect()));
            let db = needs[2]
                .then(|| Tensor::from_parts(vec![c], sum_g.iter().map(|&v| v as f32).collect()));
            vec![dx, dw, db]
        });
        Ok((var, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: &Var,
        weight: &Var,
        bias: &Var,
        mean: &Tensor,
        var: &Tensor,
    ) -> Result<Var> {
        let (n, c, h, w) = x.value().dims4()?;
        check_channel_vec(weight, c, "batch_norm")?;
        check_channel_vec(bias, c, "batch_norm")?;
        if mean.shape() != [c] || var.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "batch_norm",
                detail: format!("running stats {:?}/{:?} vs {c}", mean.shape(), var.shape()),
            });
        }
        let hw = h * w;
        let inv_std: Vec<f32> = var
            .data()
            .iter()
            .map(|&v| 1.0 / (v + BATCH_NORM_EPS).sqrt())
            .collect();
        let md = mean.data().to_vec();
        let (wd, bd) = (weight.value().data(), bias.value().data());
        let mut out = vec![0.0f32; n * c * hw];
        for (i, (xp, op)) in x.value().data().chunks(hw).zip(out.chunks_mut(hw)).enumerate() {
            let ch = i % c;
            let scale = wd[ch] * inv_std[ch];
            let shift = bd[ch] - md[ch] * scale;
            for (&xv, ov) in xp.iter().zip(op.iter_mut()) {
                *ov = xv * scale + shift;
            }
        }
        let out = Tensor::from_parts(vec![n, c, h, w], out);
        let (xv, wv) = (x.arc(), weight.arc());
        Ok(self.record(out, &[x, weight, bias], move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0f32; gd.len()];
                for (i, (dp, gp)) in dx.chunks_mut(hw).zip(gd.chunks(hw)).enumerate() {
                    let ch = i % c;
                    let s = wv.data()[ch] * inv_std[ch];
                    dp.iter_mut().zip(gp).for_each(|(d, &gv)| *d = gv * s);
                }
                Tensor::from_parts(vec![n, c, h, w], dx)
            });
            let mut sum_g = vec![0.0f64; c];
            let mut sum_gx = vec![0.0f64; c];
            if needs[1] || needs[2] {
                for (i, (gp, xp)) in gd.chunks(hw).zip(xv.data().chunks(hw)).enumerate() {
                    let ch = i % c;
                    for (&gv, &x) in gp.iter().zip(xp) {
                        sum_g[ch] += gv as f64;
                        sum_gx[ch] += gv as f64 * ((x - md[ch]) * inv_std[ch]) as f64;
                    }
                }
            }
            let dw = needs[1]
                .then(|| Tensor::from_parts(vec![c], sum_gx.iter().map(|&v| v as f32).collect()));
            let db = needs[2]
                .then(|| Tensor::from_parts(vec![c], sum_g.iter().map(|&v| v as f32).collect()));
            vec![dx, dw, db]
        }))
    }

    /// 3×3 max pool, stride 2, padding 1. Ties go to the first maximum in
    /// row-major window order; the gradient routes only to that element.
    pub fn max_pool3x3s2(&mut self, x: &Var) -> Result<Var> {
        let (n, c, h, w) = x.value().dims4()?;
        let oh = (h + 2 - 3) / 2 + 1;
        let ow = (w + 2 - 3) / 2 + 1;
        let planes = n * c;
        let xd = x.value().data();
        let mut out = vec![0.0f32; planes * oh * ow];
        let mut arg = vec![0u32; planes * oh * ow];
        for p in 0..planes {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best;
                    arg[o] = best_idx as u32;
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.record(out, &[x], move |g, _| {
            let mut dx = vec![0.0f32; planes * h * w];
            for p in 0..planes {
                for j in 0..oh * ow {
                    let o = p * oh * ow + j;
                    dx[p * h * w + arg[o] as usize] += g.data()[o];
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
        }))
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        self.mean_spatial(x)
    }

    /// `y = x·Wᵀ + b` with `x: N×F`, `w: O×F`, `b: O`.
    pub fn linear(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let (n, f) = x.value().dims2()?;
        let (o, wf) = w.value().dims2()?;
        if wf != f {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                detail: format!("features {f} vs weight columns {wf}"),
            });
        }
        if let Some(b) = b {
            if b.shape() != [o] {
                return Err(TensorError::ShapeMismatch {
                    op: "linear",
                    detail: format!("bias {:?} vs {o} outputs", b.shape()),
                });
            }
        }
        let mut out = vec![0.0f32; n * o];
        gemm_nt(n, f, o, x.value().data(), w.value().data(), &mut out, 0.0);
        if let Some(b) = b {
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(b.value().data()).for_each(|(v, bv)| *v += bv);
            }
        }
        let out = Tensor::from_parts(vec![n, o], out);
        let (xv, wv) = (x.arc(), w.arc());
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.record(out, &inputs, move |g, needs| {
            let gd = g.data();
            let mut grads = vec![
                needs[0].then(|| {
                    let mut dx = vec![0.0f32; n * f];
                    gemm(n, o, f, gd, wv.data(), &mut dx, 0.0);
                    Tensor::from_parts(vec![n, f], dx)
                }),
                needs[1].then(|| {
                    let mut dw = vec![0.0f32; o * f];
                    gemm_tn(o, n, f, gd, xv.data(), &mut dw, 0.0);
                    Tensor::from_parts(vec![o, f], dw)
                }),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| {
                    let mut db = vec![0.0f32; o];
                    for row in gd.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    Tensor::from_parts(vec![o], db)
                }));
            }
            grads
        }))
    }

    /// Row-wise softmax of an `N×K` tensor.
    pub fn softmax(&mut self, x: &Var) -> Result<Var> {
        let (n, k) = x.value().dims2()?;
        let out = Tensor::from_parts(vec![n, k], softmax_rows(x.value().data(), k));
        let yv = std::sync::Arc::new(out.clone());
        Ok(self.record(out, &[x], move |g, _| {
            let mut dx = vec![0.0f32; n * k];
            for ((d, gr), yr) in dx
                .chunks_mut(k)
                .zip(g.data().chunks(k))
                .zip(yv.data().chunks(k))
            {
                let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((dv, &gv), &y) in d.iter_mut().zip(gr).zip(yr) {
                    *dv = y * (gv - dot);
                }
            }
            vec![Some(Tensor::from_parts(vec![n, k], dx))]
        }))
    }

    /// Mean softmax cross-entropy of `N×K` logits against class indices.
    pub fn cross_entropy(&mut self, logits: &Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = logits.value().dims2()?;
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{n} rows vs {} labels", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(TensorError::InvalidArgument(format!(
                "label {bad} outside [0, {k})"
            )));
        }
        let probs = softmax_rows(logits.value().data(), k);
        let loss: f64 = probs
            .chunks(k)
            .zip(labels)
            .map(|(row, &l)| -(row[l] as f64).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n as f64;
        let labels = labels.to_vec();
        Ok(self.record(Tensor::scalar(loss as f32), &[logits], move |g, _| {
            let scale = g.item() / n as f32;
            let mut dx = probs.clone();
            for (row, &l) in dx.chunks_mut(k).zip(&labels) {
                row[l] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(Tensor::from_parts(vec![n, k], dx))]
        }))
    }

    /// Stacks two `N×C×H×W` maps along the channel axis.
    pub fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (n, ca, h, w) = a.value().dims4()?;
        let (nb, cb, hb, wb) = b.value().dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
            });
        }
        let (la, lb) = (ca * h * w, cb * h * w);
        let mut out = Vec::with_capacity(n * (la + lb));
        for i in 0..n {
            out.extend_from_slice(&a.value().data()[i * la..(i + 1) * la]);
            out.extend_from_slice(&b.value().data()[i * lb..(i + 1) * lb]);
        }
        let out = Tensor::from_parts(vec![n, ca + cb, h, w], out);
        Ok(self.record(out, &[a, b], move |g, needs| {
            let gd = g.data();
            let split = |first: bool| {
                let mut d = Vec::with_capacity(n * if first { la } else { lb });
                for i in 0..n {
                    let base = i * (la + lb);
                    if first {
                        d.extend_from_slice(&gd[base..base + la]);
                    } else {
                        d.extend_from_slice(&gd[base + la..base + la + lb]);
                    }
                }
                d
            };
            vec![
                needs[0].then(|| Tensor::from_parts(vec![n, ca, h, w], split(true))),
                needs[1].then(|| Tensor::from_parts(vec![n, cb, h, w], split(false))),
            ]
        }))
    }

    /// Spatial crop `[top..top+h, left..left+w]` of an `N×C×H×W` tensor.
    pub fn crop(&mut self, x: &Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let (n, c, xh, xw) = x.value().dims4()?;
        if top + h > xh || left + w > xw || h == 0 || w == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "crop",
                detail: format!("window {h}×{w} at ({top},{left}) outside {xh}×{xw}"),
            });
        }
        let out = crop_planes(x.value().data(), n * c, xh, xw, top, left, h, w);
        let out = Tensor::from_parts(vec![n, c, h, w], out);
        Ok(self.record(out, &[x], move |g, _| {
            let mut dx = vec![0.0f32; n * c * xh * xw];
            for p in 0..n * c {
                for y in 0..h {
                    let src = &g.data()[(p * h + y) * w..(p * h + y + 1) * w];
                    let off = (p * xh + top + y) * xw + left;
                    dx[off..off + w].copy_from_slice(src);
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, xh, xw], dx))]
        }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn crop_planes(
    data: &[f32],
    planes: usize,
    xh: usize,
    xw: usize,
    top: usize,
    left: usize,
    h: usize,
    w: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        for y in 0..h {
            let off = (p * xh + top + y) * xw + left;
            out.extend_from_slice(&data[off..off + w]);
        }
    }
    out
}

/// Numerically stable softmax over rows of length `k`.
pub fn softmax_rows(data: &[f32], k: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; data.len()];
    par::for_each_chunk_mut(&mut out, k, |i, row| {
        let src = &data[i * k..(i + 1) * k];
        let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0.0f64;
        for (o, &v) in row.iter_mut().zip(src) {
            let e = ((v - max) as f64).exp();
            *o = e as f32;
            total += e;
        }
        row.iter_mut().for_each(|v| *v = (*v as f64 / total) as f32);
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{normal, seeded_rng};

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = seeded_rng(1);
        let mut g = Graph::inference();
        let x = g.constant(normal(&[16, 23], 3.0, &mut rng));
        let y = g.softmax(&x).unwrap();
        for row in y.value().data().chunks(23) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn concat_of_two_128_channel_maps_has_256_channels() {
        let mut g = Graph::inference();
        let a = g.constant(Tensor::zeros(&[1, 128, 4, 4]));
        let b = g.constant(Tensor::ones(&[1, 128, 4, 4]));
        let y = g.concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), &[1, 256, 4, 4]);
        assert_eq!(y.value().data()[128 * 16 - 1], 0.0);
        assert_eq!(y.value().data()[128 * 16], 1.0);
    }

    #[test]
    fn global_avg_pool_of_constant() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::full(&[2, 5, 7, 7], -1.25));
        let y = g.global_avg_pool(&x).unwrap();
        assert!(y.value().data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn max_pool_first_maximum_wins_ties() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 1, 3, 3], 2.0));
        let y = g.max_pool3x3s2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        let s = g.sum(&y);
        g.backward_leaves(&s).unwrap();
        // Output (0,0) window covers rows/cols 0..=1: first max is (0,0).
        // Output (0,1) window covers cols 1..=2: first max is (0,1), etc.
        assert_eq!(
            g.grad(&x).unwrap().data(),
            &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn perfect_prediction_has_zero_cross_entropy() {
        let mut g = Graph::inference();
        let logits = g.constant(Tensor::new(&[1, 3], vec![0.0, 200.0, 0.0]).unwrap());
        let loss = g.cross_entropy(&logits, &[1]).unwrap();
        assert!(loss.value().item().abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_label() {
        let mut g = Graph::inference();
        let logits = g.constant(Tensor::zeros(&[2, 3]));
        assert!(g.cross_entropy(&logits, &[0, 3]).is_err());
    }

    #[test]
    fn softmax_rejects_non_matrix() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[2, 3, 4]));
        assert!(g.softmax(&x).is_err());
    }

    #[test]
    fn eval_batch_norm_with_unit_stats_is_affine() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32));
        let w = g.constant(Tensor::full(&[2], 2.0));
        let b = g.constant(Tensor::full(&[2], 1.0));
        let y = g
            .batch_norm_eval(&x, &w, &b, &Tensor::zeros(&[2]), &Tensor::full(&[2], 1.0 - BATCH_NORM_EPS))
            .unwrap();
        for (o, i) in y.value().data().iter().zip(x.value().data()) {
            assert!((o - (2.0 * i + 1.0)).abs() < 1e-5);
        }
    }
}
