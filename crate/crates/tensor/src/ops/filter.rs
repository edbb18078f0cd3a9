//! Fixed (non-learned) spatial filters used by the structural-similarity metrics.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::par;
use crate::tensor::Tensor;

fn blur_plane(src: &[f32], h: usize, w: usize, taps: &[f32], out: &mut [f32]) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0f32; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        dst.fill(0.0);
        for (i, &t) in taps.iter().enumerate() {
            let src_row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            dst.iter_mut().zip(src_row).for_each(|(d, s)| *d += t * s);
        }
    }
}

fn blur_plane_adjoint(g: &[f32], h: usize, w: usize, taps: &[f32], dx: &mut [f32]) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut dtmp = vec![0.0f32; h * ow];
    for y in 0..oh {
        let src = &g[y * ow..(y + 1) * ow];
        for (i, &t) in taps.iter().enumerate() {
            let dst = &mut dtmp[(y + i) * ow..(y + i + 1) * ow];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += t * s);
        }
    }
    dx.fill(0.0);
    for y in 0..h {
        let row = &mut dx[y * w..(y + 1) * w];
        for x in 0..ow {
            let gv = dtmp[y * ow + x];
            for (j, &t) in taps.iter().enumerate() {
                row[x + j] += t * gv;
            }
        }
    }
}

impl Graph {
    /// Separable per-channel filter with "valid" borders: each plane is
    /// correlated with `taps ⊗ taps`, shrinking by `taps.len() − 1`.
    pub fn separable_blur(&mut self, x: &Var, taps: &[f32]) -> Result<Var> {
        let (n, c, h, w) = x.value().dims4()?;
        let k = taps.len();
        if k == 0 || h < k || w < k {
            return Err(TensorError::ShapeMismatch {
                op: "separable_blur",
                detail: format!("{k}-tap window does not fit a {h}×{w} plane"),
            });
        }
        let (oh, ow) = (h - k + 1, w - k + 1);
        let taps = taps.to_vec();
        let xd = x.value().data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        par::for_each_chunk_mut(&mut out, oh * ow, |p, o| {
            blur_plane(&xd[p * h * w..(p + 1) * h * w], h, w, &taps, o);
        });
        let out = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.record(out, &[x], move |g, _| {
            let gd = g.data();
            let mut dx = vec![0.0f32; n * c * h * w];
            par::for_each_chunk_mut(&mut dx, h * w, |p, d| {
                blur_plane_adjoint(&gd[p * oh * ow..(p + 1) * oh * ow], h, w, &taps, d);
            });
            vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
        }))
    }

    /// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn avg_pool2x2(&mut self, x: &Var) -> Result<Var> {
        let (n, c, h, w) = x.value().dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "avg_pool2x2",
                detail: format!("{h}×{w} plane is too small to halve"),
            });
        }
        let xd = x.value().data();
        let mut out = vec![0.0f32; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xd[p * h * w..];
            for y in 0..oh {
                for xx in 0..ow {
                    let i = 2 * y * w + 2 * xx;
                    out[(p * oh + y) * ow + xx] =
                        0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, oh, ow], out);
        Ok(self.record(out, &[x], move |g, _| {
            let mut dx = vec![0.0f32; n * c * h * w];
            for p in 0..n * c {
                for y in 0..oh {
                    for xx in 0..ow {
                        let gv = 0.25 * g.data()[(p * oh + y) * ow + xx];
                        let i = p * h * w + 2 * y * w + 2 * xx;
                        dx[i] += gv;
                        dx[i + 1] += gv;
                        dx[i + w] += gv;
                        dx[i + w + 1] += gv;
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_of_constant_is_constant_times_mass() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::full(&[1, 2, 6, 7], 2.0));
        let y = g.separable_blur(&x, &[0.25, 0.5, 0.25]).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 5]);
        assert!(y.value().data().iter().all(|&v| (v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn blur_adjoint_identity() {
        let x = Tensor::from_fn(&[1, 1, 6, 5], |i| ((i * 7) % 11) as f32 - 5.0);
        let b = Tensor::from_fn(&[1, 1, 4, 3], |i| ((i * 5) % 7) as f32 - 3.0);
        let taps = [0.2, 0.5, 0.3];
        let mut ax = vec![0.0; 12];
        blur_plane(x.data(), 6, 5, &taps, &mut ax);
        let mut atb = vec![0.0; 30];
        blur_plane_adjoint(b.data(), 6, 5, &taps, &mut atb);
        let lhs: f32 = ax.iter().zip(b.data()).map(|(a, b)| a * b).sum();
        let rhs: f32 = atb.iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }

    #[test]
    fn avg_pool_halves_and_drops_odd_edge() {
        let mut g = Graph::inference();
        let x = g.constant(Tensor::from_fn(&[1, 1, 5, 4], |i| i as f32));
        let y = g.avg_pool2x2(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.value().data()[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
    }
}
