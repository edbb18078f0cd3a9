//! 2-D convolution and its adjoint (transposed convolution) via im2col + GEMM.
//!
//! Kernels use the `C_out × C_in × k × k` layout for both ops: a transposed
//! convolution with kernel `K` is the exact adjoint of `conv2d(·, K)`.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::linalg::{gemm, gemm_nt, gemm_tn};
use crate::par;
use crate::tensor::Tensor;

/// Geometry of a forward convolution from `channels×h×w` to `out_h×out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1, stride 1, no padding: im2col is the identity.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output extent of a strided convolution along one axis.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_out_extent(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Option<usize> {
    ((input - 1) * stride + k + output_pad).checked_sub(2 * pad)
}

fn im2col(x: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let plane = g.col_cols();
    for c in 0..g.channels {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto the image (adjoint of [`im2col`]).
fn col2im(cols: &[f32], g: &ConvGeometry, x: &mut [f32]) {
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    let plane = g.col_cols();
    for c in 0..g.channels {
        let dst = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.out_w..(oy + 1) * g.out_w].iter().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `y = W · im2col(x)` for one sample; `y` is `c_out × out_h·out_w`.
fn conv_sample(x: &[f32], w: &[f32], c_out: usize, g: &ConvGeometry, y: &mut [f32]) {
    if g.is_pointwise() {
        gemm(c_out, g.channels, g.col_cols(), w, x, y, 0.0);
    } else {
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        im2col(x, g, &mut cols);
        gemm(c_out, g.col_rows(), g.col_cols(), w, &cols, y, 0.0);
    }
}

/// `x += col2im(Wᵀ · y)` for one sample (the adjoint of [`conv_sample`]).
fn conv_sample_adjoint(y: &[f32], w: &[f32], c_out: usize, g: &ConvGeometry, x: &mut [f32]) {
    if g.is_pointwise() {
        gemm_tn(g.channels, c_out, g.col_cols(), w, y, x, 1.0);
    } else {
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        gemm_tn(g.col_rows(), c_out, g.col_cols(), w, y, &mut cols, 0.0);
        col2im(&cols, g, x);
    }
}

/// Kernel gradient contribution `y · im2col(x)ᵀ` of one sample.
fn conv_sample_kernel_grad(x: &[f32], y: &[f32], c_out: usize, g: &ConvGeometry) -> Vec<f32> {
    let mut dw = vec![0.0; c_out * g.col_rows()];
    if g.is_pointwise() {
        gemm_nt(c_out, g.col_cols(), g.channels, y, x, &mut dw, 0.0);
    } else {
        let mut cols = vec![0.0; g.col_rows() * g.col_cols()];
        im2col(x, g, &mut cols);
        gemm_nt(c_out, g.col_cols(), g.col_rows(), y, &cols, &mut dw, 0.0);
    }
    dw
}

/// Sums per-sample partial buffers in sample order.
fn ordered_sum(parts: Vec<Vec<f32>>) -> Vec<f32> {
    let mut iter = parts.into_iter();
    let mut acc = iter.next().unwrap_or_default();
    for p in iter {
        acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
    }
    acc
}

fn bias_grad(g: &Tensor, channels: usize) -> Tensor {
    let plane = g.numel() / g.shape()[0] / channels;
    let mut acc = vec![0.0f64; channels];
    for (i, chunk) in g.data().chunks(plane).enumerate() {
        acc[i % channels] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    Tensor::from_parts(vec![channels], acc.into_iter().map(|v| v as f32).collect())
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (i, chunk) in out.chunks_mut(plane).enumerate() {
        let b = bias[i % bias.len()];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn check_bias(bias: Option<&Var>, channels: usize, op: &'static str) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("bias {:?} vs output channels {channels}", b.shape()),
            });
        }
    }
    Ok(())
}

fn conv_geometry(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let (n, c, h, wd) = x.dims4()?;
    let (c_out, c_in, kh, kw) = w.dims4()?;
    if c_in != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input channels {c} vs kernel input channels {c_in}"),
        });
    }
    if kh != kw {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("only square kernels are supported, got {kh}×{kw}"),
        });
    }
    let (Some(out_h), Some(out_w)) = (
        conv_out_extent(h, kh, stride, pad),
        conv_out_extent(wd, kw, stride, pad),
    ) else {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!(
                "kernel {kh}×{kw} exceeds padded input {}×{} (stride {stride})",
                h + 2 * pad,
                wd + 2 * pad
            ),
        });
    };
    Ok((
        n,
        c_out,
        ConvGeometry {
            channels: c,
            h,
            w: wd,
            k: kh,
            stride,
            pad,
            out_h,
            out_w,
        },
    ))
}

/// Plain forward convolution on tensors, outside any graph.
pub fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (n, c_out, geo) = conv_geometry(x, w, stride, pad)?;
    let in_len = geo.channels * geo.h * geo.w;
    let out_len = c_out * geo.col_cols();
    let mut out = vec![0.0f32; n * out_len];
    let (xd, wd) = (x.data(), w.data());
    par::for_each_chunk_mut(&mut out, out_len, |i, y| {
        conv_sample(&xd[i * in_len..(i + 1) * in_len], wd, c_out, &geo, y);
    });
    if let Some(b) = bias {
        add_bias(&mut out, b.data(), geo.col_cols());
    }
    Ok(Tensor::from_parts(
        vec![n, c_out, geo.out_h, geo.out_w],
        out,
    ))
}

impl Graph {
    /// Cross-correlation with zero padding. `x: N×C_in×H×W`, `w: C_out×C_in×k×k`.
    pub fn conv2d(
        &mut self,
        x: &Var,
        w: &Var,
        bias: Option<&Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (n, c_out, geo) = conv_geometry(x.value(), w.value(), stride, pad)?;
        check_bias(bias, c_out, "conv2d")?;
        let out = conv2d_forward(x.value(), w.value(), bias.map(|b| b.value()), stride, pad)?;
        let (xv, wv) = (x.arc(), w.arc());
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let in_len = geo.channels * geo.h * geo.w;
        let out_len = c_out * geo.col_cols();
        let x_shape = xv.shape().to_vec();
        let w_shape = wv.shape().to_vec();
        Ok(self.record(out, &inputs, move |g, needs| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(3);
            grads.push(needs[0].then(|| {
                let mut dx = vec![0.0f32; n * in_len];
                par::for_each_chunk_mut(&mut dx, in_len, |i, dxi| {
                    conv_sample_adjoint(
                        &gd[i * out_len..(i + 1) * out_len],
                        wv.data(),
                        c_out,
                        &geo,
                        dxi,
                    );
                });
                Tensor::from_parts(x_shape.clone(), dx)
            }));
            grads.push(needs[1].then(|| {
                let parts = par::map_range(n, |i| {
                    conv_sample_kernel_grad(
                        &xv.data()[i * in_len..(i + 1) * in_len],
                        &gd[i * out_len..(i + 1) * out_len],
                        c_out,
                        &geo,
                    )
                });
                Tensor::from_parts(w_shape.clone(), ordered_sum(parts))
            }));
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(g, c_out)));
            }
            grads
        }))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// kernel. `x: N×C_out×H×W`, `w: C_out×C_in×k×k`, output `N×C_in×H'×W'`
    /// with `H' = (H−1)·stride − 2·pad + k + output_pad`.
    pub fn conv2d_transpose(
        &mut self,
        x: &Var,
        w: &Var,
        bias: Option<&Var>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<Var> {
        let (n, c, h, wd) = x.value().dims4()?;
        let (k_out, c_in, k, kw) = w.value().dims4()?;
        if k_out != c || k != kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_transpose",
                detail: format!("input channels {c} vs kernel {:?}", w.shape()),
            });
        }
        if output_pad >= stride.max(1) {
            return Err(TensorError::InvalidArgument(format!(
                "output_pad {output_pad} must be smaller than stride {stride}"
            )));
        }
        let (Some(out_h), Some(out_w)) = (
            conv_transpose_out_extent(h, k, stride, pad, output_pad),
            conv_transpose_out_extent(wd, k, stride, pad, output_pad),
        ) else {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d_transpose",
                detail: format!("padding {pad} too large for {h}×{wd} input"),
            });
        };
        check_bias(bias, c_in, "conv2d_transpose")?;
        // The adjoint forward conv maps c_in×out_h×out_w to c×h×w.
        let geo = ConvGeometry {
            channels: c_in,
            h: out_h,
            w: out_w,
            k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        debug_assert_eq!(conv_out_extent(out_h, k, stride, pad), Some(h));
        let in_len = c * h * wd;
        let out_len = c_in * out_h * out_w;
        let mut out = vec![0.0f32; n * out_len];
        {
            let (xd, wdat) = (x.value().data(), w.value().data());
            par::for_each_chunk_mut(&mut out, out_len, |i, yi| {
                conv_sample_adjoint(&xd[i * in_len..(i + 1) * in_len], wdat, c, &geo, yi);
            });
        }
        if let Some(b) = bias {
            add_bias(&mut out, b.value().data(), out_h * out_w);
        }
        let out = Tensor::from_parts(vec![n, c_in, out_h, out_w], out);
        let (xv, wv) = (x.arc(), w.arc());
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        let x_shape = xv.shape().to_vec();
        let w_shape = wv.shape().to_vec();
        Ok(self.record(out, &inputs, move |g, needs| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(3);
            grads.push(needs[0].then(|| {
                let mut dx = vec![0.0f32; n * in_len];
                par::for_each_chunk_mut(&mut dx, in_len, |i, dxi| {
                    conv_sample(&gd[i * out_len..(i + 1) * out_len], wv.data(), c, &geo, dxi);
                });
                Tensor::from_parts(x_shape.clone(), dx)
            }));
            grads.push(needs[1].then(|| {
                let parts = par::map_range(n, |i| {
                    conv_sample_kernel_grad(
                        &gd[i * out_len..(i + 1) * out_len],
                        &xv.data()[i * in_len..(i + 1) * in_len],
                        c,
                        &geo,
                    )
                });
                Tensor::from_parts(w_shape.clone(), ordered_sum(parts))
            }));
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(g, c_in)));
            }
            grads
        }))
    }
}
