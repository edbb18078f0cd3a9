//! Generalized divisive normalization.
//!
//! At every spatial site, `z_i = x_i / sqrt(β_i + Σ_j γ_ij · x_j²)`; the
//! inverse variant multiplies by the same root instead of dividing.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::linalg::{gemm, gemm_nt, gemm_tn};
use crate::par;
use crate::tensor::Tensor;

/// Lower clamp applied to the pooled energy before the square root.
pub const GDN_ENERGY_FLOOR: f32 = 1e-6;

impl Graph {
    pub fn gdn(&mut self, x: &Var, beta: &Var, gamma: &Var, inverse: bool) -> Result<Var> {
        let (n, c, h, w) = x.value().dims4()?;
        if beta.shape() != [c] || gamma.shape() != [c, c] {
            return Err(TensorError::ShapeMismatch {
                op: "gdn",
                detail: format!(
                    "{c} channels need beta [{c}] and gamma [{c}, {c}], got {:?} and {:?}",
                    beta.shape(),
                    gamma.shape()
                ),
            });
        }
        let hw = h * w;
        let len = c * hw;
        let xd = x.value().data();
        let (bd, gmd) = (beta.value().data(), gamma.value().data());

        // Pooled energy S = γ·x² + β per sample.
        let mut energy = vec![0.0f32; n * len];
        par::for_each_chunk_mut(&mut energy, len, |i, s| {
            let x2: Vec<f32> = xd[i * len..(i + 1) * len].iter().map(|v| v * v).collect();
            gemm(c, c, hw, gmd, &x2, s, 0.0);
            for (ch, row) in s.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v += bd[ch]);
            }
        });
        let out: Vec<f32> = xd
            .iter()
            .zip(&energy)
            .map(|(&xv, &s)| {
                let root = s.max(GDN_ENERGY_FLOOR).sqrt();
                if inverse {
                    xv * root
                } else {
                    xv / root
                }
            })
            .collect();
        let out = Tensor::from_parts(vec![n, c, h, w], out);

        let (xv, gv) = (x.arc(), gamma.arc());
        Ok(self.record(out, &[x, beta, gamma], move |g, needs| {
            let xd = xv.data();
            let gd = g.data();
            // dL/dS, zero where the energy was clamped.
            let t: Vec<f32> = gd
                .iter()
                .zip(xd)
                .zip(&energy)
                .map(|((&gv, &xv), &s)| {
                    if s <= GDN_ENERGY_FLOOR {
                        0.0
                    } else if inverse {
                        0.5 * gv * xv / s.sqrt()
                    } else {
                        -0.5 * gv * xv / (s * s.sqrt())
                    }
                })
                .collect();
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0f32; n * len];
                par::for_each_chunk_mut(&mut dx, len, |i, dxi| {
                    let range = i * len..(i + 1) * len;
                    // γᵀ·T, the gradient routed back through the pooled energy.
                    gemm_tn(c, c, hw, gv.data(), &t[range.clone()], dxi, 0.0);
                    for (((d, &gval), &xval), &s) in dxi
                        .iter_mut()
                        .zip(&gd[range.clone()])
                        .zip(&xd[range.clone()])
                        .zip(&energy[range])
                    {
                        let root = s.max(GDN_ENERGY_FLOOR).sqrt();
                        let direct = if inverse { gval * root } else { gval / root };
                        *d = direct + 2.0 * xval * *d;
                    }
                });
                Tensor::from_parts(vec![n, c, h, w], dx)
            });
            let dbeta = needs[1].then(|| {
                let mut acc = vec![0.0f64; c];
                for (i, row) in t.chunks(hw).enumerate() {
                    acc[i % c] += row.iter().map(|&v| v as f64).sum::<f64>();
                }
                Tensor::from_parts(vec![c], acc.into_iter().map(|v| v as f32).collect())
            });
            let dgamma = needs[2].then(|| {
                let parts = par::map_range(n, |i| {
                    let range = i * len..(i + 1) * len;
                    let x2: Vec<f32> = xd[range.clone()].iter().map(|v| v * v).collect();
                    let mut d = vec![0.0f32; c * c];
                    gemm_nt(c, hw, c, &t[range], &x2, &mut d, 0.0);
                    d
                });
                let mut acc = vec![0.0f32; c * c];
                for p in parts {
                    acc.iter_mut().zip(&p).for_each(|(a, b)| *a += b);
                }
                Tensor::from_parts(vec![c, c], acc)
            });
            vec![dx, dbeta, dgamma]
        }))
    }
}
