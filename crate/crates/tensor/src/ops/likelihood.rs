//! Discretized zero-mean Gaussian likelihoods for rate estimation.

use std::f64::consts::{LN_2, SQRT_2};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Mass of `N(0, σ²)` on `[v − ½, v + ½]`.
///
/// Evaluated on the lower tail (`|v|` mirrored to negative arguments) so that
/// large `|v|/σ` keeps relative precision.
pub fn gaussian_interval_prob(value: f64, sigma: f64) -> f64 {
    let a = value.abs();
    std_normal_cdf((0.5 - a) / sigma) - std_normal_cdf((-0.5 - a) / sigma)
}

/// Bits spent on one symbol. The probability is clamped to
/// `[p_min, 1 − p_min]`, so every symbol costs a strictly positive amount.
pub fn gaussian_symbol_bits(value: f64, sigma: f64, p_min: f64) -> f64 {
    -gaussian_interval_prob(value, sigma)
        .clamp(p_min, 1.0 - p_min)
        .log2()
}

impl Graph {
    /// Total bits `Σ −log2 clamp(P(y_i | σ_i), p_min, 1 − p_min)` under a zero-mean
    /// Gaussian discretized to unit bins. Differentiable in `y` and `sigma`.
    pub fn gaussian_bits(&mut self, y: &Var, sigma: &Var, p_min: f64) -> Result<Var> {
        if y.shape() != sigma.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "gaussian_bits",
                detail: format!("values {:?} vs scales {:?}", y.shape(), sigma.shape()),
            });
        }
        let total: f64 = y
            .value()
            .data()
            .iter()
            .zip(sigma.value().data())
            .map(|(&v, &s)| gaussian_symbol_bits(v as f64, s as f64, p_min))
            .sum();
        let (yv, sv) = (y.arc(), sigma.arc());
        let shape = y.shape().to_vec();
        Ok(self.record(Tensor::scalar(total as f32), &[y, sigma], move |g, needs| {
            let scale = g.item() as f64;
            let mut dy = vec![0.0f32; yv.numel()];
            let mut ds = vec![0.0f32; yv.numel()];
            for (i, (&v, &s)) in yv.data().iter().zip(sv.data()).enumerate() {
                let (v, s) = (v as f64, s as f64);
                let a = v.abs();
                let hi = (0.5 - a) / s;
                let lo = (-0.5 - a) / s;
                let p = std_normal_cdf(hi) - std_normal_cdf(lo);
                if p <= p_min || p >= 1.0 - p_min {
                    continue;
                }
                let dbits_dp = -1.0 / (p * LN_2);
                let (phi_hi, phi_lo) = (std_normal_pdf(hi), std_normal_pdf(lo));
                let dp_da = (-phi_hi + phi_lo) / s;
                let dp_ds = (-hi * phi_hi + lo * phi_lo) / s;
                dy[i] = (scale * dbits_dp * dp_da * v.signum() * (a > 0.0) as u8 as f64) as f32;
                ds[i] = (scale * dbits_dp * dp_ds) as f32;
            }
            vec![
                needs[0].then(|| Tensor::from_parts(shape.clone(), dy)),
                needs[1].then(|| Tensor::from_parts(shape.clone(), ds)),
            ]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_values_cost_the_same() {
        for k in 0..6 {
            let a = gaussian_symbol_bits(k as f64, 1.3, 2f64.powi(-16));
            let b = gaussian_symbol_bits(-(k as f64), 1.3, 2f64.powi(-16));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn floor_caps_cost() {
        let bits = gaussian_symbol_bits(1e4, 0.1, 2f64.powi(-16));
        assert_eq!(bits, 16.0);
    }

    #[test]
    fn bits_are_positive() {
        let mut g = Graph::inference();
        let y = g.constant(Tensor::zeros(&[4]));
        let s = g.constant(Tensor::full(&[4], 0.05));
        let b = g.gaussian_bits(&y, &s, 2f64.powi(-16)).unwrap();
        assert!(b.value().item() > 0.0);
    }
}
