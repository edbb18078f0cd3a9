//! Parameterised layers. Each layer registers its weights in a [`ParamStore`]
//! under a hierarchical prefix and reads them back during `forward`.

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::init::{kaiming_normal, normal, Rng};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Running-statistics momentum: `running ← 0.9·running + 0.1·batch`.
pub const BATCH_NORM_MOMENTUM: f32 = 0.9;

/// GDN reparameterization floor on `β = b² + floor`.
pub const GDN_BETA_FLOOR: f32 = 1e-6;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming_normal(&[c_out, c_in, k, k], rng),
            true,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), true));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: &Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, &w, b.as_ref(), self.stride, self.pad)
    }

    pub fn out_channels(&self, store: &ParamStore) -> usize {
        store.value(self.weight).shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        // Each output pixel sees about c_in·k²/stride² inputs.
        let fan_in = (c_in * k * k) as f32 / (stride * stride) as f32;
        let weight = store.add(
            format!("{name}.weight"),
            normal(&[c_in, c_out, k, k], (2.0 / fan_in).sqrt(), rng),
            true,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out]), true));
        Self {
            weight,
            bias,
            stride,
            pad,
            output_pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: &Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d_transpose(x, &w, b.as_ref(), self.stride, self.pad, self.output_pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::ones(&[channels]), true),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[channels]), true),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::ones(&[channels]),
                false,
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: &Var, mode: Mode) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batch_norm_train(x, &w, &b)?;
                let blend = |old: &Tensor, new: &Tensor| {
                    old.zip_map(new, |o, n| BATCH_NORM_MOMENTUM * o + (1.0 - BATCH_NORM_MOMENTUM) * n)
                };
                let mean = blend(store.value(self.running_mean), &stats.mean)?;
                let var = blend(store.value(self.running_var), &stats.var)?;
                g.push_buffer_update(self.running_mean, mean);
                g.push_buffer_update(self.running_var, var);
                Ok(y)
            }
            Mode::Eval => g.batch_norm_eval(
                x,
                &w,
                &b,
                store.value(self.running_mean),
                store.value(self.running_var),
            ),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Self {
            weight: store.add(
                format!("{name}.weight"),
                normal(&[outputs, inputs], (1.0 / inputs as f32).sqrt(), rng),
                true,
            ),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: &Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, &w, Some(&b))
    }
}

/// GDN (or inverse GDN) with `β = b² + floor` and `γ = g²` so both stay
/// nonnegative under unconstrained updates.
#[derive(Clone, Debug)]
pub struct Gdn {
    pub beta_raw: ParamId,
    pub gamma_raw: ParamId,
    pub inverse: bool,
}

impl Gdn {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, inverse: bool) -> Self {
        let beta_raw = store.add(
            format!("{name}.beta"),
            Tensor::full(&[channels], (1.0 - GDN_BETA_FLOOR).sqrt()),
            true,
        );
        // γ starts at 0.1·I; off-diagonals get a small seed because the squared
        // parameterization has zero gradient at exactly zero.
        let gamma_raw = store.add(
            format!("{name}.gamma"),
            Tensor::from_fn(&[channels, channels], |i| {
                if i / channels == i % channels {
                    0.1f32.sqrt()
                } else {
                    0.01
                }
            }),
            true,
        );
        Self {
            beta_raw,
            gamma_raw,
            inverse,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: &Var) -> Result<Var> {
        let b = g.param(store, self.beta_raw);
        let b2 = g.square(&b);
        let beta = g.add_scalar(&b2, GDN_BETA_FLOOR);
        let gr = g.param(store, self.gamma_raw);
        let gamma = g.square(&gr);
        g.gdn(x, &beta, &gamma, self.inverse)
    }
}
