use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// He-normal initialisation scaled by the fan-in (`shape[1..]` product).
pub fn kaiming_normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    normal(shape, (2.0 / fan_in as f32).sqrt(), rng)
}

pub fn normal(shape: &[usize], std: f32, rng: &mut Rng) -> Tensor {
    let dist = Normal::new(0.0f32, std).expect("finite std");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}
