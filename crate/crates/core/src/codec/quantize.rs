use lcr_tensor::init::Rng;
use lcr_tensor::{Graph, Tensor, Var};
use rand::Rng as _;

/// Rounds to the nearest integer, halves away from zero, and flags the
/// result as whole-valued.
pub fn quantize(y: &Tensor) -> Tensor {
    y.map(f32::round)
        .into_integral()
        .expect("rounded values are whole")
}

/// Training-time stand-in for rounding: `y + u`, `u ~ U[−½, ½)` i.i.d. The
/// gradient passes through unchanged.
pub fn noise_proxy(g: &mut Graph, y: &Var, rng: &mut Rng) -> Var {
    let noise = Tensor::from_fn(y.shape(), |_| rng.random::<f32>() - 0.5);
    let u = g.constant(noise);
    g.add(y, &u).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use lcr_tensor::init::seeded_rng;

    #[test]
    fn halves_round_away_from_zero() {
        let t = Tensor::new(&[4], vec![2.5, -2.5, 0.49, -0.5]).unwrap();
        assert_eq!(quantize(&t).data(), &[3.0, -3.0, 0.0, -1.0]);
        assert!(quantize(&t).is_integral());
    }

    #[test]
    fn rounding_is_idempotent() {
        let t = Tensor::from_fn(&[50], |i| i as f32 * 0.37 - 9.0);
        let q = quantize(&t);
        assert_eq!(quantize(&q), q);
    }

    #[test]
    fn noise_proxy_stays_within_half_and_is_centered() {
        let n = 100_000;
        let y = Tensor::zeros(&[n]);
        let mut g = Graph::new();
        let v = g.leaf(y);
        let out = noise_proxy(&mut g, &v, &mut seeded_rng(3));
        let d = out.value().data();
        assert!(d.iter().all(|u| (-0.5..0.5).contains(u)));
        let mean = d.iter().map(|&u| u as f64).sum::<f64>() / n as f64;
        // U[−½, ½) has standard deviation 1/√12.
        let se = (1.0f64 / 12.0).sqrt() / (n as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
        let s = g.sum(&out);
        g.backward_leaves(&s).unwrap();
        assert!(g.grad(&v).unwrap().data().iter().all(|&x| x == 1.0));
    }
}
