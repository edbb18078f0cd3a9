//! Pointwise arithmetic, reductions and reshapes.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

impl Graph {
    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = a.value().zip_map(b.value(), |x, y| x + y)?;
        Ok(self.record(out, &[a, b], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]
        }))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = a.value().zip_map(b.value(), |x, y| x - y)?;
        Ok(self.record(out, &[a, b], |g, needs| {
            vec![needs[0].then(|| g.clone()), needs[1].then(|| g.map(|v| -v))]
        }))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = a.value().zip_map(b.value(), |x, y| x * y)?;
        let (av, bv) = (a.arc(), b.arc());
        Ok(self.record(out, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&bv, |g, y| g * y).unwrap()),
                needs[1].then(|| g.zip_map(&av, |g, x| g * x).unwrap()),
            ]
        }))
    }

    pub fn div(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = a.value().zip_map(b.value(), |x, y| x / y)?;
        let (av, bv) = (a.arc(), b.arc());
        Ok(self.record(out, &[a, b], move |g, needs| {
            vec![
                needs[0].then(|| g.zip_map(&bv, |g, y| g / y).unwrap()),
                needs[1].then(|| {
                    let gy = g.zip_map(&bv, |g, y| -g / (y * y)).unwrap();
                    gy.zip_map(&av, |t, x| t * x).unwrap()
                }),
            ]
        }))
    }

    pub fn scale(&mut self, a: &Var, factor: f32) -> Var {
        let out = a.value().map(|x| x * factor);
        self.record(out, &[a], move |g, _| vec![Some(g.map(|v| v * factor))])
    }

    pub fn add_scalar(&mut self, a: &Var, c: f32) -> Var {
        let out = a.value().map(|x| x + c);
        self.record(out, &[a], |g, _| vec![Some(g.clone())])
    }

    pub fn square(&mut self, a: &Var) -> Var {
        let out = a.value().map(|x| x * x);
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(g.zip_map(&av, |g, x| 2.0 * g * x).unwrap())]
        })
    }

    pub fn relu(&mut self, a: &Var) -> Var {
        let out = a.value().map(|x| x.max(0.0));
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(
                g.zip_map(&av, |g, x| if x > 0.0 { g } else { 0.0 })
                    .unwrap(),
            )]
        })
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(&mut self, a: &Var) -> Var {
        let out = a.value().map(f32::abs);
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(
                g.zip_map(&av, |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .unwrap(),
            )]
        })
    }

    pub fn exp(&mut self, a: &Var) -> Var {
        let out = a.value().map(f32::exp);
        let ov = std::sync::Arc::new(out.clone());
        self.record(out, &[a], move |g, _| {
            vec![Some(g.zip_map(&ov, |g, y| g * y).unwrap())]
        })
    }

    pub fn ln(&mut self, a: &Var) -> Var {
        let out = a.value().map(f32::ln);
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(g.zip_map(&av, |g, x| g / x).unwrap())]
        })
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: &Var, floor: f32) -> Var {
        let out = a.value().map(|x| x.max(floor));
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(
                g.zip_map(&av, |g, x| if x > floor { g } else { 0.0 })
                    .unwrap(),
            )]
        })
    }

    /// `x^p` for strictly positive `x`.
    pub fn powf(&mut self, a: &Var, p: f32) -> Var {
        let out = a.value().map(|x| x.powf(p));
        let av = a.arc();
        self.record(out, &[a], move |g, _| {
            vec![Some(
                g.zip_map(&av, |g, x| g * p * x.powf(p - 1.0)).unwrap(),
            )]
        })
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: &Var) -> Var {
        let out = Tensor::scalar(a.value().sum() as f32);
        let shape = a.shape().to_vec();
        self.record(out, &[a], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean(&mut self, a: &Var) -> Var {
        let n = a.value().numel() as f32;
        let out = Tensor::scalar((a.value().sum() / n as f64) as f32);
        let shape = a.shape().to_vec();
        self.record(out, &[a], move |g, _| {
            vec![Some(Tensor::full(&shape, g.item() / n))]
        })
    }

    /// Mean over the spatial axes: `N×C×H×W → N×C`.
    pub fn mean_spatial(&mut self, a: &Var) -> Result<Var> {
        let (n, c, h, w) = a.value().dims4()?;
        let hw = h * w;
        let data: Vec<f32> = a
            .value()
            .data()
            .chunks(hw)
            .map(|plane| (plane.iter().map(|&v| v as f64).sum::<f64>() / hw as f64) as f32)
            .collect();
        let out = Tensor::from_parts(vec![n, c], data);
        Ok(self.record(out, &[a], move |g, _| {
            let mut d = vec![0.0f32; n * c * hw];
            for (plane, &gv) in d.chunks_mut(hw).zip(g.data()) {
                plane.fill(gv / hw as f32);
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], d))]
        }))
    }

    /// Repeats a `[C]` vector over `N×C×H×W`.
    pub fn broadcast_channels(&mut self, v: &Var, shape: &[usize; 4]) -> Result<Var> {
        let [n, c, h, w] = *shape;
        if v.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "broadcast_channels",
                detail: format!("vector {:?} vs channel axis {c}", v.shape()),
            });
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(n * c * hw);
        for _ in 0..n {
            for &x in v.value().data() {
                data.extend(std::iter::repeat_n(x, hw));
            }
        }
        let out = Tensor::from_parts(shape.to_vec(), data);
        Ok(self.record(out, &[v], move |g, _| {
            let mut acc = vec![0.0f64; c];
            for (i, plane) in g.data().chunks(hw).enumerate() {
                acc[i % c] += plane.iter().map(|&x| x as f64).sum::<f64>();
            }
            vec![Some(Tensor::from_parts(
                vec![c],
                acc.into_iter().map(|x| x as f32).collect(),
            ))]
        }))
    }

    pub fn reshape(&mut self, a: &Var, shape: &[usize]) -> Result<Var> {
        let out = a.value().clone().reshape(shape)?;
        let orig = a.shape().to_vec();
        Ok(self.record(out, &[a], move |g, _| {
            vec![Some(g.clone().reshape(&orig).unwrap())]
        }))
    }
}
