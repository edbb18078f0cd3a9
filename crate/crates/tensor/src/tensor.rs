use std::fmt;

use crate::error::{Result, TensorError};

/// Dense row-major `f32` tensor.
///
/// `integral` marks tensors that hold only whole numbers (quantized latents).
/// The flag is checked when set and cleared by any arithmetic that produces a
/// new tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    integral: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f32> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("integral", &self.integral)
            .field("head", &preview)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!(
                    "shape {shape:?} holds {numel} elements but {} were given",
                    data.len()
                ),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            integral: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
            integral: false,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[1], value)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
            integral: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access drops the integral flag; callers re-mark if needed.
    pub fn data_mut(&mut self) -> &mut [f32] {
        self.integral = false;
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f32 {
        self.data[0]
    }

    pub fn is_integral(&self) -> bool {
        self.integral
    }

    /// Flags the tensor as integer-valued after checking every element.
    pub fn into_integral(mut self) -> Result<Self> {
        if let Some(bad) = self.data.iter().find(|v| v.fract() != 0.0 || !v.is_finite()) {
            return Err(TensorError::InvalidArgument(format!(
                "integral tensor holds non-whole value {bad}"
            )));
        }
        self.integral = true;
        Ok(self)
    }

    /// Interprets the tensor as `N×C×H×W`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(TensorError::ShapeMismatch {
                op: "dims4",
                detail: format!("expected a rank-4 N×C×H×W tensor, got shape {other:?}"),
            }),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(TensorError::ShapeMismatch {
                op: "dims2",
                detail: format!("expected a rank-2 tensor, got shape {other:?}"),
            }),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                detail: format!("cannot view {:?} as {shape:?}", self.shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            integral: false,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            integral: false,
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        self.integral = false;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale_inplace(&mut self, factor: f32) {
        self.integral = false;
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn fill(&mut self, value: f32) {
        self.integral = false;
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }

    /// Copies sample `n` out of an `N×...` tensor, keeping a leading unit axis.
    pub fn sample(&self, n: usize) -> Result<Tensor> {
        let batch = self.shape.first().copied().unwrap_or(0);
        if n >= batch {
            return Err(TensorError::InvalidArgument(format!(
                "sample {n} out of range for batch of {batch}"
            )));
        }
        let per = self.data.len() / batch;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor {
            shape,
            data: self.data[n * per..(n + 1) * per].to_vec(),
            integral: self.integral,
        })
    }

    /// Stacks equally-shaped `1×...` (or unbatched) tensors along a new or
    /// existing leading batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| {
            TensorError::InvalidArgument("cannot stack an empty list of tensors".into())
        })?;
        let inner: Vec<usize> = if first.shape.len() > 1 && first.shape[0] == 1 {
            first.shape[1..].to_vec()
        } else {
            first.shape.clone()
        };
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.numel() != first.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    detail: format!("{:?} vs {:?}", first.shape, t.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Ok(Tensor {
            shape,
            data,
            integral: items.iter().all(|t| t.integral),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            integral: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_extents() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
        assert_eq!(Tensor::new(&[2, 3], vec![0.0; 6]).unwrap().numel(), 6);
    }

    #[test]
    fn integral_flag_rejects_fractions() {
        let t = Tensor::new(&[3], vec![1.0, -2.0, 0.0]).unwrap();
        assert!(t.into_integral().unwrap().is_integral());
        let t = Tensor::new(&[2], vec![1.0, 0.5]).unwrap();
        assert!(t.into_integral().is_err());
    }

    #[test]
    fn arithmetic_clears_integral_flag() {
        let t = Tensor::new(&[2], vec![1.0, 2.0])
            .unwrap()
            .into_integral()
            .unwrap();
        assert!(!t.map(|v| v * 0.5).is_integral());
    }

    #[test]
    fn stack_and_sample_are_inverse() {
        let a = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f32);
        let b = Tensor::from_fn(&[1, 2, 2, 2], |i| -(i as f32));
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2, 2]);
        assert_eq!(s.sample(1).unwrap(), b);
        assert_eq!(s.sample(0).unwrap(), a);
    }
}
