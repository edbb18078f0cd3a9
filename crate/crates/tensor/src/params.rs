use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named network weight with its accumulated gradient.
///
/// Non-learnable parameters (batch-norm running statistics) live in the same
/// store so checkpoints capture them, but never receive gradients.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Arc<Tensor>,
    grad: Tensor,
    learnable: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn learnable(&self) -> bool {
        self.learnable
    }
}

/// Owns every parameter of a model; layers refer to entries by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names are hierarchical (`analysis.conv0.weight`)
    /// and must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, learnable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value: Arc::new(value),
            grad,
            learnable,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.params[id.0].value)
    }

    /// Mutable access to a value; clones only if a live graph still shares it.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                detail: format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        self.params[id.0].grad.add_assign(g)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Euclidean norm over all learnable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.learnable)
            .flat_map(|p| p.grad.data())
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales every gradient so the global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let f = (max_norm / norm) as f32;
            for p in &mut self.params {
                p.grad.scale_inplace(f);
            }
        }
        norm
    }

    /// Total number of learnable scalars.
    pub fn learnable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.learnable)
            .map(|p| p.value.numel())
            .sum()
    }

    /// Applies buffer (non-gradient) updates collected during a training forward.
    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor)>) -> Result<()> {
        for (id, value) in updates {
            self.set_value(id, value)?;
        }
        Ok(())
    }

    pub(crate) fn grads_and_values_mut(
        &mut self,
    ) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }
}

impl Parameter {
    pub(crate) fn value_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.value)
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Tensor {
        &mut self.grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_bounds_the_global_norm() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros(&[2]), true);
        s.accumulate_grad(a, &Tensor::new(&[2], vec![3.0, 4.0]).unwrap())
            .unwrap();
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_names_panic() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(0.0), true);
        s.add("w", Tensor::scalar(0.0), true);
    }
}
