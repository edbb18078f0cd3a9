//! Reverse-mode autodiff tape.
//!
//! Every op evaluates eagerly and, when the graph is recording and at least
//! one input is tracked, appends a node holding a vector-Jacobian closure.
//! Values are shared through `Arc` so an inference graph keeps nothing alive
//! beyond the `Var`s the caller still holds.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Vector-Jacobian product: receives the output gradient and a per-input
/// "needs gradient" mask, returns one optional gradient per input.
pub(crate) type Backward = Box<dyn Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

enum Node {
    Leaf,
    Param(ParamId),
    Op {
        inputs: Vec<Option<usize>>,
        backward: Backward,
    },
}

/// A value flowing through a [`Graph`]. Untracked vars are constants.
#[derive(Clone)]
pub struct Var {
    id: Option<usize>,
    value: Arc<Tensor>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("value", &self.value)
            .finish()
    }
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    pub(crate) fn arc(&self) -> Arc<Tensor> {
        Arc::clone(&self.value)
    }

    pub fn into_tensor(self) -> Tensor {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

/// Whether layers with train/eval behaviour (batch norm) use batch or running
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    leaf_grads: HashMap<usize, Tensor>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording graph for training and gradient checks.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            leaf_grads: HashMap::new(),
            buffer_updates: Vec::new(),
        }
    }

    /// A non-recording graph: ops evaluate but no tape is kept.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&self, value: Tensor) -> Var {
        Var {
            id: None,
            value: Arc::new(value),
        }
    }

    /// A tracked input whose gradient can be read back with [`Graph::grad`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        let id = self.push(Node::Leaf);
        Var {
            id,
            value: Arc::new(value),
        }
    }

    /// Brings a stored parameter into the graph. Non-learnable parameters come
    /// in as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.value_arc(id);
        let node = if store.get(id).learnable() {
            self.push(Node::Param(id))
        } else {
            None
        };
        Var { id: node, value }
    }

    fn push(&mut self, node: Node) -> Option<usize> {
        if !self.recording {
            return None;
        }
        self.nodes.push(node);
        Some(self.nodes.len() - 1)
    }

    pub(crate) fn record<F>(&mut self, value: Tensor, inputs: &[&Var], backward: F) -> Var
    where
        F: Fn(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let tracked = self.recording && inputs.iter().any(|v| v.id.is_some());
        let id = if tracked {
            self.push(Node::Op {
                inputs: inputs.iter().map(|v| v.id).collect(),
                backward: Box::new(backward),
            })
        } else {
            None
        };
        Var {
            id,
            value: Arc::new(value),
        }
    }

    /// Queues a buffer update (e.g. batch-norm running stats) produced by a
    /// training forward pass.
    pub fn push_buffer_update(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Back-propagates from a scalar loss, accumulating into parameter
    /// gradients in `store` and into leaf gradients held by the graph.
    /// Calling it twice accumulates twice.
    pub fn backward(&mut self, loss: &Var, store: &mut ParamStore) -> Result<()> {
        self.backward_inner(loss, Some(store))
    }

    /// Like [`Graph::backward`] for graphs without parameters.
    pub fn backward_leaves(&mut self, loss: &Var) -> Result<()> {
        self.backward_inner(loss, None)
    }

    fn backward_inner(&mut self, loss: &Var, mut store: Option<&mut ParamStore>) -> Result<()> {
        if !loss.value.is_scalar() {
            return Err(TensorError::NotScalar(loss.shape().to_vec()));
        }
        let Some(root) = loss.id else {
            return Ok(());
        };
        let mut grads: Vec<Option<Tensor>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(loss.shape()));

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i] {
                Node::Leaf => match self.leaf_grads.get_mut(&i) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        self.leaf_grads.insert(i, g);
                    }
                },
                Node::Param(pid) => {
                    if let Some(store) = store.as_deref_mut() {
                        store.accumulate_grad(*pid, &g)?;
                    }
                }
                Node::Op { inputs, backward } => {
                    let needs: Vec<bool> = inputs.iter().map(Option::is_some).collect();
                    let input_grads = backward(&g, &needs);
                    for (slot, ig) in inputs.iter().zip(input_grads) {
                        if let (Some(j), Some(ig)) = (slot, ig) {
                            match &mut grads[*j] {
                                Some(acc) => acc.add_assign(&ig)?,
                                empty => *empty = Some(ig),
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a tracked leaf.
    pub fn grad(&self, v: &Var) -> Option<&Tensor> {
        v.id.and_then(|id| self.leaf_grads.get(&id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f32));
        let loss = g.sum(&x);
        g.backward_leaves(&loss).unwrap();
        assert_eq!(g.grad(&x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones(&[2]));
        assert!(matches!(
            g.backward_leaves(&x),
            Err(TensorError::NotScalar(_))
        ));
    }

    #[test]
    fn two_backward_passes_accumulate_exactly_twice() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_fn(&[4], |i| 0.3 * i as f32 - 0.2), true);
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let x = g.constant(Tensor::from_fn(&[4], |i| 1.0 + i as f32));
        let prod = g.mul(&wv, &x).unwrap();
        let sq = g.square(&prod);
        let loss = g.sum(&sq);
        g.backward(&loss, &mut store).unwrap();
        let once = store.grad(w).clone();
        g.backward(&loss, &mut store).unwrap();
        let twice = store.grad(w);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn inference_graph_records_nothing() {
        let store = {
            let mut s = ParamStore::new();
            s.add("w", Tensor::ones(&[3]), true);
            s
        };
        let mut g = Graph::inference();
        let w = g.param(&store, ParamId(0));
        let y = g.square(&w);
        assert!(!y.is_tracked());
        assert!(g.is_empty());
    }
}
