//! A small reverse-mode differentiation engine.
//!
//! Every forward computation records its nodes on a [`Graph`] (a tape).
//! Handles of type [`Tensor`] index into that tape and are only meaningful for
//! the graph that produced them. Trainable values live in a [`ParamStore`];
//! a graph copies a parameter in on first use and
//! [`Graph::accumulate_param_grads`] writes the gradients back after
//! [`Graph::backward`].
//!
//! Values are `f64`, row-major.

mod check;
mod ops;
mod optim;

use std::collections::HashMap;

use thiserror::Error;

pub use check::{grad_check, GradCheckReport};
pub use ops::PoolMode;
pub use optim::{AdamConfig, AdamState, Checkpoint, CheckpointError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch { op: &'static str, expected: String, got: String },
    #[error("{0}: every position along the reduced axis is masked")]
    AllMasked(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no parameter has a gradient")]
    MissingGradient,
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn mismatch(op: &'static str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> TensorError {
    TensorError::ShapeMismatch { op, expected: format!("{expected:?}"), got: format!("{got:?}") }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

/// Handle to a parameter of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

/// Named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(data.len(), shape.iter().product::<usize>(), "data length for {name}");
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, shape: shape.to_vec(), data, grad: None });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
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

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: ops::Op,
    requires_grad: bool,
}

/// Tape of a forward computation.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Tensor>,
    training: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), params: HashMap::new(), training: false }
    }

    pub fn training() -> Self {
        Graph { training: true, ..Self::new() }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: ops::Op, requires_grad: bool) -> Tensor {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Tensor(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], value: Vec<f64>) -> Result<Tensor> {
        if value.len() != shape.iter().product::<usize>() {
            return Err(mismatch("constant", shape, value.len()));
        }
        Ok(self.push(shape.to_vec(), value, ops::Op::Leaf, false))
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn variable(&mut self, shape: &[usize], value: Vec<f64>) -> Result<Tensor> {
        if value.len() != shape.iter().product::<usize>() {
            return Err(mismatch("variable", shape, value.len()));
        }
        Ok(self.push(shape.to_vec(), value, ops::Op::Leaf, true))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Tensor {
        self.push(shape.to_vec(), vec![0.0; shape.iter().product()], ops::Op::Leaf, false)
    }

    /// Leaf holding the current value of a stored parameter; repeated calls
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        if let Some(&t) = self.params.get(&id) {
            return t;
        }
        let p = store.get(id);
        let t = self.push(p.shape.clone(), p.data.clone(), ops::Op::Leaf, true);
        self.params.insert(id, t);
        t
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn value(&self, t: Tensor) -> &[f64] {
        &self.nodes[t.0].value
    }

    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.0].value[0]
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    pub fn grad(&self, t: Tensor) -> Option<&[f64]> {
        self.grads.get(t.0).and_then(|g| g.as_deref())
    }

    /// Reverse pass from a scalar. Gradients accumulate over shared
    /// subgraphs; the tape order is a valid topological order.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NotScalar(self.nodes[loss.0].shape.clone()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(grad) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                self.grads[i] = Some(grad);
                continue;
            }
            let contributions = ops::backward(&self.nodes, i, &grad);
            for (input, g) in contributions {
                if !self.nodes[input].requires_grad {
                    continue;
                }
                match &mut self.grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            self.grads[i] = Some(grad);
        }
        Ok(())
    }

    /// Adds this graph's parameter gradients into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        let mut pairs: Vec<_> = self.params.iter().collect();
        pairs.sort_by_key(|(id, _)| **id);
        for (&id, &t) in pairs {
            let Some(g) = self.grad(t) else { continue };
            let p = store.get_mut(id);
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }
    }
}

#[cfg(test)]
mod tests;
