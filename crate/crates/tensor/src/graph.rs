//! Operation tape and reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order. Node ids are
//! assigned on insertion, so inputs always precede the nodes that consume
//! them and a single reverse sweep visits each operation once.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::float::Float;
use crate::param::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation.
///
/// `forward` computes the output from its inputs; `backward` maps the
/// upstream gradient to one gradient per input. Entries for inputs whose
/// `needs` flag is false may be `None`.
pub trait Op<T: Float> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Value<'p, T: Float> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T: Float> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'p, T: Float> {
    value: Value<'p, T>,
    op: Option<Box<dyn Op<T>>>,
    inputs: Vec<Var>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Summary of a backward sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardStats {
    pub ops_visited: usize,
}

/// Recorded computation.
///
/// Parameters are borrowed from a [`ParamStore`] for the lifetime of the
/// graph, so recording never copies weights. Drop the graph before
/// updating the store.
pub struct Graph<'p, T: Float> {
    nodes: Vec<Node<'p, T>>,
    param_leaves: HashMap<ParamId, Var>,
    leaf_grads: HashMap<usize, Tensor<T>>,
    track_params: bool,
    backpropagated: bool,
}

impl<T: Float> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Float> Graph<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            leaf_grads: HashMap::new(),
            track_params: true,
            backpropagated: false,
        }
    }

    /// A graph whose parameter leaves do not require gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations (non-leaf nodes).
    pub fn num_ops(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_some()).count()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(Value::Owned(value), false, None)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_leaf(Value::Owned(value), requires_grad, None)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so every use of a shared parameter accumulates into one gradient.
    pub fn param(&mut self, store: &'p ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let requires = self.track_params;
        let v = self.push_leaf(Value::Borrowed(store.get(id)), requires, Some(id));
        self.param_leaves.insert(id, v);
        v
    }

    fn push_leaf(&mut self, value: Value<'p, T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records `op` applied to `inputs`.
    pub fn apply<O: Op<T> + 'static>(&mut self, op: O, inputs: &[Var]) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
            op.forward(&refs)?
        };
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Some(Box::new(op)),
            inputs: inputs.to_vec(),
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of grad-requiring
    /// leaves become available through [`Graph::grad`] and
    /// [`Graph::param_grads`]. A graph can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats> {
        if self.backpropagated {
            return Err(TensorError::AlreadyBackpropagated);
        }
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        self.backpropagated = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_shape));
        let mut ops_visited = 0;

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = node.op.as_ref() else {
                if let Some(g) = grads[i].take() {
                    self.leaf_grads.insert(i, g);
                }
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            ops_visited += 1;
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| self.nodes[v.0].value.get()).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let input_grads = op.backward(&inputs, node.value.get(), &grad, &needs)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((&input, g), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else { continue };
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(BackwardStats { ops_visited })
    }

    /// Gradient of a grad-requiring leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(&v.0)
    }

    /// Collects parameter gradients, indexed like `store`.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..store.len()).map(|_| None).collect();
        for (id, v) in &self.param_leaves {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                grads[id.index()] = Some(g.clone());
            }
        }
        debug_assert!(self
            .nodes
            .iter()
            .filter_map(|n| n.param)
            .all(|id| id.index() < store.len()));
        Gradients::new(grads)
    }
}
