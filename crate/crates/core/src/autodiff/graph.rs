use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::{Error, Result, Tensor};

/// Identifies a trainable tensor. Gradients are reported per `ParamId`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// A differentiable operation recorded on a [`Graph`].
///
/// `forward` may stash whatever it needs for the backward pass in `self`
/// (argmax indices, normalization statistics, ...). `backward` receives the
/// input values, the forward output and the upstream gradient, and returns
/// one gradient per input. Inputs whose entry in `wants` is `false` may be
/// returned as `None`.
pub trait Op {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor>;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        wants: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Rc<Tensor>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Op>>,
    param: Option<ParamId>,
    needs_grad: bool,
}

/// Record of the operations executed during one forward pass.
///
/// Nodes are appended in execution order, so the record is already
/// topologically sorted. A graph is built per forward pass and dropped after
/// [`Graph::backward`].
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar loss with respect to the parameter leaves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    /// Adds every gradient of `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.grads {
            self.accumulate(id, g);
        }
    }

    /// Multiplies every gradient by `k`.
    pub fn scale(&mut self, k: f64) {
        for g in self.grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }

    fn accumulate(&mut self, id: ParamId, grad: Tensor) {
        match self.grads.get_mut(&id) {
            Some(existing) => existing.add_assign(&grad),
            None => {
                self.grads.insert(id, grad);
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            op: None,
            param: None,
            needs_grad: false,
        })
    }

    /// A leaf whose gradient is reported under `id`.
    pub fn param(&self, id: ParamId, value: Tensor) -> Var<'_> {
        self.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            op: None,
            param: Some(id),
            needs_grad: true,
        })
    }

    /// Runs `op` on `inputs` and records it.
    pub fn apply<'g>(&'g self, mut op: impl Op + 'static, inputs: &[Var<'g>]) -> Result<Var<'g>> {
        let (value, needs_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor> = inputs.iter().map(|v| &*nodes[v.id].value).collect();
            let value = op.forward(&values)?;
            let needs_grad = inputs.iter().any(|v| nodes[v.id].needs_grad);
            (value, needs_grad)
        };
        Ok(self.push(Node {
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.id).collect(),
            op: needs_grad.then(|| Box::new(op) as Box<dyn Op>),
            param: None,
            needs_grad,
        }))
    }

    /// Reverse-mode pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.needs_grad {
            return Err(Error::DetachedLoss);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::ones(root.value.shape()));
        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if let Some(param) = node.param {
                out.accumulate(param, grad);
                continue;
            }
            let Some(op) = node.op.as_ref() else {
                continue;
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|&i| &*nodes[i].value).collect();
            let wants: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].needs_grad).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &wants);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((&input, g), want) in node.inputs.iter().zip(input_grads).zip(wants) {
                let Some(g) = g else { continue };
                if !want {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[input].value.shape(), "{}", op.name());
                match &mut grads[input] {
                    Some(existing) => existing.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(out)
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.graph.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// The value of a one-element var.
    pub fn item(&self) -> Option<f64> {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].needs_grad
    }
}
