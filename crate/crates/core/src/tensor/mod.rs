//! Dense 64-bit tensors with a reverse-mode autodiff tape.
//!
//! A [`Graph`] owns every node created during one forward pass. Nodes are
//! appended in creation order, so the node list is already a topological
//! order and `backward` walks it in reverse.

mod broadcast;
pub mod container;
pub mod gradcheck;
mod ops;
mod params;

use std::fmt;

pub(crate) use ops::{cosine_forward, CosineDims};
pub use ops::{oneplus, sigmoid, softmax_rows, Primitive, COSINE_EPS};
pub use params::{clip_grad_norm, Adam, BoundParams, ParamEntry, Parameters};

use crate::error::{Error, Result};

/// Plain row-major tensor value, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
///
/// `backward` must add d(loss)/d(input `k`) into `grad_in`, given the
/// values of all inputs, the op's output value and the output gradient.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        k: usize,
        inputs: &[&[f64]],
        output: &[f64],
        grad_out: &[f64],
        grad_in: &mut [f64],
    );
}

pub(crate) enum OpKind {
    Leaf,
    Prim { prim: Primitive, saved: Vec<f64> },
    Custom(Box<dyn CustomOp>),
}

impl OpKind {
    fn tag(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Prim { prim, .. } => prim.tag(),
            OpKind::Custom(op) => op.name(),
        }
    }
}

/// One node of the autodiff graph.
pub struct TensorNode {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub parents: Vec<Var>,
    pub requires_grad: bool,
    pub(crate) op: OpKind,
}

impl TensorNode {
    pub fn op_tag(&self) -> &'static str {
        self.op.tag()
    }
}

impl fmt::Debug for TensorNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorNode")
            .field("op", &self.op_tag())
            .field("shape", &self.shape)
            .field("parents", &self.parents)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<TensorNode>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(TensorNode {
            shape: t.shape,
            value: t.data,
            grad: None,
            parents: Vec::new(),
            requires_grad,
            op: OpKind::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn node(&self, v: Var) -> &TensorNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor {
            shape: n.shape.clone(),
            data: n.value.clone(),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, parents: Vec<Var>, op: OpKind) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(TensorNode {
            shape,
            value,
            grad: None,
            parents,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a node produced by an external kernel with its own backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Box<dyn CustomOp>,
    ) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != value.len() {
            return Err(Error::Shape {
                op: op.name(),
                lhs: shape,
                rhs: vec![value.len()],
            });
        }
        Ok(self.push(shape, value, inputs.to_vec(), OpKind::Custom(op)))
    }

    /// Resets every gradient in the graph.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate into any
    /// grads already present.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        if !root.requires_grad {
            return Ok(());
        }
        match &mut self.nodes[loss.0].grad {
            Some(g) => g[0] += 1.0,
            slot @ None => *slot = Some(vec![1.0]),
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad_out) = self.nodes[i].grad.take() else {
                continue;
            };
            let parents = self.nodes[i].parents.clone();
            for (k, p) in parents.iter().enumerate() {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                let len = self.nodes[p.0].value.len();
                let mut pg = self.nodes[p.0]
                    .grad
                    .take()
                    .unwrap_or_else(|| vec![0.0; len]);
                self.backward_into(i, k, &grad_out, &mut pg);
                self.nodes[p.0].grad = Some(pg);
            }
            self.nodes[i].grad = Some(grad_out);
        }
        Ok(())
    }

    fn backward_into(&self, i: usize, k: usize, grad_out: &[f64], grad_in: &mut [f64]) {
        let node = &self.nodes[i];
        match &node.op {
            OpKind::Leaf => {}
            OpKind::Prim { prim, saved } => {
                ops::backward(self, node, prim, saved, k, grad_out, grad_in)
            }
            OpKind::Custom(op) => {
                let inputs: Vec<&[f64]> = node.parents.iter().map(|p| self.value(*p)).collect();
                op.backward(k, &inputs, &node.value, grad_out, grad_in);
            }
        }
    }
}
