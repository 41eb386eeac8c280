//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] owns every value produced during a forward pass. Operations
//! append a node holding the output and, when any input needs a gradient, a
//! backward rule. [`backward`] walks the nodes in reverse, accumulating
//! gradients additively, and adds the result into each leaf that was created
//! with `requires_grad = true`. Intermediate gradients live only for the
//! duration of the call.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Inputs seen by a backward rule.
pub struct BackwardCtx<'a, T> {
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub grad_out: &'a [T],
    /// Whether each input needs a gradient; rules may skip the others.
    pub needs: &'a [bool],
}

/// Chain rule for one recorded operation. Returns one entry per input,
/// `None` where no gradient flows (or where `needs` was false).
pub trait Backward<T>: Send {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    rule: Option<Box<dyn Backward<T>>>,
    needs_grad: bool,
}

pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let needs_grad = value.requires_grad();
        self.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            needs_grad,
        })
    }

    /// Records a learnable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn slot(&self, var: Var) -> Result<usize> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::UnknownNode);
        }
        Ok(var.index)
    }

    pub fn contains(&self, var: Var) -> bool {
        self.slot(var).is_ok()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        let i = self.slot(var).expect("variable recorded on this tape");
        &self.nodes[i].value
    }

    pub fn try_value(&self, var: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.slot(var)?].value)
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.value(var).shape()
    }

    /// Accumulated gradient of a leaf after [`backward`].
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.value(var).grad()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        let i = self.slot(var).expect("variable recorded on this tape");
        self.nodes[i].needs_grad
    }

    /// Records the result of an operation. The backward rule is dropped when
    /// no input needs a gradient.
    pub fn record(
        &mut self,
        output: Tensor<T>,
        inputs: &[Var],
        rule: impl Backward<T> + 'static,
    ) -> Result<Var> {
        let mut idx = Vec::with_capacity(inputs.len());
        for &v in inputs {
            idx.push(self.slot(v)?);
        }
        let needs_grad = idx.iter().any(|&i| self.nodes[i].needs_grad);
        let rule: Option<Box<dyn Backward<T>>> = if needs_grad {
            Some(Box::new(rule))
        } else {
            None
        };
        Ok(self.push(Node {
            value: output.with_requires_grad(false),
            inputs: idx,
            rule,
            needs_grad,
        }))
    }

    /// Whether any recorded input needs a gradient; ops use it to skip
    /// saving backward state.
    pub fn any_needs_grad(&self, inputs: &[Var]) -> bool {
        inputs
            .iter()
            .any(|&v| self.slot(v).map(|i| self.nodes[i].needs_grad).unwrap_or(false))
    }

    /// Clears the gradient of every leaf.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Drops every recorded node.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.slot(loss)?;
        let shape = self.nodes[root].value.shape();
        if shape != Shape::SCALAR {
            return Err(Error::Contract(format!(
                "backward needs a 1x1x1x1 loss, got {shape}"
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            let Some(rule) = &node.rule else { continue };
            let Some(grad_out) = grads[i].take() else { continue };
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j].needs_grad)
                .collect();
            let contributions = rule.backward(&BackwardCtx {
                inputs: &inputs,
                output: &node.value,
                grad_out: &grad_out,
                needs: &needs,
            });
            debug_assert_eq!(contributions.len(), node.inputs.len());
            for (&j, contrib) in node.inputs.iter().zip(contributions) {
                let Some(g) = contrib else { continue };
                if !self.nodes[j].needs_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[j].value.shape().numel());
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.rule.is_none() && node.inputs.is_empty() && node.needs_grad {
                if let Some(g) = g {
                    node.value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }
}

/// Populates `∂loss/∂leaf` for every learnable leaf on `tape`.
pub fn backward<T: Scalar>(tape: &mut Tape<T>, loss: Var) -> Result<()> {
    tape.backward(loss)
}
