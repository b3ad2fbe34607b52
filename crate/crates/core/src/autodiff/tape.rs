use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::ops::Op;
use super::{AutodiffError, Tensor};

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub requires_grad: bool,
    pub op: Op,
}

struct Inner {
    nodes: Vec<Node>,
    finished: bool,
}

/// Wengert list of executed primitives.
///
/// Nodes are appended in execution order, so every op's inputs precede it.
/// A tape supports exactly one [`Tape::backward`] call; record a fresh tape
/// for the next step.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("finished", &inner.finished)
            .finish()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                finished: false,
            }),
        }
    }

    /// Trainable leaf: gradients are reported for it after `backward`.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op: Op::Leaf,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    pub(crate) fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let requires_grad = op
            .inputs()
            .into_iter()
            .any(|i| inner.nodes[i].requires_grad);
        inner.nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.inner.borrow().nodes[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients from multiple paths are summed. Calling this twice on the
    /// same tape returns [`AutodiffError::StaleTape`].
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutodiffError::ForeignVar);
        }
        let mut inner = self.inner.borrow_mut();
        if inner.finished {
            return Err(AutodiffError::StaleTape);
        }
        let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        inner.finished = true;
        let nodes = &inner.nodes;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        let mut leaf_grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaf_grads[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                continue;
            }
            node.op.backward(&node.value, &g, nodes, &mut |input, delta| {
                if !nodes[input].requires_grad {
                    return;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            });
        }
        Ok(Gradients { grads: leaf_grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a trainable leaf, or `None` when
    /// the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::wrt`] but materializes zeros for unreachable leaves.
    pub fn wrt_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.wrt(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) -> Result<(), AutodiffError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignVar)
        }
    }
}
