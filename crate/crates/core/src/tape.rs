//! Reverse-mode gradient tape.
//!
//! The tape is rebuilt on every forward pass: each operation appends a node
//! holding its output value and a closure that routes the output gradient
//! to the operation's inputs. [`Tape::backward`] walks the nodes in exact
//! reverse recording order, so accumulation order is deterministic and
//! repeated runs produce bit-identical gradients.
//!
//! Parameters live outside the tape (see [`crate::param`]) and are attached
//! per pass via [`Tape::param`]; their gradients accumulate across forward
//! passes until explicitly zeroed.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::param::Parameter;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub(crate) type BackStep<S> = Box<dyn Fn(&Tensor<S>, &mut Grads<S>)>;

pub(crate) struct Node<S: Real> {
    pub value: Tensor<S>,
    pub needs_grad: bool,
    pub backward: Option<BackStep<S>>,
    pub param: Option<Rc<Parameter<S>>>,
}

struct TapeBody<S: Real> {
    nodes: Vec<Node<S>>,
    consumed: bool,
    grad_enabled: bool,
}

/// Shared handle to one recording of a forward pass.
pub struct Tape<S: Real> {
    inner: Rc<RefCell<TapeBody<S>>>,
}

impl<S: Real> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

/// Handle to one node on a tape. Cheap to clone; the tensor value is shared.
pub struct Var<S: Real> {
    pub(crate) tape: Tape<S>,
    pub(crate) idx: usize,
    pub(crate) shape: Vec<usize>,
}

impl<S: Real> Clone for Var<S> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            idx: self.idx,
            shape: self.shape.clone(),
        }
    }
}

/// Per-node gradient buffers used during a backward pass.
pub struct Grads<S: Real> {
    bufs: Vec<Option<Vec<S>>>,
    wants: Vec<bool>,
    sizes: Vec<usize>,
}

impl<S: Real> Grads<S> {
    /// Apply `f` to the gradient buffer of node `idx`, allocating zeros on
    /// first touch. No-op when the node does not require gradient.
    pub(crate) fn with(&mut self, idx: usize, f: impl FnOnce(&mut [S])) {
        if !self.wants[idx] {
            return;
        }
        let buf = self.bufs[idx].get_or_insert_with(|| vec![S::zero(); self.sizes[idx]]);
        f(buf);
    }

    fn take(&mut self, idx: usize) -> Option<Vec<S>> {
        self.bufs[idx].take()
    }
}

impl<S: Real> Tape<S> {
    pub fn new() -> Self {
        Self::with_grad(true)
    }

    /// A tape that records values only; backward closures are dropped and
    /// parameters are treated as constants. Used for inference.
    pub fn inference() -> Self {
        Self::with_grad(false)
    }

    fn with_grad(grad_enabled: bool) -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeBody {
                nodes: Vec::new(),
                consumed: false,
                grad_enabled,
            })),
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.inner.borrow().grad_enabled
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a leaf with no gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<S> {
        self.push(value, false, None, None)
    }

    /// Register a parameter as a leaf of this pass. Its gradient receives
    /// contributions when [`Tape::backward`] runs.
    pub fn param(&self, p: &Rc<Parameter<S>>) -> Var<S> {
        let needs = self.grad_enabled();
        self.push(p.value(), needs, None, needs.then(|| Rc::clone(p)))
    }

    pub(crate) fn push(
        &self,
        value: Tensor<S>,
        needs_grad: bool,
        backward: Option<BackStep<S>>,
        param: Option<Rc<Parameter<S>>>,
    ) -> Var<S> {
        let shape = value.shape().to_vec();
        let mut body = self.inner.borrow_mut();
        let needs = needs_grad && body.grad_enabled;
        body.nodes.push(Node {
            value,
            needs_grad: needs,
            backward: if needs { backward } else { None },
            param,
        });
        Var {
            tape: self.clone(),
            idx: body.nodes.len() - 1,
            shape,
        }
    }

    /// Propagate gradients from a scalar loss back to every reachable leaf.
    /// Consumes the tape: a second call is an error, as is a non-scalar
    /// loss.
    pub fn backward(&self, loss: &Var<S>) -> Result<()> {
        {
            let mut body = self.inner.borrow_mut();
            if body.consumed {
                return Err(TensorError::TapeConsumed);
            }
            if !body.grad_enabled {
                return Err(TensorError::invalid(
                    "backward called on an inference tape",
                ));
            }
            let loss_shape = body.nodes[loss.idx].value.shape().to_vec();
            if body.nodes[loss.idx].value.numel() != 1 {
                return Err(TensorError::NonScalarLoss { shape: loss_shape });
            }
            body.consumed = true;
        }
        let body = self.inner.borrow();
        let n = body.nodes.len();
        let mut grads = Grads {
            bufs: (0..n).map(|_| None).collect(),
            wants: body.nodes.iter().map(|nd| nd.needs_grad).collect(),
            sizes: body.nodes.iter().map(|nd| nd.value.numel()).collect(),
        };
        grads.with(loss.idx, |buf| buf[0] = S::one());
        for idx in (0..=loss.idx).rev() {
            let Some(gbuf) = grads.take(idx) else {
                continue;
            };
            let node = &body.nodes[idx];
            let g = Tensor::new_unchecked(node.value.shape().to_vec(), gbuf);
            if let Some(p) = &node.param {
                p.accumulate_grad(&g);
            }
            if let Some(step) = &node.backward {
                step(&g, &mut grads);
            }
        }
        Ok(())
    }

    pub(crate) fn value_of(&self, idx: usize) -> Tensor<S> {
        self.inner.borrow().nodes[idx].value.clone()
    }

    pub(crate) fn needs_grad_of(&self, idx: usize) -> bool {
        self.inner.borrow().nodes[idx].needs_grad
    }
}

impl<S: Real> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Real> std::fmt::Debug for Var<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("shape", &self.shape)
            .finish()
    }
}

impl<S: Real> Var<S> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn value(&self) -> Tensor<S> {
        self.tape.value_of(self.idx)
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.needs_grad_of(self.idx)
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self) -> Result<S> {
        let v = self.value();
        if v.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: v.shape().to_vec(),
            });
        }
        Ok(v.item())
    }

    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }

    pub(crate) fn same_tape(&self, other: &Var<S>) -> Result<()> {
        if !Rc::ptr_eq(&self.tape.inner, &other.tape.inner) {
            return Err(TensorError::invalid(
                "operands were recorded on different tapes",
            ));
        }
        Ok(())
    }
}
