//! Named parameters, non-trainable buffers, and the model registry.
//!
//! Layers are built against a [`Scope`], which assigns dot-separated path
//! names ("encoder.fe1.entry.linear.weight") and records everything in a
//! [`ParamSet`]. The set is the single source of truth for checkpoints and
//! the optimizer; registration order is construction order and is
//! deterministic, while checkpoints are laid out in lexicographic name
//! order.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::add_assign;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// A trainable tensor with an accumulated gradient.
#[derive(Debug)]
pub struct Parameter<S: Real> {
    name: String,
    value: RefCell<Tensor<S>>,
    grad: RefCell<Option<Tensor<S>>>,
}

impl<S: Real> Parameter<S> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Tensor<S> {
        self.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value.borrow().shape().to_vec()
    }

    /// Replace the stored value (optimizer step or checkpoint load).
    pub fn set_value(&self, t: Tensor<S>) {
        *self.value.borrow_mut() = t;
    }

    /// Gradient accumulated by the last backward pass; zeros when the
    /// parameter was unreachable from the loss.
    pub fn grad(&self) -> Tensor<S> {
        match &*self.grad.borrow() {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.value.borrow().shape()),
        }
    }

    pub fn zero_grad(&self) {
        *self.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &Tensor<S>) {
        let mut slot = self.grad.borrow_mut();
        match &mut *slot {
            None => *slot = Some(g.clone()),
            Some(acc) => {
                let mut data = acc.data().to_vec();
                add_assign(g.data(), &mut data);
                *acc = Tensor::new_unchecked(acc.shape().to_vec(), data);
            }
        }
    }
}

/// A named non-trainable tensor (running statistics and the like).
#[derive(Debug)]
pub struct Buffer<S: Real> {
    name: String,
    value: RefCell<Tensor<S>>,
}

impl<S: Real> Buffer<S> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> Tensor<S> {
        self.value.borrow().clone()
    }

    pub fn set_value(&self, t: Tensor<S>) {
        *self.value.borrow_mut() = t;
    }
}

/// Registry of all named tensors in a model.
#[derive(Debug, Default)]
pub struct ParamSet<S: Real> {
    params: RefCell<Vec<Rc<Parameter<S>>>>,
    buffers: RefCell<Vec<Rc<Buffer<S>>>>,
    names: RefCell<BTreeSet<String>>,
}

impl<S: Real> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            params: RefCell::new(Vec::new()),
            buffers: RefCell::new(Vec::new()),
            names: RefCell::new(BTreeSet::new()),
        }
    }

    /// Root scope for building a model into this set.
    pub fn root(&self) -> Scope<'_, S> {
        Scope {
            set: self,
            prefix: String::new(),
        }
    }

    /// Trainable parameters in registration order.
    pub fn params(&self) -> Vec<Rc<Parameter<S>>> {
        self.params.borrow().clone()
    }

    /// Buffers in registration order.
    pub fn buffers(&self) -> Vec<Rc<Buffer<S>>> {
        self.buffers.borrow().clone()
    }

    pub fn num_scalars(&self) -> usize {
        self.params
            .borrow()
            .iter()
            .map(|p| p.value.borrow().numel())
            .sum()
    }

    pub fn zero_grads(&self) {
        for p in self.params.borrow().iter() {
            p.zero_grad();
        }
    }

    /// All named tensors (parameters and buffers) sorted by name; this is
    /// the checkpoint layout order.
    pub fn named_sorted(&self) -> Vec<(String, Tensor<S>)> {
        let mut out: Vec<(String, Tensor<S>)> = self
            .params
            .borrow()
            .iter()
            .map(|p| (p.name.clone(), p.value()))
            .chain(
                self.buffers
                    .borrow()
                    .iter()
                    .map(|b| (b.name.clone(), b.value())),
            )
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Write values back by name, verifying shapes.
    pub fn load_named(&self, entries: &[(String, Tensor<S>)]) -> Result<()> {
        use std::collections::HashMap;
        let mut by_name: HashMap<&str, &Tensor<S>> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut assign = |name: &str, shape: Vec<usize>| -> Result<Tensor<S>> {
            let t = by_name.remove(name).ok_or_else(|| {
                TensorError::Checkpoint(format!("missing tensor {name:?}"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(TensorError::Checkpoint(format!(
                    "shape mismatch for {name:?}: model {:?}, file {:?}",
                    shape,
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        for p in self.params.borrow().iter() {
            let t = assign(&p.name, p.shape())?;
            p.set_value(t);
        }
        for b in self.buffers.borrow().iter() {
            let shape = b.value.borrow().shape().to_vec();
            let t = assign(&b.name, shape)?;
            b.set_value(t);
        }
        if let Some((name, _)) = by_name.into_iter().next() {
            return Err(TensorError::Checkpoint(format!(
                "unexpected tensor {name:?} not present in model"
            )));
        }
        Ok(())
    }

    fn claim_name(&self, name: &str) {
        assert!(
            self.names.borrow_mut().insert(name.to_string()),
            "duplicate parameter name {name:?}"
        );
    }
}

/// Name-prefixing handle used while constructing a model.
pub struct Scope<'a, S: Real> {
    set: &'a ParamSet<S>,
    prefix: String,
}

impl<'a, S: Real> Scope<'a, S> {
    pub fn child(&self, name: &str) -> Scope<'a, S> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Scope {
            set: self.set,
            prefix,
        }
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&self, name: &str, init: Tensor<S>) -> Rc<Parameter<S>> {
        let full = self.full(name);
        self.set.claim_name(&full);
        let p = Rc::new(Parameter {
            name: full,
            value: RefCell::new(init),
            grad: RefCell::new(None),
        });
        self.set.params.borrow_mut().push(Rc::clone(&p));
        p
    }

    pub fn buffer(&self, name: &str, init: Tensor<S>) -> Rc<Buffer<S>> {
        let full = self.full(name);
        self.set.claim_name(&full);
        let b = Rc::new(Buffer {
            name: full,
            value: RefCell::new(init),
        });
        self.set.buffers.borrow_mut().push(Rc::clone(&b));
        b
    }
}
