//! Neural-network layers built on the tape: linear maps and batch
//! normalization, plus the weight initializer they share.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::ops::{batch_norm_eval, batch_norm_train};
use crate::param::{Buffer, Parameter, Scope};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Uniform init on `[-b, b]` with `b = sqrt(6 / fan_in)`, the bound used
/// for every weight matrix in this crate.
pub fn kaiming_uniform<S: Real, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data: Vec<S> = (0..fan_in * fan_out)
        .map(|_| S::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new_unchecked(vec![fan_out, fan_in], data)
}

/// Whether a forward pass uses batch statistics (training) or running
/// statistics (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Affine layer `y = x · Wᵀ + b` with `W` stored `[out, in]`.
pub struct Linear<S: Real> {
    pub weight: Rc<Parameter<S>>,
    pub bias: Rc<Parameter<S>>,
}

impl<S: Real> Linear<S> {
    pub fn new<R: Rng>(scope: &Scope<'_, S>, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: scope.param("weight", kaiming_uniform(rng, d_in, d_out)),
            bias: scope.param("bias", Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward(&self, tape: &Tape<S>, x: &Var<S>) -> Result<Var<S>> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        x.linear(&w, &b)
    }
}

/// Batch normalization over the channel (last) axis of a `[M, C]` view,
/// with running statistics tracked as buffers.
///
/// Training mode normalizes with the population variance of the current
/// batch and folds the batch statistics into the running ones as
/// `running = momentum * running + (1 - momentum) * batch`. Evaluation
/// mode uses the running statistics and never updates them.
pub struct BatchNorm<S: Real> {
    pub gamma: Rc<Parameter<S>>,
    pub beta: Rc<Parameter<S>>,
    pub running_mean: Rc<Buffer<S>>,
    pub running_var: Rc<Buffer<S>>,
    pub momentum: S,
    pub eps: S,
}

impl<S: Real> BatchNorm<S> {
    pub fn new(scope: &Scope<'_, S>, c: usize) -> Self {
        BatchNorm {
            gamma: scope.param("gamma", Tensor::full(&[c], S::one())),
            beta: scope.param("beta", Tensor::zeros(&[c])),
            running_mean: scope.buffer("running_mean", Tensor::zeros(&[c])),
            running_var: scope.buffer("running_var", Tensor::full(&[c], S::one())),
            momentum: S::from_f64(0.9),
            eps: S::from_f64(1e-5),
        }
    }

    /// Normalize a `[M, C]` view. In training mode `M >= 2` is required.
    pub fn forward_2d(&self, tape: &Tape<S>, x: &Var<S>, mode: Mode) -> Result<Var<S>> {
        let gamma = tape.param(&self.gamma);
        let beta = tape.param(&self.beta);
        match mode {
            Mode::Train => {
                let (y, stats) = batch_norm_train(x, &gamma, &beta, self.eps)?;
                let mom = self.momentum;
                let blend = |old: &Tensor<S>, new: &Tensor<S>| {
                    old.zip_with(new, "running_stats", |o, n| {
                        mom * o + (S::one() - mom) * n
                    })
                    .expect("running stat shapes are fixed")
                };
                self.running_mean
                    .set_value(blend(&self.running_mean.value(), &stats.mean));
                self.running_var
                    .set_value(blend(&self.running_var.value(), &stats.var));
                Ok(y)
            }
            Mode::Eval => batch_norm_eval(
                x,
                &gamma,
                &beta,
                &self.running_mean.value(),
                &self.running_var.value(),
                self.eps,
            ),
        }
    }

    /// Normalize a variable of any rank with channels on the last axis by
    /// flattening the leading axes into the batch.
    pub fn forward(&self, tape: &Tape<S>, x: &Var<S>, mode: Mode) -> Result<Var<S>> {
        let sh = x.shape().to_vec();
        let c = *sh.last().ok_or_else(|| {
            TensorError::invalid("batch norm input needs at least one axis")
        })?;
        let m = x.numel() / c.max(1);
        let flat = x.reshape(&[m, c])?;
        let y = self.forward_2d(tape, &flat, mode)?;
        y.reshape(&sh)
    }
}
