//! Adam with decoupled weight decay and a step-decay learning-rate
//! schedule.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::param::{ParamSet, Parameter};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub struct AdamConfig<S: Real> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    pub weight_decay: S,
}

impl<S: Real> AdamConfig<S> {
    pub fn new(lr: S, weight_decay: S) -> Self {
        AdamConfig {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            weight_decay,
        }
    }
}

struct Slot<S: Real> {
    param: Rc<Parameter<S>>,
    m: Vec<S>,
    v: Vec<S>,
}

/// Adam optimizer. Weight decay is decoupled: each step first shrinks the
/// parameter by `lr * wd * p`, then applies the bias-corrected moment
/// update computed from the raw gradient.
pub struct Adam<S: Real> {
    cfg: AdamConfig<S>,
    slots: Vec<Slot<S>>,
    step_count: u64,
}

impl<S: Real> Adam<S> {
    /// Track every trainable parameter currently registered in `set`, in
    /// registration order.
    pub fn new(cfg: AdamConfig<S>, set: &ParamSet<S>) -> Result<Self> {
        if cfg.lr <= S::zero() {
            return Err(TensorError::BadLearningRate(cfg.lr.to_f64_val()));
        }
        let slots = set
            .params()
            .into_iter()
            .map(|param| {
                let n = param.value().numel();
                Slot {
                    param,
                    m: vec![S::zero(); n],
                    v: vec![S::zero(); n],
                }
            })
            .collect();
        Ok(Adam {
            cfg,
            slots,
            step_count: 0,
        })
    }

    pub fn set_lr(&mut self, lr: S) -> Result<()> {
        if lr <= S::zero() {
            return Err(TensorError::BadLearningRate(lr.to_f64_val()));
        }
        self.cfg.lr = lr;
        Ok(())
    }

    pub fn lr(&self) -> S {
        self.cfg.lr
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update from the gradients currently stored on the
    /// parameters. Gradients are not cleared here.
    pub fn step(&mut self) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count;
        let one = S::one();
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let bc1 = one - b1.powi(t as i32);
        let bc2 = one - b2.powi(t as i32);
        for slot in &mut self.slots {
            let grad = slot.param.grad();
            let value = slot.param.value();
            let mut p = value.data().to_vec();
            let g = grad.data();
            if self.cfg.weight_decay > S::zero() {
                let shrink = self.cfg.lr * self.cfg.weight_decay;
                for pv in p.iter_mut() {
                    *pv -= shrink * *pv;
                }
            }
            for i in 0..p.len() {
                slot.m[i] = b1 * slot.m[i] + (one - b1) * g[i];
                slot.v[i] = b2 * slot.v[i] + (one - b2) * g[i] * g[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                p[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            let updated = Tensor::new_unchecked(value.shape().to_vec(), p);
            updated.validate_finite("adam_step")?;
            slot.param.set_value(updated);
        }
        Ok(())
    }
}

/// Step-decay schedule: the base rate divided by `factor` once per
/// milestone epoch passed.
#[derive(Debug, Clone)]
pub struct StepDecay<S: Real> {
    pub base_lr: S,
    pub factor: S,
    pub milestones: Vec<usize>,
}

impl<S: Real> StepDecay<S> {
    /// Learning rate in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> S {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        let mut lr = self.base_lr;
        for _ in 0..passed {
            lr = lr / self.factor;
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: &[f64]) -> (ParamSet<f64>, Rc<Parameter<f64>>) {
        let set = ParamSet::new();
        let p = set
            .root()
            .param("p", Tensor::from_vec(vec![v.len()], v.to_vec()).unwrap());
        (set, p)
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // With m = v = 0 and bias correction, the first update moves each
        // coordinate by exactly lr * g / (|g| + eps), independent of the
        // gradient magnitude.
        let (set, p) = single_param(&[1.0, -2.0]);
        let g = Tensor::from_vec(vec![2], vec![0.5, -3.0]).unwrap();
        p.accumulate_grad(&g);
        let mut opt = Adam::new(AdamConfig::new(0.01, 0.0), &set).unwrap();
        opt.step().unwrap();
        let got = p.value();
        let expect = |x: f64, g: f64| x - 0.01 * g / (g.abs() + 1e-8);
        assert!((got.data()[0] - expect(1.0, 0.5)).abs() < 1e-12);
        assert!((got.data()[1] - expect(-2.0, -3.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_zero_decay_leaves_parameter_unchanged() {
        let (set, p) = single_param(&[0.7, -0.3]);
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.0), &set).unwrap();
        opt.step().unwrap();
        opt.step().unwrap();
        assert_eq!(p.value().data(), &[0.7, -0.3]);
    }

    #[test]
    fn decay_shrinks_before_the_update() {
        let (set, p) = single_param(&[2.0]);
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.5), &set).unwrap();
        opt.step().unwrap();
        // No gradient: the step reduces to p * (1 - lr * wd).
        assert!((p.value().data()[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn non_positive_lr_rejected() {
        let (set, _) = single_param(&[1.0]);
        assert!(Adam::new(AdamConfig::new(0.0, 0.0), &set).is_err());
        assert!(Adam::new(AdamConfig::new(-0.1, 0.0), &set).is_err());
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.0), &set).unwrap();
        assert!(opt.set_lr(0.0).is_err());
    }

    #[test]
    fn step_decay_schedule() {
        let sched: StepDecay<f64> = StepDecay {
            base_lr: 1e-3,
            factor: 5.0,
            milestones: vec![12, 24, 36],
        };
        assert!((sched.lr_at(0) - 1e-3).abs() < 1e-15);
        assert!((sched.lr_at(11) - 1e-3).abs() < 1e-15);
        assert!((sched.lr_at(12) - 2e-4).abs() < 1e-15);
        assert!((sched.lr_at(24) - 4e-5).abs() < 1e-15);
        assert!((sched.lr_at(40) - 8e-6).abs() < 1e-15);
    }
}
