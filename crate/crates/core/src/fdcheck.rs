//! Central finite-difference verification of analytic gradients.
//!
//! The harness reruns a user-supplied forward closure with each parameter
//! element nudged by `±h` and compares the resulting slope against the
//! gradient produced by the tape. Relative error uses a floored
//! denominator `max(|a|, |fd|, 0.01)` so that rounding noise on
//! near-zero entries is not amplified into false alarms; genuine errors
//! show up far above any threshold because they scale with the gradient
//! itself.

use crate::error::Result;
use crate::param::ParamSet;
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const REL_FLOOR: f64 = 1e-2;

/// Worst observed deviation between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_name: String,
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
}

impl FdReport {
    fn new() -> Self {
        FdReport {
            max_rel_err: 0.0,
            worst_name: String::new(),
            worst_index: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
            checked: 0,
        }
    }

    fn observe(&mut self, name: &str, index: usize, a: f64, fd: f64) {
        self.checked += 1;
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
        if rel > self.max_rel_err {
            self.max_rel_err = rel;
            self.worst_name = name.to_string();
            self.worst_index = index;
            self.analytic_at_worst = a;
            self.numeric_at_worst = fd;
        }
    }
}

impl std::fmt::Display for FdReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "max rel err {:.3e} over {} entries (worst at {}[{}]: analytic {:.6e}, numeric {:.6e})",
            self.max_rel_err,
            self.checked,
            self.worst_name,
            self.worst_index,
            self.analytic_at_worst,
            self.numeric_at_worst
        )
    }
}

/// Check the gradients of every trainable parameter in `set` against
/// central differences of the scalar loss produced by `run`. The closure
/// must rebuild the forward pass from the parameters' current values on
/// every call and return the fresh tape together with the loss variable.
pub fn check_param_gradients<S, F>(set: &ParamSet<S>, h: S, mut run: F) -> Result<FdReport>
where
    S: Real,
    F: FnMut() -> Result<(Tape<S>, Var<S>)>,
{
    set.zero_grads();
    let (tape, loss) = run()?;
    tape.backward(&loss)?;
    let params = set.params();
    let analytic: Vec<Tensor<S>> = params.iter().map(|p| p.grad()).collect();

    let mut report = FdReport::new();
    for (p, grad) in params.iter().zip(&analytic) {
        let base = p.value();
        for i in 0..base.numel() {
            let orig = base.data()[i];
            let mut probe = |delta: S| -> Result<S> {
                let mut data = base.data().to_vec();
                data[i] = orig + delta;
                p.set_value(Tensor::new_unchecked(base.shape().to_vec(), data));
                let (_t, l) = run()?;
                l.item()
            };
            let lp = probe(h)?;
            let lm = probe(-h)?;
            p.set_value(base.clone());
            let fd = (lp - lm) / (S::from_f64(2.0) * h);
            report.observe(p.name(), i, grad.data()[i].to_f64_val(), fd.to_f64_val());
        }
    }
    Ok(report)
}

/// Check the gradient with respect to a single input tensor for an
/// operation chain built by `f`. The input is wrapped in a throwaway
/// parameter, and the output is reduced to a scalar with a fixed
/// pseudo-random projection so that transposition and indexing errors
/// cannot cancel out.
pub fn check_input_gradient<S, F>(x: &Tensor<S>, h: S, seed: u64, mut f: F) -> Result<FdReport>
where
    S: Real,
    F: FnMut(&Tape<S>, &Var<S>) -> Result<Var<S>>,
{
    let set: ParamSet<S> = ParamSet::new();
    let p = set.root().param("input", x.clone());
    let mut proj: Option<Tensor<S>> = None;
    check_param_gradients(&set, h, move || {
        let tape = Tape::new();
        let xv = tape.param(&p);
        let y = f(&tape, &xv)?;
        let w = proj
            .get_or_insert_with(|| {
                Tensor::new_unchecked(y.shape().to_vec(), projection_weights(y.numel(), seed))
            })
            .clone();
        let wv = tape.constant(w);
        let loss = y.mul(&wv)?.sum_all()?;
        Ok((tape, loss))
    })
}

/// Deterministic projection weights in `[-1, 1]`, independent of any RNG
/// crate so the same values appear on every platform.
pub fn projection_weights<S: Real>(n: usize, seed: u64) -> Vec<S> {
    (0..n as u64)
        .map(|i| {
            let v = splitmix64(seed ^ i.wrapping_mul(0x9E3779B97F4A7C15));
            let unit = (v >> 11) as f64 / (1u64 << 53) as f64;
            S::from_f64(unit * 2.0 - 1.0)
        })
        .collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
