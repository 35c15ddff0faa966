//! Dense row-major tensor values.
//!
//! A [`Tensor`] is an immutable shaped array. Cloning is cheap (shared
//! storage), which lets the gradient tape keep references to forward values
//! without copying activations.

use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Tensor<S: Real> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<S: Real> Tensor<S> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                op: "from_vec",
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    /// `from_vec` for data known to match the shape.
    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self::new_unchecked(shape.to_vec(), vec![S::zero(); n])
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n: usize = shape.iter().product();
        Self::new_unchecked(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: S) -> Self {
        Self::new_unchecked(vec![], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n: usize = shape.iter().product();
        Self::new_unchecked(shape.to_vec(), (0..n).map(|i| f(i)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    /// Scalar value of a 1-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> S {
        debug_assert_eq!(index.len(), self.shape.len());
        let strides = strides_of(&self.shape);
        let flat: usize = index.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    /// Checks every element is finite; `op` names the producing operation.
    pub fn validate_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(index) => Err(TensorError::NonFinite { op, index }),
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(TensorError::DataLength {
                op: "reshape",
                shape,
                expected,
                got: self.numel(),
            });
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::new_unchecked(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self::new_unchecked(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    /// Axis permutation (physical transpose).
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let nd = self.shape.len();
        if perm.len() != nd || {
            let mut seen = vec![false; nd];
            perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true))
        } {
            return Err(TensorError::invalid(format!(
                "permute: {:?} is not a permutation of 0..{}",
                perm, nd
            )));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides_of(&self.shape);
        let out_strides = strides_of(&out_shape);
        let mut out = vec![S::zero(); self.numel()];
        // Walk output positions in order; compute the matching input offset.
        let mut idx = vec![0usize; nd];
        for slot in out.iter_mut() {
            let src: usize = idx
                .iter()
                .zip(perm)
                .map(|(&i, &p)| i * in_strides[p])
                .sum();
            *slot = self.data[src];
            for d in (0..nd).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let _ = out_strides;
        Ok(Self::new_unchecked(out_shape, out))
    }

    /// Concatenate along `axis`. All inputs must agree on every other extent.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat: empty input list"))?;
        let nd = first.shape.len();
        if axis >= nd {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: first.shape.clone(),
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.shape.len() != nd
                || p.shape
                    .iter()
                    .enumerate()
                    .any(|(d, &e)| d != axis && e != first.shape[d])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * axis_total * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                let start = o * chunk;
                out.extend_from_slice(&p.data[start..start + chunk]);
            }
        }
        Ok(Self::new_unchecked(out_shape, out))
    }

    /// Inverse of [`Tensor::concat`]: split along `axis` into chunks of the
    /// given extents.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        let nd = self.shape.len();
        if axis >= nd {
            return Err(TensorError::InvalidAxis {
                op: "split",
                axis,
                shape: self.shape.clone(),
            });
        }
        if sizes.iter().sum::<usize>() != self.shape[axis] {
            return Err(TensorError::invalid(format!(
                "split: sizes {:?} do not cover axis extent {}",
                sizes, self.shape[axis]
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full_chunk = self.shape[axis] * inner;
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0usize;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        let mut out = Vec::with_capacity(sizes.len());
        for (&size, &off) in sizes.iter().zip(&offsets) {
            let mut shape = self.shape.clone();
            shape[axis] = size;
            let mut data = Vec::with_capacity(outer * size * inner);
            for o in 0..outer {
                let start = o * full_chunk + off * inner;
                data.extend_from_slice(&self.data[start..start + size * inner]);
            }
            out.push(Self::new_unchecked(shape, data));
        }
        Ok(out)
    }

    /// Exact elementwise equality (bit-level for same-width floats).
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64_val().to_bits() == b.to_f64_val().to_bits())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), |m, v| if v > m { v } else { m })
    }
}
