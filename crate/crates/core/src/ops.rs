//! Differentiable operations on tape variables.
//!
//! Every operation validates shapes, computes its output eagerly, checks
//! the output for non-finite values, and records a backward closure that
//! accumulates into the gradient buffers of the inputs that require
//! gradient. Reductions with ties (max) propagate to the first occurrence
//! in scan order so that backward passes are deterministic.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{
    add_assign, axpy, dot, linear_dw_db, linear_dx, linear_fwd, matmul_block, matmul_block_da,
    matmul_block_db,
};
use crate::scalar::Real;
use crate::tape::{BackStep, Grads, Var};
use crate::tensor::Tensor;

impl<S: Real> Var<S> {
    fn unary(
        &self,
        op: &'static str,
        out: Tensor<S>,
        back: impl Fn(&Tensor<S>, &mut Grads<S>) + 'static,
    ) -> Result<Var<S>> {
        out.validate_finite(op)?;
        let needs = self.needs_grad();
        let step: Option<BackStep<S>> = needs.then(|| Box::new(back) as BackStep<S>);
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Elementwise sum of two same-shaped variables.
    pub fn add(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let out = self.value().zip_with(&other.value(), "add", |a, b| a + b)?;
        out.validate_finite("add")?;
        let needs = self.needs_grad() || other.needs_grad();
        let (ia, ib) = (self.idx, other.idx);
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| add_assign(g.data(), buf));
                grads.with(ib, |buf| add_assign(g.data(), buf));
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Elementwise difference of two same-shaped variables.
    pub fn sub(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let out = self.value().zip_with(&other.value(), "sub", |a, b| a - b)?;
        out.validate_finite("sub")?;
        let needs = self.needs_grad() || other.needs_grad();
        let (ia, ib) = (self.idx, other.idx);
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| add_assign(g.data(), buf));
                grads.with(ib, |buf| {
                    for (d, gv) in buf.iter_mut().zip(g.data()) {
                        *d -= *gv;
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Elementwise product of two same-shaped variables.
    pub fn mul(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let av = self.value();
        let bv = other.value();
        let out = av.zip_with(&bv, "mul", |a, b| a * b)?;
        out.validate_finite("mul")?;
        let needs = self.needs_grad() || other.needs_grad();
        let (ia, ib) = (self.idx, other.idx);
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for ((d, gv), b) in buf.iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += *gv * *b;
                    }
                });
                grads.with(ib, |buf| {
                    for ((d, gv), a) in buf.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += *gv * *a;
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: S) -> Result<Var<S>> {
        let out = self.value().map(|v| v * c);
        let ia = self.idx;
        self.unary("scale", out, move |g, grads| {
            grads.with(ia, |buf| axpy(c, g.data(), buf));
        })
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: S) -> Result<Var<S>> {
        let out = self.value().map(|v| v + c);
        let ia = self.idx;
        self.unary("add_scalar", out, move |g, grads| {
            grads.with(ia, |buf| add_assign(g.data(), buf));
        })
    }

    /// Rectified linear unit. The gradient at exactly zero is zero.
    pub fn relu(&self) -> Result<Var<S>> {
        let xv = self.value();
        let out = xv.map(|v| if v > S::zero() { v } else { S::zero() });
        let ia = self.idx;
        self.unary("relu", out, move |g, grads| {
            grads.with(ia, |buf| {
                for ((d, gv), x) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                    if *x > S::zero() {
                        *d += *gv;
                    }
                }
            });
        })
    }

    /// Elementwise absolute value; subgradient zero at the kink.
    pub fn abs(&self) -> Result<Var<S>> {
        let xv = self.value();
        let out = xv.map(|v| v.abs());
        let ia = self.idx;
        self.unary("abs", out, move |g, grads| {
            grads.with(ia, |buf| {
                for ((d, gv), x) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                    if *x > S::zero() {
                        *d += *gv;
                    } else if *x < S::zero() {
                        *d -= *gv;
                    }
                }
            });
        })
    }

    /// Clamp to `[lo, hi]`; the gradient is detached outside the open
    /// interval.
    pub fn clamp(&self, lo: S, hi: S) -> Result<Var<S>> {
        if !(lo <= hi) {
            return Err(TensorError::invalid("clamp bounds out of order"));
        }
        let xv = self.value();
        let out = xv.map(|v| {
            if v < lo {
                lo
            } else if v > hi {
                hi
            } else {
                v
            }
        });
        let ia = self.idx;
        self.unary("clamp", out, move |g, grads| {
            grads.with(ia, |buf| {
                for ((d, gv), x) in buf.iter_mut().zip(g.data()).zip(xv.data()) {
                    if *x > lo && *x < hi {
                        *d += *gv;
                    }
                }
            });
        })
    }

    /// Batched matrix product. Both operands need rank at least 2; leading
    /// dimensions broadcast where one side has extent 1.
    pub fn matmul(&self, other: &Var<S>) -> Result<Var<S>> {
        self.same_tape(other)?;
        let av = self.value();
        let bv = other.value();
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let (p, q) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (q2, r) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if q != q2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ash.to_vec(),
                rhs: bsh.to_vec(),
            });
        }
        let a_lead = &ash[..ash.len() - 2];
        let b_lead = &bsh[..bsh.len() - 2];
        let nd = a_lead.len().max(b_lead.len());
        let mut lead = Vec::with_capacity(nd);
        for k in 0..nd {
            let da = dim_from_right(a_lead, nd, k);
            let db = dim_from_right(b_lead, nd, k);
            if da != db && da != 1 && db != 1 {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: ash.to_vec(),
                    rhs: bsh.to_vec(),
                });
            }
            lead.push(da.max(db));
        }
        let offsets = Rc::new(batch_offsets(&lead, a_lead, b_lead));
        let mut out_shape = lead.clone();
        out_shape.push(p);
        out_shape.push(r);
        let mut out = vec![S::zero(); lead.iter().product::<usize>() * p * r];
        for (bi, &(ao, bo)) in offsets.iter().enumerate() {
            matmul_block(
                &av.data()[ao * p * q..(ao + 1) * p * q],
                &bv.data()[bo * q * r..(bo + 1) * q * r],
                &mut out[bi * p * r..(bi + 1) * p * r],
                p,
                q,
                r,
            );
        }
        let out = Tensor::new_unchecked(out_shape, out);
        out.validate_finite("matmul")?;
        let needs = self.needs_grad() || other.needs_grad();
        let (ia, ib) = (self.idx, other.idx);
        let step: Option<BackStep<S>> = needs.then(|| {
            let offsets = Rc::clone(&offsets);
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for (bi, &(ao, bo)) in offsets.iter().enumerate() {
                        matmul_block_da(
                            &g.data()[bi * p * r..(bi + 1) * p * r],
                            &bv.data()[bo * q * r..(bo + 1) * q * r],
                            &mut buf[ao * p * q..(ao + 1) * p * q],
                            p,
                            q,
                            r,
                        );
                    }
                });
                grads.with(ib, |buf| {
                    for (bi, &(ao, bo)) in offsets.iter().enumerate() {
                        matmul_block_db(
                            &av.data()[ao * p * q..(ao + 1) * p * q],
                            &g.data()[bi * p * r..(bi + 1) * p * r],
                            &mut buf[bo * q * r..(bo + 1) * q * r],
                            p,
                            q,
                            r,
                        );
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Affine map over the last axis: `y = x · wᵀ + b` with `w` stored as
    /// `[out, in]` and `b` as `[out]`.
    pub fn linear(&self, w: &Var<S>, b: &Var<S>) -> Result<Var<S>> {
        self.same_tape(w)?;
        self.same_tape(b)?;
        let xv = self.value();
        let wv = w.value();
        let bv = b.value();
        let xsh = xv.shape();
        if xsh.is_empty() || wv.shape().len() != 2 || bv.shape().len() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xsh.to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let d_in = xsh[xsh.len() - 1];
        let (d_out, d_in2) = (wv.shape()[0], wv.shape()[1]);
        if d_in != d_in2 || bv.shape()[0] != d_out {
            return Err(TensorError::ShapeMismatch {
                op: "linear",
                lhs: xsh.to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let m = xv.numel() / d_in.max(1);
        let mut out = vec![S::zero(); m * d_out];
        linear_fwd(xv.data(), wv.data(), bv.data(), &mut out, m, d_in, d_out);
        let mut out_shape = xsh.to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let out = Tensor::new_unchecked(out_shape, out);
        out.validate_finite("linear")?;
        let needs = self.needs_grad() || w.needs_grad() || b.needs_grad();
        let (ix, iw, ib) = (self.idx, w.idx, b.idx);
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ix, |buf| linear_dx(g.data(), wv.data(), buf, m, d_in, d_out));
                grads.with(iw, |dw| {
                    let mut db_scratch = vec![S::zero(); d_out];
                    linear_dw_db(xv.data(), g.data(), dw, &mut db_scratch, m, d_in, d_out);
                });
                grads.with(ib, |db| {
                    for i in 0..m {
                        add_assign(&g.data()[i * d_out..(i + 1) * d_out], db);
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// View with a different shape over the same number of elements.
    pub fn reshape(&self, shape: &[usize]) -> Result<Var<S>> {
        let out = self.value().reshape(shape.to_vec())?;
        let ia = self.idx;
        let needs = self.needs_grad();
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| add_assign(g.data(), buf));
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Reorder axes; `perm[k]` names the input axis that becomes output
    /// axis `k`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<S>> {
        let out = self.value().permute(perm)?;
        let ia = self.idx;
        let needs = self.needs_grad();
        let mut inv = vec![0usize; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                let gp = g.permute(&inv).expect("permute backward");
                grads.with(ia, |buf| add_assign(gp.data(), buf));
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Select rows along axis 1 of a `[B, N, C]` variable. `idx` holds `l`
    /// row indices per batch; backward scatter-adds into the source rows.
    pub fn gather_axis1(&self, idx: &[usize], l: usize) -> Result<Var<S>> {
        let xv = self.value();
        let sh = xv.shape();
        if sh.len() != 3 {
            return Err(TensorError::invalid("gather_axis1 expects rank 3"));
        }
        let (bsz, n, c) = (sh[0], sh[1], sh[2]);
        if idx.len() != bsz * l {
            return Err(TensorError::DataLength {
                op: "gather_axis1",
                shape: vec![bsz, l],
                expected: bsz * l,
                got: idx.len(),
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(TensorError::invalid(format!(
                "gather_axis1 index {bad} out of range for {n} rows"
            )));
        }
        let mut out = vec![S::zero(); bsz * l * c];
        for b in 0..bsz {
            for (j, &src) in idx[b * l..(b + 1) * l].iter().enumerate() {
                let from = (b * n + src) * c;
                let to = (b * l + j) * c;
                out[to..to + c].copy_from_slice(&xv.data()[from..from + c]);
            }
        }
        let out = Tensor::new_unchecked(vec![bsz, l, c], out);
        let ia = self.idx;
        let needs = self.needs_grad();
        let idx: Rc<Vec<usize>> = Rc::new(idx.to_vec());
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for b in 0..bsz {
                        for (j, &src) in idx[b * l..(b + 1) * l].iter().enumerate() {
                            let to = (b * n + src) * c;
                            let from = (b * l + j) * c;
                            add_assign(&g.data()[from..from + c], &mut buf[to..to + c]);
                        }
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Maximum over one axis. Ties resolve to the lowest index along the
    /// axis, and only that element receives gradient. Also returns the
    /// argmax per output element.
    pub fn max_axis(&self, axis: usize) -> Result<(Var<S>, Vec<usize>)> {
        let xv = self.value();
        let sh = xv.shape();
        if axis >= sh.len() {
            return Err(TensorError::InvalidAxis {
                op: "max_axis",
                axis,
                shape: sh.to_vec(),
            });
        }
        let mid = sh[axis];
        if mid == 0 {
            return Err(TensorError::invalid("max_axis over empty axis"));
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let mut out = vec![S::zero(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        let data = xv.data();
        for o in 0..outer {
            for i in 0..inner {
                let mut best = data[(o * mid) * inner + i];
                let mut best_m = 0usize;
                for m in 1..mid {
                    let v = data[(o * mid + m) * inner + i];
                    if v > best {
                        best = v;
                        best_m = m;
                    }
                }
                out[o * inner + i] = best;
                arg[o * inner + i] = best_m;
            }
        }
        let mut out_shape = sh.to_vec();
        out_shape.remove(axis);
        let out = Tensor::new_unchecked(out_shape, out);
        out.validate_finite("max_axis")?;
        let ia = self.idx;
        let needs = self.needs_grad();
        let arg_rc = Rc::new(arg.clone());
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let m = arg_rc[o * inner + i];
                            buf[(o * mid + m) * inner + i] += g.data()[o * inner + i];
                        }
                    }
                });
            }) as BackStep<S>
        });
        let var = self.tape.push(out, needs, step, None);
        Ok((var, arg))
    }

    /// Sum of all elements, producing a rank-0 scalar.
    pub fn sum_all(&self) -> Result<Var<S>> {
        let xv = self.value();
        let total: S = xv.data().iter().copied().sum();
        let out = Tensor::scalar(total);
        out.validate_finite("sum_all")?;
        let ia = self.idx;
        let needs = self.needs_grad();
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                let gv = g.data()[0];
                grads.with(ia, |buf| {
                    for d in buf.iter_mut() {
                        *d += gv;
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Mean of all elements.
    pub fn mean_all(&self) -> Result<Var<S>> {
        let n = self.numel();
        if n == 0 {
            return Err(TensorError::invalid("mean_all of an empty tensor"));
        }
        self.sum_all()?.scale(S::one() / S::from_usize(n))
    }

    /// Contract a `[B, M, K, C]` variable against constant weights
    /// `[B, M, K]`: `y[b,m,c] = Σ_k w[b,m,k] · x[b,m,k,c]`.
    pub fn weighted_sum_k(&self, w: &Tensor<S>) -> Result<Var<S>> {
        let xv = self.value();
        let sh = xv.shape();
        if sh.len() != 4 || w.shape() != &sh[..3] {
            return Err(TensorError::ShapeMismatch {
                op: "weighted_sum_k",
                lhs: sh.to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let (rows, k, c) = (sh[0] * sh[1], sh[2], sh[3]);
        let mut out = vec![S::zero(); rows * c];
        for row in 0..rows {
            for kk in 0..k {
                let wv = w.data()[row * k + kk];
                let src = (row * k + kk) * c;
                axpy(wv, &xv.data()[src..src + c], &mut out[row * c..(row + 1) * c]);
            }
        }
        let out = Tensor::new_unchecked(vec![sh[0], sh[1], c], out);
        out.validate_finite("weighted_sum_k")?;
        let ia = self.idx;
        let needs = self.needs_grad();
        let w = w.clone();
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for row in 0..rows {
                        for kk in 0..k {
                            let wv = w.data()[row * k + kk];
                            let dst = (row * k + kk) * c;
                            axpy(
                                wv,
                                &g.data()[row * c..(row + 1) * c],
                                &mut buf[dst..dst + c],
                            );
                        }
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Insert a new axis of extent `n` at position `axis`, repeating the
    /// input along it. Backward sums over the inserted axis.
    pub fn repeat_new_axis(&self, axis: usize, n: usize) -> Result<Var<S>> {
        let xv = self.value();
        let sh = xv.shape();
        if axis > sh.len() {
            return Err(TensorError::InvalidAxis {
                op: "repeat_new_axis",
                axis,
                shape: sh.to_vec(),
            });
        }
        if n == 0 {
            return Err(TensorError::invalid("repeat_new_axis with zero repeats"));
        }
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis..].iter().product();
        let mut out = vec![S::zero(); outer * n * inner];
        for o in 0..outer {
            let src = &xv.data()[o * inner..(o + 1) * inner];
            for r in 0..n {
                let dst = (o * n + r) * inner;
                out[dst..dst + inner].copy_from_slice(src);
            }
        }
        let mut out_shape = sh.to_vec();
        out_shape.insert(axis, n);
        let out = Tensor::new_unchecked(out_shape, out);
        let ia = self.idx;
        let needs = self.needs_grad();
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for o in 0..outer {
                        for r in 0..n {
                            let src = (o * n + r) * inner;
                            add_assign(
                                &g.data()[src..src + inner],
                                &mut buf[o * inner..(o + 1) * inner],
                            );
                        }
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }

    /// Partition along `axis` into consecutive pieces of the given sizes.
    /// Inverse of [`concat`]; each piece routes its gradient back into its
    /// slice of the source.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<S>>> {
        let xv = self.value();
        let pieces = xv.split(axis, sizes)?;
        let sh = xv.shape();
        let outer: usize = sh[..axis].iter().product();
        let inner: usize = sh[axis + 1..].iter().product();
        let mid = sh[axis];
        let ia = self.idx;
        let needs = self.needs_grad();
        let mut offset = 0usize;
        let mut out = Vec::with_capacity(pieces.len());
        for (piece, &size) in pieces.into_iter().zip(sizes) {
            let start = offset;
            let step: Option<BackStep<S>> = needs.then(|| {
                Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                    grads.with(ia, |buf| {
                        for o in 0..outer {
                            for m in 0..size {
                                let src = (o * size + m) * inner;
                                let dst = (o * mid + start + m) * inner;
                                add_assign(&g.data()[src..src + inner], &mut buf[dst..dst + inner]);
                            }
                        }
                    });
                }) as BackStep<S>
            });
            out.push(self.tape.push(piece, needs, step, None));
            offset += size;
        }
        Ok(out)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self) -> Result<Var<S>> {
        let xv = self.value();
        let sh = xv.shape();
        let k = *sh.last().ok_or_else(|| {
            TensorError::invalid("softmax_last needs rank at least 1")
        })?;
        if k == 0 {
            return Err(TensorError::invalid("softmax_last over empty axis"));
        }
        let rows = xv.numel() / k;
        let mut out = vec![S::zero(); xv.numel()];
        for row in 0..rows {
            let x = &xv.data()[row * k..(row + 1) * k];
            let y = &mut out[row * k..(row + 1) * k];
            softmax_row(x, y);
        }
        let out = Tensor::new_unchecked(sh.to_vec(), out);
        out.validate_finite("softmax_last")?;
        let yv = out.clone();
        let ia = self.idx;
        let needs = self.needs_grad();
        let step: Option<BackStep<S>> = needs.then(|| {
            Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
                grads.with(ia, |buf| {
                    for row in 0..rows {
                        let gr = &g.data()[row * k..(row + 1) * k];
                        let yr = &yv.data()[row * k..(row + 1) * k];
                        let s = dot(gr, yr);
                        for j in 0..k {
                            buf[row * k + j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }) as BackStep<S>
        });
        Ok(self.tape.push(out, needs, step, None))
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row<S: Real>(x: &[S], y: &mut [S]) {
    let mut mx = x[0];
    for &v in &x[1..] {
        if v > mx {
            mx = v;
        }
    }
    let mut sum = S::zero();
    for (yv, &v) in y.iter_mut().zip(x) {
        let e = (v - mx).exp();
        *yv = e;
        sum += e;
    }
    let inv = S::one() / sum;
    for yv in y.iter_mut() {
        *yv *= inv;
    }
}

/// Concatenate variables along `axis`.
pub fn concat<S: Real>(parts: &[Var<S>], axis: usize) -> Result<Var<S>> {
    if parts.is_empty() {
        return Err(TensorError::invalid("concat of zero variables"));
    }
    for p in &parts[1..] {
        parts[0].same_tape(p)?;
    }
    let values: Vec<Tensor<S>> = parts.iter().map(|p| p.value()).collect();
    let refs: Vec<&Tensor<S>> = values.iter().collect();
    let out = Tensor::concat(&refs, axis)?;
    let sizes: Vec<usize> = values.iter().map(|t| t.shape()[axis]).collect();
    let idxs: Vec<usize> = parts.iter().map(|p| p.idx).collect();
    let needs = parts.iter().any(|p| p.needs_grad());
    let step: Option<BackStep<S>> = needs.then(|| {
        Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
            let pieces = g.split(axis, &sizes).expect("concat backward split");
            for (piece, &idx) in pieces.iter().zip(&idxs) {
                grads.with(idx, |buf| add_assign(piece.data(), buf));
            }
        }) as BackStep<S>
    });
    Ok(parts[0].tape.push(out, needs, step, None))
}

/// Weighted softmax cross-entropy over rows of `[M, K]` logits, normalized
/// by the sum of weights. Rows with zero weight contribute nothing; when
/// all weights are zero the result is exactly zero.
pub fn softmax_cross_entropy<S: Real>(
    logits: &Var<S>,
    targets: &[usize],
    weights: &[S],
) -> Result<Var<S>> {
    let xv = logits.value();
    let sh = xv.shape();
    if sh.len() != 2 {
        return Err(TensorError::invalid("softmax_cross_entropy expects [M, K]"));
    }
    let (m, k) = (sh[0], sh[1]);
    if targets.len() != m || weights.len() != m {
        return Err(TensorError::DataLength {
            op: "softmax_cross_entropy",
            shape: sh.to_vec(),
            expected: m,
            got: targets.len().min(weights.len()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(TensorError::invalid(format!(
            "target class {bad} out of range for {k} classes"
        )));
    }
    if weights.iter().any(|w| *w < S::zero() || !w.is_finite()) {
        return Err(TensorError::invalid("negative or non-finite row weight"));
    }
    let wsum: S = weights.iter().copied().sum();
    if wsum <= S::zero() {
        return Ok(logits.tape().constant(Tensor::scalar(S::zero())));
    }
    let mut probs = vec![S::zero(); m * k];
    let mut loss = S::zero();
    for row in 0..m {
        let x = &xv.data()[row * k..(row + 1) * k];
        let p = &mut probs[row * k..(row + 1) * k];
        softmax_row(x, p);
        if weights[row] > S::zero() {
            let t = targets[row];
            // ln(p_t) computed from the stable log-sum-exp rather than
            // from the normalized probability, to avoid ln of a rounded
            // zero for extreme logits.
            let mut mx = x[0];
            for &v in &x[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let lse = mx + x.iter().map(|&v| (v - mx).exp()).sum::<S>().ln();
            loss += weights[row] * (lse - x[t]);
        }
    }
    loss /= wsum;
    let out = Tensor::scalar(loss);
    out.validate_finite("softmax_cross_entropy")?;
    let probs = Tensor::new_unchecked(vec![m, k], probs);
    let targets: Rc<Vec<usize>> = Rc::new(targets.to_vec());
    let weights: Rc<Vec<S>> = Rc::new(weights.to_vec());
    let ia = logits.idx;
    let needs = logits.needs_grad();
    let step: Option<BackStep<S>> = needs.then(|| {
        Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
            let gv = g.data()[0];
            grads.with(ia, |buf| {
                for row in 0..m {
                    let w = weights[row];
                    if w <= S::zero() {
                        continue;
                    }
                    let coef = gv * w / wsum;
                    let t = targets[row];
                    for j in 0..k {
                        let ind = if j == t { S::one() } else { S::zero() };
                        buf[row * k + j] += coef * (probs.data()[row * k + j] - ind);
                    }
                }
            });
        }) as BackStep<S>
    });
    Ok(logits.tape.push(out, needs, step, None))
}

/// Batch statistics produced by one training-mode normalization.
pub struct BatchStats<S: Real> {
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

/// Normalize rows of `[M, C]` per column with batch statistics (population
/// variance), then apply the affine `gamma, beta`. Requires `M >= 2`.
pub fn batch_norm_train<S: Real>(
    x: &Var<S>,
    gamma: &Var<S>,
    beta: &Var<S>,
    eps: S,
) -> Result<(Var<S>, BatchStats<S>)> {
    x.same_tape(gamma)?;
    x.same_tape(beta)?;
    let xv = x.value();
    let sh = xv.shape();
    if sh.len() != 2 {
        return Err(TensorError::invalid("batch_norm expects [M, C]"));
    }
    let (m, c) = (sh[0], sh[1]);
    check_affine_shapes(c, &gamma.value(), &beta.value())?;
    if m < 2 {
        return Err(TensorError::DegenerateBatch);
    }
    let inv_m = S::one() / S::from_usize(m);
    let mut mean = vec![S::zero(); c];
    for row in 0..m {
        add_assign(&xv.data()[row * c..(row + 1) * c], &mut mean);
    }
    for v in mean.iter_mut() {
        *v *= inv_m;
    }
    let mut var = vec![S::zero(); c];
    for row in 0..m {
        for j in 0..c {
            let d = xv.data()[row * c + j] - mean[j];
            var[j] += d * d;
        }
    }
    for v in var.iter_mut() {
        *v *= inv_m;
    }
    let istd: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let gv = gamma.value();
    let bv = beta.value();
    let mut xhat = vec![S::zero(); m * c];
    let mut out = vec![S::zero(); m * c];
    for row in 0..m {
        for j in 0..c {
            let xh = (xv.data()[row * c + j] - mean[j]) * istd[j];
            xhat[row * c + j] = xh;
            out[row * c + j] = gv.data()[j] * xh + bv.data()[j];
        }
    }
    let out = Tensor::new_unchecked(vec![m, c], out);
    out.validate_finite("batch_norm")?;
    let xhat = Tensor::new_unchecked(vec![m, c], xhat);
    let istd = Rc::new(istd);
    let needs = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
    let (ix, ig, ibt) = (x.idx, gamma.idx, beta.idx);
    let step: Option<BackStep<S>> = needs.then(|| {
        let istd = Rc::clone(&istd);
        let xhat = xhat.clone();
        Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
            let inv_m = S::one() / S::from_usize(m);
            let mut gsum = vec![S::zero(); c];
            let mut gxsum = vec![S::zero(); c];
            for row in 0..m {
                for j in 0..c {
                    let gij = g.data()[row * c + j];
                    gsum[j] += gij;
                    gxsum[j] += gij * xhat.data()[row * c + j];
                }
            }
            grads.with(ig, |buf| add_assign(&gxsum, buf));
            grads.with(ibt, |buf| add_assign(&gsum, buf));
            grads.with(ix, |buf| {
                for row in 0..m {
                    for j in 0..c {
                        let gij = g.data()[row * c + j];
                        let xh = xhat.data()[row * c + j];
                        buf[row * c + j] += gv.data()[j]
                            * istd[j]
                            * (gij - inv_m * gsum[j] - xh * inv_m * gxsum[j]);
                    }
                }
            });
        }) as BackStep<S>
    });
    let var_out = x.tape.push(out, needs, step, None);
    Ok((
        var_out,
        BatchStats {
            mean: Tensor::new_unchecked(vec![c], mean),
            var: Tensor::new_unchecked(vec![c], var),
        },
    ))
}

/// Normalize with fixed running statistics; used in evaluation mode.
pub fn batch_norm_eval<S: Real>(
    x: &Var<S>,
    gamma: &Var<S>,
    beta: &Var<S>,
    running_mean: &Tensor<S>,
    running_var: &Tensor<S>,
    eps: S,
) -> Result<Var<S>> {
    x.same_tape(gamma)?;
    x.same_tape(beta)?;
    let xv = x.value();
    let sh = xv.shape();
    if sh.len() != 2 {
        return Err(TensorError::invalid("batch_norm expects [M, C]"));
    }
    let (m, c) = (sh[0], sh[1]);
    check_affine_shapes(c, &gamma.value(), &beta.value())?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm_eval",
            lhs: vec![c],
            rhs: running_mean.shape().to_vec(),
        });
    }
    let istd: Vec<S> = running_var
        .data()
        .iter()
        .map(|&v| S::one() / (v + eps).sqrt())
        .collect();
    let gv = gamma.value();
    let bv = beta.value();
    let mut xhat = vec![S::zero(); m * c];
    let mut out = vec![S::zero(); m * c];
    for row in 0..m {
        for j in 0..c {
            let xh = (xv.data()[row * c + j] - running_mean.data()[j]) * istd[j];
            xhat[row * c + j] = xh;
            out[row * c + j] = gv.data()[j] * xh + bv.data()[j];
        }
    }
    let out = Tensor::new_unchecked(vec![m, c], out);
    out.validate_finite("batch_norm")?;
    let xhat = Tensor::new_unchecked(vec![m, c], xhat);
    let istd = Rc::new(istd);
    let needs = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
    let (ix, ig, ibt) = (x.idx, gamma.idx, beta.idx);
    let step: Option<BackStep<S>> = needs.then(|| {
        Box::new(move |g: &Tensor<S>, grads: &mut Grads<S>| {
            grads.with(ig, |buf| {
                for row in 0..m {
                    for j in 0..c {
                        buf[j] += g.data()[row * c + j] * xhat.data()[row * c + j];
                    }
                }
            });
            grads.with(ibt, |buf| {
                for row in 0..m {
                    add_assign(&g.data()[row * c..(row + 1) * c], buf);
                }
            });
            grads.with(ix, |buf| {
                for row in 0..m {
                    for j in 0..c {
                        buf[row * c + j] += g.data()[row * c + j] * gv.data()[j] * istd[j];
                    }
                }
            });
        }) as BackStep<S>
    });
    Ok(x.tape.push(out, needs, step, None))
}

fn check_affine_shapes<S: Real>(c: usize, gamma: &Tensor<S>, beta: &Tensor<S>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "batch_norm",
            lhs: vec![c],
            rhs: gamma.shape().to_vec(),
        });
    }
    Ok(())
}

fn dim_from_right(dims: &[usize], nd: usize, k: usize) -> usize {
    // k counts from the left of an nd-long broadcast result; dims is
    // right-aligned against it.
    let pad = nd - dims.len();
    if k < pad {
        1
    } else {
        dims[k - pad]
    }
}

fn batch_offsets(lead: &[usize], a_lead: &[usize], b_lead: &[usize]) -> Vec<(usize, usize)> {
    let nd = lead.len();
    if nd == 0 {
        return vec![(0, 0)];
    }
    let count: usize = lead.iter().product();
    let mut a_strides = vec![0usize; nd];
    let mut b_strides = vec![0usize; nd];
    let mut acc_a = 1usize;
    let mut acc_b = 1usize;
    for k in (0..nd).rev() {
        let da = dim_from_right(a_lead, nd, k);
        let db = dim_from_right(b_lead, nd, k);
        a_strides[k] = if da == 1 { 0 } else { acc_a };
        b_strides[k] = if db == 1 { 0 } else { acc_b };
        acc_a *= da;
        acc_b *= db;
    }
    let mut out = Vec::with_capacity(count);
    for flat in 0..count {
        let mut rem = flat;
        let mut ao = 0usize;
        let mut bo = 0usize;
        for k in (0..nd).rev() {
            let i = rem % lead[k];
            rem /= lead[k];
            ao += i * a_strides[k];
            bo += i * b_strides[k];
        }
        out.push((ao, bo));
    }
    out
}
