//! Inner loops for matrix contractions.
//!
//! All higher-rank products reduce to row-contiguous `dot` and `axpy`
//! passes, which autovectorize. The three contraction orders (forward,
//! left-adjoint, right-adjoint) are all expressed without transposing
//! operands.

use crate::scalar::Real;

/// Dot product with split accumulators to break the reduction dependency.
#[inline]
pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (S::zero(), S::zero(), S::zero(), S::zero());
    for c in 0..chunks {
        let i = c * 4;
        s0 = s0 + a[i] * b[i];
        s1 = s1 + a[i + 1] * b[i + 1];
        s2 = s2 + a[i + 2] * b[i + 2];
        s3 = s3 + a[i + 3] * b[i + 3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..n {
        tail = tail + a[i] * b[i];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<S: Real>(alpha: S, x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

/// `y += x`
#[inline]
pub fn add_assign<S: Real>(x: &[S], y: &mut [S]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + xi;
    }
}

/// One matrix product `c[p,r] += a[p,q] * b[q,r]` over contiguous blocks.
#[inline]
pub fn matmul_block<S: Real>(a: &[S], b: &[S], c: &mut [S], p: usize, q: usize, r: usize) {
    debug_assert_eq!(a.len(), p * q);
    debug_assert_eq!(b.len(), q * r);
    debug_assert_eq!(c.len(), p * r);
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let c_row = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            axpy(a_row[k], &b[k * r..(k + 1) * r], c_row);
        }
    }
}

/// Left adjoint of [`matmul_block`]: `da[p,q] += dc[p,r] * b[q,r]^T`.
#[inline]
pub fn matmul_block_da<S: Real>(dc: &[S], b: &[S], da: &mut [S], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let dc_row = &dc[i * r..(i + 1) * r];
        let da_row = &mut da[i * q..(i + 1) * q];
        for k in 0..q {
            da_row[k] = da_row[k] + dot(dc_row, &b[k * r..(k + 1) * r]);
        }
    }
}

/// Right adjoint of [`matmul_block`]: `db[q,r] += a[p,q]^T * dc[p,r]`.
#[inline]
pub fn matmul_block_db<S: Real>(a: &[S], dc: &[S], db: &mut [S], p: usize, q: usize, r: usize) {
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let dc_row = &dc[i * r..(i + 1) * r];
        for k in 0..q {
            axpy(a_row[k], dc_row, &mut db[k * r..(k + 1) * r]);
        }
    }
}

/// Affine map on rows: `y[m, out] = x[m, in] * w[out, in]^T + b[out]`.
pub fn linear_fwd<S: Real>(x: &[S], w: &[S], b: &[S], y: &mut [S], m: usize, d_in: usize, d_out: usize) {
    for i in 0..m {
        let x_row = &x[i * d_in..(i + 1) * d_in];
        let y_row = &mut y[i * d_out..(i + 1) * d_out];
        for o in 0..d_out {
            y_row[o] = b[o] + dot(x_row, &w[o * d_in..(o + 1) * d_in]);
        }
    }
}

/// Input adjoint of [`linear_fwd`]: `dx[m, in] += dy[m, out] * w[out, in]`.
pub fn linear_dx<S: Real>(dy: &[S], w: &[S], dx: &mut [S], m: usize, d_in: usize, d_out: usize) {
    for i in 0..m {
        let dy_row = &dy[i * d_out..(i + 1) * d_out];
        let dx_row = &mut dx[i * d_in..(i + 1) * d_in];
        for o in 0..d_out {
            axpy(dy_row[o], &w[o * d_in..(o + 1) * d_in], dx_row);
        }
    }
}

/// Weight and bias adjoints of [`linear_fwd`].
pub fn linear_dw_db<S: Real>(
    x: &[S],
    dy: &[S],
    dw: &mut [S],
    db: &mut [S],
    m: usize,
    d_in: usize,
    d_out: usize,
) {
    for i in 0..m {
        let x_row = &x[i * d_in..(i + 1) * d_in];
        let dy_row = &dy[i * d_out..(i + 1) * d_out];
        for o in 0..d_out {
            let g = dy_row[o];
            db[o] = db[o] + g;
            axpy(g, x_row, &mut dw[o * d_in..(o + 1) * d_in]);
        }
    }
}
