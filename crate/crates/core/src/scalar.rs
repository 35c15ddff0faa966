//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate (tensors, tapes, point kernels, box
//! geometry) is generic over [`Real`], implemented for `f32` and `f64`.
//! The detection pipeline itself runs in `f64` through the aliases at the
//! crate root.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, NumAssignOps};

/// Floating-point scalar usable by the tensor engine and spatial kernels.
pub trait Real:
    Float
    + FloatConst
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` for constants and config values.
    fn from_f64(v: f64) -> Self;

    /// Conversion to `f64` for reporting and serialization.
    fn to_f64_val(self) -> f64;

    /// Conversion from a count, used for means and normalizers.
    fn from_usize(v: usize) -> Self;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64_val(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f32
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64_val(self) -> f64 {
        self
    }
    #[inline]
    fn from_usize(v: usize) -> Self {
        v as f64
    }
}
