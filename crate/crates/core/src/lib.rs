//! Dense tensors with reverse-mode differentiation, the layer and
//! optimizer primitives built on them, spatial point-cloud kernels, and
//! axis-aligned box geometry.
//!
//! Everything numeric is generic over [`Real`] (f32 or f64); the f64
//! aliases below are what the rest of the workspace uses, since gradient
//! verification tolerances assume double precision.

pub mod checkpoint;
pub mod error;
pub mod fdcheck;
pub mod geom;
pub mod kernels;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod param;
pub mod pointops;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use scalar::Real;

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape64 = tape::Tape<f64>;
pub type Var64 = tape::Var<f64>;
pub type Parameter64 = param::Parameter<f64>;
pub type ParamSet64 = param::ParamSet<f64>;
pub type Adam64 = optim::Adam<f64>;
pub type PointCloud64 = pointops::PointCloud<f64>;
