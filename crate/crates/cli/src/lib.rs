//! Library side of the `pointdet` binary: configuration resolution,
//! dataset plumbing, the training loop, inference helpers, and the
//! self-check suites behind `gradcheck` and `bench`.

pub mod batch;
pub mod bench;
pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod infer;
pub mod pool;
pub mod trainer;
