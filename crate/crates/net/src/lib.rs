//! Point-cloud detection network: a sample-and-group encoder with
//! residual per-neighbor MLPs, an optional interaction block that lets
//! pooled features re-query their neighborhoods, global scene context,
//! an inverse-distance-interpolation decoder, and a voting detection
//! head. Everything runs on the `pointdet-core` tape in f64.

pub mod config;
pub mod dpi;
pub mod encoder;
pub mod fd;
pub mod gca;
pub mod head;
pub mod model;
pub mod pe;
pub mod rpl;
pub mod sg;

pub use config::{
    EncoderConfig, GcaConfig, HeadConfig, InteractionMode, LevelConfig, LossWeights, ModelConfig,
};
pub use head::{compute_loss, decode_boxes, HeadOut, LossReport};
pub use model::{BatchInput, Detector, ModelOut};
