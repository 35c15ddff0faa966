//! Data side of the detector: deterministic synthetic room scenes with
//! box ground truth, training-time augmentation and resampling, text,
//! binary, and JSON serialization, and mAP-based detection scoring with
//! a random-score floor.

pub mod augment;
pub mod eval;
pub mod io;
pub mod scene;

pub use augment::{augment, augment_with, downsample};
pub use eval::{evaluate, random_score_baseline, ClassEval, EvalResult, ThresholdEval};
pub use io::{
    load_cloud, load_detections, load_scene, save_cloud_binary, save_cloud_text, save_detections,
    save_scene, CloudFormat,
};
pub use scene::{gen_synthetic_scene, GenConfig, Scene, NUM_CLASSES};
