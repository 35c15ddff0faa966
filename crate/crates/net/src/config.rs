//! Model configuration: per-level encoder settings, global-context and
//! head hyperparameters, loss weights, and the two built-in presets.

use pointdet_core::{Result, TensorError};
use serde::{Deserialize, Serialize};

/// One sampling level of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelConfig {
    /// Seed count after farthest-point sampling.
    pub num_seeds: usize,
    /// Ball-query radius in meters.
    pub radius: f64,
    /// Neighbors gathered per seed.
    pub neighbors: usize,
    /// Output channel width of the level.
    pub channels: usize,
}

/// What sits after the residual layers of each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    /// The point-interaction block with positional encoding.
    Dpi,
    /// Plain scaled dot-product self-attention over seeds (ablation
    /// baseline).
    SelfAttention,
    /// Nothing; pooled features pass straight through.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Width of the per-point input features accompanying xyz.
    pub in_channels: usize,
    pub levels: Vec<LevelConfig>,
    /// Residual blocks per level; 0 leaves only the entry layer.
    pub rpl_blocks: usize,
    pub interaction: InteractionMode,
    /// Bottleneck divisor of the interaction block; must divide every
    /// level's channel width.
    pub bottleneck: usize,
    /// Frequency bands of the positional encoding.
    pub pe_bands: usize,
    /// Geometric base of the band frequencies.
    pub pe_base: f64,
    /// Upsampling blocks walking back toward denser levels.
    pub fd_blocks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcaConfig {
    pub enabled: bool,
    /// Per-level compressed width k.
    pub compress_channels: usize,
    /// Width of the fused scene descriptor.
    pub global_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Proposal count P.
    pub proposals: usize,
    /// Vote-cluster ball radius in meters.
    pub cluster_radius: f64,
    /// Votes gathered per cluster.
    pub cluster_neighbors: usize,
    pub num_classes: usize,
    /// Proposal centers within this distance of a ground-truth center are
    /// positives.
    pub near_threshold: f64,
    /// Centers beyond this distance are negatives; in between is ignored.
    pub far_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub vote: f64,
    pub objectness: f64,
    pub center: f64,
    pub size: f64,
    pub classification: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            vote: 1.0,
            objectness: 0.5,
            center: 1.0,
            size: 1.0,
            classification: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gca: GcaConfig,
    pub head: HeadConfig,
    #[serde(default)]
    pub loss: LossWeights,
}

impl ModelConfig {
    /// Desk-scale preset sized for 2048-point scenes.
    pub fn toy() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                in_channels: 1,
                levels: vec![
                    LevelConfig { num_seeds: 512, radius: 0.4, neighbors: 8, channels: 32 },
                    LevelConfig { num_seeds: 256, radius: 0.8, neighbors: 8, channels: 48 },
                    LevelConfig { num_seeds: 128, radius: 1.2, neighbors: 8, channels: 48 },
                    LevelConfig { num_seeds: 64, radius: 1.6, neighbors: 8, channels: 48 },
                ],
                rpl_blocks: 2,
                interaction: InteractionMode::Dpi,
                bottleneck: 4,
                pe_bands: 8,
                pe_base: 1000.0,
                fd_blocks: 2,
            },
            gca: GcaConfig {
                enabled: true,
                compress_channels: 128,
                global_channels: 256,
            },
            head: HeadConfig {
                proposals: 64,
                cluster_radius: 0.3,
                cluster_neighbors: 16,
                num_classes: 3,
                near_threshold: 0.3,
                far_threshold: 0.6,
            },
            loss: LossWeights::default(),
        }
    }

    /// Room-scale preset for clouds of 20k points and up.
    pub fn full() -> Self {
        ModelConfig {
            encoder: EncoderConfig {
                in_channels: 1,
                levels: vec![
                    LevelConfig { num_seeds: 2048, radius: 0.2, neighbors: 64, channels: 128 },
                    LevelConfig { num_seeds: 1024, radius: 0.4, neighbors: 32, channels: 256 },
                    LevelConfig { num_seeds: 512, radius: 0.8, neighbors: 16, channels: 256 },
                    LevelConfig { num_seeds: 256, radius: 1.2, neighbors: 16, channels: 256 },
                ],
                rpl_blocks: 2,
                interaction: InteractionMode::Dpi,
                bottleneck: 4,
                pe_bands: 8,
                pe_base: 1000.0,
                fd_blocks: 2,
            },
            gca: GcaConfig {
                enabled: true,
                compress_channels: 128,
                global_channels: 256,
            },
            head: HeadConfig {
                proposals: 256,
                cluster_radius: 0.3,
                cluster_neighbors: 16,
                num_classes: 3,
                near_threshold: 0.3,
                far_threshold: 0.6,
            },
            loss: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder;
        if enc.in_channels == 0 {
            return Err(TensorError::invalid("encoder needs at least one input feature"));
        }
        if enc.levels.is_empty() {
            return Err(TensorError::invalid("encoder needs at least one level"));
        }
        for pair in enc.levels.windows(2) {
            if pair[1].num_seeds >= pair[0].num_seeds {
                return Err(TensorError::invalid(format!(
                    "seed counts must strictly decrease, got {} then {}",
                    pair[0].num_seeds, pair[1].num_seeds
                )));
            }
        }
        for (i, lvl) in enc.levels.iter().enumerate() {
            if lvl.num_seeds == 0 || lvl.neighbors == 0 || lvl.channels == 0 {
                return Err(TensorError::invalid(format!("level {i} has a zero dimension")));
            }
            if !(lvl.radius > 0.0) || !lvl.radius.is_finite() {
                return Err(TensorError::invalid(format!(
                    "level {i} radius {} must be positive",
                    lvl.radius
                )));
            }
            if enc.bottleneck == 0 || lvl.channels % enc.bottleneck != 0 {
                return Err(TensorError::invalid(format!(
                    "bottleneck {} must divide level {i} width {}",
                    enc.bottleneck, lvl.channels
                )));
            }
        }
        if enc.fd_blocks >= enc.levels.len() {
            return Err(TensorError::invalid(format!(
                "{} upsampling blocks need more than {} levels",
                enc.fd_blocks,
                enc.levels.len()
            )));
        }
        if enc.pe_bands == 0 {
            return Err(TensorError::invalid("positional encoding needs at least one band"));
        }
        if !(enc.pe_base > 0.0) || !enc.pe_base.is_finite() {
            return Err(TensorError::invalid("positional encoding base must be positive"));
        }
        if self.gca.compress_channels == 0 || self.gca.global_channels == 0 {
            return Err(TensorError::invalid("global-context widths must be positive"));
        }
        let head = &self.head;
        if head.proposals == 0 || head.cluster_neighbors == 0 || head.num_classes == 0 {
            return Err(TensorError::invalid("head needs proposals, neighbors and classes"));
        }
        if !(head.cluster_radius > 0.0) {
            return Err(TensorError::invalid("cluster radius must be positive"));
        }
        if !(head.near_threshold > 0.0) || head.far_threshold < head.near_threshold {
            return Err(TensorError::invalid(format!(
                "objectness thresholds ({}, {}) must be positive and ordered",
                head.near_threshold, head.far_threshold
            )));
        }
        Ok(())
    }
}
