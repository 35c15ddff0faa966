//! Run configuration: a preset (toy or full) provides every default, a
//! JSON file overrides any subset of fields, and command-line flags win
//! over both. Every command that trains or infers writes the fully
//! resolved configuration next to its outputs.

use anyhow::{bail, Context, Result};
use pointdet_data::GenConfig;
use pointdet_net::{InteractionMode, ModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Toy,
    Full,
}

/// Adam settings plus the step-decay schedule: the rate is divided by
/// `decay_factor` at each milestone epoch (zero-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimConfig {
    /// Large-scene indoor schedule: 1e-3 with heavy decoupled decay,
    /// stepped down 5x at epochs 12, 24, and 36.
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            weight_decay: 1e-1,
            betas: [0.9, 0.999],
            eps: 1e-8,
            decay_epochs: vec![12, 24, 36],
            decay_factor: 5.0,
        }
    }
}

impl OptimConfig {
    /// Variant used for cluttered single-room captures: lighter decay,
    /// two milestones.
    pub fn sunrgbd() -> Self {
        OptimConfig {
            weight_decay: 5e-2,
            decay_epochs: vec![12, 24],
            ..OptimConfig::default()
        }
    }

    /// Desk-scale schedule sized for a 30-epoch run.
    pub fn toy() -> Self {
        OptimConfig {
            weight_decay: 1e-4,
            decay_epochs: vec![16, 24],
            ..OptimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            bail!("learning rate must be positive, got {}", self.lr);
        }
        if self.weight_decay < 0.0 {
            bail!("weight decay cannot be negative");
        }
        if !(self.decay_factor > 1.0) {
            bail!("decay factor must exceed 1, got {}", self.decay_factor);
        }
        for b in self.betas {
            if !(0.0..1.0).contains(&b) {
                bail!("betas must lie in [0, 1), got {b}");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub gen: GenConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Scenes held out from the end of the manifest for evaluation.
    pub holdout: usize,
    /// Training-time resample target fed to the encoder.
    pub train_points: usize,
    /// Decode threshold applied before suppression at eval time.
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Trials for the shuffled-score floor reported next to mAP.
    pub baseline_trials: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Toy)
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => RunConfig {
                preset,
                model: ModelConfig::toy(),
                optim: OptimConfig::toy(),
                gen: GenConfig::default(),
                epochs: 30,
                batch_size: 4,
                seed: 0,
                holdout: 50,
                train_points: 2048,
                score_threshold: 0.05,
                nms_iou: 0.25,
                baseline_trials: 20,
            },
            Preset::Full => RunConfig {
                preset,
                model: ModelConfig::full(),
                optim: OptimConfig::default(),
                gen: GenConfig { num_points: 40_000, ..GenConfig::default() },
                epochs: 48,
                batch_size: 8,
                seed: 0,
                holdout: 50,
                train_points: 40_000,
                score_threshold: 0.05,
                nms_iou: 0.25,
                baseline_trials: 20,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model
            .validate()
            .map_err(|e| anyhow::anyhow!("model config: {e}"))?;
        self.optim.validate()?;
        self.gen
            .validate()
            .map_err(|e| anyhow::anyhow!("generator config: {e}"))?;
        if self.epochs == 0 {
            bail!("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            bail!("batch size must be at least 1");
        }
        let min_points = self
            .model
            .encoder
            .levels
            .first()
            .map(|l| l.num_seeds)
            .unwrap_or(1);
        if self.train_points < min_points {
            bail!(
                "train_points {} cannot feed a first level of {} seeds",
                self.train_points,
                min_points
            );
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            bail!("score threshold must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.nms_iou) {
            bail!("suppression IoU must lie in [0, 1)");
        }
        if self.baseline_trials == 0 {
            bail!("baseline needs at least one trial");
        }
        Ok(())
    }
}

/// Merge `overlay` into `base` key by key, recursing through objects;
/// scalars and arrays replace wholesale.
fn deep_merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(dst), Value::Object(src)) => {
            for (key, val) in src {
                match dst.get_mut(&key) {
                    Some(slot) => deep_merge(slot, val),
                    None => {
                        dst.insert(key, val);
                    }
                }
            }
        }
        (dst, src) => *dst = src,
    }
}

/// Build the effective configuration: start from the preset the file (or
/// the `--preset` flag, which wins) names, lay the file's fields over it,
/// and validate nothing unknown slipped in.
pub fn load_run_config(file: Option<&Path>, preset_flag: Option<Preset>) -> Result<RunConfig> {
    let overlay: Option<Value> = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            Some(
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?,
            )
        }
        None => None,
    };

    let file_preset = overlay
        .as_ref()
        .and_then(|v| v.get("preset"))
        .map(|p| {
            serde_json::from_value::<Preset>(p.clone())
                .context("config field `preset` must be \"toy\" or \"full\"")
        })
        .transpose()?;
    let preset = preset_flag.or(file_preset).unwrap_or(Preset::Toy);

    let mut resolved = serde_json::to_value(RunConfig::preset(preset))?;
    if let Some(overlay) = overlay {
        deep_merge(&mut resolved, overlay);
    }
    // The flag outranks a conflicting label in the file.
    resolved["preset"] = serde_json::to_value(preset)?;

    let cfg: RunConfig = serde_json::from_value(resolved).context("resolving config")?;
    Ok(cfg)
}

/// Ablation switch for the neighborhood interaction block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DpiFlag {
    On,
    Off,
    SelfAttention,
}

/// Ablation switch for global context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GcaFlag {
    On,
    Off,
}

pub fn apply_ablation(
    cfg: &mut RunConfig,
    dpi: Option<DpiFlag>,
    gca: Option<GcaFlag>,
    rpl_blocks: Option<usize>,
) {
    if let Some(dpi) = dpi {
        cfg.model.encoder.interaction = match dpi {
            DpiFlag::On => InteractionMode::Dpi,
            DpiFlag::Off => InteractionMode::Off,
            DpiFlag::SelfAttention => InteractionMode::SelfAttention,
        };
    }
    if let Some(gca) = gca {
        cfg.model.gca.enabled = gca == GcaFlag::On;
    }
    if let Some(blocks) = rpl_blocks {
        cfg.model.encoder.rpl_blocks = blocks;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use std::path::PathBuf;

    fn scratch(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("pointdet_cfg_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn presets_validate_out_of_the_box() {
        RunConfig::preset(Preset::Toy).validate().unwrap();
        RunConfig::preset(Preset::Full).validate().unwrap();
    }

    #[test]
    fn missing_file_yields_the_toy_preset() {
        let cfg = load_run_config(None, None).unwrap();
        assert_eq!(cfg, RunConfig::preset(Preset::Toy));
    }

    #[test]
    fn file_fields_override_preset_defaults_field_by_field() {
        let dir = scratch("overlay");
        let path = dir.join("run.json");
        fs::write(&path, r#"{"epochs": 7, "optim": {"lr": 5e-4}, "model": {"encoder": {"rpl_blocks": 3}}}"#)
            .unwrap();
        let cfg = load_run_config(Some(&path), None).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.optim.lr, 5e-4);
        assert_eq!(cfg.optim.weight_decay, OptimConfig::toy().weight_decay);
        assert_eq!(cfg.model.encoder.rpl_blocks, 3);
        assert_eq!(cfg.model.encoder.levels, ModelConfig::toy().encoder.levels);
    }

    #[test]
    fn the_file_may_pick_the_base_preset_and_the_flag_beats_it() {
        let dir = scratch("preset");
        let path = dir.join("run.json");
        fs::write(&path, r#"{"preset": "full"}"#).unwrap();
        let from_file = load_run_config(Some(&path), None).unwrap();
        assert_eq!(from_file.model, ModelConfig::full());
        let flagged = load_run_config(Some(&path), Some(Preset::Toy)).unwrap();
        assert_eq!(flagged.model, ModelConfig::toy());
        assert_eq!(flagged.preset, Preset::Toy);
    }

    #[test]
    fn unknown_top_level_keys_are_rejected() {
        let dir = scratch("unknown");
        let path = dir.join("run.json");
        fs::write(&path, r#"{"epochz": 7}"#).unwrap();
        assert!(load_run_config(Some(&path), None).is_err());
    }

    #[test]
    fn resolved_configs_round_trip_through_json() {
        let cfg = RunConfig::preset(Preset::Toy);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn ablation_flags_rewrite_the_model_config() {
        let mut cfg = RunConfig::preset(Preset::Toy);
        apply_ablation(&mut cfg, Some(DpiFlag::SelfAttention), Some(GcaFlag::Off), Some(0));
        assert_eq!(cfg.model.encoder.interaction, InteractionMode::SelfAttention);
        assert!(!cfg.model.gca.enabled);
        assert_eq!(cfg.model.encoder.rpl_blocks, 0);
        apply_ablation(&mut cfg, Some(DpiFlag::Off), None, None);
        assert_eq!(cfg.model.encoder.interaction, InteractionMode::Off);
        assert!(!cfg.model.gca.enabled);
    }
}
