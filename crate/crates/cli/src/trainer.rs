//! The training loop and the held-out evaluation that follows it.
//!
//! A run consumes a generated scene directory and leaves four artifacts in
//! its output directory: the resolved `config.json`, a `loss.csv` with one
//! row per epoch, the final `model.pdc` checkpoint, and an `eval.json`
//! summarizing held-out mAP against the shuffled-score floor. Everything
//! that touches randomness draws from a single stream keyed by the run
//! seed, so a repeated invocation reproduces the loss log and checkpoint
//! bit for bit.

use crate::batch::{assemble_batch, load_manifest, load_scenes};
use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use pointdet_core::checkpoint;
use pointdet_core::nn::Mode;
use pointdet_core::optim::{Adam, AdamConfig, StepDecay};
use pointdet_core::Tape64;
use pointdet_data::{augment, downsample, evaluate, random_score_baseline, EvalResult, Scene};
use pointdet_net::{decode_boxes, Detector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

/// IoU thresholds the held-out evaluation reports.
pub const EVAL_THRESHOLDS: [f64; 2] = [0.25, 0.5];

/// Mean loss components over one epoch. Values are exact sums divided by
/// the step count, so two runs of the same configuration agree bitwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub total: f64,
    pub vote: f64,
    pub objectness: f64,
    pub center: f64,
    pub size: f64,
    pub class: f64,
    pub lr: f64,
}

/// Held-out detection quality next to the shuffled-score floor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub holdout_scenes: usize,
    pub map_25: f64,
    pub map_50: f64,
    pub baseline_map_25: f64,
    pub baseline_map_50: f64,
    pub result: EvalResult,
}

/// Everything a caller needs to judge a finished run in process.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRow>,
    pub eval: Option<EvalSummary>,
    pub train_seconds: f64,
}

/// Train on the scenes listed in `data_dir`'s manifest, holding out the
/// trailing `cfg.holdout` entries, and write all artifacts under `out_dir`.
pub fn train(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate().context("run configuration")?;
    let manifest = load_manifest(data_dir)?;
    let total = manifest.scenes.len();
    if cfg.holdout >= total {
        bail!("holdout of {} leaves no training scenes out of {total}", cfg.holdout);
    }
    let scenes = load_scenes(data_dir, &manifest)?;
    let (train_scenes, holdout_scenes) = scenes.split_at(total - cfg.holdout);

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let config_json = serde_json::to_string_pretty(cfg)?;
    std::fs::write(out_dir.join("config.json"), config_json).context("writing config.json")?;

    let model = Detector::new(&cfg.model, cfg.seed)?;
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.optim.lr,
            beta1: cfg.optim.betas[0],
            beta2: cfg.optim.betas[1],
            eps: cfg.optim.eps,
            weight_decay: cfg.optim.weight_decay,
        },
        &model.params,
    )?;
    let sched = StepDecay {
        base_lr: cfg.optim.lr,
        factor: cfg.optim.decay_factor,
        milestones: cfg.optim.decay_epochs.clone(),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut csv = String::from("epoch,total,vote,objectness,center,size,class,lr,wall_time_s\n");
    let mut rows = Vec::with_capacity(cfg.epochs);
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train_scenes.len()).collect();
    for epoch in 0..cfg.epochs {
        let epoch_start = Instant::now();
        opt.set_lr(sched.lr_at(epoch))?;
        shuffle(&mut order, &mut rng);

        let mut sums = [0.0f64; 6];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut gts = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let aug = augment(&train_scenes[i], &mut rng)?;
                let small = downsample(&aug, cfg.train_points, &mut rng)?;
                gts.push(small.boxes.clone());
                batch.push(small);
            }
            let input = assemble_batch(&batch)?;
            model.params.zero_grads();
            let tape = Tape64::new();
            let (_, report) = model.loss(&tape, &input, &gts, Mode::Train)?;
            tape.backward(&report.total)?;
            opt.step()?;
            sums[0] += report.total.item()?;
            sums[1] += report.vote_loss;
            sums[2] += report.objectness_loss;
            sums[3] += report.center_loss;
            sums[4] += report.size_loss;
            sums[5] += report.class_loss;
            steps += 1;
        }

        let inv = 1.0 / steps as f64;
        let row = EpochRow {
            epoch: epoch + 1,
            total: sums[0] * inv,
            vote: sums[1] * inv,
            objectness: sums[2] * inv,
            center: sums[3] * inv,
            size: sums[4] * inv,
            class: sums[5] * inv,
            lr: opt.lr(),
        };
        let wall = epoch_start.elapsed().as_secs_f64();
        // Float fields print shortest-round-trip, so the log is value
        // exact; wall time is the only column that varies between runs.
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{:.3}",
            row.epoch, row.total, row.vote, row.objectness, row.center, row.size, row.class,
            row.lr, wall
        );
        println!(
            "epoch {}/{}: loss {:.4} (vote {:.3} obj {:.3} center {:.3} size {:.3} class {:.3}) lr {} [{:.1}s]",
            row.epoch, cfg.epochs, row.total, row.vote, row.objectness, row.center, row.size,
            row.class, row.lr, wall
        );
        rows.push(row);
    }
    let train_seconds = started.elapsed().as_secs_f64();
    std::fs::write(out_dir.join("loss.csv"), csv).context("writing loss.csv")?;
    checkpoint::save(&out_dir.join("model.pdc"), &model.params)?;

    let eval = if holdout_scenes.is_empty() {
        None
    } else {
        let summary = held_out_eval(&model, holdout_scenes, cfg)?;
        let json = serde_json::to_string_pretty(&summary)?;
        std::fs::write(out_dir.join("eval.json"), json).context("writing eval.json")?;
        println!(
            "held-out mAP@0.25 {:.4} (floor {:.4}), mAP@0.5 {:.4} over {} scenes",
            summary.map_25, summary.baseline_map_25, summary.map_50, summary.holdout_scenes
        );
        Some(summary)
    };

    Ok(TrainReport { epochs: rows, eval, train_seconds })
}

/// Detect on every held-out scene at full resolution and score the result,
/// then rescore the same proposals with shuffled confidences to get the
/// floor the detector has to clear.
pub fn held_out_eval(model: &Detector, scenes: &[Scene], cfg: &RunConfig) -> Result<EvalSummary> {
    let mut dets = Vec::with_capacity(scenes.len());
    let mut proposals = Vec::with_capacity(scenes.len());
    let mut gts = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let input = assemble_batch(std::slice::from_ref(scene))?;
        let mut scored = model.detect(&input, cfg.score_threshold, cfg.nms_iou)?;
        dets.push(scored.swap_remove(0));
        let tape = Tape64::inference();
        let out = model.forward(&tape, &input, Mode::Eval)?;
        let mut raw = decode_boxes(&out.head, 0.0);
        proposals.push(raw.swap_remove(0));
        gts.push(scene.boxes.clone());
    }
    let result = evaluate(&dets, &gts, &EVAL_THRESHOLDS)?;
    let baseline = random_score_baseline(
        &proposals,
        &gts,
        &EVAL_THRESHOLDS,
        cfg.nms_iou,
        cfg.baseline_trials,
        cfg.seed.wrapping_add(1),
    )?;
    Ok(EvalSummary {
        holdout_scenes: scenes.len(),
        map_25: result.map_at(EVAL_THRESHOLDS[0]).unwrap_or(0.0),
        map_50: result.map_at(EVAL_THRESHOLDS[1]).unwrap_or(0.0),
        baseline_map_25: baseline[0],
        baseline_map_50: baseline[1],
        result,
    })
}

/// Fisher-Yates with the draws taken high-to-low, so the shuffle consumes
/// a fixed number of values from the stream regardless of outcome.
fn shuffle<R: Rng>(order: &mut [usize], rng: &mut R) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commands::write_dataset;
    use crate::config::Preset;
    use std::path::PathBuf;

    fn scratch(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir()
            .join(format!("pointdet-trainer-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_run_config() -> RunConfig {
        let mut cfg = RunConfig::preset(Preset::Toy);
        cfg.gen.num_points = 1024;
        cfg.gen.max_objects = 2;
        cfg.epochs = 2;
        cfg.batch_size = 2;
        cfg.holdout = 2;
        cfg.train_points = 512;
        cfg.baseline_trials = 2;
        cfg.model.encoder.levels.truncate(2);
        cfg.model.encoder.levels[0].num_seeds = 128;
        cfg.model.encoder.levels[0].channels = 16;
        cfg.model.encoder.levels[1].num_seeds = 64;
        cfg.model.encoder.levels[1].channels = 16;
        cfg.model.encoder.fd_blocks = 1;
        cfg.model.gca.compress_channels = 16;
        cfg.model.gca.global_channels = 32;
        cfg.model.head.proposals = 16;
        cfg
    }

    #[test]
    fn two_runs_produce_identical_artifacts() {
        let root = scratch("repro");
        let cfg = tiny_run_config();
        let data = root.join("data");
        write_dataset(&cfg.gen, 6, 5, &data, pointdet_data::CloudFormat::Binary).unwrap();

        let (out_a, out_b) = (root.join("a"), root.join("b"));
        let rep_a = train(&cfg, &data, &out_a).unwrap();
        let rep_b = train(&cfg, &data, &out_b).unwrap();

        let ckpt = |p: &PathBuf| std::fs::read(p.join("model.pdc")).unwrap();
        assert_eq!(ckpt(&out_a), ckpt(&out_b), "checkpoints differ between runs");
        for (a, b) in rep_a.epochs.iter().zip(&rep_b.epochs) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
            assert_eq!(a.class.to_bits(), b.class.to_bits());
        }
        let (ea, eb) = (rep_a.eval.unwrap(), rep_b.eval.unwrap());
        assert_eq!(ea.map_25.to_bits(), eb.map_25.to_bits());
        assert_eq!(ea.baseline_map_25.to_bits(), eb.baseline_map_25.to_bits());
        let _ = std::fs::remove_dir_all(&root);
    }

    #[test]
    fn artifacts_land_in_the_output_directory() {
        let root = scratch("artifacts");
        let cfg = tiny_run_config();
        let data = root.join("data");
        write_dataset(&cfg.gen, 4, 9, &data, pointdet_data::CloudFormat::Binary).unwrap();
        let out = root.join("run");
        let report = train(&cfg, &data, &out).unwrap();

        for name in ["config.json", "loss.csv", "model.pdc", "eval.json"] {
            assert!(out.join(name).exists(), "missing {name}");
        }
        let csv = std::fs::read_to_string(out.join("loss.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,total,vote,objectness,center,size,class,lr,wall_time_s"
        );
        assert_eq!(lines.count(), cfg.epochs);
        assert_eq!(report.epochs.len(), cfg.epochs);

        // The stored checkpoint restores into a fresh detector and yields
        // the same detections as the in-memory model.
        let trained = {
            let model = Detector::new(&cfg.model, cfg.seed).unwrap();
            checkpoint::load(&out.join("model.pdc"), &model.params).unwrap();
            model
        };
        let scene = pointdet_data::gen_synthetic_scene(77, &cfg.gen).unwrap();
        let input = assemble_batch(std::slice::from_ref(&scene)).unwrap();
        let fresh = Detector::new(&cfg.model, cfg.seed).unwrap();
        checkpoint::load(&out.join("model.pdc"), &fresh.params).unwrap();
        let a = trained.detect(&input, 0.05, 0.25).unwrap();
        let b = fresh.detect(&input, 0.05, 0.25).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let _ = std::fs::remove_dir_all(&root);
    }

    #[test]
    fn holdout_must_leave_training_scenes() {
        let root = scratch("holdout");
        let mut cfg = tiny_run_config();
        let data = root.join("data");
        write_dataset(&cfg.gen, 3, 2, &data, pointdet_data::CloudFormat::Binary).unwrap();
        cfg.holdout = 3;
        let err = train(&cfg, &data, &root.join("out")).unwrap_err();
        assert!(err.to_string().contains("no training scenes"));
        let _ = std::fs::remove_dir_all(&root);
    }
}
