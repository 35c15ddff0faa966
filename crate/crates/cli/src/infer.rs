//! Checkpoint loading and detection on stored clouds, plus a PLY dump of
//! the predicted boxes for quick visual inspection.

use crate::batch::load_manifest;
use crate::config::RunConfig;
use crate::pool::parallel_map_with;
use anyhow::{bail, Context, Result};
use pointdet_core::checkpoint;
use pointdet_core::geom::{NormTransform, ScoredBox};
use pointdet_core::tensor::Tensor;
use pointdet_core::PointCloud64;
use pointdet_data::{load_cloud, load_scene, save_detections};
use pointdet_net::{BatchInput, Detector};
use std::path::{Path, PathBuf};

/// Rebuild the detector described by `config_path` (defaulting to the
/// `config.json` next to the checkpoint) and load the stored weights.
pub fn load_model(ckpt: &Path, config_path: Option<&Path>) -> Result<(Detector, RunConfig)> {
    let default_cfg;
    let cfg_path = match config_path {
        Some(p) => p,
        None => {
            default_cfg = ckpt
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("config.json");
            &default_cfg
        }
    };
    let text = std::fs::read_to_string(cfg_path)
        .with_context(|| format!("reading run config {}", cfg_path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", cfg_path.display()))?;
    cfg.validate()?;
    let model = Detector::new(&cfg.model, cfg.seed)?;
    checkpoint::load(ckpt, &model.params)
        .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    Ok((model, cfg))
}

/// One stored cloud as a single-element batch, with the normalization fit
/// on exactly the coordinates being fed.
pub fn input_from_cloud(cloud: &PointCloud64) -> Result<BatchInput> {
    let (n, c) = (cloud.len(), cloud.channels());
    if n == 0 || c == 0 {
        bail!("cloud has no points or no feature channels");
    }
    Ok(BatchInput {
        coords: Tensor::from_vec(vec![1, n, 3], cloud.coords().to_vec())?,
        features: Tensor::from_vec(vec![1, n, c], cloud.features().to_vec())?,
        norms: vec![NormTransform::fit(cloud.coords())?],
    })
}

/// Detect on a single cloud file. Scene files work too; their ground truth
/// is simply ignored.
pub fn infer_cloud(
    model: &Detector,
    cloud_path: &Path,
    score_threshold: f64,
    nms_iou: f64,
) -> Result<Vec<ScoredBox>> {
    let cloud = if cloud_path.extension().is_some_and(|e| e == "json") {
        load_scene(cloud_path)?.cloud
    } else {
        load_cloud(cloud_path)?
    };
    let input = input_from_cloud(&cloud)?;
    let mut dets = model.detect(&input, score_threshold, nms_iou)?;
    Ok(dets.swap_remove(0))
}

/// Detect on every scene in a generated directory, writing one
/// `<stem>.dets.json` per scene into `out_dir` (plus `<stem>.ply` when
/// asked). Workers rebuild the model from the checkpoint once each, so the
/// fan-out never shares mutable state and any worker count produces the
/// same files.
pub fn infer_dir(
    ckpt: &Path,
    config_path: Option<&Path>,
    data_dir: &Path,
    out_dir: &Path,
    score_threshold: f64,
    nms_iou: f64,
    dump_ply: bool,
) -> Result<usize> {
    let manifest = load_manifest(data_dir)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let jobs: Vec<PathBuf> = manifest.scenes.iter().map(|s| data_dir.join(s)).collect();
    let ckpt = ckpt.to_path_buf();
    let config_path = config_path.map(Path::to_path_buf);
    let out_dir = out_dir.to_path_buf();
    let results = parallel_map_with(
        jobs,
        || load_model(&ckpt, config_path.as_deref()),
        |loaded, scene_path| -> Result<()> {
            let (model, _) = match loaded {
                Ok(pair) => pair,
                Err(e) => bail!("{e:#}"),
            };
            let dets = infer_cloud(model, &scene_path, score_threshold, nms_iou)?;
            let stem = scene_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("scene");
            save_detections(&out_dir.join(format!("{stem}.dets.json")), &dets)?;
            if dump_ply {
                write_ply(&out_dir.join(format!("{stem}.ply")), &dets)?;
            }
            Ok(())
        },
    );
    let n = results.len();
    for r in results {
        r?;
    }
    Ok(n)
}

/// Box wireframes as an ASCII PLY line set: eight corners per box, twelve
/// edges, vertices colored by class. Corner order encodes the axis bits
/// (x lowest), so edge c -> c|bit connects each corner to its neighbors.
pub fn write_ply(path: &Path, dets: &[ScoredBox]) -> Result<()> {
    const CLASS_COLORS: [[u8; 3]; 3] = [[230, 80, 60], [70, 160, 230], [90, 200, 120]];
    let mut verts = String::new();
    let mut edges = String::new();
    for (bi, det) in dets.iter().enumerate() {
        let c = det.boxy.center;
        let h = [det.boxy.size[0] / 2.0, det.boxy.size[1] / 2.0, det.boxy.size[2] / 2.0];
        let color = CLASS_COLORS[det.class_id % CLASS_COLORS.len()];
        for corner in 0..8u32 {
            let p: Vec<f64> = (0..3)
                .map(|a| {
                    if corner >> a & 1 == 1 {
                        c[a] + h[a]
                    } else {
                        c[a] - h[a]
                    }
                })
                .collect();
            verts.push_str(&format!(
                "{} {} {} {} {} {}\n",
                p[0], p[1], p[2], color[0], color[1], color[2]
            ));
        }
        let base = (bi * 8) as u32;
        for corner in 0..8u32 {
            for axis in 0..3 {
                if corner >> axis & 1 == 0 {
                    edges.push_str(&format!("{} {}\n", base + corner, base + (corner | 1 << axis)));
                }
            }
        }
    }
    let header = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement edge {}\nproperty int vertex1\nproperty int vertex2\nend_header\n",
        dets.len() * 8,
        dets.len() * 12
    );
    std::fs::write(path, format!("{header}{verts}{edges}"))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Resolve ground truth for evaluation: either a generated directory (via
/// its manifest) or a single scene file.
pub fn load_gt(path: &Path) -> Result<Vec<(String, Vec<pointdet_core::geom::GtBox>)>> {
    if path.is_dir() {
        let manifest = load_manifest(path)?;
        manifest
            .scenes
            .iter()
            .map(|name| {
                let scene = load_scene(&path.join(name))?;
                let stem = Path::new(name)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or(name)
                    .to_string();
                Ok((stem, scene.boxes))
            })
            .collect()
    } else {
        let scene = load_scene(path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scene")
            .to_string();
        Ok(vec![(stem, scene.boxes)])
    }
}
