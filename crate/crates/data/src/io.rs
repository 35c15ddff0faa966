//! On-disk formats: point clouds as whitespace text or a compact f32
//! binary, scenes as JSON referencing their cloud by a sibling-relative
//! path, and detection lists as flat JSON arrays.

use crate::scene::Scene;
use pointdet_core::geom::{GtBox, NormTransform, ScoredBox};
use pointdet_core::pointops::PointCloud;
use pointdet_core::{Result, TensorError};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const CLOUD_MAGIC: &[u8; 4] = b"PCB1";

/// Write one point per line, coordinates then features, nine decimal
/// places each. That resolves positions to well under a nanometer at
/// room scale.
pub fn save_cloud_text(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let c = cloud.channels();
    for i in 0..cloud.len() {
        let p = cloud.coord(i);
        write!(w, "{:.9} {:.9} {:.9}", p[0], p[1], p[2])?;
        for f in &cloud.features()[i * c..(i + 1) * c] {
            write!(w, " {f:.9}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cloud_text(path: &Path) -> Result<PointCloud<f64>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut coords = Vec::new();
    let mut features = Vec::new();
    let mut channels: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let vals = trimmed
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| {
                TensorError::invalid(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        if vals.len() < 3 {
            return Err(TensorError::invalid(format!(
                "{}:{}: a point needs at least three coordinates",
                path.display(),
                lineno + 1
            )));
        }
        let c = vals.len() - 3;
        match channels {
            None => channels = Some(c),
            Some(expect) if expect != c => {
                return Err(TensorError::invalid(format!(
                    "{}:{}: {c} feature columns after seeing {expect}",
                    path.display(),
                    lineno + 1
                )));
            }
            _ => {}
        }
        coords.extend_from_slice(&vals[..3]);
        features.extend_from_slice(&vals[3..]);
    }
    PointCloud::new(coords, features, channels.unwrap_or(0))
}

/// Write the cloud as `PCB1`, point and channel counts as little-endian
/// u32, then all coordinates and all features as little-endian f32.
pub fn save_cloud_binary(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(CLOUD_MAGIC)?;
    w.write_all(&(cloud.len() as u32).to_le_bytes())?;
    w.write_all(&(cloud.channels() as u32).to_le_bytes())?;
    for v in cloud.coords().iter().chain(cloud.features()) {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_cloud_binary(path: &Path) -> Result<PointCloud<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != CLOUD_MAGIC {
        return Err(TensorError::invalid(format!(
            "{} is not a binary point cloud",
            path.display()
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let want = 12 + 4 * n * (3 + c);
    if bytes.len() != want {
        return Err(TensorError::invalid(format!(
            "{}: {} bytes but the header promises {want}",
            path.display(),
            bytes.len()
        )));
    }
    let mut vals = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64);
    let coords: Vec<f64> = vals.by_ref().take(n * 3).collect();
    let features: Vec<f64> = vals.collect();
    PointCloud::new(coords, features, c)
}

/// Load a cloud in either format, telling them apart by the magic bytes.
pub fn load_cloud(path: &Path) -> Result<PointCloud<f64>> {
    let mut head = [0u8; 4];
    let got = fs::File::open(path)?.read(&mut head)?;
    if got == 4 && &head == CLOUD_MAGIC {
        load_cloud_binary(path)
    } else {
        load_cloud_text(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Text,
    Binary,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    scene_id: u64,
    cloud_path: String,
    norm: NormTransform,
    boxes: Vec<GtBox>,
}

/// Write `scene` as JSON at `path` plus a sibling cloud file sharing the
/// same stem. The JSON stores the cloud file name only, so a scene
/// directory can be moved as a unit.
pub fn save_scene(scene: &Scene, path: &Path, format: CloudFormat) -> Result<()> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| TensorError::invalid("scene path needs a utf-8 file name"))?;
    let cloud_name = match format {
        CloudFormat::Text => format!("{stem}.xyz"),
        CloudFormat::Binary => format!("{stem}.pcb"),
    };
    let cloud_path = path.with_file_name(&cloud_name);
    match format {
        CloudFormat::Text => save_cloud_text(&cloud_path, &scene.cloud)?,
        CloudFormat::Binary => save_cloud_binary(&cloud_path, &scene.cloud)?,
    }
    let record = SceneFile {
        scene_id: scene.scene_id,
        cloud_path: cloud_name,
        norm: scene.norm,
        boxes: scene.boxes.clone(),
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| TensorError::invalid(format!("encoding {}: {e}", path.display())))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let json = fs::read_to_string(path)?;
    let record: SceneFile = serde_json::from_str(&json)
        .map_err(|e| TensorError::invalid(format!("{}: {e}", path.display())))?;
    let cloud_path = match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(&record.cloud_path),
        _ => PathBuf::from(&record.cloud_path),
    };
    Ok(Scene {
        scene_id: record.scene_id,
        cloud: load_cloud(&cloud_path)?,
        boxes: record.boxes,
        norm: record.norm,
    })
}

pub fn save_detections(path: &Path, dets: &[ScoredBox]) -> Result<()> {
    let json = serde_json::to_string_pretty(dets)
        .map_err(|e| TensorError::invalid(format!("encoding {}: {e}", path.display())))?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_detections(path: &Path) -> Result<Vec<ScoredBox>> {
    let json = fs::read_to_string(path)?;
    serde_json::from_str(&json)
        .map_err(|e| TensorError::invalid(format!("{}: {e}", path.display())))
}
