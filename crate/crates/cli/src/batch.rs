//! Dataset plumbing: the manifest listing a directory's scene files, bulk
//! scene loading, and the stacking of scenes into detector input tensors.

use anyhow::{bail, Context, Result};
use pointdet_core::geom::NormTransform;
use pointdet_core::tensor::Tensor;
use pointdet_data::{load_scene, Scene};
use pointdet_net::BatchInput;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub base_seed: u64,
    pub scenes: Vec<String>,
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("index.json")
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = manifest_path(dir);
    let json = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = manifest_path(dir);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if manifest.scenes.is_empty() {
        bail!("{} lists no scenes", path.display());
    }
    Ok(manifest)
}

pub fn load_scenes(dir: &Path, manifest: &Manifest) -> Result<Vec<Scene>> {
    let paths: Vec<PathBuf> = manifest.scenes.iter().map(|name| dir.join(name)).collect();
    crate::pool::parallel_map(paths, |path| {
        load_scene(&path).map_err(|e| anyhow::anyhow!("loading {}: {e}", path.display()))
    })
    .into_iter()
    .collect()
}

/// Stack scenes of equal size into one batch. The normalization handed to
/// the encoder is refit on the exact coordinates being fed, so rounding
/// introduced by file formats can never push a point outside the unit
/// cube the position embedding expects.
pub fn assemble_batch(scenes: &[Scene]) -> Result<BatchInput> {
    let Some(first) = scenes.first() else {
        bail!("cannot assemble an empty batch");
    };
    let n = first.cloud.len();
    let c = first.cloud.channels();
    if c == 0 {
        bail!("scenes need at least one feature channel");
    }
    let mut coords = Vec::with_capacity(scenes.len() * n * 3);
    let mut features = Vec::with_capacity(scenes.len() * n * c);
    let mut norms = Vec::with_capacity(scenes.len());
    for scene in scenes {
        if scene.cloud.len() != n || scene.cloud.channels() != c {
            bail!(
                "scene {} is {} x {} points but the batch started at {} x {}",
                scene.scene_id,
                scene.cloud.len(),
                scene.cloud.channels(),
                n,
                c
            );
        }
        coords.extend_from_slice(scene.cloud.coords());
        features.extend_from_slice(scene.cloud.features());
        norms.push(NormTransform::fit(scene.cloud.coords())?);
    }
    Ok(BatchInput {
        coords: Tensor::from_vec(vec![scenes.len(), n, 3], coords)?,
        features: Tensor::from_vec(vec![scenes.len(), n, c], features)?,
        norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointdet_data::{gen_synthetic_scene, GenConfig};

    #[test]
    fn batches_stack_scene_buffers_in_order() {
        let cfg = GenConfig { num_points: 1024, ..GenConfig::default() };
        let a = gen_synthetic_scene(1, &cfg).unwrap();
        let b = gen_synthetic_scene(2, &cfg).unwrap();
        let batch = assemble_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(batch.coords.shape(), &[2, 1024, 3]);
        assert_eq!(batch.features.shape(), &[2, 1024, 1]);
        assert_eq!(&batch.coords.data()[..3 * 1024], a.cloud.coords());
        assert_eq!(&batch.coords.data()[3 * 1024..], b.cloud.coords());
        assert_eq!(batch.norms.len(), 2);
        for (scene, norm) in [a, b].iter().zip(&batch.norms) {
            for i in 0..scene.cloud.len() {
                let q = norm.apply(&scene.cloud.coord(i));
                assert!(q.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
            }
        }
    }

    #[test]
    fn mixed_sizes_are_rejected() {
        let small = GenConfig { num_points: 1024, ..GenConfig::default() };
        let big = GenConfig { num_points: 1100, ..GenConfig::default() };
        let a = gen_synthetic_scene(1, &small).unwrap();
        let b = gen_synthetic_scene(1, &big).unwrap();
        assert!(assemble_batch(&[a, b]).is_err());
        assert!(assemble_batch(&[]).is_err());
    }

    #[test]
    fn manifests_round_trip() {
        let dir = std::env::temp_dir().join(format!("pointdet_mani_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let manifest = Manifest {
            base_seed: 9,
            scenes: vec!["scene_00000.json".into(), "scene_00001.json".into()],
        };
        write_manifest(&dir, &manifest).unwrap();
        let back = load_manifest(&dir).unwrap();
        assert_eq!(back.base_seed, 9);
        assert_eq!(back.scenes, manifest.scenes);
    }
}
