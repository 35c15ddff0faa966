//! Single-file model checkpoints: a magic header, a JSON manifest of
//! tensor names/shapes/offsets, and a raw little-endian f64 blob. Tensors
//! are laid out in lexicographic name order, and a save/load round trip
//! is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::param::ParamSet;
use crate::scalar::Real;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PDCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the f64 blob.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<Entry>,
}

/// Write every parameter and buffer of `set` to `path`.
pub fn save<S: Real>(path: &Path, set: &ParamSet<S>) -> Result<()> {
    let named = set.named_sorted();
    let mut entries = Vec::with_capacity(named.len());
    let mut offset = 0u64;
    for (name, t) in &named {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel() as u64;
    }
    let manifest = serde_json::to_vec(&Manifest { entries })
        .map_err(|e| TensorError::Checkpoint(format!("manifest encode: {e}")))?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;
    for (_, t) in &named {
        for v in t.data() {
            w.write_all(&v.to_f64_val().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every tensor stored at `path`.
pub fn read_entries<S: Real>(path: &Path) -> Result<Vec<(String, Tensor<S>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| TensorError::Checkpoint(format!("manifest decode: {e}")))?;
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;
    if blob.len() % 8 != 0 {
        return Err(TensorError::Checkpoint(format!(
            "blob length {} is not a multiple of 8",
            blob.len()
        )));
    }
    let total = blob.len() / 8;
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + numel;
        if end > total {
            return Err(TensorError::Checkpoint(format!(
                "tensor {:?} extends past blob end ({end} > {total})",
                e.name
            )));
        }
        let data: Vec<S> = (start..end)
            .map(|i| {
                let mut b = [0u8; 8];
                b.copy_from_slice(&blob[i * 8..(i + 1) * 8]);
                S::from_f64(f64::from_le_bytes(b))
            })
            .collect();
        out.push((e.name.clone(), Tensor::from_vec(e.shape.clone(), data)?));
    }
    Ok(out)
}

/// Load a checkpoint into `set`, matching strictly by name and shape.
pub fn load<S: Real>(path: &Path, set: &ParamSet<S>) -> Result<()> {
    let entries = read_entries(path)?;
    set.load_named(&entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_set() -> ParamSet<f64> {
        let set = ParamSet::new();
        let root = set.root();
        root.param(
            "layer.weight",
            Tensor::from_vec(vec![2, 3], vec![0.1, -0.2, 0.3, 1e-17, -4.0, 5.5]).unwrap(),
        );
        root.param("layer.bias", Tensor::from_vec(vec![3], vec![0.0, 7.25, -1.0]).unwrap());
        root.buffer(
            "norm.running_mean",
            Tensor::from_vec(vec![3], vec![0.5, 0.25, 0.125]).unwrap(),
        );
        set
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("ckpt_rt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let set = demo_set();
        let before = set.named_sorted();
        save(&path, &set).unwrap();

        let other = demo_set();
        // Perturb so the load has to do real work.
        for p in other.params() {
            p.set_value(Tensor::zeros(&p.shape()));
        }
        load(&path, &other).unwrap();
        let after = other.named_sorted();
        assert_eq!(before.len(), after.len());
        for ((an, at), (bn, bt)) in before.iter().zip(&after) {
            assert_eq!(an, bn);
            assert!(at.bit_eq(bt), "tensor {an} changed across round trip");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = std::env::temp_dir().join(format!("ckpt_shape_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save(&path, &demo_set()).unwrap();

        let other: ParamSet<f64> = ParamSet::new();
        other.root().param("layer.weight", Tensor::zeros(&[3, 2]));
        other.root().param("layer.bias", Tensor::zeros(&[3]));
        other
            .root()
            .buffer("norm.running_mean", Tensor::zeros(&[3]));
        assert!(load(&path, &other).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_rejects_missing_and_extra_tensors() {
        let dir = std::env::temp_dir().join(format!("ckpt_miss_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save(&path, &demo_set()).unwrap();

        let fewer: ParamSet<f64> = ParamSet::new();
        fewer.root().param("layer.weight", Tensor::zeros(&[2, 3]));
        assert!(load(&path, &fewer).is_err());

        let more = demo_set();
        more.root().param("extra", Tensor::zeros(&[1]));
        assert!(load(&path, &more).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
