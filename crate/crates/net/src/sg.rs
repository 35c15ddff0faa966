//! Sample-and-group: farthest-point seed selection, ball-query
//! neighborhoods, and differentiable gathering of neighbor features with
//! seed-relative coordinates.

use pointdet_core::geom::NormTransform;
use pointdet_core::ops::concat;
use pointdet_core::pointops::{ball_query, farthest_point_sample};
use pointdet_core::tensor::Tensor;
use pointdet_core::{Result, Tape64, Tensor64, TensorError, Var64};

use crate::config::LevelConfig;

/// Seed positions with their feature variable. Coordinates are plain data
/// throughout the encoder; only features carry gradient.
pub struct Seeds {
    /// `[B, M, 3]`, meters.
    pub coords: Tensor64,
    /// `[B, M, C]`.
    pub feats: Var64,
}

/// One level's grouped neighborhoods.
pub struct SgOutput {
    /// `[B, M, 3]` seed positions, meters.
    pub seed_coords: Tensor64,
    /// `[B, M, k, 3+C]`: seed-relative neighbor coordinates followed by
    /// the neighbor's feature channels.
    pub grouped: Var64,
    /// `[B, M, k, 3]` absolute neighbor positions mapped into the scene's
    /// unit cube, for positional encoding.
    pub neighbor_norm: Tensor64,
}

/// Select `cfg.num_seeds` seeds per batch element and gather each seed's
/// ball neighborhood. `norms` maps each batch element's coordinates into
/// the unit cube.
pub fn sample_and_group(
    tape: &Tape64,
    coords: &Tensor64,
    feats: &Var64,
    norms: &[NormTransform],
    cfg: &LevelConfig,
) -> Result<SgOutput> {
    let csh = coords.shape();
    let fsh = feats.shape().to_vec();
    if csh.len() != 3 || csh[2] != 3 || fsh.len() != 3 {
        return Err(TensorError::invalid(format!(
            "sample_and_group expects [B, N, 3] coords and [B, N, C] features, got {csh:?} and {fsh:?}"
        )));
    }
    let (bsz, n, c) = (csh[0], csh[1], fsh[2]);
    if fsh[0] != bsz || fsh[1] != n {
        return Err(TensorError::ShapeMismatch {
            op: "sample_and_group",
            lhs: csh.to_vec(),
            rhs: fsh,
        });
    }
    if norms.len() != bsz {
        return Err(TensorError::invalid(format!(
            "{} normalization transforms for batch of {bsz}",
            norms.len()
        )));
    }
    let (m, k) = (cfg.num_seeds, cfg.neighbors);
    if m > n {
        return Err(TensorError::invalid(format!(
            "cannot sample {m} seeds from {n} points"
        )));
    }

    let mut seed_coords = vec![0.0; bsz * m * 3];
    let mut rel = vec![0.0; bsz * m * k * 3];
    let mut norm_abs = vec![0.0; bsz * m * k * 3];
    let mut gather_idx = vec![0usize; bsz * m * k];
    for b in 0..bsz {
        let pts = &coords.data()[b * n * 3..(b + 1) * n * 3];
        let seeds = farthest_point_sample(pts, m, 0)?;
        let sc = &mut seed_coords[b * m * 3..(b + 1) * m * 3];
        for (row, &si) in seeds.iter().enumerate() {
            sc[row * 3..row * 3 + 3].copy_from_slice(&pts[si * 3..si * 3 + 3]);
        }
        let neigh = ball_query(pts, sc, cfg.radius, k)?;
        for row in 0..m {
            let seed = [sc[row * 3], sc[row * 3 + 1], sc[row * 3 + 2]];
            for (j, &ni) in neigh.row(row).iter().enumerate() {
                let at = ((b * m + row) * k + j) * 3;
                let p = [pts[ni * 3], pts[ni * 3 + 1], pts[ni * 3 + 2]];
                for a in 0..3 {
                    rel[at + a] = p[a] - seed[a];
                }
                norm_abs[at..at + 3].copy_from_slice(&norms[b].apply(&p));
                gather_idx[(b * m + row) * k + j] = ni;
            }
        }
    }

    let gathered = feats
        .gather_axis1(&gather_idx, m * k)?
        .reshape(&[bsz, m, k, c])?;
    let rel_var = tape.constant(Tensor::from_vec(vec![bsz, m, k, 3], rel)?);
    let grouped = concat(&[rel_var, gathered], 3)?;
    Ok(SgOutput {
        seed_coords: Tensor::from_vec(vec![bsz, m, 3], seed_coords)?,
        grouped,
        neighbor_norm: Tensor::from_vec(vec![bsz, m, k, 3], norm_abs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointdet_core::pointops::group_relative;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn cloud(rng: &mut ChaCha20Rng, bsz: usize, n: usize, c: usize) -> (Tensor64, Tensor64) {
        let coords = Tensor::from_fn(&[bsz, n, 3], |_| rng.gen_range(0.0..2.0));
        let feats = Tensor::from_fn(&[bsz, n, c], |_| rng.gen_range(-1.0..1.0));
        (coords, feats)
    }

    #[test]
    fn matches_kernel_composition_per_batch() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (coords, feats) = cloud(&mut rng, 2, 40, 3);
        let norms: Vec<NormTransform> = (0..2)
            .map(|b| NormTransform::fit(&coords.data()[b * 120..(b + 1) * 120]).unwrap())
            .collect();
        let cfg = LevelConfig { num_seeds: 10, radius: 0.5, neighbors: 4, channels: 16 };
        let tape = Tape64::new();
        let out =
            sample_and_group(&tape, &coords, &tape.constant(feats.clone()), &norms, &cfg).unwrap();
        assert_eq!(out.grouped.shape(), &[2, 10, 4, 6]);

        for b in 0..2 {
            let pts = &coords.data()[b * 120..(b + 1) * 120];
            let fs = &feats.data()[b * 40 * 3..(b + 1) * 40 * 3];
            let seeds = farthest_point_sample(pts, 10, 0).unwrap();
            let centers: Vec<f64> = seeds
                .iter()
                .flat_map(|&i| pts[i * 3..i * 3 + 3].to_vec())
                .collect();
            let neigh = ball_query(pts, &centers, 0.5, 4).unwrap();
            let want = group_relative(pts, fs, 3, &seeds, &neigh).unwrap();
            let gv = out.grouped.value();
            let have = &gv.data()[b * 10 * 4 * 6..(b + 1) * 10 * 4 * 6];
            assert_eq!(have, want.data());
            assert_eq!(&out.seed_coords.data()[b * 30..(b + 1) * 30], &centers[..]);
        }
    }

    #[test]
    fn full_sampling_with_wide_radius_keeps_every_point() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let (coords, feats) = cloud(&mut rng, 1, 6, 2);
        let norms = vec![NormTransform::fit(coords.data()).unwrap()];
        let cfg = LevelConfig { num_seeds: 6, radius: 1e3, neighbors: 6, channels: 8 };
        let tape = Tape64::new();
        let out =
            sample_and_group(&tape, &coords, &tape.constant(feats), &norms, &cfg).unwrap();
        // Every point becomes a seed and every group holds the whole
        // cloud, so each seed sees itself with zero relative offset.
        let g = out.grouped.value();
        for row in 0..6 {
            let seed = [
                out.seed_coords.data()[row * 3],
                out.seed_coords.data()[row * 3 + 1],
                out.seed_coords.data()[row * 3 + 2],
            ];
            let self_slot = (0..6)
                .find(|&j| {
                    let at = ((row * 6) + j) * 5;
                    g.data()[at] == 0.0 && g.data()[at + 1] == 0.0 && g.data()[at + 2] == 0.0
                })
                .unwrap_or_else(|| panic!("seed {row} missing its own entry: {seed:?}"));
            let _ = self_slot;
        }
    }

    #[test]
    fn normalized_neighbors_stay_in_unit_cube() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let (coords, feats) = cloud(&mut rng, 2, 30, 1);
        let norms: Vec<NormTransform> = (0..2)
            .map(|b| NormTransform::fit(&coords.data()[b * 90..(b + 1) * 90]).unwrap())
            .collect();
        let cfg = LevelConfig { num_seeds: 8, radius: 0.7, neighbors: 5, channels: 8 };
        let tape = Tape64::new();
        let out = sample_and_group(&tape, &coords, &tape.constant(feats), &norms, &cfg).unwrap();
        assert!(out
            .neighbor_norm
            .data()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn oversampling_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let (coords, feats) = cloud(&mut rng, 1, 5, 1);
        let norms = vec![NormTransform::fit(coords.data()).unwrap()];
        let cfg = LevelConfig { num_seeds: 6, radius: 0.5, neighbors: 4, channels: 8 };
        let tape = Tape64::new();
        assert!(sample_and_group(&tape, &coords, &tape.constant(feats), &norms, &cfg).is_err());
    }
}
