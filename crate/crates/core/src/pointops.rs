//! Spatial-query kernels over point clouds: farthest point sampling, ball
//! query, k nearest neighbors, relative grouping, and inverse-distance
//! interpolation.
//!
//! All kernels are brute force over squared distances; that is the
//! contract, not an implementation detail, because index-order tie rules
//! must hold exactly. Every rule that breaks a tie does so toward the
//! lowest source index, keeping results deterministic under any
//! permutation of equal-distance candidates.

use crate::error::{Result, TensorError};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// N points with coordinates and optional per-point feature channels,
/// both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S: Real> {
    coords: Vec<S>,
    features: Vec<S>,
    channels: usize,
}

impl<S: Real> PointCloud<S> {
    pub fn new(coords: Vec<S>, features: Vec<S>, channels: usize) -> Result<Self> {
        if coords.is_empty() || coords.len() % 3 != 0 {
            return Err(TensorError::invalid(format!(
                "coordinate buffer length {} is not a positive multiple of 3",
                coords.len()
            )));
        }
        let n = coords.len() / 3;
        if features.len() != n * channels {
            return Err(TensorError::DataLength {
                op: "point_cloud",
                shape: vec![n, channels],
                expected: n * channels,
                got: features.len(),
            });
        }
        if coords.iter().chain(features.iter()).any(|v| !v.is_finite()) {
            return Err(TensorError::invalid("non-finite value in point cloud"));
        }
        Ok(PointCloud {
            coords,
            features,
            channels,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one point
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coords(&self) -> &[S] {
        &self.coords
    }

    pub fn features(&self) -> &[S] {
        &self.features
    }

    pub fn coord(&self, i: usize) -> [S; 3] {
        [
            self.coords[i * 3],
            self.coords[i * 3 + 1],
            self.coords[i * 3 + 2],
        ]
    }
}

/// Neighbor rows produced by a spatial query: `n_per_row` indices per
/// query row, with `valid_count` recording how many are genuine before
/// duplicate padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    pub indices: Vec<usize>,
    pub valid_count: Vec<usize>,
    pub n_per_row: usize,
}

impl NeighborIndex {
    pub fn rows(&self) -> usize {
        self.valid_count.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.indices[r * self.n_per_row..(r + 1) * self.n_per_row]
    }
}

fn dist2<S: Real>(coords: &[S], i: usize, p: &[S; 3]) -> S {
    let dx = coords[i * 3] - p[0];
    let dy = coords[i * 3 + 1] - p[1];
    let dz = coords[i * 3 + 2] - p[2];
    dx * dx + dy * dy + dz * dz
}

fn point<S: Real>(coords: &[S], i: usize) -> [S; 3] {
    [coords[i * 3], coords[i * 3 + 1], coords[i * 3 + 2]]
}

fn check_coords<S: Real>(coords: &[S], what: &str) -> Result<usize> {
    if coords.is_empty() || coords.len() % 3 != 0 {
        return Err(TensorError::invalid(format!(
            "{what} buffer length {} is not a positive multiple of 3",
            coords.len()
        )));
    }
    Ok(coords.len() / 3)
}

/// Greedy farthest point sampling. Selection starts at `start` (index 0
/// by convention; a seeded random start is a config choice of the
/// caller), each step adds the point with the largest minimum squared
/// distance to the chosen set, ties go to the lowest index, and the
/// output preserves selection order. Indices are distinct even when the
/// cloud contains duplicate points.
pub fn farthest_point_sample<S: Real>(coords: &[S], m: usize, start: usize) -> Result<Vec<usize>> {
    let n = check_coords(coords, "coordinate")?;
    if m == 0 || m > n {
        return Err(TensorError::invalid(format!(
            "cannot sample {m} of {n} points"
        )));
    }
    if start >= n {
        return Err(TensorError::invalid(format!(
            "start index {start} out of range for {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_d2: Vec<S> = (0..n)
        .map(|i| dist2(coords, i, &point(coords, start)))
        .collect();
    chosen.push(start);
    taken[start] = true;
    for _ in 1..m {
        let mut best = S::neg_infinity();
        let mut best_i = usize::MAX;
        for i in 0..n {
            if !taken[i] && min_d2[i] > best {
                best = min_d2[i];
                best_i = i;
            }
        }
        chosen.push(best_i);
        taken[best_i] = true;
        let p = point(coords, best_i);
        for i in 0..n {
            let d = dist2(coords, i, &p);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
    }
    Ok(chosen)
}

/// For each center, the first `k` points in ascending source-index order
/// whose squared distance is at most `radius²`. Rows with fewer hits are
/// padded by repeating the first hit; a row with no hit falls back to the
/// single nearest point (lowest index on ties) with `valid_count` 1.
pub fn ball_query<S: Real>(
    coords: &[S],
    centers: &[S],
    radius: S,
    k: usize,
) -> Result<NeighborIndex> {
    let n = check_coords(coords, "coordinate")?;
    let m = check_coords(centers, "center")?;
    if radius <= S::zero() || !radius.is_finite() {
        return Err(TensorError::invalid("ball query radius must be positive"));
    }
    if k == 0 {
        return Err(TensorError::invalid("ball query needs at least 1 neighbor"));
    }
    let r2 = radius * radius;
    let mut indices = vec![0usize; m * k];
    let mut valid = vec![0usize; m];
    for row in 0..m {
        let c = point(centers, row);
        let out = &mut indices[row * k..(row + 1) * k];
        let mut found = 0usize;
        for i in 0..n {
            if dist2(coords, i, &c) <= r2 {
                out[found] = i;
                found += 1;
                if found == k {
                    break;
                }
            }
        }
        if found == 0 {
            let mut best = S::infinity();
            let mut best_i = 0usize;
            for i in 0..n {
                let d = dist2(coords, i, &c);
                if d < best {
                    best = d;
                    best_i = i;
                }
            }
            out.fill(best_i);
            valid[row] = 1;
        } else {
            let first = out[0];
            for slot in out[found..].iter_mut() {
                *slot = first;
            }
            valid[row] = found;
        }
    }
    Ok(NeighborIndex {
        indices,
        valid_count: valid,
        n_per_row: k,
    })
}

/// The `k` nearest points to each query by squared distance, ordered
/// nearest first, distance ties broken by lower index. Maintains a small
/// insertion buffer per query rather than sorting all distances.
pub fn knn<S: Real>(coords: &[S], queries: &[S], k: usize) -> Result<NeighborIndex> {
    let n = check_coords(coords, "coordinate")?;
    let m = check_coords(queries, "query")?;
    if k == 0 || k > n {
        return Err(TensorError::invalid(format!(
            "cannot take {k} neighbors from {n} points"
        )));
    }
    let mut indices = vec![0usize; m * k];
    for row in 0..m {
        let q = point(queries, row);
        let mut buf: Vec<(S, usize)> = Vec::with_capacity(k + 1);
        for i in 0..n {
            let d = dist2(coords, i, &q);
            if buf.len() == k {
                let worst = buf[k - 1];
                if (d, i) >= (worst.0, worst.1) {
                    continue;
                }
            }
            let pos = buf.partition_point(|&(bd, bi)| (bd, bi) < (d, i));
            buf.insert(pos, (d, i));
            if buf.len() > k {
                buf.pop();
            }
        }
        for (slot, (_, i)) in indices[row * k..(row + 1) * k].iter_mut().zip(&buf) {
            *slot = *i;
        }
    }
    Ok(NeighborIndex {
        indices,
        valid_count: vec![k; m],
        n_per_row: k,
    })
}

/// Gather each seed's neighbors into `[M, k, 3+C]` rows whose first three
/// channels are the neighbor coordinates relative to the seed and whose
/// remaining channels are the neighbor's features. A neighbor equal to
/// its seed therefore contributes zero relative coordinates.
pub fn group_relative<S: Real>(
    coords: &[S],
    features: &[S],
    channels: usize,
    seed_idx: &[usize],
    neighbors: &NeighborIndex,
) -> Result<Tensor<S>> {
    let n = check_coords(coords, "coordinate")?;
    if features.len() != n * channels {
        return Err(TensorError::DataLength {
            op: "group_relative",
            shape: vec![n, channels],
            expected: n * channels,
            got: features.len(),
        });
    }
    let m = seed_idx.len();
    if neighbors.rows() != m {
        return Err(TensorError::invalid(format!(
            "{} neighbor rows for {m} seeds",
            neighbors.rows()
        )));
    }
    let k = neighbors.n_per_row;
    let width = 3 + channels;
    let mut out = vec![S::zero(); m * k * width];
    for (row, &si) in seed_idx.iter().enumerate() {
        if si >= n {
            return Err(TensorError::invalid(format!(
                "seed index {si} out of range for {n} points"
            )));
        }
        let seed = point(coords, si);
        for (j, &ni) in neighbors.row(row).iter().enumerate() {
            if ni >= n {
                return Err(TensorError::invalid(format!(
                    "neighbor index {ni} out of range for {n} points"
                )));
            }
            let dst = (row * k + j) * width;
            out[dst] = coords[ni * 3] - seed[0];
            out[dst + 1] = coords[ni * 3 + 1] - seed[1];
            out[dst + 2] = coords[ni * 3 + 2] - seed[2];
            out[dst + 3..dst + width]
                .copy_from_slice(&features[ni * channels..(ni + 1) * channels]);
        }
    }
    Ok(Tensor::new_unchecked(vec![m, k, width], out))
}

/// Indices and normalized inverse-squared-distance weights of the three
/// nearest source points per destination point. `1e-8` in the
/// denominator keeps coincident points finite while letting an exact
/// match dominate its weight.
pub fn three_nn<S: Real>(src_coords: &[S], dst_coords: &[S]) -> Result<(Vec<usize>, Vec<S>)> {
    let nd = check_coords(dst_coords, "destination")?;
    let nn = knn(src_coords, dst_coords, 3)?;
    let eps = S::from_f64(1e-8);
    let mut weights = vec![S::zero(); nd * 3];
    for row in 0..nd {
        let q = point(dst_coords, row);
        let mut sum = S::zero();
        for j in 0..3 {
            let i = nn.indices[row * 3 + j];
            let w = S::one() / (dist2(src_coords, i, &q) + eps);
            weights[row * 3 + j] = w;
            sum += w;
        }
        for j in 0..3 {
            weights[row * 3 + j] /= sum;
        }
    }
    Ok((nn.indices, weights))
}

/// Propagate sparse features onto dense coordinates as the weighted mean
/// of each dense point's three nearest sparse features.
pub fn three_interpolate<S: Real>(
    src_coords: &[S],
    src_feats: &[S],
    channels: usize,
    dst_coords: &[S],
) -> Result<Vec<S>> {
    let ns = check_coords(src_coords, "source")?;
    if src_feats.len() != ns * channels {
        return Err(TensorError::DataLength {
            op: "three_interpolate",
            shape: vec![ns, channels],
            expected: ns * channels,
            got: src_feats.len(),
        });
    }
    let (idx, w) = three_nn(src_coords, dst_coords)?;
    let nd = dst_coords.len() / 3;
    let mut out = vec![S::zero(); nd * channels];
    for row in 0..nd {
        for j in 0..3 {
            let i = idx[row * 3 + j];
            let wj = w[row * 3 + j];
            for c in 0..channels {
                out[row * channels + c] += wj * src_feats[i * channels + c];
            }
        }
    }
    Ok(out)
}
