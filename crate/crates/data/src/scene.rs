//! Synthetic indoor scenes: a floor, two walls, volume clutter, and a
//! handful of axis-aligned objects whose surfaces are point-sampled and
//! whose ground-truth boxes are fit tight around those samples.

use pointdet_core::geom::{Box3, GtBox, NormTransform};
use pointdet_core::pointops::PointCloud;
use pointdet_core::{Result, TensorError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// The three object shapes scenes are built from.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub num_points: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Room extents in meters; the room occupies `[0, room[a]]` per axis.
    pub room: [f64; 3],
    /// Share of points scattered uniformly through the room volume.
    pub clutter_fraction: f64,
    /// Surface samples drawn per placed object.
    pub points_per_object: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            num_points: 2048,
            min_objects: 1,
            max_objects: 4,
            room: [6.0, 6.0, 3.0],
            clutter_fraction: 0.4,
            points_per_object: 120,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects > self.max_objects {
            return Err(TensorError::invalid("object count range is inverted"));
        }
        if self.room.iter().any(|r| !(*r > 1.0)) {
            return Err(TensorError::invalid("room must be at least a meter each way"));
        }
        if !(0.0..1.0).contains(&self.clutter_fraction) {
            return Err(TensorError::invalid("clutter fraction must be in [0, 1)"));
        }
        if self.points_per_object < 50 {
            return Err(TensorError::invalid(
                "need at least 50 surface samples per object",
            ));
        }
        let clutter = (self.num_points as f64 * self.clutter_fraction) as usize;
        let objects = self.max_objects * self.points_per_object;
        if self.num_points < clutter + objects + 3 {
            return Err(TensorError::invalid(format!(
                "{} points cannot cover clutter ({clutter}) plus up to {} object samples",
                self.num_points, objects
            )));
        }
        Ok(())
    }
}

/// A point cloud with its detection ground truth. The single feature
/// channel is height above the floor (z).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: u64,
    pub cloud: PointCloud<f64>,
    pub boxes: Vec<GtBox>,
    pub norm: NormTransform,
}

fn disjoint_with_gap(a: &Box3, b: &Box3, gap: f64) -> bool {
    (0..3).any(|ax| {
        (a.center[ax] - b.center[ax]).abs() > (a.size[ax] + b.size[ax]) / 2.0 + gap
    })
}

/// Draw a class-conditioned object envelope: class 0 is a chunky box on
/// the floor, class 1 a flat elevated slab, class 2 a tall thin upright.
fn draw_object(rng: &mut ChaCha20Rng, class_id: usize) -> ([f64; 3], f64) {
    match class_id {
        0 => {
            let size = [
                rng.gen_range(0.4..1.2),
                rng.gen_range(0.4..1.2),
                rng.gen_range(0.4..1.2),
            ];
            (size, size[2] / 2.0)
        }
        1 => {
            let size = [
                rng.gen_range(0.8..1.6),
                rng.gen_range(0.8..1.6),
                rng.gen_range(0.1..0.25),
            ];
            let z = rng.gen_range(0.4..0.8);
            (size, z)
        }
        _ => {
            let size = [
                rng.gen_range(0.3..0.6),
                rng.gen_range(0.3..0.6),
                rng.gen_range(1.2..2.0),
            ];
            (size, size[2] / 2.0)
        }
    }
}

/// Uniform sample on the surface of an axis-aligned box, faces weighted
/// by area.
fn sample_surface(rng: &mut ChaCha20Rng, b: &Box3) -> [f64; 3] {
    let [sx, sy, sz] = b.size;
    let areas = [sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    let mut face = 5;
    for (i, a) in areas.iter().enumerate() {
        if pick < *a {
            face = i;
            break;
        }
        pick -= a;
    }
    let lo = b.min_corner();
    let hi = b.max_corner();
    let u = rng.gen_range(0.0..1.0);
    let v = rng.gen_range(0.0..1.0);
    match face {
        0 => [lo[0], lo[1] + u * sy, lo[2] + v * sz],
        1 => [hi[0], lo[1] + u * sy, lo[2] + v * sz],
        2 => [lo[0] + u * sx, lo[1], lo[2] + v * sz],
        3 => [lo[0] + u * sx, hi[1], lo[2] + v * sz],
        4 => [lo[0] + u * sx, lo[1] + v * sy, lo[2]],
        _ => [lo[0] + u * sx, lo[1] + v * sy, hi[2]],
    }
}

/// Tight bound of a point set, padded by a nanometer per side so the
/// extreme points still test as contained after the bound is stored as a
/// center and a size, which rounds the corners by an ulp or two.
pub(crate) fn tight_box(points: impl Iterator<Item = [f64; 3]>) -> Box3 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    let size = [
        (hi[0] - lo[0] + 2e-9).max(1e-6),
        (hi[1] - lo[1] + 2e-9).max(1e-6),
        (hi[2] - lo[2] + 2e-9).max(1e-6),
    ];
    Box3::new(center, size)
}

/// Deterministic scene synthesis: the same `(seed, cfg)` always produces
/// the same scene, bit for bit.
pub fn gen_synthetic_scene(seed: u64, cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let [rx, ry, rz] = cfg.room;
    let margin = 0.1;

    let want = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut envelopes: Vec<(usize, Box3)> = Vec::with_capacity(want);
    for _ in 0..want {
        let class_id = rng.gen_range(0..NUM_CLASSES);
        let (size, cz) = draw_object(&mut rng, class_id);
        for _attempt in 0..200 {
            let cx = rng.gen_range(size[0] / 2.0 + margin..rx - size[0] / 2.0 - margin);
            let cy = rng.gen_range(size[1] / 2.0 + margin..ry - size[1] / 2.0 - margin);
            let candidate = Box3::new([cx, cy, cz], size);
            if envelopes.iter().all(|(_, e)| disjoint_with_gap(e, &candidate, 0.05)) {
                envelopes.push((class_id, candidate));
                break;
            }
        }
    }

    let n = cfg.num_points;
    let n_clutter = (n as f64 * cfg.clutter_fraction) as usize;
    let n_objects = envelopes.len() * cfg.points_per_object;
    let n_structure = n - n_clutter - n_objects;
    let n_floor = n_structure / 2;
    let n_wall_a = (n_structure - n_floor) / 2;
    let n_wall_b = n_structure - n_floor - n_wall_a;

    let mut coords: Vec<f64> = Vec::with_capacity(n * 3);
    let mut boxes = Vec::with_capacity(envelopes.len());
    for (class_id, env) in &envelopes {
        let mut samples = Vec::with_capacity(cfg.points_per_object);
        for _ in 0..cfg.points_per_object {
            samples.push(sample_surface(&mut rng, env));
        }
        boxes.push(GtBox { class_id: *class_id, shape: tight_box(samples.iter().copied()) });
        for p in &samples {
            coords.extend_from_slice(p);
        }
    }
    for _ in 0..n_floor {
        coords.push(rng.gen_range(0.0..rx));
        coords.push(rng.gen_range(0.0..ry));
        coords.push(0.0);
    }
    for _ in 0..n_wall_a {
        coords.push(0.0);
        coords.push(rng.gen_range(0.0..ry));
        coords.push(rng.gen_range(0.0..rz));
    }
    for _ in 0..n_wall_b {
        coords.push(rng.gen_range(0.0..rx));
        coords.push(0.0);
        coords.push(rng.gen_range(0.0..rz));
    }
    for _ in 0..n_clutter {
        coords.push(rng.gen_range(0.0..rx));
        coords.push(rng.gen_range(0.0..ry));
        coords.push(rng.gen_range(0.0..rz));
    }

    let features: Vec<f64> = coords.chunks_exact(3).map(|p| p[2]).collect();
    let norm = NormTransform::fit(&coords)?;
    Ok(Scene {
        scene_id: seed,
        cloud: PointCloud::new(coords, features, 1)?,
        boxes,
        norm,
    })
}

impl Scene {
    /// Count of cloud points inside `b` (boundary inclusive).
    pub fn points_inside(&self, b: &Box3) -> usize {
        (0..self.cloud.len())
            .filter(|&i| b.contains(&self.cloud.coord(i)))
            .count()
    }
}
