//! Training-time scene transforms: mirror, small z rotation, uniform
//! rescale, and point budget resampling. Ground-truth boxes follow the
//! points through every transform.

use crate::scene::{tight_box, Scene};
use pointdet_core::geom::{Box3, GtBox, NormTransform};
use pointdet_core::pointops::PointCloud;
use pointdet_core::Result;
use rand::Rng;

/// Apply a fixed transform triple. Mirroring negates x. A nonzero angle
/// rotates everything about the z axis through the origin and refits each
/// box as the tight bound of the points it held before the rotation, since
/// an axis-aligned box cannot simply be rotated. Scale multiplies all
/// lengths. Passing `(false, 0.0, 1.0)` reproduces the scene exactly.
pub fn augment_with(scene: &Scene, mirror: bool, angle: f64, scale: f64) -> Result<Scene> {
    let n = scene.cloud.len();
    let mut coords = scene.cloud.coords().to_vec();
    let mut boxes = scene.boxes.clone();

    if mirror {
        for p in coords.chunks_exact_mut(3) {
            p[0] = -p[0];
        }
        for gt in &mut boxes {
            gt.shape.center[0] = -gt.shape.center[0];
        }
    }

    if angle != 0.0 {
        let members: Vec<Vec<usize>> = boxes
            .iter()
            .map(|gt| {
                (0..n)
                    .filter(|&i| {
                        let p = [coords[i * 3], coords[i * 3 + 1], coords[i * 3 + 2]];
                        gt.shape.contains(&p)
                    })
                    .collect()
            })
            .collect();
        let (sin, cos) = angle.sin_cos();
        for p in coords.chunks_exact_mut(3) {
            let (x, y) = (p[0], p[1]);
            p[0] = x * cos - y * sin;
            p[1] = x * sin + y * cos;
        }
        boxes = boxes
            .iter()
            .zip(&members)
            .map(|(gt, idx)| {
                let rotated = if idx.is_empty() {
                    let (x, y) = (gt.shape.center[0], gt.shape.center[1]);
                    Box3::new(
                        [x * cos - y * sin, x * sin + y * cos, gt.shape.center[2]],
                        gt.shape.size,
                    )
                } else {
                    tight_box(idx.iter().map(|&i| {
                        [coords[i * 3], coords[i * 3 + 1], coords[i * 3 + 2]]
                    }))
                };
                GtBox { class_id: gt.class_id, shape: rotated }
            })
            .collect();
    }

    for c in &mut coords {
        *c *= scale;
    }
    for gt in &mut boxes {
        for a in 0..3 {
            gt.shape.center[a] *= scale;
            gt.shape.size[a] *= scale;
        }
    }

    let features: Vec<f64> = coords.chunks_exact(3).map(|p| p[2]).collect();
    let norm = NormTransform::fit(&coords)?;
    Ok(Scene {
        scene_id: scene.scene_id,
        cloud: PointCloud::new(coords, features, 1)?,
        boxes,
        norm,
    })
}

/// Draw a random transform triple and apply it. All three parameters are
/// drawn on every call, in a fixed order, so the stream consumed from
/// `rng` never depends on the values drawn.
pub fn augment<R: Rng>(scene: &Scene, rng: &mut R) -> Result<Scene> {
    let mirror = rng.gen_bool(0.5);
    let angle = rng.gen_range(-std::f64::consts::PI / 10.0..std::f64::consts::PI / 10.0);
    let scale = rng.gen_range(0.85..1.15);
    augment_with(scene, mirror, angle, scale)
}

/// Resample the cloud to exactly `target` points. When the cloud is large
/// enough the result is a uniform subset with the original point order;
/// smaller clouds are padded by drawing with replacement. Boxes and the
/// normalization are untouched because a subset never widens the bounds.
pub fn downsample<R: Rng>(scene: &Scene, target: usize, rng: &mut R) -> Result<Scene> {
    let n = scene.cloud.len();
    let mut idx: Vec<usize> = if target <= n {
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..target {
            let j = rng.gen_range(i..n);
            pool.swap(i, j);
        }
        pool.truncate(target);
        pool
    } else {
        (0..target).map(|_| rng.gen_range(0..n)).collect()
    };
    idx.sort_unstable();

    let c = scene.cloud.channels();
    let mut coords = Vec::with_capacity(target * 3);
    let mut features = Vec::with_capacity(target * c);
    for &i in &idx {
        coords.extend_from_slice(&scene.cloud.coords()[i * 3..i * 3 + 3]);
        features.extend_from_slice(&scene.cloud.features()[i * c..i * c + c]);
    }
    Ok(Scene {
        scene_id: scene.scene_id,
        cloud: PointCloud::new(coords, features, c)?,
        boxes: scene.boxes.clone(),
        norm: scene.norm.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{gen_synthetic_scene, GenConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    fn base_scene() -> &'static Scene {
        static SCENE: OnceLock<Scene> = OnceLock::new();
        SCENE.get_or_init(|| gen_synthetic_scene(11, &GenConfig::default()).unwrap())
    }

    #[test]
    fn identity_parameters_reproduce_the_scene_exactly() {
        let scene = base_scene();
        let same = augment_with(scene, false, 0.0, 1.0).unwrap();
        assert_eq!(*scene, same);
    }

    #[test]
    fn mirroring_twice_is_the_identity() {
        let scene = base_scene();
        let once = augment_with(scene, true, 0.0, 1.0).unwrap();
        assert_ne!(scene.cloud.coords(), once.cloud.coords());
        let twice = augment_with(&once, true, 0.0, 1.0).unwrap();
        assert_eq!(*scene, twice);
    }

    #[test]
    fn scaling_scales_pairwise_distances() {
        let scene = base_scene();
        let scaled = augment_with(scene, false, 0.0, 1.1).unwrap();
        for (i, j) in [(0, 50), (3, 700), (12, 2000)] {
            let d = |s: &Scene, i: usize, j: usize| {
                let a = s.cloud.coord(i);
                let b = s.cloud.coord(j);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            };
            let before = d(scene, i, j);
            let after = d(&scaled, i, j);
            assert!((after - 1.1 * before).abs() <= 1e-12 * before.max(1.0));
        }
    }

    #[test]
    fn rotation_keeps_every_member_point_inside_its_refit_box() {
        let scene = base_scene();
        for angle in [-0.3, 0.17, 0.3] {
            let turned = augment_with(scene, false, angle, 1.0).unwrap();
            assert_eq!(turned.boxes.len(), scene.boxes.len());
            for (gt, new_gt) in scene.boxes.iter().zip(&turned.boxes) {
                assert_eq!(gt.class_id, new_gt.class_id);
                let before: Vec<usize> = (0..scene.cloud.len())
                    .filter(|&i| gt.shape.contains(&scene.cloud.coord(i)))
                    .collect();
                assert!(!before.is_empty());
                for &i in &before {
                    assert!(new_gt.shape.contains(&turned.cloud.coord(i)));
                }
            }
        }
    }

    #[test]
    fn transformed_features_still_report_height() {
        let scene = base_scene();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..4 {
            let out = augment(scene, &mut rng).unwrap();
            for i in 0..out.cloud.len() {
                assert_eq!(out.cloud.features()[i], out.cloud.coord(i)[2]);
                let q = out.norm.apply(&out.cloud.coord(i));
                assert!(q.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
            }
        }
    }

    #[test]
    fn random_draws_are_deterministic_under_a_seed() {
        let scene = base_scene();
        let mut a = ChaCha20Rng::seed_from_u64(9);
        let mut b = ChaCha20Rng::seed_from_u64(9);
        assert_eq!(augment(scene, &mut a).unwrap(), augment(scene, &mut b).unwrap());
    }

    #[test]
    fn downsampling_takes_an_ordered_subset() {
        let scene = base_scene();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let small = downsample(scene, 300, &mut rng).unwrap();
        assert_eq!(small.cloud.len(), 300);
        assert_eq!(small.boxes, scene.boxes);
        assert_eq!(small.norm, scene.norm);
        let mut cursor = 0usize;
        for i in 0..small.cloud.len() {
            let p = small.cloud.coord(i);
            while cursor < scene.cloud.len() && scene.cloud.coord(cursor) != p {
                cursor += 1;
            }
            assert!(cursor < scene.cloud.len(), "point {i} is not an ordered subset member");
            cursor += 1;
        }
    }

    #[test]
    fn padding_draws_points_from_the_original_cloud() {
        let scene = base_scene();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let small = downsample(scene, 50, &mut rng).unwrap();
        let big = downsample(&small, 80, &mut rng).unwrap();
        assert_eq!(big.cloud.len(), 80);
        for i in 0..big.cloud.len() {
            let p = big.cloud.coord(i);
            assert!((0..small.cloud.len()).any(|j| small.cloud.coord(j) == p));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn every_transform_keeps_box_members_inside_their_boxes(
            mirror in any::<bool>(),
            angle in -0.3f64..0.3,
            scale in 0.85f64..1.15,
        ) {
            let scene = base_scene();
            let out = augment_with(scene, mirror, angle, scale).unwrap();
            prop_assert_eq!(out.boxes.len(), scene.boxes.len());
            for (gt, new_gt) in scene.boxes.iter().zip(&out.boxes) {
                for i in 0..scene.cloud.len() {
                    if gt.shape.contains(&scene.cloud.coord(i)) {
                        prop_assert!(new_gt.shape.contains(&out.cloud.coord(i)));
                    }
                }
            }
        }
    }
}
