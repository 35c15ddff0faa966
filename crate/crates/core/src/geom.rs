//! Axis-aligned 3D boxes: volume overlap, IoU, and greedy non-maximum
//! suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};

/// Axis-aligned box given by center and full extents, in meters. Heading
/// is carried for format compatibility and must be zero in this pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub center: [f64; 3],
    pub size: [f64; 3],
    #[serde(default)]
    pub heading: f64,
}

impl Box3 {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Self {
        Box3 {
            center,
            size,
            heading: 0.0,
        }
    }

    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.center[0] - self.size[0] / 2.0,
            self.center[1] - self.size[1] / 2.0,
            self.center[2] - self.size[2] / 2.0,
        ]
    }

    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.center[0] + self.size[0] / 2.0,
            self.center[1] + self.size[1] / 2.0,
            self.center[2] + self.size[2] / 2.0,
        ]
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    /// Inclusive containment test on all three axes.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(TensorError::invalid(format!(
                "box size must be strictly positive, got {:?}",
                self.size
            )));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(TensorError::invalid("non-finite box center"));
        }
        if !(-std::f64::consts::PI..std::f64::consts::PI).contains(&self.heading) {
            return Err(TensorError::invalid(format!(
                "heading {} outside [-pi, pi)",
                self.heading
            )));
        }
        Ok(())
    }
}

/// A ground-truth box with its class label. Flattened in JSON so a scene
/// file's box entries read `{class_id, center, size, heading}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub class_id: usize,
    #[serde(flatten)]
    pub shape: Box3,
}

/// Per-scene map from metric coordinates into the unit cube, for
/// positional encodings: `normalized = (p - offset) * scale` with `offset`
/// the bounding-box minimum and `scale` the reciprocal of the largest
/// extent, so aspect ratio is preserved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub offset: [f64; 3],
    pub scale: f64,
}

impl NormTransform {
    /// Fit to a coordinate buffer laid out as consecutive xyz triples.
    pub fn fit(coords: &[f64]) -> Result<Self> {
        if coords.is_empty() || coords.len() % 3 != 0 {
            return Err(TensorError::invalid(
                "cannot fit a normalization to an empty coordinate buffer",
            ));
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in coords.chunks_exact(3) {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(TensorError::invalid("non-finite coordinates"));
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
        Ok(NormTransform { offset: lo, scale })
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.offset[0]) * self.scale,
            (p[1] - self.offset[1]) * self.scale,
            (p[2] - self.offset[2]) * self.scale,
        ]
    }
}

/// Intersection volume of two axis-aligned boxes.
pub fn intersection_volume(a: &Box3, b: &Box3) -> f64 {
    let alo = a.min_corner();
    let ahi = a.max_corner();
    let blo = b.min_corner();
    let bhi = b.max_corner();
    let mut vol = 1.0;
    for axis in 0..3 {
        let overlap = ahi[axis].min(bhi[axis]) - alo[axis].max(blo[axis]);
        if overlap <= 0.0 {
            return 0.0;
        }
        vol *= overlap;
    }
    vol
}

/// Intersection over union of two axis-aligned boxes, in `[0, 1]`.
pub fn iou3d(a: &Box3, b: &Box3) -> f64 {
    let inter = intersection_volume(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// A scored, classified box. Serializes flat as
/// `{class_id, score, center, size, heading}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub class_id: usize,
    pub score: f64,
    #[serde(flatten)]
    pub boxy: Box3,
}

/// Greedy non-maximum suppression. Candidates are visited in descending
/// score order, ties broken by lower center-x and then by input index;
/// a candidate survives if its IoU with every already-kept box is at most
/// `iou_threshold`. Returns indices into the input, in visit order.
pub fn nms_3d(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .partial_cmp(&boxes[i].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                boxes[i].boxy.center[0]
                    .partial_cmp(&boxes[j].boxy.center[0])
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &cand in &order {
        let suppressed = kept
            .iter()
            .any(|&k| iou3d(&boxes[k].boxy, &boxes[cand].boxy) > iou_threshold);
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube_at(x: f64) -> Box3 {
        Box3::new([x, 0.0, 0.0], [1.0, 1.0, 1.0])
    }

    #[test]
    fn iou_identical_is_one() {
        let b = Box3::new([1.0, 2.0, 3.0], [0.5, 1.5, 2.5]);
        assert_eq!(iou3d(&b, &b), 1.0);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(iou3d(&unit_cube_at(0.0), &unit_cube_at(5.0)), 0.0);
    }

    #[test]
    fn iou_half_offset_unit_cubes_is_exactly_one_third() {
        // Overlap 0.5, union 1.5; both are exact in binary so the
        // quotient is exact too.
        assert_eq!(iou3d(&unit_cube_at(0.0), &unit_cube_at(0.5)), 0.5 / 1.5);
        assert_eq!(iou3d(&unit_cube_at(0.0), &unit_cube_at(0.5)), 1.0 / 3.0);
    }

    #[test]
    fn iou_symmetric_and_nested() {
        let outer = Box3::new([0.0; 3], [2.0, 2.0, 2.0]);
        let inner = Box3::new([0.1, 0.0, 0.0], [1.0, 1.0, 1.0]);
        assert_eq!(iou3d(&outer, &inner), iou3d(&inner, &outer));
        let nested = Box3::new([0.0; 3], [1.0, 1.0, 1.0]);
        assert_eq!(iou3d(&outer, &nested), nested.volume() / outer.volume());
    }

    #[test]
    fn contains_is_inclusive_at_faces() {
        let b = Box3::new([0.0; 3], [2.0, 2.0, 2.0]);
        assert!(b.contains(&[1.0, 0.0, 0.0]));
        assert!(b.contains(&[-1.0, -1.0, -1.0]));
        assert!(!b.contains(&[1.0 + 1e-12, 0.0, 0.0]));
    }

    #[test]
    fn nms_single_box_survives() {
        let boxes = vec![ScoredBox {
            class_id: 0,
            score: 0.9,
            boxy: unit_cube_at(0.0),
        }];
        assert_eq!(nms_3d(&boxes, 0.25), vec![0]);
    }

    #[test]
    fn nms_identical_boxes_keep_highest_score() {
        let boxes = vec![
            ScoredBox {
                class_id: 0,
                score: 0.5,
                boxy: unit_cube_at(0.0),
            },
            ScoredBox {
                class_id: 0,
                score: 0.9,
                boxy: unit_cube_at(0.0),
            },
        ];
        assert_eq!(nms_3d(&boxes, 0.25), vec![1]);
    }

    #[test]
    fn nms_score_tie_prefers_lower_center_x() {
        let boxes = vec![
            ScoredBox {
                class_id: 0,
                score: 0.7,
                boxy: unit_cube_at(2.0),
            },
            ScoredBox {
                class_id: 0,
                score: 0.7,
                boxy: unit_cube_at(-3.0),
            },
        ];
        // Disjoint boxes: both survive, but the lower-x one is visited
        // and therefore emitted first.
        assert_eq!(nms_3d(&boxes, 0.25), vec![1, 0]);
    }

    #[test]
    fn norm_transform_maps_bounds_into_unit_cube() {
        let coords = vec![2.0, -1.0, 0.0, 8.0, 2.0, 3.0, 5.0, 0.5, 1.5];
        let nt = NormTransform::fit(&coords).unwrap();
        assert_eq!(nt.offset, [2.0, -1.0, 0.0]);
        assert_eq!(nt.scale, 1.0 / 6.0);
        for p in coords.chunks_exact(3) {
            let q = nt.apply(&[p[0], p[1], p[2]]);
            assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)), "{q:?}");
        }
        assert_eq!(nt.apply(&[8.0, -1.0, 0.0]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn gt_box_json_is_flat() {
        let gt = GtBox {
            class_id: 2,
            shape: Box3::new([1.0, 2.0, 3.0], [0.5, 0.5, 0.5]),
        };
        let json = serde_json::to_string(&gt).unwrap();
        assert!(json.contains("\"class_id\":2") && json.contains("\"center\""));
        let back: GtBox = serde_json::from_str(&json).unwrap();
        assert_eq!(back, gt);
        let no_heading: GtBox = serde_json::from_str(
            "{\"class_id\":0,\"center\":[0,0,0],\"size\":[1,1,1]}",
        )
        .unwrap();
        assert_eq!(no_heading.shape.heading, 0.0);
    }

    #[test]
    fn nms_kept_set_pairwise_iou_below_threshold() {
        let boxes: Vec<ScoredBox> = (0..8)
            .map(|i| ScoredBox {
                class_id: 0,
                score: 1.0 - i as f64 * 0.05,
                boxy: unit_cube_at(i as f64 * 0.3),
            })
            .collect();
        let kept = nms_3d(&boxes, 0.25);
        for (a, &i) in kept.iter().enumerate() {
            for &j in &kept[a + 1..] {
                assert!(iou3d(&boxes[i].boxy, &boxes[j].boxy) <= 0.25);
            }
        }
    }
}
