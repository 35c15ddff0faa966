//! Detection scoring: per-class all-point average precision at one or
//! more IoU thresholds, averaged into mAP over the classes that actually
//! appear in the ground truth, plus a random-scoring floor for context.

use pointdet_core::geom::{iou3d, nms_3d, GtBox, ScoredBox};
use pointdet_core::{Result, TensorError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class_id: usize,
    pub ap: f64,
    pub num_gt: usize,
    pub num_det: usize,
    pub num_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEval {
    pub iou_threshold: f64,
    pub classes: Vec<ClassEval>,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub thresholds: Vec<ThresholdEval>,
}

impl EvalResult {
    pub fn map_at(&self, iou_threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|t| t.iou_threshold == iou_threshold)
            .map(|t| t.map)
    }
}

/// Score detections against ground truth, scene by scene. `dets[s]` and
/// `gts[s]` describe the same scene. Classes absent from the ground truth
/// contribute nothing to mAP; their detections are simply ignored.
pub fn evaluate(
    dets: &[Vec<ScoredBox>],
    gts: &[Vec<GtBox>],
    thresholds: &[f64],
) -> Result<EvalResult> {
    if dets.len() != gts.len() {
        return Err(TensorError::invalid(format!(
            "{} detection scenes against {} ground-truth scenes",
            dets.len(),
            gts.len()
        )));
    }
    if thresholds.is_empty() {
        return Err(TensorError::invalid("need at least one IoU threshold"));
    }
    let mut classes: Vec<usize> = gts.iter().flatten().map(|g| g.class_id).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut out = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let evals: Vec<ClassEval> = classes
            .iter()
            .map(|&c| eval_class(dets, gts, c, t))
            .collect();
        let map = if evals.is_empty() {
            0.0
        } else {
            evals.iter().map(|e| e.ap).sum::<f64>() / evals.len() as f64
        };
        out.push(ThresholdEval { iou_threshold: t, classes: evals, map });
    }
    Ok(EvalResult { thresholds: out })
}

/// Rank one class's detections across all scenes by score (ties broken by
/// scene, then by position within the scene), then greedily match each to
/// the still-unmatched ground-truth box it overlaps best, requiring at
/// least the threshold IoU and the same scene.
fn eval_class(
    dets: &[Vec<ScoredBox>],
    gts: &[Vec<GtBox>],
    class_id: usize,
    iou_threshold: f64,
) -> ClassEval {
    let num_gt = gts
        .iter()
        .flatten()
        .filter(|g| g.class_id == class_id)
        .count();

    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (s, scene) in dets.iter().enumerate() {
        for (d, det) in scene.iter().enumerate() {
            if det.class_id == class_id {
                ranked.push((s, d));
            }
        }
    }
    ranked.sort_by(|&(sa, da), &(sb, db)| {
        dets[sb][db]
            .score
            .partial_cmp(&dets[sa][da].score)
            .unwrap_or(Ordering::Equal)
            .then(sa.cmp(&sb))
            .then(da.cmp(&db))
    });

    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for &(s, d) in &ranked {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts[s].iter().enumerate() {
            if gt.class_id != class_id || taken[s][g] {
                continue;
            }
            let iou = iou3d(&dets[s][d].boxy, &gt.shape);
            if iou >= iou_threshold && best.is_none_or(|(_, held)| iou > held) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[s][g] = true;
        }
        tp_flags.push(best.is_some());
    }

    let num_matched = tp_flags.iter().filter(|&&hit| hit).count();
    ClassEval {
        class_id,
        ap: all_point_ap(&tp_flags, num_gt),
        num_gt,
        num_det: ranked.len(),
        num_matched,
    }
}

/// Area under the precision envelope sampled at every recall step: sum,
/// over the ranks where a true positive lands, the best precision reached
/// at that rank or any later one, and divide by the ground-truth count.
fn all_point_ap(tp_flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precisions = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (i, &hit) in tp_flags.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
    }
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for i in (0..tp_flags.len()).rev() {
        envelope = envelope.max(precisions[i]);
        if tp_flags[i] {
            ap += envelope;
        }
    }
    ap / num_gt as f64
}

/// How well the same proposal boxes score when their confidences are
/// replaced by uniform noise, with suppression re-run per trial. Returns
/// the mean mAP per threshold; a detector's scores carry signal only to
/// the extent it beats this.
pub fn random_score_baseline(
    proposals: &[Vec<ScoredBox>],
    gts: &[Vec<GtBox>],
    thresholds: &[f64],
    nms_iou: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials == 0 {
        return Err(TensorError::invalid("need at least one baseline trial"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut sums = vec![0.0f64; thresholds.len()];
    for _ in 0..trials {
        let mut rescored: Vec<Vec<ScoredBox>> = Vec::with_capacity(proposals.len());
        for scene in proposals {
            let noisy: Vec<ScoredBox> = scene
                .iter()
                .map(|p| ScoredBox { score: rng.gen_range(0.0..1.0), ..p.clone() })
                .collect();
            let keep = nms_3d(&noisy, nms_iou);
            rescored.push(keep.into_iter().map(|i| noisy[i].clone()).collect());
        }
        let result = evaluate(&rescored, gts, thresholds)?;
        for (sum, th) in sums.iter_mut().zip(&result.thresholds) {
            *sum += th.map;
        }
    }
    Ok(sums.into_iter().map(|s| s / trials as f64).collect())
}
