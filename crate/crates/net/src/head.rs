//! Voting detection head: every decoder seed predicts an offset toward
//! its object's center, the shifted points are clustered into proposals,
//! and a proposal MLP emits objectness, a refined center, log-sizes and
//! class logits. Training supervision and value-space box decoding live
//! here too.

use pointdet_core::geom::{Box3, GtBox, ScoredBox};
use pointdet_core::nn::{BatchNorm, Linear, Mode};
use pointdet_core::ops::{concat, softmax_cross_entropy};
use pointdet_core::param::Scope;
use pointdet_core::pointops::{ball_query, farthest_point_sample};
use pointdet_core::tensor::Tensor;
use pointdet_core::{Result, Tape64, Tensor64, TensorError, Var64};
use rand::Rng;

use crate::config::{HeadConfig, LossWeights};

pub struct Head {
    cfg: HeadConfig,
    channels: usize,
    vote1: Linear<f64>,
    vn1: BatchNorm<f64>,
    vote2: Linear<f64>,
    group1: Linear<f64>,
    gn1: BatchNorm<f64>,
    group2: Linear<f64>,
    gn2: BatchNorm<f64>,
    head1: Linear<f64>,
    hn1: BatchNorm<f64>,
    head2: Linear<f64>,
}

pub struct HeadOut {
    /// Seed coordinates plus clamped predicted offsets, `[B, N, 3]`.
    pub vote_xyz: Var64,
    /// Gathered vote coordinates anchoring each proposal, `[B, P, 3]`.
    pub cluster_centers: Var64,
    /// `[B, P, 2]`, index 1 is the object class.
    pub obj_logits: Var64,
    /// Cluster anchor plus predicted refinement, `[B, P, 3]`.
    pub centers: Var64,
    /// `[B, P, 3]`; sizes decode as exp of these.
    pub log_sizes: Var64,
    /// `[B, P, K]`.
    pub class_logits: Var64,
}

pub struct LossReport {
    pub total: Var64,
    pub vote_loss: f64,
    pub objectness_loss: f64,
    pub center_loss: f64,
    pub size_loss: f64,
    pub class_loss: f64,
}

impl Head {
    pub fn new<R: Rng>(
        scope: &Scope<'_, f64>,
        channels: usize,
        cfg: &HeadConfig,
        rng: &mut R,
    ) -> Self {
        let c = channels;
        let out_width = 2 + 3 + 3 + cfg.num_classes;
        Head {
            cfg: cfg.clone(),
            channels: c,
            vote1: Linear::new(&scope.child("vote1"), c, c, rng),
            vn1: BatchNorm::new(&scope.child("vn1"), c),
            vote2: Linear::new(&scope.child("vote2"), c, 3 + c, rng),
            group1: Linear::new(&scope.child("group1"), 3 + c, c, rng),
            gn1: BatchNorm::new(&scope.child("gn1"), c),
            group2: Linear::new(&scope.child("group2"), c, c, rng),
            gn2: BatchNorm::new(&scope.child("gn2"), c),
            head1: Linear::new(&scope.child("head1"), c, c, rng),
            hn1: BatchNorm::new(&scope.child("hn1"), c),
            head2: Linear::new(&scope.child("head2"), c, out_width, rng),
        }
    }

    /// Largest bounding-box diagonal of any batch element, the bound on
    /// predicted vote offsets.
    fn offset_bound(seed_coords: &Tensor64) -> f64 {
        let (bsz, n) = (seed_coords.shape()[0], seed_coords.shape()[1]);
        let mut bound: f64 = 0.0;
        for b in 0..bsz {
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            for i in 0..n {
                for a in 0..3 {
                    let v = seed_coords.data()[(b * n + i) * 3 + a];
                    lo[a] = lo[a].min(v);
                    hi[a] = hi[a].max(v);
                }
            }
            let diag = (0..3).map(|a| (hi[a] - lo[a]).powi(2)).sum::<f64>().sqrt();
            bound = bound.max(diag);
        }
        bound
    }

    /// `seed_coords [B, N, 3]`, `seed_feats [B, N, C]`.
    pub fn forward(
        &self,
        tape: &Tape64,
        seed_coords: &Tensor64,
        seed_feats: &Var64,
        mode: Mode,
    ) -> Result<HeadOut> {
        let fsh = seed_feats.shape().to_vec();
        if fsh.len() != 3 || fsh[2] != self.channels {
            return Err(TensorError::invalid(format!(
                "expected seed features [B, N, {}], got {:?}",
                self.channels, fsh
            )));
        }
        let (bsz, n, c) = (fsh[0], fsh[1], fsh[2]);
        if seed_coords.shape() != [bsz, n, 3] {
            return Err(TensorError::ShapeMismatch {
                op: "head",
                lhs: seed_coords.shape().to_vec(),
                rhs: vec![bsz, n, 3],
            });
        }
        let p = self.cfg.proposals;
        if p > n {
            return Err(TensorError::invalid(format!(
                "{p} proposals need at least that many seeds, got {n}"
            )));
        }
        let k = self.cfg.cluster_neighbors;

        // Voting: offsets are a function of features alone, so shifting
        // the scene shifts the votes with it.
        let x = self.vn1.forward(tape, &self.vote1.forward(tape, seed_feats)?, mode)?.relu()?;
        let delta = self.vote2.forward(tape, &x)?;
        let parts = delta.split(2, &[3, c])?;
        let bound = Self::offset_bound(seed_coords);
        let dxyz = parts[0].clamp(-bound, bound)?;
        let vote_xyz = tape.constant(seed_coords.clone()).add(&dxyz)?;
        let vote_feats = seed_feats.add(&parts[1])?;

        // Cluster the shifted points. Sampling and membership are decided
        // on values; every lookup afterwards is a differentiable gather,
        // so gradients reach the offsets through the cluster geometry.
        let votes_val = vote_xyz.value();
        let mut anchor_idx = Vec::with_capacity(bsz * p);
        let mut neighbor_idx = Vec::with_capacity(bsz * p * k);
        for b in 0..bsz {
            let pts = &votes_val.data()[b * n * 3..(b + 1) * n * 3];
            let sel = farthest_point_sample(pts, p, 0)?;
            let mut centers = Vec::with_capacity(p * 3);
            for &s in &sel {
                centers.extend_from_slice(&pts[s * 3..s * 3 + 3]);
            }
            let nb = ball_query(pts, &centers, self.cfg.cluster_radius, k)?;
            anchor_idx.extend(sel);
            neighbor_idx.extend_from_slice(&nb.indices);
        }

        let cluster_centers = vote_xyz.gather_axis1(&anchor_idx, p)?;
        let nb_xyz = vote_xyz.gather_axis1(&neighbor_idx, p * k)?.reshape(&[bsz, p, k, 3])?;
        let rel = nb_xyz.sub(&cluster_centers.repeat_new_axis(2, k)?)?;
        let nb_feat = vote_feats
            .gather_axis1(&neighbor_idx, p * k)?
            .reshape(&[bsz, p, k, c])?;
        let grouped = concat(&[rel, nb_feat], 3)?;

        let y = self.gn1.forward(tape, &self.group1.forward(tape, &grouped)?, mode)?.relu()?;
        let y = self.gn2.forward(tape, &self.group2.forward(tape, &y)?, mode)?.relu()?;
        let pooled = y.max_axis(2)?.0;

        let h = self.hn1.forward(tape, &self.head1.forward(tape, &pooled)?, mode)?.relu()?;
        let out = self.head2.forward(tape, &h)?;
        let parts = out.split(2, &[2, 3, 3, self.cfg.num_classes])?;
        let centers = cluster_centers.add(&parts[1])?;
        Ok(HeadOut {
            vote_xyz,
            cluster_centers,
            obj_logits: parts[0].clone(),
            centers,
            log_sizes: parts[2].clone(),
            class_logits: parts[3].clone(),
        })
    }
}

fn softmax2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    let eb = (b - m).exp();
    eb / ((a - m).exp() + eb)
}

/// Turn proposal outputs into scored boxes, one list per batch element.
/// Sizes exponentiate the predicted log-sizes, so they are positive for
/// any finite logits; proposals scoring below the threshold are dropped.
pub fn decode_boxes(out: &HeadOut, score_threshold: f64) -> Vec<Vec<ScoredBox>> {
    let sh = out.obj_logits.shape().to_vec();
    let (bsz, p) = (sh[0], sh[1]);
    let k = out.class_logits.shape()[2];
    let obj = out.obj_logits.value();
    let centers = out.centers.value();
    let sizes = out.log_sizes.value();
    let cls = out.class_logits.value();
    let mut all = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let mut boxes = Vec::new();
        for i in 0..p {
            let row = b * p + i;
            let score = softmax2(obj.data()[row * 2], obj.data()[row * 2 + 1]);
            if score < score_threshold {
                continue;
            }
            let center: [f64; 3] = centers.data()[row * 3..row * 3 + 3].try_into().unwrap();
            // The clamp keeps exp away from underflow and overflow, so
            // sizes stay strictly positive and finite for any finite
            // prediction.
            let mut size = [0.0; 3];
            for (a, s) in size.iter_mut().enumerate() {
                *s = sizes.data()[row * 3 + a].clamp(-700.0, 700.0).exp();
            }
            let logits = &cls.data()[row * k..(row + 1) * k];
            let mut class_id = 0;
            for (j, &v) in logits.iter().enumerate() {
                if v > logits[class_id] {
                    class_id = j;
                }
            }
            boxes.push(ScoredBox {
                class_id,
                score,
                boxy: Box3::new(center, size),
            });
        }
        all.push(boxes);
    }
    all
}

fn dist(a: &[f64], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Index of the ground-truth box whose center is nearest to `p`, with its
/// distance. Ties break toward the earlier box.
fn nearest_gt(p: &[f64], boxes: &[GtBox]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in boxes.iter().enumerate() {
        let d = dist(p, &g.shape.center);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

/// Training loss against per-scene ground truth. Seeds inside any box are
/// supervised to vote for the nearest box center; proposals near a center
/// are positives that also regress center, log-size and class; proposals
/// far from every center are negatives; the band in between is ignored.
pub fn compute_loss(
    tape: &Tape64,
    seed_coords: &Tensor64,
    out: &HeadOut,
    gts: &[Vec<GtBox>],
    cfg: &HeadConfig,
    weights: &LossWeights,
) -> Result<LossReport> {
    let (bsz, n) = (seed_coords.shape()[0], seed_coords.shape()[1]);
    let p = out.centers.shape()[1];
    if gts.len() != bsz {
        return Err(TensorError::invalid(format!(
            "{} ground-truth scenes for a batch of {bsz}",
            gts.len()
        )));
    }
    let zero = || tape.constant(Tensor::scalar(0.0));

    // Vote supervision: mask of seeds inside some box, target centers.
    let mut vote_target = vec![0.0; bsz * n * 3];
    let mut vote_mask = vec![0.0; bsz * n * 3];
    let mut assigned = 0usize;
    for (b, boxes) in gts.iter().enumerate() {
        for i in 0..n {
            let sp = &seed_coords.data()[(b * n + i) * 3..(b * n + i) * 3 + 3];
            let inside = boxes.iter().any(|g| g.shape.contains(&[sp[0], sp[1], sp[2]]));
            if !inside {
                continue;
            }
            let (j, _) = nearest_gt(sp, boxes).expect("non-empty: a box contains the seed");
            let base = (b * n + i) * 3;
            vote_target[base..base + 3].copy_from_slice(&boxes[j].shape.center);
            vote_mask[base..base + 3].copy_from_slice(&[1.0; 3]);
            assigned += 1;
        }
    }
    let vote_loss = if assigned > 0 {
        out.vote_xyz
            .sub(&tape.constant(Tensor::from_vec(vec![bsz, n, 3], vote_target)?))?
            .abs()?
            .mul(&tape.constant(Tensor::from_vec(vec![bsz, n, 3], vote_mask)?))?
            .sum_all()?
            .scale(1.0 / assigned as f64)?
    } else {
        zero()
    };

    // Proposal assignment from decoded center values.
    let centers_val = out.centers.value();
    let mut obj_labels = vec![0usize; bsz * p];
    let mut obj_weights = vec![0.0f64; bsz * p];
    let mut pos_match = vec![None; bsz * p];
    let mut num_pos = 0usize;
    for (b, boxes) in gts.iter().enumerate() {
        for i in 0..p {
            let row = b * p + i;
            let cp = &centers_val.data()[row * 3..row * 3 + 3];
            match nearest_gt(cp, boxes) {
                None => {
                    obj_weights[row] = 1.0;
                }
                Some((j, d)) => {
                    if d < cfg.near_threshold {
                        obj_labels[row] = 1;
                        obj_weights[row] = 1.0;
                        pos_match[row] = Some(j);
                        num_pos += 1;
                    } else if d > cfg.far_threshold {
                        obj_weights[row] = 1.0;
                    }
                }
            }
        }
    }
    let objectness_loss = softmax_cross_entropy(
        &out.obj_logits.reshape(&[bsz * p, 2])?,
        &obj_labels,
        &obj_weights,
    )?;

    let (center_loss, size_loss, class_loss) = if num_pos > 0 {
        let mut center_target = vec![0.0; bsz * p * 3];
        let mut size_target = vec![0.0; bsz * p * 3];
        let mut mask = vec![0.0; bsz * p * 3];
        let mut cls_labels = vec![0usize; bsz * p];
        let mut cls_weights = vec![0.0f64; bsz * p];
        for (b, boxes) in gts.iter().enumerate() {
            for i in 0..p {
                let row = b * p + i;
                let Some(j) = pos_match[row] else { continue };
                let g = &boxes[j];
                center_target[row * 3..row * 3 + 3].copy_from_slice(&g.shape.center);
                for a in 0..3 {
                    size_target[row * 3 + a] = g.shape.size[a].ln();
                }
                mask[row * 3..row * 3 + 3].copy_from_slice(&[1.0; 3]);
                cls_labels[row] = g.class_id;
                cls_weights[row] = 1.0;
            }
        }
        let mask = tape.constant(Tensor::from_vec(vec![bsz, p, 3], mask)?);
        let center_loss = out
            .centers
            .sub(&tape.constant(Tensor::from_vec(vec![bsz, p, 3], center_target)?))?
            .abs()?
            .mul(&mask)?
            .sum_all()?
            .scale(1.0 / num_pos as f64)?;
        let size_loss = out
            .log_sizes
            .sub(&tape.constant(Tensor::from_vec(vec![bsz, p, 3], size_target)?))?
            .abs()?
            .mul(&mask)?
            .sum_all()?
            .scale(1.0 / num_pos as f64)?;
        let class_loss = softmax_cross_entropy(
            &out.class_logits.reshape(&[bsz * p, out.class_logits.shape()[2]])?,
            &cls_labels,
            &cls_weights,
        )?;
        (center_loss, size_loss, class_loss)
    } else {
        (zero(), zero(), zero())
    };

    let total = vote_loss
        .scale(weights.vote)?
        .add(&objectness_loss.scale(weights.objectness)?)?
        .add(&center_loss.scale(weights.center)?)?
        .add(&size_loss.scale(weights.size)?)?
        .add(&class_loss.scale(weights.classification)?)?;
    Ok(LossReport {
        total,
        vote_loss: vote_loss.item()?,
        objectness_loss: objectness_loss.item()?,
        center_loss: center_loss.item()?,
        size_loss: size_loss.item()?,
        class_loss: class_loss.item()?,
    })
}
