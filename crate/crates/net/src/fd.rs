//! Decoder upsampling block: inverse-distance interpolation of sparse
//! seed features onto a denser coordinate set, concatenation with that
//! set's skip features, and a two-layer pointwise MLP.

use pointdet_core::nn::{BatchNorm, Linear, Mode};
use pointdet_core::ops::concat;
use pointdet_core::param::Scope;
use pointdet_core::pointops::three_nn;
use pointdet_core::tensor::Tensor;
use pointdet_core::{Result, Tape64, Tensor64, TensorError, Var64};
use rand::Rng;

/// Interpolate `sparse_feats [B, Ns, C]` defined at `sparse_coords
/// [B, Ns, 3]` onto `dense_coords [B, Nd, 3]` with inverse-squared-distance
/// weights over the three nearest sources. Differentiable in the features;
/// the weights are a function of coordinates only.
pub fn interpolate_features(
    sparse_coords: &Tensor64,
    sparse_feats: &Var64,
    dense_coords: &Tensor64,
) -> Result<Var64> {
    let ssh = sparse_coords.shape().to_vec();
    let dsh = dense_coords.shape().to_vec();
    let fsh = sparse_feats.shape().to_vec();
    if ssh.len() != 3 || dsh.len() != 3 || ssh[2] != 3 || dsh[2] != 3 {
        return Err(TensorError::invalid("interpolation expects [B, N, 3] coordinates"));
    }
    if fsh.len() != 3 || fsh[0] != ssh[0] || fsh[1] != ssh[1] || dsh[0] != ssh[0] {
        return Err(TensorError::ShapeMismatch {
            op: "interpolate_features",
            lhs: fsh,
            rhs: ssh,
        });
    }
    let (bsz, ns, nd, c) = (ssh[0], ssh[1], dsh[1], fsh[2]);
    let mut idx = Vec::with_capacity(bsz * nd * 3);
    let mut weights = Vec::with_capacity(bsz * nd * 3);
    for b in 0..bsz {
        let sp = &sparse_coords.data()[b * ns * 3..(b + 1) * ns * 3];
        let dp = &dense_coords.data()[b * nd * 3..(b + 1) * nd * 3];
        let (i, w) = three_nn(sp, dp)?;
        idx.extend(i);
        weights.extend(w);
    }
    let w = Tensor::from_vec(vec![bsz, nd, 3], weights)?;
    sparse_feats
        .gather_axis1(&idx, nd * 3)?
        .reshape(&[bsz, nd, 3, c])?
        .weighted_sum_k(&w)
}

pub struct FdBlock {
    l1: Linear<f64>,
    n1: BatchNorm<f64>,
    l2: Linear<f64>,
    n2: BatchNorm<f64>,
}

impl FdBlock {
    /// `in_width` is the interpolated width plus the skip width.
    pub fn new<R: Rng>(
        scope: &Scope<'_, f64>,
        in_width: usize,
        out_width: usize,
        rng: &mut R,
    ) -> Self {
        FdBlock {
            l1: Linear::new(&scope.child("l1"), in_width, out_width, rng),
            n1: BatchNorm::new(&scope.child("n1"), out_width),
            l2: Linear::new(&scope.child("l2"), out_width, out_width, rng),
            n2: BatchNorm::new(&scope.child("n2"), out_width),
        }
    }

    pub fn forward(
        &self,
        tape: &Tape64,
        sparse_coords: &Tensor64,
        sparse_feats: &Var64,
        dense_coords: &Tensor64,
        skip_feats: &Var64,
        mode: Mode,
    ) -> Result<Var64> {
        let interp = interpolate_features(sparse_coords, sparse_feats, dense_coords)?;
        let x = concat(&[interp, skip_feats.clone()], 2)?;
        let x = self.n1.forward(tape, &self.l1.forward(tape, &x)?, mode)?.relu()?;
        self.n2.forward(tape, &self.l2.forward(tape, &x)?, mode)?.relu()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointdet_core::fdcheck::{check_input_gradient, check_param_gradients};
    use pointdet_core::param::ParamSet;
    use pointdet_core::pointops::three_interpolate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn rand_t(rng: &mut ChaCha20Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
        Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    #[test]
    fn interpolation_matches_kernel_helper_per_batch() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let (bsz, ns, nd, c) = (3, 7, 13, 4);
        let sparse = rand_t(&mut rng, &[bsz, ns, 3], 0.0, 2.0);
        let dense = rand_t(&mut rng, &[bsz, nd, 3], 0.0, 2.0);
        let feats = rand_t(&mut rng, &[bsz, ns, c], -1.0, 1.0);
        let tape = Tape64::new();
        let out = interpolate_features(&sparse, &tape.constant(feats.clone()), &dense).unwrap();
        assert_eq!(out.shape(), &[bsz, nd, c]);
        for b in 0..bsz {
            let want = three_interpolate(
                &sparse.data()[b * ns * 3..(b + 1) * ns * 3],
                &feats.data()[b * ns * c..(b + 1) * ns * c],
                c,
                &dense.data()[b * nd * 3..(b + 1) * nd * 3],
            )
            .unwrap();
            let ov = out.value();
            let have = &ov.data()[b * nd * c..(b + 1) * nd * c];
            assert!(have.iter().zip(&want).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn interpolating_onto_the_same_points_roughly_copies_features() {
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let coords = rand_t(&mut rng, &[1, 20, 3], 0.0, 4.0);
        let feats = rand_t(&mut rng, &[1, 20, 5], -1.0, 1.0);
        let tape = Tape64::new();
        let out = interpolate_features(&coords, &tape.constant(feats.clone()), &coords).unwrap();
        // The zero-distance source dominates but the inverse-distance
        // weights leave its two runners-up a tiny share.
        let diff = out.value().max_abs_diff(&feats);
        assert!(diff < 1e-4, "max diff {diff}");
    }

    #[test]
    fn batch_count_mismatch_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let sparse = rand_t(&mut rng, &[2, 5, 3], 0.0, 1.0);
        let dense = rand_t(&mut rng, &[3, 8, 3], 0.0, 1.0);
        let feats = rand_t(&mut rng, &[2, 5, 4], -1.0, 1.0);
        let tape = Tape64::new();
        assert!(interpolate_features(&sparse, &tape.constant(feats), &dense).is_err());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha20Rng::seed_from_u64(43 + seed);
            let set = ParamSet::new();
            let block = FdBlock::new(&set.root().child("fd"), 4 + 3, 6, &mut rng);
            let sparse = rand_t(&mut rng, &[2, 5, 3], 0.0, 2.0);
            let dense = rand_t(&mut rng, &[2, 9, 3], 0.0, 2.0);
            let feats = rand_t(&mut rng, &[2, 5, 4], -1.0, 1.0);
            let skip = rand_t(&mut rng, &[2, 9, 3], -1.0, 1.0);
            let rep = {
                let (sparse, dense, feats, skip) =
                    (sparse.clone(), dense.clone(), feats.clone(), skip.clone());
                check_param_gradients(&set, 1e-5, move || {
                    let tape = Tape64::new();
                    let y = block.forward(
                        &tape,
                        &sparse,
                        &tape.constant(feats.clone()),
                        &dense,
                        &tape.constant(skip.clone()),
                        Mode::Train,
                    )?;
                    let loss = y
                        .mul(&tape.constant(Tensor::full(&[2, 9, 6], 0.31)))?
                        .sum_all()?;
                    Ok((tape, loss))
                })
                .unwrap()
            };
            assert!(rep.max_rel_err < 1e-5, "seed {seed}: {rep}");
        }
    }

    #[test]
    fn feature_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(46);
        let set = ParamSet::new();
        let block = FdBlock::new(&set.root().child("fd"), 4 + 3, 6, &mut rng);
        let sparse = rand_t(&mut rng, &[2, 5, 3], 0.0, 2.0);
        let dense = rand_t(&mut rng, &[2, 9, 3], 0.0, 2.0);
        let feats = rand_t(&mut rng, &[2, 5, 4], -1.0, 1.0);
        let skip = rand_t(&mut rng, &[2, 9, 3], -1.0, 1.0);
        let rep = check_input_gradient(&feats, 1e-5, 7, |tape, x| {
            let y = block.forward(
                tape,
                &sparse,
                x,
                &dense,
                &tape.constant(skip.clone()),
                Mode::Eval,
            )?;
            y.sum_all()
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-5, "{rep}");
    }
}
