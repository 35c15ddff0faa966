//! Point-interaction block: each pooled seed feature emits a per-seed
//! key/value expansion that its positionally-encoded neighbors are pushed
//! through, and the max-pooled interaction rejoins the pooled feature as
//! a residual. Also the plain self-attention stand-in used for ablation.

use pointdet_core::nn::{BatchNorm, Linear, Mode};
use pointdet_core::param::Scope;
use pointdet_core::{Result, Tape64, Tensor64, TensorError, Var64};
use rand::Rng;

use crate::pe::FourierPe;

pub struct Dpi {
    channels: usize,
    bottleneck: usize,
    /// Lifts the grouped `3+C` channels to `C` for the query path.
    lift: Linear<f64>,
    pe: FourierPe,
    /// Expands each pooled feature to its key and value matrices.
    kv: Linear<f64>,
    n1: BatchNorm<f64>,
    n2: BatchNorm<f64>,
}

impl Dpi {
    pub fn new<R: Rng>(
        scope: &Scope<'_, f64>,
        grouped_width: usize,
        channels: usize,
        bottleneck: usize,
        pe_bands: usize,
        pe_base: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if bottleneck == 0 || channels % bottleneck != 0 {
            return Err(TensorError::invalid(format!(
                "bottleneck {bottleneck} must divide channel width {channels}"
            )));
        }
        let d = channels / bottleneck;
        Ok(Dpi {
            channels,
            bottleneck,
            lift: Linear::new(&scope.child("lift"), grouped_width, channels, rng),
            pe: FourierPe::new(&scope.child("pe"), pe_bands, pe_base, channels, rng),
            kv: Linear::new(&scope.child("kv"), channels, 2 * channels * d, rng),
            n1: BatchNorm::new(&scope.child("n1"), d),
            n2: BatchNorm::new(&scope.child("n2"), channels),
        })
    }

    /// `grouped [B, M, k, 3+C]`, `neighbor_norm [B, M, k, 3]` (unit-cube
    /// coordinates), `pooled [B, M, C]` -> `[B, M, C]`.
    pub fn forward(
        &self,
        tape: &Tape64,
        grouped: &Var64,
        neighbor_norm: &Tensor64,
        pooled: &Var64,
        mode: Mode,
    ) -> Result<Var64> {
        let gsh = grouped.shape().to_vec();
        if gsh.len() != 4 {
            return Err(TensorError::invalid("interaction expects rank-4 groups"));
        }
        let (bsz, m, k) = (gsh[0], gsh[1], gsh[2]);
        let c = self.channels;
        let d = c / self.bottleneck;

        let q = self
            .lift
            .forward(tape, grouped)?
            .add(&self.pe.forward(tape, neighbor_norm)?)?;

        let kv = self.kv.forward(tape, pooled)?;
        let halves = kv.split(2, &[c * d, c * d])?;
        let keys = halves[0].reshape(&[bsz, m, c, d])?;
        let values = halves[1].reshape(&[bsz, m, d, c])?;

        let y = q.matmul(&keys)?.relu()?;
        let y = self.n1.forward(tape, &y, mode)?;
        let y = y.matmul(&values)?.relu()?;
        let y = self.n2.forward(tape, &y, mode)?;
        debug_assert_eq!(y.shape(), &[bsz, m, k, c]);

        let pooled_interaction = y.max_axis(2)?.0;
        pooled_interaction.add(pooled)?.relu()
    }
}

/// Scaled dot-product self-attention over the seed axis with the features
/// themselves as queries, keys and values, plus a residual add. Has no
/// parameters; exists only as the interaction ablation baseline.
pub fn self_attention_baseline(feats: &Var64) -> Result<Var64> {
    let sh = feats.shape().to_vec();
    if sh.len() != 3 {
        return Err(TensorError::invalid("self-attention expects [B, M, C]"));
    }
    let c = sh[2];
    let scores = feats
        .matmul(&feats.permute(&[0, 2, 1])?)?
        .scale(1.0 / (c as f64).sqrt())?;
    let attn = scores.softmax_last()?;
    attn.matmul(feats)?.add(feats)
}
