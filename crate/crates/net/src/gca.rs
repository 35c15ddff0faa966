//! Global context aggregation: compress every encoder level to a fixed
//! width, max-pool each over its seeds, merge the pooled summaries into
//! one scene vector, and fuse that vector back into per-seed features.

use pointdet_core::nn::{BatchNorm, Linear, Mode};
use pointdet_core::ops::concat;
use pointdet_core::param::Scope;
use pointdet_core::{Result, Tape64, TensorError, Var64};
use rand::Rng;

pub struct Gca {
    compress: Vec<(Linear<f64>, BatchNorm<f64>)>,
    agg1: Linear<f64>,
    an1: BatchNorm<f64>,
    agg2: Linear<f64>,
    an2: BatchNorm<f64>,
    fuse: Linear<f64>,
}

impl Gca {
    /// `level_channels` lists the per-level feature widths in encoder
    /// order; `fuse_channels` is the width of the seed features the scene
    /// vector is fused into (and of the fused output).
    pub fn new<R: Rng>(
        scope: &Scope<'_, f64>,
        level_channels: &[usize],
        compress_channels: usize,
        global_channels: usize,
        fuse_channels: usize,
        rng: &mut R,
    ) -> Self {
        let compress = level_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = scope.child(&format!("compress{i}"));
                (
                    Linear::new(&s.child("lin"), c, compress_channels, rng),
                    BatchNorm::new(&s.child("norm"), compress_channels),
                )
            })
            .collect();
        let merged = level_channels.len() * compress_channels;
        Gca {
            compress,
            agg1: Linear::new(&scope.child("agg1"), merged, global_channels, rng),
            an1: BatchNorm::new(&scope.child("an1"), global_channels),
            agg2: Linear::new(&scope.child("agg2"), global_channels, global_channels, rng),
            an2: BatchNorm::new(&scope.child("an2"), global_channels),
            fuse: Linear::new(
                &scope.child("fuse"),
                fuse_channels + global_channels,
                fuse_channels,
                rng,
            ),
        }
    }

    /// Reduce one feature set per level (`[B, N_l, C_l]`) to a scene
    /// vector `[B, global_channels]`.
    pub fn scene_vector(
        &self,
        tape: &Tape64,
        level_feats: &[Var64],
        mode: Mode,
    ) -> Result<Var64> {
        if level_feats.len() != self.compress.len() {
            return Err(TensorError::invalid(format!(
                "expected {} levels, got {}",
                self.compress.len(),
                level_feats.len()
            )));
        }
        let mut pooled = Vec::with_capacity(level_feats.len());
        for (feats, (lin, norm)) in level_feats.iter().zip(&self.compress) {
            let x = norm.forward(tape, &lin.forward(tape, feats)?, mode)?.relu()?;
            pooled.push(x.max_axis(1)?.0);
        }
        let merged = concat(&pooled, 1)?;
        let g = self.an1.forward(tape, &self.agg1.forward(tape, &merged)?, mode)?.relu()?;
        self.an2.forward(tape, &self.agg2.forward(tape, &g)?, mode)?.relu()
    }

    /// Broadcast the scene vector across the seed axis of `feats
    /// [B, N, C]` and mix it in with a single pointwise layer.
    pub fn fuse(&self, tape: &Tape64, feats: &Var64, scene: &Var64) -> Result<Var64> {
        let n = feats.shape()[1];
        let wide = concat(&[feats.clone(), scene.repeat_new_axis(1, n)?], 2)?;
        self.fuse.forward(tape, &wide)?.relu()
    }

    pub fn forward(
        &self,
        tape: &Tape64,
        level_feats: &[Var64],
        seed_feats: &Var64,
        mode: Mode,
    ) -> Result<Var64> {
        let scene = self.scene_vector(tape, level_feats, mode)?;
        self.fuse(tape, seed_feats, &scene)
    }
}
