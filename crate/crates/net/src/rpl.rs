//! Residual point layers: an entry projection lifts grouped channels to
//! the level width, a stack of residual MLP blocks refines them, and a
//! max-pool over each neighborhood produces one feature per seed.

use pointdet_core::nn::{BatchNorm, Linear, Mode};
use pointdet_core::param::Scope;
use pointdet_core::{Result, Tape64, Var64};
use rand::Rng;

/// `x + MLP(x)` with a ReLU after the add; the branch is
/// linear-norm-ReLU-linear-norm.
pub struct ResidualBlock {
    l1: Linear<f64>,
    n1: BatchNorm<f64>,
    l2: Linear<f64>,
    n2: BatchNorm<f64>,
}

impl ResidualBlock {
    pub fn new<R: Rng>(scope: &Scope<'_, f64>, channels: usize, rng: &mut R) -> Self {
        ResidualBlock {
            l1: Linear::new(&scope.child("l1"), channels, channels, rng),
            n1: BatchNorm::new(&scope.child("n1"), channels),
            l2: Linear::new(&scope.child("l2"), channels, channels, rng),
            n2: BatchNorm::new(&scope.child("n2"), channels),
        }
    }

    pub fn forward(&self, tape: &Tape64, x: &Var64, mode: Mode) -> Result<Var64> {
        let h = self.n1.forward(tape, &self.l1.forward(tape, x)?, mode)?.relu()?;
        let h = self.n2.forward(tape, &self.l2.forward(tape, &h)?, mode)?;
        x.add(&h)?.relu()
    }
}

pub struct Rpl {
    entry: Linear<f64>,
    entry_norm: BatchNorm<f64>,
    blocks: Vec<ResidualBlock>,
}

impl Rpl {
    /// `in_width` is the grouped width (3 + feature channels); `channels`
    /// is the level's output width.
    pub fn new<R: Rng>(
        scope: &Scope<'_, f64>,
        in_width: usize,
        channels: usize,
        blocks: usize,
        rng: &mut R,
    ) -> Self {
        Rpl {
            entry: Linear::new(&scope.child("entry"), in_width, channels, rng),
            entry_norm: BatchNorm::new(&scope.child("entry_norm"), channels),
            blocks: (0..blocks)
                .map(|i| ResidualBlock::new(&scope.child(&format!("block{i}")), channels, rng))
                .collect(),
        }
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// `[B, M, k, W] -> [B, M, C]`: per-neighbor MLP then max over the
    /// neighbor axis.
    pub fn forward(&self, tape: &Tape64, grouped: &Var64, mode: Mode) -> Result<Var64> {
        let mut x = self
            .entry_norm
            .forward(tape, &self.entry.forward(tape, grouped)?, mode)?
            .relu()?;
        for block in &self.blocks {
            x = block.forward(tape, &x, mode)?;
        }
        Ok(x.max_axis(2)?.0)
    }
}
