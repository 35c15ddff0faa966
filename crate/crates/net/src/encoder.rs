//! The encoder stack: a cascade of sample-and-group levels, each refined
//! by residual MLPs and an optional interaction block, followed by
//! upsampling blocks that walk decoder features back onto denser levels.

use pointdet_core::geom::NormTransform;
use pointdet_core::nn::Mode;
use pointdet_core::param::Scope;
use pointdet_core::{Result, Tape64, Tensor64, TensorError, Var64};
use rand::Rng;

use crate::config::{EncoderConfig, InteractionMode};
use crate::dpi::{self_attention_baseline, Dpi};
use crate::fd::FdBlock;
use crate::rpl::Rpl;
use crate::sg::sample_and_group;

pub struct Encoder {
    cfg: EncoderConfig,
    rpl: Vec<Rpl>,
    interaction: Vec<Option<Dpi>>,
    fd: Vec<FdBlock>,
}

pub struct EncoderOut {
    /// Seed coordinates per level, `[B, M_l, 3]`.
    pub level_coords: Vec<Tensor64>,
    /// Seed features per level, `[B, M_l, C_l]`.
    pub level_feats: Vec<Var64>,
    /// Coordinates of the decoder output level, `[B, M, 3]`.
    pub seed_coords: Tensor64,
    /// Decoder output features, `[B, M, C]`.
    pub seed_feats: Var64,
}

impl Encoder {
    pub fn new<R: Rng>(scope: &Scope<'_, f64>, cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut rpl = Vec::with_capacity(cfg.levels.len());
        let mut interaction = Vec::with_capacity(cfg.levels.len());
        let mut in_feats = cfg.in_channels;
        for (i, lvl) in cfg.levels.iter().enumerate() {
            let s = scope.child(&format!("level{i}"));
            let grouped_width = 3 + in_feats;
            rpl.push(Rpl::new(
                &s.child("rpl"),
                grouped_width,
                lvl.channels,
                cfg.rpl_blocks,
                rng,
            ));
            interaction.push(match cfg.interaction {
                InteractionMode::Dpi => Some(Dpi::new(
                    &s.child("interaction"),
                    grouped_width,
                    lvl.channels,
                    cfg.bottleneck,
                    cfg.pe_bands,
                    cfg.pe_base,
                    rng,
                )?),
                InteractionMode::SelfAttention | InteractionMode::Off => None,
            });
            in_feats = lvl.channels;
        }
        let mut fd = Vec::with_capacity(cfg.fd_blocks);
        let last = cfg.levels.len() - 1;
        let mut src_width = cfg.levels[last].channels;
        for f in 0..cfg.fd_blocks {
            let skip = cfg.levels[last - 1 - f].channels;
            fd.push(FdBlock::new(
                &scope.child(&format!("up{f}")),
                src_width + skip,
                skip,
                rng,
            ));
            src_width = skip;
        }
        Ok(Encoder { cfg: cfg.clone(), rpl, interaction, fd })
    }

    /// `coords [B, N, 3]`, `features [B, N, in_channels]`, one normalizer
    /// per batch element.
    pub fn forward(
        &self,
        tape: &Tape64,
        coords: &Tensor64,
        features: &Var64,
        norms: &[NormTransform],
        mode: Mode,
    ) -> Result<EncoderOut> {
        let fsh = features.shape().to_vec();
        if fsh.len() != 3 || fsh[2] != self.cfg.in_channels {
            return Err(TensorError::invalid(format!(
                "expected input features with {} channels, got {:?}",
                self.cfg.in_channels, fsh
            )));
        }
        let mut cur_coords = coords.clone();
        let mut cur_feats = features.clone();
        let mut level_coords = Vec::with_capacity(self.cfg.levels.len());
        let mut level_feats = Vec::with_capacity(self.cfg.levels.len());
        for (i, lvl) in self.cfg.levels.iter().enumerate() {
            let sg = sample_and_group(tape, &cur_coords, &cur_feats, norms, lvl)?;
            let pooled = self.rpl[i].forward(tape, &sg.grouped, mode)?;
            let feats = match (&self.cfg.interaction, &self.interaction[i]) {
                (InteractionMode::Dpi, Some(dpi)) => {
                    dpi.forward(tape, &sg.grouped, &sg.neighbor_norm, &pooled, mode)?
                }
                (InteractionMode::SelfAttention, _) => self_attention_baseline(&pooled)?,
                _ => pooled,
            };
            cur_coords = sg.seed_coords.clone();
            cur_feats = feats.clone();
            level_coords.push(sg.seed_coords);
            level_feats.push(feats);
        }
        let last = self.cfg.levels.len() - 1;
        let mut seed_coords = level_coords[last].clone();
        let mut seed_feats = level_feats[last].clone();
        for (f, block) in self.fd.iter().enumerate() {
            let skip = last - 1 - f;
            seed_feats = block.forward(
                tape,
                &seed_coords,
                &seed_feats,
                &level_coords[skip],
                &level_feats[skip],
                mode,
            )?;
            seed_coords = level_coords[skip].clone();
        }
        Ok(EncoderOut { level_coords, level_feats, seed_coords, seed_feats })
    }

    /// Channel width of the decoder output features.
    pub fn out_channels(&self) -> usize {
        let last = self.cfg.levels.len() - 1;
        self.cfg.levels[last - self.cfg.fd_blocks].channels
    }
}
