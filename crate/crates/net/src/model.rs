//! The assembled detector: encoder, optional global context, and the
//! voting head behind one parameter set with a single seeding point.

use pointdet_core::geom::{GtBox, NormTransform, ScoredBox};
use pointdet_core::geom::nms_3d;
use pointdet_core::nn::Mode;
use pointdet_core::{ParamSet64, Result, Tape64, Tensor64, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::ModelConfig;
use crate::encoder::{Encoder, EncoderOut};
use crate::gca::Gca;
use crate::head::{compute_loss, decode_boxes, Head, HeadOut, LossReport};

pub struct Detector {
    cfg: ModelConfig,
    pub params: ParamSet64,
    encoder: Encoder,
    gca: Option<Gca>,
    head: Head,
}

/// One training or inference batch.
pub struct BatchInput {
    /// `[B, N, 3]` coordinates in meters.
    pub coords: Tensor64,
    /// `[B, N, in_channels]` per-point features.
    pub features: Tensor64,
    /// One coordinate normalizer per batch element.
    pub norms: Vec<NormTransform>,
}

pub struct ModelOut {
    pub encoder: EncoderOut,
    pub head: HeadOut,
}

impl Detector {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let params = ParamSet64::new();
        let root = params.root();
        let encoder = Encoder::new(&root.child("encoder"), &cfg.encoder, &mut rng)?;
        let fuse_channels = encoder.out_channels();
        let gca = if cfg.gca.enabled {
            let level_channels: Vec<usize> =
                cfg.encoder.levels.iter().map(|l| l.channels).collect();
            Some(Gca::new(
                &root.child("gca"),
                &level_channels,
                cfg.gca.compress_channels,
                cfg.gca.global_channels,
                fuse_channels,
                &mut rng,
            ))
        } else {
            None
        };
        let head = Head::new(&root.child("head"), fuse_channels, &cfg.head, &mut rng);
        Ok(Detector { cfg: cfg.clone(), params, encoder, gca, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn check_input(&self, input: &BatchInput) -> Result<()> {
        let csh = input.coords.shape();
        if csh.len() != 3 || csh[2] != 3 {
            return Err(TensorError::invalid("batch coords must be [B, N, 3]"));
        }
        if input.norms.len() != csh[0] {
            return Err(TensorError::invalid(format!(
                "{} normalizers for a batch of {}",
                input.norms.len(),
                csh[0]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, tape: &Tape64, input: &BatchInput, mode: Mode) -> Result<ModelOut> {
        self.check_input(input)?;
        let feats = tape.constant(input.features.clone());
        let enc = self
            .encoder
            .forward(tape, &input.coords, &feats, &input.norms, mode)?;
        let seed_feats = match &self.gca {
            Some(gca) => gca.forward(tape, &enc.level_feats, &enc.seed_feats, mode)?,
            None => enc.seed_feats.clone(),
        };
        let head = self.head.forward(tape, &enc.seed_coords, &seed_feats, mode)?;
        Ok(ModelOut { encoder: enc, head })
    }

    /// Forward plus supervision; callers drive the backward pass through
    /// the returned report's `total`.
    pub fn loss(
        &self,
        tape: &Tape64,
        input: &BatchInput,
        gts: &[Vec<GtBox>],
        mode: Mode,
    ) -> Result<(ModelOut, LossReport)> {
        let out = self.forward(tape, input, mode)?;
        let report = compute_loss(
            tape,
            &out.encoder.seed_coords,
            &out.head,
            gts,
            &self.cfg.head,
            &self.cfg.loss,
        )?;
        Ok((out, report))
    }

    /// Inference: decode proposals to boxes and suppress overlaps, one
    /// list per batch element, sorted by descending score.
    pub fn detect(
        &self,
        input: &BatchInput,
        score_threshold: f64,
        nms_iou: f64,
    ) -> Result<Vec<Vec<ScoredBox>>> {
        let tape = Tape64::inference();
        let out = self.forward(&tape, input, Mode::Eval)?;
        let decoded = decode_boxes(&out.head, score_threshold);
        Ok(decoded
            .into_iter()
            .map(|boxes| {
                let keep = nms_3d(&boxes, nms_iou);
                keep.into_iter().map(|i| boxes[i].clone()).collect()
            })
            .collect())
    }
}
