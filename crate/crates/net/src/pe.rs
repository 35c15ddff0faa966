//! Fourier positional encoding of scene-normalized coordinates: per
//! coordinate, cosine/sine pairs at geometrically spaced frequencies,
//! projected to a channel width by a linear layer.

use pointdet_core::nn::Linear;
use pointdet_core::param::Scope;
use pointdet_core::tensor::Tensor;
use pointdet_core::{Result, Tape64, Tensor64, TensorError, Var64};
use rand::Rng;

/// How far outside the unit interval a coordinate may stray before it is
/// treated as an upstream normalization bug.
const COORD_SLACK: f64 = 1e-9;

/// Raw embedding of a `[..., 3]` coordinate tensor to `[..., 6*bands]`:
/// for each coordinate v and band i, the pair
/// `(cos(2*pi*b_i*v), sin(2*pi*b_i*v))` with `b_i = base^(i/bands)`.
/// Pairs are laid out band-major within each coordinate, coordinates in
/// x, y, z order. Inputs must lie in `[0, 1]`.
pub fn fourier_raw(coords: &Tensor64, bands: usize, base: f64) -> Result<Tensor64> {
    let sh = coords.shape();
    if sh.last() != Some(&3) {
        return Err(TensorError::invalid(format!(
            "positional encoding expects a trailing axis of 3, got {sh:?}"
        )));
    }
    if let Some(&bad) = coords
        .data()
        .iter()
        .find(|v| !(-COORD_SLACK..=1.0 + COORD_SLACK).contains(v))
    {
        return Err(TensorError::invalid(format!(
            "coordinate {bad} outside [0, 1]; normalization is broken upstream"
        )));
    }
    let freqs: Vec<f64> = (0..bands)
        .map(|i| base.powf(i as f64 / bands as f64))
        .collect();
    let points = coords.numel() / 3;
    let width = 6 * bands;
    let mut out = vec![0.0; points * width];
    for p in 0..points {
        for a in 0..3 {
            let v = coords.data()[p * 3 + a];
            for (i, &b) in freqs.iter().enumerate() {
                let phase = 2.0 * std::f64::consts::PI * b * v;
                let dst = p * width + a * 2 * bands + 2 * i;
                out[dst] = phase.cos();
                out[dst + 1] = phase.sin();
            }
        }
    }
    let mut out_shape = sh.to_vec();
    *out_shape.last_mut().unwrap() = width;
    Tensor::from_vec(out_shape, out)
}

/// The embedding plus its learned projection to a channel width.
pub struct FourierPe {
    pub bands: usize,
    pub base: f64,
    pub proj: Linear<f64>,
}

impl FourierPe {
    pub fn new<R: Rng>(
        scope: &Scope<'_, f64>,
        bands: usize,
        base: f64,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        FourierPe {
            bands,
            base,
            proj: Linear::new(scope, 6 * bands, channels, rng),
        }
    }

    pub fn forward(&self, tape: &Tape64, coords: &Tensor64) -> Result<Var64> {
        let raw = fourier_raw(coords, self.bands, self.base)?;
        self.proj.forward(tape, &tape.constant(raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointdet_core::fdcheck::check_param_gradients;
    use pointdet_core::param::ParamSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn origin_embeds_to_unit_cosine_zero_sine() {
        let coords = Tensor::from_vec(vec![1, 3], vec![0.0; 3]).unwrap();
        let raw = fourier_raw(&coords, 4, 1000.0).unwrap();
        for pair in raw.data().chunks_exact(2) {
            assert_eq!(pair, &[1.0, 0.0]);
        }
    }

    #[test]
    fn first_band_quarter_turn() {
        // b_0 = 1, v = 1/4: the phase is exactly pi/2 in binary, so the
        // sine is exactly 1 and the cosine only rounding away from 0.
        let coords = Tensor::from_vec(vec![1, 3], vec![0.25, 0.0, 0.0]).unwrap();
        let raw = fourier_raw(&coords, 8, 1000.0).unwrap();
        assert!(raw.data()[0].abs() < 1e-15);
        assert_eq!(raw.data()[1], 1.0);
    }

    #[test]
    fn raw_embedding_is_bounded() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let coords = Tensor::from_fn(&[7, 3], |_| rng.gen_range(0.0..1.0));
        let raw = fourier_raw(&coords, 8, 1000.0).unwrap();
        assert_eq!(raw.shape(), &[7, 48]);
        assert!(raw.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn first_band_has_unit_period() {
        let zero = Tensor::from_vec(vec![1, 3], vec![0.0; 3]).unwrap();
        let one = Tensor::from_vec(vec![1, 3], vec![1.0; 3]).unwrap();
        let a = fourier_raw(&zero, 8, 1000.0).unwrap();
        let b = fourier_raw(&one, 8, 1000.0).unwrap();
        for coord in 0..3 {
            let at = coord * 16;
            assert!((a.data()[at] - b.data()[at]).abs() < 1e-15);
            assert!((a.data()[at + 1] - b.data()[at + 1]).abs() < 1e-15);
        }
    }

    #[test]
    fn out_of_range_coordinates_are_rejected() {
        let bad = Tensor::from_vec(vec![1, 3], vec![0.5, 1.1, 0.5]).unwrap();
        assert!(fourier_raw(&bad, 4, 1000.0).is_err());
        let slack = Tensor::from_vec(vec![1, 3], vec![1.0 + 5e-10, 0.0, -5e-10]).unwrap();
        assert!(fourier_raw(&slack, 4, 1000.0).is_ok());
    }

    #[test]
    fn projection_gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let set = ParamSet::new();
        let pe = FourierPe::new(&set.root().child("pe"), 4, 100.0, 8, &mut rng);
        let coords = Tensor::from_fn(&[5, 3], |_| rng.gen_range(0.0..1.0));
        let rep = check_param_gradients(&set, 1e-5, move || {
            let tape = Tape64::new();
            let y = pe.forward(&tape, &coords)?;
            let loss = y.mul(&tape.constant(Tensor::full(&[5, 8], 0.31)))?.sum_all()?;
            Ok((tape, loss))
        })
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "{rep}");
    }
}
