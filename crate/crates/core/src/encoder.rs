//! Toy acoustic encoder: a linear input projection, sinusoidal positions,
//! and a small stack of bidirectional pre-norm transformer blocks. It stands
//! in for a large pretrained encoder, so it is randomly initialized from a
//! seed and stays frozen throughout training.

use thiserror::Error;

use crate::frontend::MelSpectrogram;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use crate::transformer::{
    block_forward, init_matrix, init_ones, init_zeros, sinusoidal_positions, BlockParams, LN_EPS,
};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("input width {input} does not match encoder projection width {expected}")]
    WidthMismatch { input: usize, expected: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderConfig {
    pub n_mels: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub frozen: bool,
    /// The frontend's log floor; subtracted from the input so silence sits
    /// at zero instead of a large negative constant.
    pub mel_floor: f64,
    /// Init gain on the (frozen, random) transformer blocks.
    pub block_gain: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_mels: 80,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ff_mult: 4,
            frozen: true,
            mel_floor: 1e-10_f64.ln(),
            block_gain: 0.35,
        }
    }
}

pub struct Encoder {
    pub cfg: EncoderConfig,
    in_proj: Tensor,
    in_bias: Tensor,
    blocks: Vec<BlockParams>,
    out_gamma: Tensor,
    out_beta: Tensor,
}

impl Encoder {
    pub fn init(cfg: EncoderConfig, rng: &mut Rng) -> Encoder {
        assert!(cfg.d_model % cfg.n_heads == 0);
        Encoder {
            in_proj: init_matrix(rng, cfg.n_mels, cfg.d_model),
            in_bias: init_zeros(&[cfg.d_model]),
            blocks: (0..cfg.n_layers)
                .map(|_| BlockParams::init_with_gain(rng, cfg.d_model, cfg.ff_mult, cfg.block_gain))
                .collect(),
            out_gamma: init_ones(&[cfg.d_model]),
            out_beta: init_zeros(&[cfg.d_model]),
            cfg,
        }
    }

    /// Mel frames in, acoustic embeddings out; the row count is preserved.
    pub fn encode(&self, mel: &MelSpectrogram) -> Result<Tensor, EncoderError> {
        if mel.n_mels != self.cfg.n_mels {
            return Err(EncoderError::WidthMismatch {
                input: mel.n_mels,
                expected: self.cfg.n_mels,
            });
        }
        self.encode_tensor(&mel.as_tensor())
    }

    /// Same forward over an already-built [T, n_mels] tensor, so tests can
    /// push gradients through the encoder.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor, EncoderError> {
        if x.cols() != self.cfg.n_mels {
            return Err(EncoderError::WidthMismatch {
                input: x.cols(),
                expected: self.cfg.n_mels,
            });
        }
        let mut h = x
            .shift(-self.cfg.mel_floor)?
            .matmul(&self.in_proj)?
            .add_bias(&self.in_bias)?;
        h = h.add(&sinusoidal_positions(h.rows(), self.cfg.d_model))?;
        for block in &self.blocks {
            h = block_forward(&h, block, self.cfg.n_heads, false, None)?;
        }
        Ok(h.layer_norm(&self.out_gamma, &self.out_beta, LN_EPS)?)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("in_proj.w".to_string(), self.in_proj.clone()),
            ("in_proj.b".to_string(), self.in_bias.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("block{i}")));
        }
        out.push(("out_ln.gamma".to_string(), self.out_gamma.clone()));
        out.push(("out_ln.beta".to_string(), self.out_beta.clone()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::{log_mel, AudioSignal, FrontendConfig};

    fn mel_of(samples: Vec<f32>) -> MelSpectrogram {
        let cfg = FrontendConfig::default();
        log_mel(&AudioSignal::new(samples, 16_000).unwrap(), &cfg).unwrap()
    }

    fn tone(n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16_000.0).sin() as f32)
            .collect()
    }

    #[test]
    fn length_preserved() {
        let mel = mel_of(tone(1600 + 400 - 160)); // 9 frames
        let enc = Encoder::init(EncoderConfig::default(), &mut Rng::new(5));
        let h = enc.encode(&mel).unwrap();
        assert_eq!(h.shape(), &[mel.n_frames, 64]);
    }

    #[test]
    fn deterministic_given_weights() {
        let mel = mel_of(tone(1600));
        let enc = Encoder::init(EncoderConfig::default(), &mut Rng::new(5));
        let a = enc.encode(&mel).unwrap().to_vec();
        let b = enc.encode(&mel).unwrap().to_vec();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn width_mismatch_rejected() {
        let enc = Encoder::init(EncoderConfig::default(), &mut Rng::new(5));
        let x = Tensor::zeros(&[4, 40]);
        assert!(matches!(
            enc.encode_tensor(&x),
            Err(EncoderError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn swapping_frames_changes_output() {
        let mel = mel_of(tone(1600));
        let enc = Encoder::init(EncoderConfig::default(), &mut Rng::new(5));
        let base = enc.encode(&mel).unwrap().to_vec();
        let mut swapped = mel.clone();
        let n = swapped.n_mels;
        for j in 0..n {
            swapped.data.swap(j, 3 * n + j);
        }
        let out = enc.encode(&swapped).unwrap().to_vec();
        assert_ne!(base, out);
    }
}
