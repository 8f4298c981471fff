//! Modality adapter: two strided 2-D convolutions give 4x temporal
//! downsampling, a small transformer stack models dependencies across the
//! compressed sequence, and a linear projection lands in the LM embedding
//! space. Sequences whose length is not a multiple of 4 are right-padded
//! with zero frames, so the output length is always ceil(T/4).

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use crate::transformer::{
    block_forward, init_matrix, init_zeros, sinusoidal_positions, BlockParams,
};

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("input width {input} does not match adapter input width {expected}")]
    WidthMismatch { input: usize, expected: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterConfig {
    pub d_in: usize,
    pub conv_channels: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_llm: usize,
    /// Sinusoidal positions on the transformer input. Disabled only by
    /// tests that assert translation invariance on constant input.
    pub use_positions: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            d_in: 64,
            conv_channels: 8,
            n_layers: 2,
            n_heads: 4,
            d_llm: 64,
            use_positions: true,
        }
    }
}

impl AdapterConfig {
    /// Feature width after one stride-2, pad-1, kernel-3 conv.
    fn halve(f: usize) -> usize {
        (f + 2 - 3) / 2 + 1
    }

    /// Width of the flattened (channels x reduced features) rows the
    /// transformer stack runs on.
    pub fn inner_width(&self) -> usize {
        self.conv_channels * Self::halve(Self::halve(self.d_in))
    }

    /// Output length for an input of `t` frames.
    pub fn compressed_len(t: usize) -> usize {
        t.div_ceil(4)
    }
}

pub struct Adapter {
    pub cfg: AdapterConfig,
    conv1_k: Tensor,
    conv1_b: Tensor,
    conv2_k: Tensor,
    conv2_b: Tensor,
    blocks: Vec<BlockParams>,
    out_proj: Tensor,
    out_bias: Tensor,
}

impl Adapter {
    pub fn init(cfg: AdapterConfig, rng: &mut Rng) -> Adapter {
        let inner = cfg.inner_width();
        assert!(inner % cfg.n_heads == 0, "inner width {inner} vs heads");
        let c = cfg.conv_channels;
        let k1 = (0..c * 9).map(|_| rng.normal() * (2.0 / 9.0f64).sqrt()).collect();
        let k2 = (0..c * c * 9)
            .map(|_| rng.normal() * (2.0 / (9.0 * c as f64)).sqrt())
            .collect();
        Adapter {
            conv1_k: Tensor::param(&[c, 1, 3, 3], k1).unwrap(),
            conv1_b: init_zeros(&[c]),
            conv2_k: Tensor::param(&[c, c, 3, 3], k2).unwrap(),
            conv2_b: init_zeros(&[c]),
            blocks: (0..cfg.n_layers)
                .map(|_| BlockParams::init(rng, inner, 4))
                .collect(),
            out_proj: init_matrix(rng, inner, cfg.d_llm),
            out_bias: init_zeros(&[cfg.d_llm]),
            cfg,
        }
    }

    /// The convolutional front half: [T, d_in] acoustic rows to a
    /// [channels, ceil(T/4), d_in/4] activation grid.
    pub fn downsample_conv(&self, h: &Tensor) -> Result<Tensor, AdapterError> {
        if h.cols() != self.cfg.d_in {
            return Err(AdapterError::WidthMismatch {
                input: h.cols(),
                expected: self.cfg.d_in,
            });
        }
        let t = h.rows();
        let padded_t = AdapterConfig::compressed_len(t) * 4;
        let x = if padded_t > t { h.pad_rows(padded_t)? } else { h.clone() };
        // one input channel over the (time, feature) grid
        let grid = x.reshape(&[1, padded_t, self.cfg.d_in])?;
        let c1 = grid
            .conv2d(&self.conv1_k, Some(&self.conv1_b), (2, 2), (1, 1))?
            .gelu()?;
        let c2 = c1
            .conv2d(&self.conv2_k, Some(&self.conv2_b), (2, 2), (1, 1))?
            .gelu()?;
        Ok(c2)
    }

    /// Full adapter: acoustic embeddings [T, d_in] to speech tokens
    /// [ceil(T/4), d_llm].
    pub fn adapt(&self, h: &Tensor) -> Result<Tensor, AdapterError> {
        let conv = self.downsample_conv(h)?;
        let mut rows = conv.conv_rows()?;
        if self.cfg.use_positions {
            rows = rows.add(&sinusoidal_positions(rows.rows(), rows.cols()))?;
        }
        for block in &self.blocks {
            rows = block_forward(&rows, block, self.cfg.n_heads, false, None)?;
        }
        Ok(rows.matmul(&self.out_proj)?.add_bias(&self.out_bias)?)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("conv1.k".to_string(), self.conv1_k.clone()),
            ("conv1.b".to_string(), self.conv1_b.clone()),
            ("conv2.k".to_string(), self.conv2_k.clone()),
            ("conv2.b".to_string(), self.conv2_b.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("block{i}")));
        }
        out.push(("out_proj.w".to_string(), self.out_proj.clone()));
        out.push(("out_proj.b".to_string(), self.out_bias.clone()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adapter(seed: u64) -> Adapter {
        Adapter::init(AdapterConfig::default(), &mut Rng::new(seed))
    }

    fn rand_h(rng: &mut Rng, t: usize) -> Tensor {
        Tensor::new(&[t, 64], (0..t * 64).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn compression_law_16_to_4() {
        let a = adapter(1);
        let z = a.adapt(&rand_h(&mut Rng::new(9), 16)).unwrap();
        assert_eq!(z.shape(), &[4, 64]);
    }

    #[test]
    fn single_frame_still_one_token() {
        let a = adapter(1);
        let z = a.adapt(&rand_h(&mut Rng::new(9), 1)).unwrap();
        assert_eq!(z.shape()[0], 1);
    }

    #[test]
    fn seventeen_frames_round_up() {
        let a = adapter(1);
        let z = a.adapt(&rand_h(&mut Rng::new(9), 17)).unwrap();
        assert_eq!(z.shape()[0], 5);
    }

    #[test]
    fn compression_law_all_t() {
        let a = adapter(2);
        let mut rng = Rng::new(11);
        for t in 1..=64 {
            let z = a.adapt(&rand_h(&mut rng, t)).unwrap();
            assert_eq!(z.shape(), &[t.div_ceil(4), 64], "t = {t}");
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let a = adapter(1);
        let h = Tensor::zeros(&[8, 32]);
        assert!(matches!(
            a.adapt(&h),
            Err(AdapterError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn zero_input_no_positions_gives_identical_rows() {
        let cfg = AdapterConfig {
            use_positions: false,
            ..AdapterConfig::default()
        };
        let a = Adapter::init(cfg, &mut Rng::new(3));
        let z = a.adapt(&Tensor::zeros(&[8, 64])).unwrap();
        let data = z.to_vec();
        let first = &data[..64];
        for row in data.chunks(64) {
            assert_eq!(row, first);
        }
    }

    #[test]
    fn every_parameter_gets_gradient() {
        let a = adapter(4);
        let h = rand_h(&mut Rng::new(13), 12);
        let z = a.adapt(&h).unwrap();
        // weighted-sum probe so softmax rows do not cancel
        let w = Tensor::new(
            z.shape(),
            (0..z.numel()).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.17).collect(),
        )
        .unwrap();
        let loss = z.mul(&w).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        for (name, p) in a.named_params() {
            let g = p.grad().unwrap_or_else(|| panic!("{name} missing grad"));
            assert!(
                g.iter().any(|&v| v != 0.0),
                "{name} has all-zero gradient at init"
            );
        }
    }
}
