//! Decoder-only language model with hybrid text/speech input.
//!
//! The input sequence is assembled as [left text; speech tokens; right text]:
//! text segments go through the learned embedding table while speech rows are
//! spliced in verbatim. Sinusoidal positions cover the whole hybrid sequence
//! and are added inside `forward`, so the assembled matrix itself carries the
//! speech slice bit-exactly. Low-rank adapters attach to the attention Q and
//! V projections of every layer.

use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError};
use crate::transformer::{
    block_forward, init_matrix_scaled, init_ones, init_zeros, sinusoidal_positions, AttnDeltas,
    BlockParams, LowRankDelta, LN_EPS,
};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("speech width {input} does not match LM width {expected}")]
    WidthMismatch { input: usize, expected: usize },
    #[error("sequence length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("no room to generate: sequence already at max_len {max}")]
    NoRoom { max: usize },
    #[error("lora shapes {lora:?} do not match weight {weight:?}")]
    LoraShapeMismatch {
        lora: Vec<usize>,
        weight: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl LmConfig {
    pub fn desk_default(vocab_size: usize) -> LmConfig {
        LmConfig {
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            ff_mult: 4,
            vocab_size,
            max_len: 512,
        }
    }
}

/// Ordered [left text; speech; right text] input. Construction fixes the
/// segment order; there is no way to build a permuted sequence.
#[derive(Debug, Clone)]
pub struct HybridSequence {
    pub left: Vec<u32>,
    pub speech: Option<Tensor>,
    pub right: Vec<u32>,
}

impl HybridSequence {
    pub fn new(left: Vec<u32>, speech: Option<Tensor>, right: Vec<u32>) -> HybridSequence {
        HybridSequence {
            left,
            speech,
            right,
        }
    }

    pub fn text_only(ids: Vec<u32>) -> HybridSequence {
        HybridSequence {
            left: ids,
            speech: None,
            right: Vec::new(),
        }
    }

    pub fn speech_len(&self) -> usize {
        self.speech.as_ref().map_or(0, |z| z.rows())
    }

    pub fn total_len(&self) -> usize {
        self.left.len() + self.speech_len() + self.right.len()
    }
}

/// Per-layer low-rank deltas on the attention Q and V projections.
pub struct LoraLayer {
    pub q: LowRankDelta,
    pub v: LowRankDelta,
}

#[derive(Debug, Clone, Copy)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 32,
            alpha: 64.0,
        }
    }
}

pub struct Lora {
    pub cfg: LoraConfig,
    pub layers: Vec<LoraLayer>,
}

impl Lora {
    pub fn init(cfg: LoraConfig, lm_cfg: &LmConfig, rng: &mut Rng) -> Lora {
        let d = lm_cfg.d_model;
        Lora {
            cfg,
            layers: (0..lm_cfg.n_layers)
                .map(|_| LoraLayer {
                    q: LowRankDelta::new(rng, d, d, cfg.rank, cfg.alpha),
                    v: LowRankDelta::new(rng, d, d, cfg.rank, cfg.alpha),
                })
                .collect(),
        }
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.q.a"), l.q.a.clone()));
            out.push((format!("layer{i}.q.b"), l.q.b.clone()));
            out.push((format!("layer{i}.v.a"), l.v.a.clone()));
            out.push((format!("layer{i}.v.b"), l.v.b.clone()));
        }
        out
    }
}

pub struct Lm {
    pub cfg: LmConfig,
    pub embed: Tensor,
    blocks: Vec<BlockParams>,
    out_gamma: Tensor,
    out_beta: Tensor,
    head_w: Tensor,
    head_b: Tensor,
}

impl Lm {
    /// Positions are damped so token content is not drowned out.
    pub const POS_SCALE: f64 = 0.3;
    /// Frozen-backbone init gains; see BlockParams::init_split_gain.
    pub const QK_GAIN: f64 = 1.0;
    pub const VO_GAIN: f64 = 0.3;
    pub const FF_GAIN: f64 = 0.25;

    pub fn init(cfg: LmConfig, rng: &mut Rng) -> Lm {
        assert!(cfg.d_model % cfg.n_heads == 0);
        // token embeddings must stay comparable to the (scaled) position
        // encodings or the frozen attention reads positions only
        let embed_data = (0..cfg.vocab_size * cfg.d_model)
            .map(|_| rng.normal() * 0.2)
            .collect();
        Lm {
            embed: Tensor::param(&[cfg.vocab_size, cfg.d_model], embed_data).unwrap(),
            blocks: (0..cfg.n_layers)
                .map(|_| {
                    BlockParams::init_split_gain(
                        rng,
                        cfg.d_model,
                        cfg.ff_mult,
                        Lm::QK_GAIN,
                        Lm::VO_GAIN,
                        Lm::FF_GAIN,
                    )
                })
                .collect(),
            out_gamma: init_ones(&[cfg.d_model]),
            out_beta: init_zeros(&[cfg.d_model]),
            head_w: init_matrix_scaled(rng, cfg.d_model, cfg.vocab_size, 4.0),
            head_b: init_zeros(&[cfg.vocab_size]),
            cfg,
        }
    }

    /// Splice the hybrid sequence into one [total_len, d_model] embedding
    /// matrix. Speech rows are carried over verbatim: the middle slice of
    /// the result bit-equals the adapter output.
    pub fn assemble_hybrid(&self, seq: &HybridSequence) -> Result<Tensor, LmError> {
        if let Some(z) = &seq.speech {
            if z.cols() != self.cfg.d_model {
                return Err(LmError::WidthMismatch {
                    input: z.cols(),
                    expected: self.cfg.d_model,
                });
            }
        }
        let mut parts = Vec::new();
        if !seq.left.is_empty() {
            parts.push(Tensor::embedding(&self.embed, &seq.left)?);
        }
        if let Some(z) = &seq.speech {
            parts.push(z.clone());
        }
        if !seq.right.is_empty() {
            parts.push(Tensor::embedding(&self.embed, &seq.right)?);
        }
        assert!(!parts.is_empty(), "hybrid sequence must be nonempty");
        if parts.len() == 1 {
            return Ok(parts.pop().unwrap());
        }
        Ok(Tensor::concat_rows(&parts)?)
    }

    fn layer_deltas<'a>(lora: Option<&'a Lora>, i: usize) -> Option<AttnDeltas<'a>> {
        lora.map(|l| AttnDeltas {
            q: &l.layers[i].q,
            v: &l.layers[i].v,
        })
    }

    /// Causal forward over an assembled [n, d_model] embedding matrix.
    /// Position t's logits depend only on rows <= t.
    pub fn forward_embedded(
        &self,
        x: &Tensor,
        lora: Option<&Lora>,
    ) -> Result<Tensor, LmError> {
        let n = x.rows();
        if n > self.cfg.max_len {
            return Err(LmError::TooLong {
                len: n,
                max: self.cfg.max_len,
            });
        }
        if x.cols() != self.cfg.d_model {
            return Err(LmError::WidthMismatch {
                input: x.cols(),
                expected: self.cfg.d_model,
            });
        }
        let positions = sinusoidal_positions(n, self.cfg.d_model).scale(Lm::POS_SCALE)?;
        let mut h = x.add(&positions)?;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block_forward(
                &h,
                block,
                self.cfg.n_heads,
                true,
                Self::layer_deltas(lora, i).as_ref(),
            )?;
        }
        let h = h.layer_norm(&self.out_gamma, &self.out_beta, LN_EPS)?;
        Ok(h.matmul(&self.head_w)?.add_bias(&self.head_b)?)
    }

    /// Assemble then forward: logits for every position of the hybrid
    /// sequence.
    pub fn forward(&self, seq: &HybridSequence, lora: Option<&Lora>) -> Result<Tensor, LmError> {
        let x = self.assemble_hybrid(seq)?;
        self.forward_embedded(&x, lora)
    }

    /// Greedy decoding: repeated argmax until EOS or `max_new` tokens.
    /// Ties break toward the lowest id. The returned ids exclude EOS.
    pub fn generate_greedy(
        &self,
        seq: &HybridSequence,
        lora: Option<&Lora>,
        max_new: usize,
        eos: u32,
    ) -> Result<Vec<u32>, LmError> {
        let _guard = crate::tensor::NoGradGuard::new();
        let prompt_len = seq.total_len();
        if prompt_len >= self.cfg.max_len {
            return Err(LmError::NoRoom {
                max: self.cfg.max_len,
            });
        }
        let prompt = self.assemble_hybrid(seq)?;
        let mut generated: Vec<u32> = Vec::new();
        for _ in 0..max_new {
            if prompt_len + generated.len() >= self.cfg.max_len {
                break;
            }
            let x = if generated.is_empty() {
                prompt.clone()
            } else {
                let tail = Tensor::embedding(&self.embed, &generated)?;
                Tensor::concat_rows(&[prompt.clone(), tail])?
            };
            let logits = self.forward_embedded(&x, lora)?;
            let v = self.cfg.vocab_size;
            let data = logits.data();
            let last = &data[(x.rows() - 1) * v..];
            let mut best = 0usize;
            for j in 1..v {
                if last[j] > last[best] {
                    best = j;
                }
            }
            drop(data);
            if best as u32 == eos {
                break;
            }
            generated.push(best as u32);
        }
        Ok(generated)
    }

    /// Fold low-rank deltas into the base attention weights. The result is
    /// a standalone model whose forward matches the adapter path.
    pub fn merge_lora(&self, lora: &Lora) -> Result<Lm, LmError> {
        if lora.layers.len() != self.blocks.len() {
            return Err(LmError::LoraShapeMismatch {
                lora: vec![lora.layers.len()],
                weight: vec![self.blocks.len()],
            });
        }
        let clone_t = |t: &Tensor| Tensor::param(t.shape(), t.to_vec()).unwrap();
        let merged_weight = |w: &Tensor, delta: &LowRankDelta| -> Result<Tensor, LmError> {
            if delta.a.shape()[0] != w.shape()[0] || delta.b.shape()[1] != w.shape()[1] {
                return Err(LmError::LoraShapeMismatch {
                    lora: vec![delta.a.shape()[0], delta.b.shape()[1]],
                    weight: w.shape().to_vec(),
                });
            }
            let d = delta.merged_delta()?;
            let data = w
                .data()
                .iter()
                .zip(d.data().iter())
                .map(|(w, d)| w + d)
                .collect();
            Ok(Tensor::param(w.shape(), data)?)
        };
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (block, ll) in self.blocks.iter().zip(&lora.layers) {
            blocks.push(BlockParams {
                ln1_gamma: clone_t(&block.ln1_gamma),
                ln1_beta: clone_t(&block.ln1_beta),
                attn: crate::transformer::AttentionParams {
                    wq: merged_weight(&block.attn.wq, &ll.q)?,
                    wk: clone_t(&block.attn.wk),
                    wv: merged_weight(&block.attn.wv, &ll.v)?,
                    wo: clone_t(&block.attn.wo),
                    bq: clone_t(&block.attn.bq),
                    bk: clone_t(&block.attn.bk),
                    bv: clone_t(&block.attn.bv),
                    bo: clone_t(&block.attn.bo),
                },
                ln2_gamma: clone_t(&block.ln2_gamma),
                ln2_beta: clone_t(&block.ln2_beta),
                ff: crate::transformer::FeedForwardParams {
                    w1: clone_t(&block.ff.w1),
                    b1: clone_t(&block.ff.b1),
                    w2: clone_t(&block.ff.w2),
                    b2: clone_t(&block.ff.b2),
                },
            });
        }
        Ok(Lm {
            cfg: self.cfg,
            embed: clone_t(&self.embed),
            blocks,
            out_gamma: clone_t(&self.out_gamma),
            out_beta: clone_t(&self.out_beta),
            head_w: clone_t(&self.head_w),
            head_b: clone_t(&self.head_b),
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![("embed".to_string(), self.embed.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("block{i}")));
        }
        out.push(("out_ln.gamma".to_string(), self.out_gamma.clone()));
        out.push(("out_ln.beta".to_string(), self.out_beta.clone()));
        out.push(("head.w".to_string(), self.head_w.clone()));
        out.push(("head.b".to_string(), self.head_b.clone()));
        out
    }

    /// Zero the output head so every position yields uniform logits.
    /// Test rigging only.
    pub fn rig_uniform_logits(&self) {
        self.head_w.set_data(&vec![0.0; self.head_w.numel()]);
        self.head_b.set_data(&vec![0.0; self.head_b.numel()]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_lm(seed: u64) -> Lm {
        let cfg = LmConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            ff_mult: 2,
            vocab_size: 11,
            max_len: 64,
        };
        Lm::init(cfg, &mut Rng::new(seed))
    }

    fn speech(rows: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::new(&[rows, d], (0..rows * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn splice_lengths_and_bit_equality() {
        let lm = small_lm(1);
        let z = speech(4, 16, 7);
        let seq = HybridSequence::new(vec![1, 2, 3, 4, 5], Some(z.clone()), vec![6, 7, 8]);
        assert_eq!(seq.total_len(), 12);
        let m = lm.assemble_hybrid(&seq).unwrap();
        assert_eq!(m.shape(), &[12, 16]);
        let md = m.to_vec();
        let zd = z.to_vec();
        for i in 0..4 * 16 {
            assert_eq!(md[5 * 16 + i].to_bits(), zd[i].to_bits());
        }
    }

    #[test]
    fn empty_text_segments_leave_exactly_speech() {
        let lm = small_lm(1);
        let z = speech(3, 16, 9);
        let seq = HybridSequence::new(vec![], Some(z.clone()), vec![]);
        let m = lm.assemble_hybrid(&seq).unwrap();
        assert_eq!(m.shape(), z.shape());
        assert_eq!(
            m.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            z.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn speech_width_mismatch_rejected() {
        let lm = small_lm(1);
        let z = speech(3, 8, 9);
        let seq = HybridSequence::new(vec![], Some(z), vec![]);
        assert!(matches!(
            lm.assemble_hybrid(&seq),
            Err(LmError::WidthMismatch { .. })
        ));
    }

    #[test]
    fn causality_last_row_change_leaves_earlier_logits() {
        let lm = small_lm(2);
        let a = HybridSequence::text_only(vec![3, 4, 5, 6]);
        let b = HybridSequence::text_only(vec![3, 4, 5, 9]);
        let la = lm.forward(&a, None).unwrap().to_vec();
        let lb = lm.forward(&b, None).unwrap().to_vec();
        let v = lm.cfg.vocab_size;
        for i in 0..3 * v {
            assert_eq!(la[i].to_bits(), lb[i].to_bits());
        }
        assert_ne!(la[3 * v..], lb[3 * v..]);
    }

    #[test]
    fn zero_init_lora_matches_base() {
        let lm = small_lm(3);
        let lora = Lora::init(LoraConfig::default(), &lm.cfg, &mut Rng::new(10));
        let seq = HybridSequence::text_only(vec![1, 2, 3]);
        let base = lm.forward(&seq, None).unwrap().to_vec();
        let with = lm.forward(&seq, Some(&lora)).unwrap().to_vec();
        for (a, b) in base.iter().zip(&with) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn max_len_overflow_rejected() {
        let lm = small_lm(4);
        let ids: Vec<u32> = (0..65).map(|i| (i % 11) as u32).collect();
        let seq = HybridSequence::text_only(ids);
        assert!(matches!(
            lm.forward(&seq, None),
            Err(LmError::TooLong { .. })
        ));
    }

    #[test]
    fn generation_deterministic() {
        let lm = small_lm(5);
        let seq = HybridSequence::text_only(vec![1, 2]);
        let a = lm.generate_greedy(&seq, None, 10, 0).unwrap();
        let b = lm.generate_greedy(&seq, None, 10, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 10);
    }

    #[test]
    fn eos_favoring_model_generates_nothing() {
        let lm = small_lm(6);
        // rig the head bias so EOS (id 2) always wins
        let mut bias = vec![0.0; lm.cfg.vocab_size];
        bias[2] = 1000.0;
        lm.head_b.set_data(&bias);
        let out = lm
            .generate_greedy(&HybridSequence::text_only(vec![1]), None, 10, 2)
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn rank1_merge_is_outer_product_update() {
        let lm = small_lm(7);
        let mut lora = Lora::init(
            LoraConfig {
                rank: 1,
                alpha: 1.0,
            },
            &lm.cfg,
            &mut Rng::new(11),
        );
        let d = lm.cfg.d_model;
        // a = e (unit column 3), b = f (a known row vector)
        let mut e = vec![0.0; d];
        e[3] = 1.0;
        let f: Vec<f64> = (0..d).map(|i| (i as f64 * 0.31).sin()).collect();
        lora.layers[0].q.a.set_data(&e);
        lora.layers[0].q.b.set_data(&f);
        for l in lora.layers.iter_mut().skip(1) {
            let zero_a = vec![0.0; d];
            l.q.a.set_data(&zero_a);
            l.v.a.set_data(&zero_a);
        }
        let merged = lm.merge_lora(&lora).unwrap();
        let w0 = lm.blocks[0].attn.wq.to_vec();
        let w1 = merged.blocks[0].attn.wq.to_vec();
        for i in 0..d {
            for j in 0..d {
                let expect = w0[i * d + j] + if i == 3 { f[j] } else { 0.0 };
                assert!((w1[i * d + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn merge_equivalence_small() {
        let lm = small_lm(8);
        let mut rng = Rng::new(12);
        let lora = Lora::init(LoraConfig { rank: 2, alpha: 4.0 }, &lm.cfg, &mut rng);
        // give B nonzero values so the delta is active
        for l in &lora.layers {
            let vals: Vec<f64> = (0..l.q.b.numel()).map(|_| rng.normal() * 0.1).collect();
            l.q.b.set_data(&vals);
            let vals: Vec<f64> = (0..l.v.b.numel()).map(|_| rng.normal() * 0.1).collect();
            l.v.b.set_data(&vals);
        }
        let seq = HybridSequence::text_only(vec![1, 4, 7, 2]);
        let adapter_path = lm.forward(&seq, Some(&lora)).unwrap().to_vec();
        let merged = lm.merge_lora(&lora).unwrap();
        let merged_path = merged.forward(&seq, None).unwrap().to_vec();
        let max_diff = adapter_path
            .iter()
            .zip(&merged_path)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-5, "max |delta logit| = {max_diff}");
    }

    #[test]
    fn merge_with_zero_b_is_bit_identical() {
        let lm = small_lm(9);
        let lora = Lora::init(LoraConfig::default(), &lm.cfg, &mut Rng::new(13));
        let merged = lm.merge_lora(&lora).unwrap();
        for ((_, a), (_, b)) in lm.named_params().iter().zip(merged.named_params().iter()) {
            assert_eq!(
                a.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
