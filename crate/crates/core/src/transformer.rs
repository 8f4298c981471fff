//! Shared transformer building blocks: multi-head attention with optional
//! causal masking and optional low-rank deltas on the Q/V projections,
//! a GELU feed-forward, and pre-norm residual blocks.

use crate::rng::Rng;
use crate::tensor::{causal_mask, Result, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Xavier-uniform initialized parameter matrix.
pub fn init_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    init_matrix_scaled(rng, rows, cols, 1.0)
}

/// Xavier-uniform with an extra gain. A frozen random output head needs a
/// hotter init than a trained one would, or the reachable logit range (and
/// with it the CE floor) stays too small for the low-rank path to overcome.
pub fn init_matrix_scaled(rng: &mut Rng, rows: usize, cols: usize, gain: f64) -> Tensor {
    let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::param(&[rows, cols], data).unwrap()
}

pub fn init_zeros(shape: &[usize]) -> Tensor {
    Tensor::param(shape, vec![0.0; shape.iter().product()]).unwrap()
}

pub fn init_ones(shape: &[usize]) -> Tensor {
    Tensor::param(shape, vec![1.0; shape.iter().product()]).unwrap()
}

/// Fixed sinusoidal position encodings, one row per position.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d / 2 {
            let rate = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            data[pos * d + 2 * i] = (pos as f64 * rate).sin();
            data[pos * d + 2 * i + 1] = (pos as f64 * rate).cos();
        }
    }
    Tensor::new(&[n, d], data).unwrap()
}

/// Low-rank additive delta for one projection: x -> x a b * (alpha/r).
/// `a` is [d_in, r], `b` is [r, d_out]; `b` starts at zero so a fresh
/// adapter leaves the base projection untouched.
pub struct LowRankDelta {
    pub a: Tensor,
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LowRankDelta {
    pub fn new(rng: &mut Rng, d_in: usize, d_out: usize, rank: usize, alpha: f64) -> LowRankDelta {
        assert!(rank >= 1);
        let a_data = (0..d_in * rank).map(|_| rng.normal() * 0.02).collect();
        LowRankDelta {
            a: Tensor::param(&[d_in, rank], a_data).unwrap(),
            b: init_zeros(&[rank, d_out]),
            rank,
            alpha,
        }
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.a)?.matmul(&self.b)?.scale(self.scaling())
    }

    /// Dense form of the delta, for merging into the base weight.
    pub fn merged_delta(&self) -> Result<Tensor> {
        self.a.matmul(&self.b)?.scale(self.scaling())
    }
}

/// Deltas for the attention projections this block adapts (Q and V).
pub struct AttnDeltas<'a> {
    pub q: &'a LowRankDelta,
    pub v: &'a LowRankDelta,
}

pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub bq: Tensor,
    pub bk: Tensor,
    pub bv: Tensor,
    pub bo: Tensor,
}

impl AttentionParams {
    pub fn init(rng: &mut Rng, d: usize) -> AttentionParams {
        AttentionParams::init_with_gain(rng, d, 1.0)
    }

    pub fn init_with_gain(rng: &mut Rng, d: usize, gain: f64) -> AttentionParams {
        AttentionParams::init_split_gain(rng, d, gain, gain)
    }

    /// Separate gains for the query/key side and the value/output side.
    /// In a frozen random block the Q/K projections only shape attention
    /// patterns (which trained low-rank deltas can re-aim), while V/O
    /// writes land in the residual stream directly; damping the write side
    /// keeps the stream legible to the trainable modules.
    pub fn init_split_gain(rng: &mut Rng, d: usize, qk_gain: f64, vo_gain: f64) -> AttentionParams {
        AttentionParams {
            wq: init_matrix_scaled(rng, d, d, qk_gain),
            wk: init_matrix_scaled(rng, d, d, qk_gain),
            wv: init_matrix_scaled(rng, d, d, vo_gain),
            wo: init_matrix_scaled(rng, d, d, vo_gain),
            bq: init_zeros(&[d]),
            bk: init_zeros(&[d]),
            bv: init_zeros(&[d]),
            bo: init_zeros(&[d]),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bq", &self.bq),
            ("bk", &self.bk),
            ("bv", &self.bv),
            ("bo", &self.bo),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
    }
}

pub struct FeedForwardParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl FeedForwardParams {
    pub fn init(rng: &mut Rng, d: usize, mult: usize) -> FeedForwardParams {
        FeedForwardParams::init_with_gain(rng, d, mult, 1.0)
    }

    pub fn init_with_gain(rng: &mut Rng, d: usize, mult: usize, gain: f64) -> FeedForwardParams {
        FeedForwardParams {
            w1: init_matrix_scaled(rng, d, d * mult, gain),
            b1: init_zeros(&[d * mult]),
            w2: init_matrix_scaled(rng, d * mult, d, gain),
            b2: init_zeros(&[d]),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t.clone()))
        .collect()
    }
}

pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub attn: AttentionParams,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ff: FeedForwardParams,
}

impl BlockParams {
    pub fn init(rng: &mut Rng, d: usize, ff_mult: usize) -> BlockParams {
        BlockParams::init_with_gain(rng, d, ff_mult, 1.0)
    }

    /// Frozen random blocks act as interference on the residual stream, not
    /// as learned computation; a sub-unit gain keeps the stream informative
    /// for the trainable modules reading it.
    pub fn init_with_gain(rng: &mut Rng, d: usize, ff_mult: usize, gain: f64) -> BlockParams {
        BlockParams::init_split_gain(rng, d, ff_mult, gain, gain, gain)
    }

    /// Per-side gains: query/key, value/output, feed-forward.
    pub fn init_split_gain(
        rng: &mut Rng,
        d: usize,
        ff_mult: usize,
        qk_gain: f64,
        vo_gain: f64,
        ff_gain: f64,
    ) -> BlockParams {
        BlockParams {
            ln1_gamma: init_ones(&[d]),
            ln1_beta: init_zeros(&[d]),
            attn: AttentionParams::init_split_gain(rng, d, qk_gain, vo_gain),
            ln2_gamma: init_ones(&[d]),
            ln2_beta: init_zeros(&[d]),
            ff: FeedForwardParams::init_with_gain(rng, d, ff_mult, ff_gain),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = vec![
            (format!("{prefix}.ln1.gamma"), self.ln1_gamma.clone()),
            (format!("{prefix}.ln1.beta"), self.ln1_beta.clone()),
        ];
        out.extend(self.attn.named(&format!("{prefix}.attn")));
        out.push((format!("{prefix}.ln2.gamma"), self.ln2_gamma.clone()));
        out.push((format!("{prefix}.ln2.beta"), self.ln2_beta.clone()));
        out.extend(self.ff.named(&format!("{prefix}.ff")));
        out
    }
}

/// Multi-head scaled dot-product attention over an [n, d] sequence.
pub fn attention(
    x: &Tensor,
    p: &AttentionParams,
    n_heads: usize,
    causal: bool,
    deltas: Option<&AttnDeltas>,
) -> Result<Tensor> {
    let d = x.cols();
    assert!(d % n_heads == 0, "width {d} not divisible by {n_heads} heads");
    let head_dim = d / n_heads;
    let n = x.rows();

    let mut q = x.matmul(&p.wq)?.add_bias(&p.bq)?;
    let k = x.matmul(&p.wk)?.add_bias(&p.bk)?;
    let mut v = x.matmul(&p.wv)?.add_bias(&p.bv)?;
    if let Some(deltas) = deltas {
        q = q.add(&deltas.q.apply(x)?)?;
        v = v.add(&deltas.v.apply(x)?)?;
    }

    let mask = if causal { Some(causal_mask(n)) } else { None };
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = q.slice_cols(h * head_dim, head_dim)?;
        let kh = k.slice_cols(h * head_dim, head_dim)?;
        let vh = v.slice_cols(h * head_dim, head_dim)?;
        let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale)?;
        if let Some(m) = &mask {
            scores = scores.add(m)?;
        }
        let weights = scores.softmax()?;
        heads.push(weights.matmul(&vh)?);
    }
    let ctx = Tensor::concat_cols(&heads)?;
    ctx.matmul(&p.wo)?.add_bias(&p.bo)
}

pub fn feed_forward(x: &Tensor, p: &FeedForwardParams) -> Result<Tensor> {
    x.matmul(&p.w1)?
        .add_bias(&p.b1)?
        .gelu()?
        .matmul(&p.w2)?
        .add_bias(&p.b2)
}

/// Pre-norm residual block: x + attn(ln(x)), then y + ff(ln(y)).
pub fn block_forward(
    x: &Tensor,
    p: &BlockParams,
    n_heads: usize,
    causal: bool,
    deltas: Option<&AttnDeltas>,
) -> Result<Tensor> {
    let normed = x.layer_norm(&p.ln1_gamma, &p.ln1_beta, LN_EPS)?;
    let y = x.add(&attention(&normed, &p.attn, n_heads, causal, deltas)?)?;
    let normed2 = y.layer_norm(&p.ln2_gamma, &p.ln2_beta, LN_EPS)?;
    y.add(&feed_forward(&normed2, &p.ff)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_input(rng: &mut Rng, n: usize, d: usize) -> Tensor {
        Tensor::new(&[n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn attention_preserves_shape() {
        let mut rng = Rng::new(1);
        let p = AttentionParams::init(&mut rng, 8);
        let x = rand_input(&mut rng, 5, 8);
        let y = attention(&x, &p, 2, false, None).unwrap();
        assert_eq!(y.shape(), &[5, 8]);
    }

    #[test]
    fn causal_attention_ignores_future() {
        let mut rng = Rng::new(2);
        let p = AttentionParams::init(&mut rng, 8);
        let x1 = rand_input(&mut rng, 6, 8);
        let mut data = x1.to_vec();
        // change the last row only
        for v in data[5 * 8..].iter_mut() {
            *v += 1.5;
        }
        let x2 = Tensor::new(&[6, 8], data).unwrap();
        let y1 = attention(&x1, &p, 2, true, None).unwrap();
        let y2 = attention(&x2, &p, 2, true, None).unwrap();
        for i in 0..5 * 8 {
            assert_eq!(y1.to_vec()[i].to_bits(), y2.to_vec()[i].to_bits());
        }
        // and the last row does change
        assert_ne!(y1.to_vec()[5 * 8..], y2.to_vec()[5 * 8..]);
    }

    #[test]
    fn zero_init_delta_is_identity() {
        let mut rng = Rng::new(3);
        let p = AttentionParams::init(&mut rng, 8);
        let dq = LowRankDelta::new(&mut rng, 8, 8, 2, 4.0);
        let dv = LowRankDelta::new(&mut rng, 8, 8, 2, 4.0);
        let x = rand_input(&mut rng, 4, 8);
        let base = attention(&x, &p, 2, false, None).unwrap();
        let with = attention(&x, &p, 2, false, Some(&AttnDeltas { q: &dq, v: &dv })).unwrap();
        for (a, b) in base.to_vec().iter().zip(with.to_vec()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn positions_distinguish_rows() {
        let pe = sinusoidal_positions(10, 16);
        let data = pe.to_vec();
        assert_ne!(data[0..16], data[16..32]);
    }
}
