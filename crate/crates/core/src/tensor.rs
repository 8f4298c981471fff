//! Dense tensor arithmetic with reverse-mode gradients.
//!
//! Tensors are row-major, immutable after a forward op builds them. Values are
//! held in f64 so the finite-difference oracle in [`crate::gradcheck`] resolves
//! gradients well below its tolerance; the on-disk checkpoint format remains
//! 32-bit (see [`crate::checkpoint`]). Graphs are single-threaded and
//! deterministic: identical seeds and inputs reproduce identical bits.

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: left {left:?} vs right {right:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("kernel {kernel:?} larger than padded input {input:?}")]
    KernelTooLarge {
        kernel: Vec<usize>,
        input: Vec<usize>,
    },
    #[error("target id {id} out of range for vocab size {vocab}")]
    TargetOutOfRange { id: u32, vocab: usize },
    #[error("mask selects no positions; refusing to average a loss over nothing")]
    EmptyMask,
    #[error("mask length {mask} does not match row count {rows}")]
    MaskLength { mask: usize, rows: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// RAII guard that disables graph construction on the current thread.
/// Used by inference paths (greedy decoding, evaluation) where gradients
/// are never needed.
pub struct NoGradGuard {
    prev: bool,
}

impl NoGradGuard {
    pub fn new() -> Self {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGradGuard { prev }
    }
}

impl Default for NoGradGuard {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

type BackwardFn = Box<dyn Fn(&[f64], &[Tensor])>;

struct Node {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
}

/// Reference-counted handle to one node of the computation graph.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            parents: Vec::new(),
            backward_fn: None,
        })))
    }

    /// Constant input tensor; gradients do not accumulate here.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf; gradients accumulate in `grad` during backward.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![0.0; numel(shape)], false).unwrap()
    }

    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        Tensor::leaf(shape.to_vec(), vec![value; numel(shape)], false).unwrap()
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![value], false).unwrap()
    }

    /// Interior op node. Graph edges are only recorded while gradients are
    /// enabled and some parent participates in differentiation.
    fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward_fn: BackwardFn,
    ) -> Result<Tensor> {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value out of {op}"
        );
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(|p| p.0.requires_grad);
        if track {
            Ok(Tensor(Rc::new(Node {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward_fn: Some(backward_fn),
            })))
        } else {
            Tensor::leaf(shape, data, false)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn rows(&self) -> usize {
        self.0.shape[0]
    }

    pub fn cols(&self) -> usize {
        *self.0.shape.last().unwrap()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.0.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn clear_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Seeds a zero gradient buffer so optimizer steps see an explicit
    /// (possibly all-zero) gradient rather than a missing one.
    pub fn ensure_zero_grad(&self) {
        let mut g = self.0.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => buf.iter_mut().for_each(|v| *v = 0.0),
            None => *g = Some(vec![0.0; self.numel()]),
        }
    }

    /// In-place update of a leaf's values. Only the optimizer and
    /// checkpoint loader go through here.
    pub(crate) fn apply_update(&self, f: impl FnMut(&mut f64)) {
        self.0.data.borrow_mut().iter_mut().for_each(f);
    }

    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.0.data.borrow_mut();
        debug_assert_eq!(d.len(), values.len());
        d.copy_from_slice(values);
    }

    fn accum(&self, delta: &[f64]) {
        if !self.0.requires_grad {
            return;
        }
        let mut g = self.0.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    fn topo_order(&self) -> Vec<Tensor> {
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            let ptr = Rc::as_ptr(&t.0);
            if !visited.insert(ptr) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.0.backward_fn.is_some() || p.0.requires_grad {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate into
    /// every reachable node with `requires_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.0.shape.clone(),
            });
        }
        self.accum_root();
        let order = self.topo_order();
        for node in order.iter().rev() {
            let Some(f) = node.0.backward_fn.as_ref() else {
                continue;
            };
            let grad = node.0.grad.borrow().clone();
            if let Some(g) = grad {
                f(&g, &node.0.parents);
            }
        }
        Ok(())
    }

    fn accum_root(&self) {
        let mut g = self.0.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => buf[0] += 1.0,
            None => *g = Some(vec![1.0]),
        }
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accum(g);
                parents[1].accum(g);
            }),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(a, b)| a * b)
            .collect();
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let da: Vec<f64> = g.iter().zip(b.iter()).map(|(g, b)| g * b).collect();
                let db: Vec<f64> = g.iter().zip(a.iter()).map(|(g, a)| g * a).collect();
                drop(a);
                drop(b);
                parents[0].accum(&da);
                parents[1].accum(&db);
            }),
        )
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let dx: Vec<f64> = g.iter().map(|g| g * c).collect();
                parents[0].accum(&dx);
            }),
        )
    }

    /// Broadcast-add a length-d vector to every row of an [r, d] matrix.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let d = self.cols();
        if bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: self.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        let b = bias.to_vec();
        let data = self
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(&b).map(|(x, b)| x + b).collect::<Vec<_>>())
            .collect();
        Tensor::from_op(
            "add_bias",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents| {
                parents[0].accum(g);
                let d = parents[1].numel();
                let mut db = vec![0.0; d];
                for row in g.chunks(d) {
                    for (acc, v) in db.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                parents[1].accum(&db);
            }),
        )
    }

    pub fn gelu(&self) -> Result<Tensor> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let data = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| {
                let x = parents[0].data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| {
                        let u = C * (x + A * x * x * x);
                        let t = u.tanh();
                        let sech2 = 1.0 - t * t;
                        let du = C * (1.0 + 3.0 * A * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * du)
                    })
                    .collect();
                drop(x);
                parents[0].accum(&dx);
            }),
        )
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::from_op(
            "sum_all",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(|g, parents| {
                let dx = vec![g[0]; parents[0].numel()];
                parents[0].accum(&dx);
            }),
        )
    }

    // ---- matrix ops ----

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "matmul",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        if other.shape().len() != 2 || self.shape()[1] != other.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = other.shape()[1];
        let a = self.data();
        let b = other.data();
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let crow = &mut c[i * n..(i + 1) * n];
            for (t, &a_it) in arow.iter().enumerate() {
                let brow = &b[t * n..(t + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += a_it * bv;
                }
            }
        }
        drop(a);
        drop(b);
        Tensor::from_op(
            "matmul",
            vec![m, n],
            c,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                // dA = g * B^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let darow = &mut da[i * k..(i + 1) * k];
                    for t in 0..k {
                        let brow = &b[t * n..(t + 1) * n];
                        darow[t] = grow.iter().zip(brow).map(|(g, b)| g * b).sum();
                    }
                }
                // dB = A^T * g
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let arow = &a[i * k..(i + 1) * k];
                    for (t, &a_it) in arow.iter().enumerate() {
                        let dbrow = &mut db[t * n..(t + 1) * n];
                        for (dv, gv) in dbrow.iter_mut().zip(grow) {
                            *dv += a_it * gv;
                        }
                    }
                }
                drop(a);
                drop(b);
                parents[0].accum(&da);
                parents[1].accum(&db);
            }),
        )
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "transpose",
                expected: 2,
                shape: self.shape().to_vec(),
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        drop(x);
        Tensor::from_op(
            "transpose",
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; r * c];
                for j in 0..c {
                    for i in 0..r {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                parents[0].accum(&dx);
            }),
        )
    }

    /// Columns [start, start+len) of an [r, c] matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = (self.shape()[0], self.shape()[1]);
        assert!(start + len <= c, "column slice out of range");
        let x = self.data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        drop(x);
        Tensor::from_op(
            "slice_cols",
            vec![r, len],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                parents[0].accum(&dx);
            }),
        )
    }

    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        let r = parts[0].shape()[0];
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        for p in parts {
            if p.shape()[0] != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: parts[0].shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                let w = p.shape()[1];
                out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        let widths_bwd = widths.clone();
        Tensor::from_op(
            "concat_cols",
            vec![r, total],
            out,
            parts.to_vec(),
            Box::new(move |g, parents| {
                let mut offset = 0;
                for (p, &w) in parents.iter().zip(&widths_bwd) {
                    let mut dp = vec![0.0; r * w];
                    for i in 0..r {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    p.accum(&dp);
                    offset += w;
                }
            }),
        )
    }

    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        assert!(!parts.is_empty());
        let c = parts[0].cols();
        for p in parts {
            if p.shape().len() != 2 || p.cols() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    left: parts[0].shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let rows: Vec<usize> = parts.iter().map(|p| p.rows()).collect();
        let total: usize = rows.iter().sum();
        let mut out = Vec::with_capacity(total * c);
        for p in parts {
            out.extend_from_slice(&p.data());
        }
        let rows_bwd = rows.clone();
        Tensor::from_op(
            "concat_rows",
            vec![total, c],
            out,
            parts.to_vec(),
            Box::new(move |g, parents| {
                let mut offset = 0;
                for (p, &r) in parents.iter().zip(&rows_bwd) {
                    p.accum(&g[offset * c..(offset + r) * c]);
                    offset += r;
                }
            }),
        )
    }

    /// Elementwise addition of a constant.
    pub fn shift(&self, c: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(
            "shift",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| {
                parents[0].accum(g);
            }),
        )
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if numel(new_shape) != self.numel() {
            return Err(TensorError::DataLength {
                shape: new_shape.to_vec(),
                len: self.numel(),
            });
        }
        Tensor::from_op(
            "reshape",
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| {
                parents[0].accum(g);
            }),
        )
    }

    /// Zero-pad an [r, c] matrix with extra rows at the bottom.
    pub fn pad_rows(&self, target_rows: usize) -> Result<Tensor> {
        let (r, c) = (self.shape()[0], self.shape()[1]);
        assert!(target_rows >= r);
        let mut out = self.to_vec();
        out.resize(target_rows * c, 0.0);
        Tensor::from_op(
            "pad_rows",
            vec![target_rows, c],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                parents[0].accum(&g[..r * c]);
            }),
        )
    }

    // ---- normalization / activation over rows ----

    /// Numerically stabilized softmax along the last axis.
    pub fn softmax(&self) -> Result<Tensor> {
        let n = self.cols();
        let rows = self.numel() / n;
        let x = self.data();
        let mut out = vec![0.0; rows * n];
        for i in 0..rows {
            let row = &x[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for (o, &v) in orow.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        drop(x);
        let y_saved = out.clone();
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; y_saved.len()];
                for i in 0..rows {
                    let y = &y_saved[i * n..(i + 1) * n];
                    let gr = &g[i * n..(i + 1) * n];
                    let dot: f64 = y.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((d, &y), &g) in dx[i * n..(i + 1) * n].iter_mut().zip(y).zip(gr) {
                        *d = y * (g - dot);
                    }
                }
                parents[0].accum(&dx);
            }),
        )
    }

    /// Per-row layer normalization with affine parameters.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let d = self.cols();
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: self.shape().to_vec(),
                right: gamma.shape().to_vec(),
            });
        }
        assert!(eps > 0.0, "layer_norm eps must be positive");
        let rows = self.numel() / d;
        let x = self.data();
        let gm = gamma.to_vec();
        let bt = beta.to_vec();
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        for i in 0..rows {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = gm[j] * h + bt[j];
            }
        }
        drop(x);
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, parents| {
                let gm = parents[1].data();
                let mut dx = vec![0.0; rows * d];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for i in 0..rows {
                    let h = &xhat[i * d..(i + 1) * d];
                    let gr = &g[i * d..(i + 1) * d];
                    let inv = inv_std[i];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_h = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gm[j];
                        sum_dxhat += dxh;
                        sum_dxhat_h += dxh * h[j];
                        dgamma[j] += gr[j] * h[j];
                        dbeta[j] += gr[j];
                    }
                    let dn = d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gm[j];
                        dx[i * d + j] = inv * (dxh - sum_dxhat / dn - h[j] * sum_dxhat_h / dn);
                    }
                }
                drop(gm);
                parents[0].accum(&dx);
                parents[1].accum(&dgamma);
                parents[2].accum(&dbeta);
            }),
        )
    }

    // ---- embedding ----

    /// Row lookup: `table[V, D]` gathered at `ids` into an [n, D] matrix.
    pub fn embedding(table: &Tensor, ids: &[u32]) -> Result<Tensor> {
        let (v, d) = (table.shape()[0], table.shape()[1]);
        for &id in ids {
            if id as usize >= v {
                return Err(TensorError::TargetOutOfRange { id, vocab: v });
            }
        }
        let t = table.data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&t[id as usize * d..(id as usize + 1) * d]);
        }
        drop(t);
        let ids_bwd: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let n = ids.len();
        Tensor::from_op(
            "embedding",
            vec![n, d],
            out,
            vec![table.clone()],
            Box::new(move |g, parents| {
                let mut dt = vec![0.0; v * d];
                for (i, &id) in ids_bwd.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[i * d + j];
                    }
                }
                parents[0].accum(&dt);
            }),
        )
    }

    // ---- convolution ----

    /// 2-D cross-correlation. Input [c_in, H, W], kernels [c_out, c_in, kh, kw],
    /// optional per-output-channel bias, zero padding.
    pub fn conv2d(
        &self,
        kernels: &Tensor,
        bias: Option<&Tensor>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Tensor> {
        if self.shape().len() != 3 {
            return Err(TensorError::BadRank {
                op: "conv2d",
                expected: 3,
                shape: self.shape().to_vec(),
            });
        }
        if kernels.shape().len() != 4 || kernels.shape()[1] != self.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: self.shape().to_vec(),
                right: kernels.shape().to_vec(),
            });
        }
        let (cin, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
        let (sh, sw) = stride;
        let (ph, pw) = padding;
        assert!(sh > 0 && sw > 0, "conv2d stride must be positive");
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(TensorError::KernelTooLarge {
                kernel: kernels.shape().to_vec(),
                input: self.shape().to_vec(),
            });
        }
        let oh = (h + 2 * ph - kh) / sh + 1;
        let ow = (w + 2 * pw - kw) / sw + 1;
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    left: vec![cout],
                    right: b.shape().to_vec(),
                });
            }
        }
        let x = self.data();
        let k = kernels.data();
        let bvals: Vec<f64> = bias.map(|b| b.to_vec()).unwrap_or_else(|| vec![0.0; cout]);
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut acc = bvals[co];
                    for ci in 0..cin {
                        for u in 0..kh {
                            let ii = (oi * sh + u) as isize - ph as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for v in 0..kw {
                                let jj = (oj * sw + v) as isize - pw as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                acc += x[ci * h * w + ii as usize * w + jj as usize]
                                    * k[((co * cin + ci) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[co * oh * ow + oi * ow + oj] = acc;
                }
            }
        }
        drop(x);
        drop(k);
        let mut parents = vec![self.clone(), kernels.clone()];
        let has_bias = bias.is_some();
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Tensor::from_op(
            "conv2d",
            vec![cout, oh, ow],
            out,
            parents,
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let k = parents[1].data();
                let mut dx = vec![0.0; cin * h * w];
                let mut dk = vec![0.0; cout * cin * kh * kw];
                let mut db = vec![0.0; cout];
                for co in 0..cout {
                    for oi in 0..oh {
                        for oj in 0..ow {
                            let gv = g[co * oh * ow + oi * ow + oj];
                            db[co] += gv;
                            for ci in 0..cin {
                                for u in 0..kh {
                                    let ii = (oi * sh + u) as isize - ph as isize;
                                    if ii < 0 || ii >= h as isize {
                                        continue;
                                    }
                                    for v in 0..kw {
                                        let jj = (oj * sw + v) as isize - pw as isize;
                                        if jj < 0 || jj >= w as isize {
                                            continue;
                                        }
                                        let xi = ci * h * w + ii as usize * w + jj as usize;
                                        let ki = ((co * cin + ci) * kh + u) * kw + v;
                                        dx[xi] += gv * k[ki];
                                        dk[ki] += gv * x[xi];
                                    }
                                }
                            }
                        }
                    }
                }
                drop(x);
                drop(k);
                parents[0].accum(&dx);
                parents[1].accum(&dk);
                if has_bias {
                    parents[2].accum(&db);
                }
            }),
        )
    }

    /// Reorder a conv activation [C, T, F] into rows [T, C*F] so transformer
    /// layers can consume it. Channel-major within each row.
    pub fn conv_rows(&self) -> Result<Tensor> {
        if self.shape().len() != 3 {
            return Err(TensorError::BadRank {
                op: "conv_rows",
                expected: 3,
                shape: self.shape().to_vec(),
            });
        }
        let (c, t, f) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let x = self.data();
        let mut out = vec![0.0; t * c * f];
        for ci in 0..c {
            for ti in 0..t {
                for fi in 0..f {
                    out[ti * (c * f) + ci * f + fi] = x[ci * t * f + ti * f + fi];
                }
            }
        }
        drop(x);
        Tensor::from_op(
            "conv_rows",
            vec![t, c * f],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut dx = vec![0.0; c * t * f];
                for ci in 0..c {
                    for ti in 0..t {
                        for fi in 0..f {
                            dx[ci * t * f + ti * f + fi] = g[ti * (c * f) + ci * f + fi];
                        }
                    }
                }
                parents[0].accum(&dx);
            }),
        )
    }

    // ---- losses ----

    /// Mean of `-log softmax(logits)[target]` over masked-in rows.
    pub fn cross_entropy(logits: &Tensor, targets: &[u32], mask: &[bool]) -> Result<Tensor> {
        Tensor::cross_entropy_reduce(logits, targets, mask, true)
    }

    /// Sum variant, for pooling losses across a batch before a single
    /// division by the pooled count.
    pub fn cross_entropy_sum(logits: &Tensor, targets: &[u32], mask: &[bool]) -> Result<Tensor> {
        Tensor::cross_entropy_reduce(logits, targets, mask, false)
    }

    fn cross_entropy_reduce(
        logits: &Tensor,
        targets: &[u32],
        mask: &[bool],
        mean: bool,
    ) -> Result<Tensor> {
        if logits.shape().len() != 2 {
            return Err(TensorError::BadRank {
                op: "cross_entropy",
                expected: 2,
                shape: logits.shape().to_vec(),
            });
        }
        let (n, v) = (logits.shape()[0], logits.shape()[1]);
        if targets.len() != n || mask.len() != n {
            return Err(TensorError::MaskLength {
                mask: mask.len().min(targets.len()),
                rows: n,
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::EmptyMask);
        }
        for (&t, &m) in targets.iter().zip(mask) {
            if m && t as usize >= v {
                return Err(TensorError::TargetOutOfRange { id: t, vocab: v });
            }
        }
        let x = logits.data();
        let mut probs = vec![0.0; n * v];
        let mut total = 0.0;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = &x[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..v {
                let e = (row[j] - max).exp();
                probs[i * v + j] = e;
                sum += e;
            }
            for j in 0..v {
                probs[i * v + j] /= sum;
            }
            let lse = max + sum.ln();
            total += lse - row[targets[i] as usize];
        }
        drop(x);
        let denom = if mean { count as f64 } else { 1.0 };
        let loss = total / denom;
        let targets_bwd: Vec<usize> = targets.iter().map(|&t| t as usize).collect();
        let mask_bwd = mask.to_vec();
        Tensor::from_op(
            "cross_entropy",
            vec![1],
            vec![loss],
            vec![logits.clone()],
            Box::new(move |g, parents| {
                let scale = g[0] / denom;
                let mut dl = vec![0.0; n * v];
                for i in 0..n {
                    if !mask_bwd[i] {
                        continue;
                    }
                    for j in 0..v {
                        let indicator = if j == targets_bwd[i] { 1.0 } else { 0.0 };
                        dl[i * v + j] = scale * (probs[i * v + j] - indicator);
                    }
                }
                parents[0].accum(&dl);
            }),
        )
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

/// Additive causal attention mask: 0 where key position <= query position,
/// a large negative constant above the diagonal.
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            data[i * n + j] = -1.0e30;
        }
    }
    Tensor::new(&[n, n], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let i2 = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = i2.matmul(&a).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_oracle() {
        // hand triple-loop oracle for [[1,2],[3,4]] x [[5,6],[7,8]]
        let a = [[1.0, 2.0], [3.0, 4.0]];
        let b = [[5.0, 6.0], [7.0, 8.0]];
        let mut expect = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    expect[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        assert_eq!(expect, [[19.0, 22.0], [43.0, 50.0]]);
        let ta = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let tb = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = ta.matmul(&tb).unwrap();
        assert_eq!(c.to_vec(), vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_zeros() {
        let z = Tensor::zeros(&[2, 3]);
        let b = Tensor::new(&[3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let c = z.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert!(c.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn matmul_gradients_flow_to_both() {
        let a = t(&[1, 2], &[1.0, 2.0]);
        let b = t(&[2, 1], &[3.0, 4.0]);
        let c = a.matmul(&b).unwrap();
        c.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![3.0, 4.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn softmax_uniform() {
        let x = Tensor::new(&[1, 4], vec![0.0; 4]).unwrap();
        let y = x.softmax().unwrap();
        for v in y.to_vec() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::new(&[1, 3], vec![0.3, -1.2, 2.0]).unwrap();
        let xc = Tensor::new(&[1, 3], vec![0.3 + 7.5, -1.2 + 7.5, 2.0 + 7.5]).unwrap();
        let y = x.softmax().unwrap().to_vec();
        let yc = xc.softmax().unwrap().to_vec();
        for (a, b) in y.iter().zip(&yc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_log_ratio() {
        let x = Tensor::new(&[1, 3], vec![1.0_f64.ln(), 2.0_f64.ln(), 3.0_f64.ln()]).unwrap();
        let y = x.softmax().unwrap().to_vec();
        let expect = [1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0];
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(&[3, 5], (0..15).map(|v| (v as f64).sin()).collect()).unwrap();
        let y = x.softmax().unwrap();
        for row in y.to_vec().chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let x = Tensor::new(&[1, 4], vec![3.0; 4]).unwrap();
        let gamma = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        let beta = Tensor::new(&[4], vec![0.0; 4]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        for v in y.to_vec() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point() {
        // mean 2, population std 1; with eps -> 0 the output approaches [-1, 1]
        let x = Tensor::new(&[1, 2], vec![1.0, 3.0]).unwrap();
        let gamma = Tensor::new(&[2], vec![1.0; 2]).unwrap();
        let beta = Tensor::new(&[2], vec![0.0; 2]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap().to_vec();
        assert!((y[0] + 1.0).abs() < 1e-5);
        assert!((y[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_beta_recovers_mean() {
        let x = Tensor::new(&[1, 3], vec![0.5, -2.0, 4.0]).unwrap();
        let gamma = Tensor::new(&[3], vec![1.0; 3]).unwrap();
        let beta = Tensor::new(&[3], vec![7.0; 3]).unwrap();
        let y = x.layer_norm(&gamma, &beta, 1e-9).unwrap().to_vec();
        let mean = y.iter().sum::<f64>() / 3.0;
        assert!((mean - 7.0).abs() < 1e-6);
    }

    #[test]
    fn conv2d_identity_kernel_strided_copy() {
        let x = Tensor::new(&[1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = x.conv2d(&k, None, (2, 1), (0, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(
            y.to_vec(),
            vec![0.0, 1.0, 2.0, 3.0, 8.0, 9.0, 10.0, 11.0]
        );
    }

    #[test]
    fn conv2d_ones_sum() {
        let x = Tensor::new(&[1, 3, 3], vec![1.0; 9]).unwrap();
        let k = Tensor::new(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = x.conv2d(&k, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.to_vec(), vec![9.0]);
    }

    #[test]
    fn conv2d_shape_formula_halves_time() {
        let x = Tensor::zeros(&[1, 16, 8]);
        let k = Tensor::zeros(&[1, 1, 1, 1]);
        let y = x.conv2d(&k, None, (2, 1), (0, 0)).unwrap();
        assert_eq!(y.shape()[1], 8);
    }

    #[test]
    fn conv2d_kernel_too_large() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(matches!(
            x.conv2d(&k, None, (1, 1), (0, 0)),
            Err(TensorError::KernelTooLarge { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let v = 16;
        let logits = Tensor::new(&[2, v], vec![0.0; 2 * v]).unwrap();
        let loss = Tensor::cross_entropy(&logits, &[3, 7], &[true, true]).unwrap();
        assert!((loss.item() - (v as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_confident_is_near_zero() {
        let mut data = vec![0.0; 8];
        data[2] = 50.0;
        let logits = Tensor::new(&[1, 8], data).unwrap();
        let loss = Tensor::cross_entropy(&logits, &[2], &[true]).unwrap();
        assert!(loss.item() < 1e-9);
    }

    #[test]
    fn cross_entropy_mask_selects_single_position() {
        let data: Vec<f64> = (0..12).map(|v| (v as f64 * 0.37).sin()).collect();
        let logits = Tensor::new(&[3, 4], data.clone()).unwrap();
        let masked = Tensor::cross_entropy(&logits, &[1, 2, 3], &[false, true, false]).unwrap();
        let single = Tensor::new(&[1, 4], data[4..8].to_vec()).unwrap();
        let alone = Tensor::cross_entropy(&single, &[2], &[true]).unwrap();
        assert!((masked.item() - alone.item()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_empty_mask_errors() {
        let logits = Tensor::zeros(&[2, 4]);
        assert!(matches!(
            Tensor::cross_entropy(&logits, &[0, 0], &[false, false]),
            Err(TensorError::EmptyMask)
        ));
    }

    #[test]
    fn embedding_lookup_and_scatter() {
        let table = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e = Tensor::embedding(&table, &[2, 0, 2]).unwrap();
        assert_eq!(e.to_vec(), vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = e.sum_all().unwrap();
        s.backward().unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_eq!(table.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        let c = Tensor::concat_cols(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = c.slice_cols(0, 2).unwrap();
        assert_eq!(back.to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        let r = Tensor::concat_rows(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(r.shape(), &[4, 2]);
    }

    #[test]
    fn no_grad_suppresses_graph() {
        let a = t(&[1, 2], &[1.0, 2.0]);
        let _guard = NoGradGuard::new();
        let y = a.scale(2.0).unwrap();
        assert!(!y.requires_grad());
    }

    #[test]
    fn backward_accumulates_through_shared_node() {
        let x = t(&[1], &[3.0]);
        let y = x.mul(&x).unwrap(); // x^2, dy/dx = 2x = 6
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let a = t(&[4, 4], &(0..16).map(|v| (v as f64 * 0.21).cos()).collect::<Vec<_>>());
            let b = t(&[4, 4], &(0..16).map(|v| (v as f64 * 0.13).sin()).collect::<Vec<_>>());
            let y = a
                .matmul(&b)
                .unwrap()
                .softmax()
                .unwrap()
                .sum_all()
                .unwrap();
            y.backward().unwrap();
            (y.item().to_bits(), a.grad().unwrap(), b.grad().unwrap())
        };
        let (v1, ga1, gb1) = run();
        let (v2, ga2, gb2) = run();
        assert_eq!(v1, v2);
        assert_eq!(
            ga1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            ga2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            gb1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            gb2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
