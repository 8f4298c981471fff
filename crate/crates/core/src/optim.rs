//! Named parameter groups and a bias-corrected Adam optimizer.

use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("duplicate tensor name {name:?} in group {group:?}")]
    DuplicateName { group: String, name: String },
    #[error("missing gradient on trainable tensor {group}.{name}")]
    MissingGradient { group: String, name: String },
}

/// A named collection of tensors that freeze or train together.
/// With `trainable == false` the optimizer never touches the values,
/// so they stay bit-identical across any number of steps.
pub struct ParamGroup {
    pub name: String,
    pub tensors: Vec<(String, Tensor)>,
    pub trainable: bool,
}

impl ParamGroup {
    pub fn new(
        name: &str,
        tensors: Vec<(String, Tensor)>,
        trainable: bool,
    ) -> Result<ParamGroup, OptimError> {
        let mut seen = std::collections::HashSet::new();
        for (n, _) in &tensors {
            if !seen.insert(n.clone()) {
                return Err(OptimError::DuplicateName {
                    group: name.to_string(),
                    name: n.clone(),
                });
            }
        }
        Ok(ParamGroup {
            name: name.to_string(),
            tensors,
            trainable,
        })
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.tensors {
            if self.trainable {
                t.ensure_zero_grad();
            } else {
                t.clear_grad();
            }
        }
    }

    /// Snapshot of every tensor's raw bits, for freezing assertions.
    pub fn bit_snapshot(&self) -> Vec<Vec<u64>> {
        self.tensors
            .iter()
            .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Standard Adam with bias correction. Moment buffers are keyed by
/// `group.tensor` name so groups can be re-assembled between stages.
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every trainable group. Non-trainable groups are
    /// skipped entirely. A trainable tensor without a gradient buffer is
    /// an error: the caller forgot to run backward or to zero-seed grads.
    pub fn step(&mut self, groups: &[ParamGroup]) -> Result<(), OptimError> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.cfg.beta1.powf(t);
        let bc2 = 1.0 - self.cfg.beta2.powf(t);
        for group in groups {
            if !group.trainable {
                continue;
            }
            for (name, tensor) in &group.tensors {
                let grad = tensor.grad().ok_or_else(|| OptimError::MissingGradient {
                    group: group.name.clone(),
                    name: name.clone(),
                })?;
                let key = format!("{}.{}", group.name, name);
                let (m, v) = self
                    .moments
                    .entry(key)
                    .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
                let (b1, b2, lr, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.lr, self.cfg.eps);
                let mut i = 0;
                tensor.apply_update(|w| {
                    let g = grad[i];
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    let mhat = m[i] / bc1;
                    let vhat = v[i] / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                    i += 1;
                });
            }
        }
        Ok(())
    }
}
