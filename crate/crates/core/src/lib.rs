//! Desk-scale speech understanding pipeline: an acoustic frontend, a frozen
//! toy encoder, a trainable modality adapter, a tag-structured causal LM with
//! LoRA, a three-stage training curriculum over synthetic tone tasks, and an
//! instruction-following evaluation harness.

pub mod adapter;
pub mod checkpoint;
pub mod curriculum;
pub mod encoder;
pub mod eval;
pub mod frontend;
pub mod gradcheck;
pub mod grammar;
#[cfg(not(target_arch = "wasm32"))]
pub mod http_judge;
pub mod lm;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod transformer;
pub mod vocab;

pub use tensor::{NoGradGuard, Tensor, TensorError};
