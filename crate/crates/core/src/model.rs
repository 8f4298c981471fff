//! The full pipeline bundle: frontend config, encoder, adapter, LM and LoRA
//! under one roof, with the instruction placement rule and end-to-end
//! inference.
//!
//! Placement: fixed tag instructions sit to the right of the speech tokens,
//! natural-language instructions to the left. Inference picks the layout from
//! the instruction form, matching how each was trained.

use thiserror::Error;

use crate::adapter::{Adapter, AdapterConfig, AdapterError};
use crate::encoder::{Encoder, EncoderConfig, EncoderError};
use crate::frontend::{log_mel, AudioSignal, FrontendConfig, FrontendError};
use crate::grammar::{Instruction, InstructionForm};
use crate::lm::{HybridSequence, Lm, LmConfig, LmError, Lora, LoraConfig};
use crate::optim::{OptimError, ParamGroup};
use crate::rng::Rng;
use crate::tensor::{NoGradGuard, Tensor, TensorError};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("instruction with audio requires speech tokens, none provided")]
    MissingSpeech,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub frontend: FrontendConfig,
    pub encoder: EncoderConfig,
    pub adapter: AdapterConfig,
    pub lm: LmConfig,
    pub lora: LoraConfig,
}

impl ModelConfig {
    /// Desk-scale defaults; trains in minutes on a CPU.
    pub fn desk_default(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            frontend: FrontendConfig::default(),
            encoder: EncoderConfig::default(),
            adapter: AdapterConfig::default(),
            lm: LmConfig::desk_default(vocab_size),
            lora: LoraConfig::default(),
        }
    }
}

/// Canonical checkpoint group names.
pub const GROUP_ENCODER: &str = "encoder";
pub const GROUP_ADAPTER: &str = "adapter";
pub const GROUP_LM: &str = "lm";
pub const GROUP_LORA: &str = "lora";

pub struct SpeechModel {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub encoder: Encoder,
    pub adapter: Adapter,
    pub lm: Lm,
    pub lora: Lora,
}

impl SpeechModel {
    pub fn init(cfg: ModelConfig, vocab: Vocabulary, seed: u64) -> SpeechModel {
        assert_eq!(cfg.lm.vocab_size, vocab.len(), "LM vocab size must match");
        assert_eq!(cfg.encoder.n_mels, cfg.frontend.n_mels);
        assert_eq!(cfg.adapter.d_in, cfg.encoder.d_model);
        assert_eq!(cfg.adapter.d_llm, cfg.lm.d_model);
        let encoder = Encoder::init(cfg.encoder, &mut Rng::derive(seed, 1));
        let adapter = Adapter::init(cfg.adapter, &mut Rng::derive(seed, 2));
        let lm = Lm::init(cfg.lm, &mut Rng::derive(seed, 3));
        let lora = Lora::init(cfg.lora, &cfg.lm, &mut Rng::derive(seed, 4));
        SpeechModel {
            cfg,
            vocab,
            encoder,
            adapter,
            lm,
            lora,
        }
    }

    /// Frontend plus encoder. With a frozen encoder this runs without
    /// building a graph, so the result can be cached for the whole run.
    pub fn acoustic_embedding(&self, audio: &AudioSignal) -> Result<Tensor, ModelError> {
        let mel = log_mel(audio, &self.cfg.frontend)?;
        if self.cfg.encoder.frozen {
            let _guard = NoGradGuard::new();
            Ok(self.encoder.encode(&mel)?)
        } else {
            Ok(self.encoder.encode(&mel)?)
        }
    }

    /// Hybrid layout for an instruction and optional speech tokens.
    pub fn build_sequence(
        &self,
        instruction: &Instruction,
        speech: Option<Tensor>,
    ) -> Result<HybridSequence, ModelError> {
        let ids = self.vocab.tokenize(&instruction.text)?;
        Ok(match (speech, instruction.form) {
            (None, _) => HybridSequence::text_only(ids),
            (Some(z), InstructionForm::Fixed) => HybridSequence::new(vec![], Some(z), ids),
            (Some(z), InstructionForm::Natural) => HybridSequence::new(ids, Some(z), vec![]),
        })
    }

    /// End-to-end inference: audio and instruction in, generated text out.
    pub fn infer(
        &self,
        audio: Option<&AudioSignal>,
        instruction: &Instruction,
        max_new: usize,
    ) -> Result<String, ModelError> {
        let _guard = NoGradGuard::new();
        let speech = match audio {
            Some(a) => {
                let h = self.acoustic_embedding(a)?;
                Some(self.adapter.adapt(&h)?)
            }
            None => None,
        };
        let seq = self.build_sequence(instruction, speech)?;
        let ids = self
            .lm
            .generate_greedy(&seq, Some(&self.lora), max_new, self.vocab.eos_id())?;
        Ok(self.vocab.detokenize(&ids)?)
    }

    /// The four parameter groups, with the given set of trainable names.
    pub fn param_groups(&self, trainable: &[&str]) -> Result<Vec<ParamGroup>, ModelError> {
        let mk = |name: &str, tensors: Vec<(String, Tensor)>| {
            ParamGroup::new(name, tensors, trainable.contains(&name))
        };
        Ok(vec![
            mk(GROUP_ENCODER, self.encoder.named_params())?,
            mk(GROUP_ADAPTER, self.adapter.named_params())?,
            mk(GROUP_LM, self.lm.named_params())?,
            mk(GROUP_LORA, self.lora.named_params())?,
        ])
    }

    /// Every tensor with its checkpoint name (`group.path`).
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (group, tensors) in [
            (GROUP_ENCODER, self.encoder.named_params()),
            (GROUP_ADAPTER, self.adapter.named_params()),
            (GROUP_LM, self.lm.named_params()),
            (GROUP_LORA, self.lora.named_params()),
        ] {
            for (name, t) in tensors {
                out.push((format!("{group}.{name}"), t));
            }
        }
        out
    }
}
