//! wasm-bindgen surface for the browser demo. Three interactive operations:
//! synthesize a tone-task sample (waveform + log-Mel + target), parse or
//! render structured output text, and train a micro model live while
//! watching the loss and its greedy output evolve.

use wasm_bindgen::prelude::*;

use ospg_core::curriculum::{stage1_loss, trainable_params, Stage, TrainCorpus};
use ospg_core::frontend::{log_mel, FrontendConfig};
use ospg_core::grammar::{parse_output, TaskTag};
use ospg_core::model::{ModelConfig, SpeechModel};
use ospg_core::optim::{Adam, AdamConfig, ParamGroup};
use ospg_core::rng::Rng;
use ospg_core::synth::{gen_corpus, synth_audio, AudioMode, CorpusCounts, SampleCategory};
use ospg_core::vocab::Vocabulary;

/// Task tag surfaces the demo can synthesize.
#[wasm_bindgen]
pub fn task_names() -> Vec<String> {
    ospg_core::synth::SPEECH_TASKS
        .iter()
        .map(|t| t.surface().to_string())
        .collect()
}

#[wasm_bindgen]
pub struct SynthResult {
    waveform: Vec<f32>,
    mel: Vec<f64>,
    n_frames: usize,
    n_mels: usize,
    target: String,
    instruction: String,
}

#[wasm_bindgen]
impl SynthResult {
    #[wasm_bindgen(getter)]
    pub fn waveform(&self) -> Vec<f32> {
        self.waveform.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mel(&self) -> Vec<f64> {
        self.mel.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    #[wasm_bindgen(getter)]
    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    #[wasm_bindgen(getter)]
    pub fn target(&self) -> String {
        self.target.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn instruction(&self) -> String {
        self.instruction.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sample_rate(&self) -> u32 {
        ospg_core::synth::SAMPLE_RATE
    }
}

/// Synthesize one sample of the named task and run the frontend on it.
#[wasm_bindgen]
pub fn synthesize(task: &str, seed: u64) -> Result<SynthResult, JsError> {
    let tag = TaskTag::from_surface(task)
        .ok_or_else(|| JsError::new(&format!("unknown task {task:?}")))?;
    let (audio, output) =
        synth_audio(&[tag], None, seed).map_err(|e| JsError::new(&e.to_string()))?;
    let mut rng = Rng::derive(seed, 0xDE30);
    let instruction = ospg_core::synth::natural_instruction(&[tag], &mut rng);
    let mel = log_mel(&audio, &FrontendConfig::default())
        .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(SynthResult {
        waveform: audio.samples,
        mel: mel.data,
        n_frames: mel.n_frames,
        n_mels: mel.n_mels,
        target: ospg_core::grammar::render_target(&output)
            .expect("generated targets are valid"),
        instruction: instruction.text,
    })
}

/// Parse structured output text into a JSON description (or an error).
#[wasm_bindgen]
pub fn parse_structured(text: &str) -> String {
    match parse_output(text) {
        Ok(o) => serde_json::json!({
            "ok": true,
            "tasks": o.tasks.iter().map(|t| t.surface()).collect::<Vec<_>>(),
            "content": o.content,
            "attributes": o.attributes.iter().map(|a| a.surface()).collect::<Vec<_>>(),
        })
        .to_string(),
        Err(e) => serde_json::json!({ "ok": false, "error": e.to_string() }).to_string(),
    }
}

/// A deliberately tiny pipeline that trains in the browser: transcription
/// only, short tone sequences, a couple of layers everywhere.
#[wasm_bindgen]
pub struct MicroTrainer {
    model: SpeechModel,
    corpus: TrainCorpus,
    groups: Vec<ParamGroup>,
    adam: Adam,
    rng: Rng,
    steps_done: u32,
    probe_instruction: ospg_core::grammar::Instruction,
    probe_target: String,
}

#[wasm_bindgen]
impl MicroTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<MicroTrainer, JsError> {
        let err = |e: String| JsError::new(&e);
        let vocab = Vocabulary::build();
        let mut cfg = ModelConfig::desk_default(vocab.len());
        cfg.encoder.d_model = 32;
        cfg.encoder.n_layers = 1;
        cfg.adapter.d_in = 32;
        cfg.adapter.conv_channels = 4;
        cfg.adapter.n_layers = 1;
        cfg.adapter.d_llm = 32;
        cfg.lm.d_model = 32;
        cfg.lm.n_layers = 2;
        cfg.lora.rank = 8;
        cfg.lora.alpha = 16.0;
        let model = SpeechModel::init(cfg, vocab, seed);
        let counts = CorpusCounts {
            single_per_task: 0,
            multi: 0,
            text_qa: 0,
            intent: 0,
            joint_per_task: 0,
            joint_multi: 0,
        };
        // transcription-only micro corpus, built by hand from ASR samples
        let mut manifest = gen_corpus(&counts, seed, AudioMode::Inline)
            .map_err(|e| err(e.to_string()))?;
        for i in 0..12u64 {
            let entry_seed = ospg_core::rng::mix_seed(seed, 0xA11D + i);
            let (_, output) = synth_audio(&[TaskTag::Asr], None, entry_seed)
                .map_err(|e| err(e.to_string()))?;
            manifest.entries.push(ospg_core::synth::CorpusEntry {
                id: format!("micro-{i:03}"),
                category: SampleCategory::SingleTaskSpeech.as_str().to_string(),
                tasks: vec![TaskTag::Asr.surface().to_string()],
                instruction: TaskTag::Asr.surface().to_string(),
                form: "fixed".to_string(),
                audio: Some(ospg_core::synth::AudioRef::Inline {
                    seed: entry_seed,
                    label: None,
                }),
                target: ospg_core::grammar::render_target(&output).unwrap(),
            });
        }
        let probe_target = manifest.entries[0].target.clone();
        let probe_instruction = manifest.entries[0]
            .instruction_struct()
            .map_err(|e| err(e.to_string()))?;
        let corpus = TrainCorpus::prepare(&manifest, std::path::Path::new("."), &model)
            .map_err(|e| err(e.to_string()))?;
        let groups = model
            .param_groups(trainable_params(Stage::I))
            .map_err(|e| err(e.to_string()))?;
        Ok(MicroTrainer {
            model,
            corpus,
            groups,
            adam: Adam::new(AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            }),
            rng: Rng::derive(seed, 0x7EA1),
            steps_done: 0,
            probe_instruction,
            probe_target,
        })
    }

    /// Run `n` optimizer steps; returns the loss after each.
    pub fn step(&mut self, n: u32) -> Result<Vec<f64>, JsError> {
        let pool = self.corpus.pool(SampleCategory::SingleTaskSpeech);
        let mut losses = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let batch: Vec<_> = (0..8).map(|_| &pool[self.rng.below(pool.len())]).collect();
            let loss =
                stage1_loss(&self.model, &batch).map_err(|e| JsError::new(&e.to_string()))?;
            losses.push(loss.item());
            for g in &self.groups {
                g.zero_grads();
            }
            loss.backward().map_err(|e| JsError::new(&e.to_string()))?;
            self.adam
                .step(&self.groups)
                .map_err(|e| JsError::new(&e.to_string()))?;
            self.steps_done += 1;
        }
        Ok(losses)
    }

    #[wasm_bindgen(getter)]
    pub fn steps_done(&self) -> u32 {
        self.steps_done
    }

    #[wasm_bindgen(getter)]
    pub fn probe_target(&self) -> String {
        self.probe_target.clone()
    }

    /// Greedy output of the current model on the fixed probe sample.
    pub fn probe_output(&self) -> Result<String, JsError> {
        let pool = self.corpus.pool(SampleCategory::SingleTaskSpeech);
        let sample = &pool[0];
        let _guard = ospg_core::tensor::NoGradGuard::new();
        let z = self
            .model
            .adapter
            .adapt(sample.h_a.as_ref().expect("micro samples carry audio"))
            .map_err(|e| JsError::new(&e.to_string()))?;
        let seq = self
            .model
            .build_sequence(&self.probe_instruction, Some(z))
            .map_err(|e| JsError::new(&e.to_string()))?;
        let ids = self
            .model
            .lm
            .generate_greedy(&seq, Some(&self.model.lora), 40, self.model.vocab.eos_id())
            .map_err(|e| JsError::new(&e.to_string()))?;
        self.model
            .vocab
            .detokenize(&ids)
            .map_err(|e| JsError::new(&e.to_string()))
    }
}
