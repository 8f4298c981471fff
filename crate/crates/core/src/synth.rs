//! Deterministic synthetic corpus: audio/instruction/target triples for the
//! tone-alphabet tasks. Every label is decidable from the waveform
//! construction itself, so a trained model can be scored without human
//! annotation, and every sample is a pure function of its seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{read_audio, write_raw_f32, AudioSignal};
use crate::grammar::{
    render_target, AttributeTag, Instruction, InstructionForm, StructuredOutput, TaskTag,
};
use crate::rng::{mix_seed, Rng};

pub const SAMPLE_RATE: u32 = 16_000;
/// Each spoken symbol is one 100 ms tone.
pub const TONE_SAMPLES: usize = 1600;
pub const TONE_COUNT: usize = 16;

/// Names of the 16 tones, index k at frequency 200 * 2^(k/4) Hz.
pub const TONE_NAMES: [&str; TONE_COUNT] = [
    "do", "re", "mi", "fa", "so", "la", "ti", "ka", "na", "pa", "ra", "sa", "ta", "wa", "ya", "za",
];

pub fn tone_freq(k: usize) -> f64 {
    200.0 * 2f64.powf(k as f64 / 4.0)
}

/// Gender rule: base pitch below 400 Hz reads as male.
pub fn sgc_label_for_pitch(hz: f64) -> usize {
    if hz < 400.0 {
        0 // <MALE>
    } else {
        1 // <FEMALE>
    }
}

/// Age rule: total duration under 0.5 s is a child, under 1.0 s an adult,
/// anything longer old.
pub fn sap_label_for_duration(secs: f64) -> usize {
    if secs < 0.5 {
        0 // <CHILD>
    } else if secs < 1.0 {
        1 // <ADULT>
    } else {
        2 // <OLD>
    }
}

/// Amplitude-modulation rates distinguishing the five emotions, in the
/// order of the SER label set.
pub const SER_RATES: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

/// VED burst kinds actually generated: silence gap, white noise, none —
/// label indices into the VED label set [<LAUGH>, <COUGH>, <NOISE>, <NONE>].
pub const VED_GENERATED_LABELS: [usize; 3] = [1, 2, 3];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {reason}")]
    BadManifest { line: usize, reason: String },
    #[error("unsupported task combination {0:?}")]
    UnsupportedTasks(Vec<TaskTag>),
    #[error(transparent)]
    Frontend(#[from] crate::frontend::FrontendError),
}

/// One training/eval item. The target is always a structured output; a
/// Stage II task-identifier string is simply a structured output with
/// empty content.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub audio: Option<AudioSignal>,
    pub instruction: Instruction,
    pub target: StructuredOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleCategory {
    SingleTaskSpeech,
    MultiTaskSpeech,
    TextQa,
    IntentText,
    JointMultimodal,
}

impl SampleCategory {
    pub const ALL: [SampleCategory; 5] = [
        SampleCategory::SingleTaskSpeech,
        SampleCategory::MultiTaskSpeech,
        SampleCategory::TextQa,
        SampleCategory::IntentText,
        SampleCategory::JointMultimodal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SampleCategory::SingleTaskSpeech => "single_task_speech",
            SampleCategory::MultiTaskSpeech => "multi_task_speech",
            SampleCategory::TextQa => "text_qa",
            SampleCategory::IntentText => "intent_text",
            SampleCategory::JointMultimodal => "joint_multimodal",
        }
    }

    pub fn from_str_opt(s: &str) -> Option<SampleCategory> {
        SampleCategory::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

// ---- waveform construction ----

fn tone_wave(freq: f64, n: usize, amp: f64) -> Vec<f32> {
    (0..n)
        .map(|i| {
            (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()) as f32
        })
        .collect()
}

fn tone_seq_wave(ks: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(ks.len() * TONE_SAMPLES);
    for &k in ks {
        out.extend(tone_wave(tone_freq(k), TONE_SAMPLES, 0.5));
    }
    out
}

fn transcript(ks: &[usize]) -> String {
    ks.iter()
        .map(|&k| TONE_NAMES[k])
        .collect::<Vec<_>>()
        .join(" ")
}

fn timed_transcript(ks: &[usize], frame_hop: usize) -> String {
    ks.iter()
        .enumerate()
        .map(|(i, &k)| format!("{}|{}", TONE_NAMES[k], i * TONE_SAMPLES / frame_hop))
        .collect::<Vec<_>>()
        .join(" ")
}

fn attr(task: TaskTag, label_idx: usize) -> AttributeTag {
    AttributeTag::from_surface(task.attribute_labels()[label_idx]).unwrap()
}

/// Synthesize the waveform and ground-truth output for a task set.
/// Pure in (tasks, label_idx, seed); `label_idx` pins the class for
/// stratified corpora and falls back to a seeded draw when absent.
pub fn synth_audio(
    tasks: &[TaskTag],
    label_idx: Option<usize>,
    seed: u64,
) -> Result<(AudioSignal, StructuredOutput), SynthError> {
    let mut rng = Rng::new(seed);
    let (samples, output) = match tasks {
        [TaskTag::Asr] => {
            let ks = draw_tones(&mut rng, 0, TONE_COUNT);
            (
                tone_seq_wave(&ks),
                StructuredOutput::new(vec![TaskTag::Asr], transcript(&ks), vec![]),
            )
        }
        [TaskTag::Srwt] => {
            let ks = draw_tones(&mut rng, 0, TONE_COUNT);
            (
                tone_seq_wave(&ks),
                StructuredOutput::new(vec![TaskTag::Srwt], timed_transcript(&ks, 160), vec![]),
            )
        }
        [TaskTag::Sgc] => {
            let label = label_idx.unwrap_or_else(|| rng.below(2));
            let freq = if label == 0 {
                rng.uniform(220.0, 360.0)
            } else {
                rng.uniform(440.0, 800.0)
            };
            debug_assert_eq!(sgc_label_for_pitch(freq), label);
            (
                tone_wave(freq, 9_600, 0.5),
                StructuredOutput::new(vec![TaskTag::Sgc], "", vec![attr(TaskTag::Sgc, label)]),
            )
        }
        [TaskTag::Sap] => {
            let label = label_idx.unwrap_or_else(|| rng.below(3));
            let secs = [0.3, 0.7, 1.2][label];
            debug_assert_eq!(sap_label_for_duration(secs), label);
            let freq = tone_freq(rng.below(TONE_COUNT));
            (
                tone_wave(freq, (secs * SAMPLE_RATE as f64) as usize, 0.5),
                StructuredOutput::new(vec![TaskTag::Sap], "", vec![attr(TaskTag::Sap, label)]),
            )
        }
        [TaskTag::Ser] => {
            let label = label_idx.unwrap_or_else(|| rng.below(5));
            let rate = SER_RATES[label];
            let freq = tone_freq(rng.below(TONE_COUNT));
            let n = (0.8 * SAMPLE_RATE as f64) as usize;
            let samples = (0..n)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    let env = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * rate * t).sin();
                    (0.5 * env * (2.0 * std::f64::consts::PI * freq * t).sin()) as f32
                })
                .collect();
            (
                samples,
                StructuredOutput::new(vec![TaskTag::Ser], "", vec![attr(TaskTag::Ser, label)]),
            )
        }
        [TaskTag::Ssr] => {
            let label = label_idx.unwrap_or_else(|| rng.below(3));
            let freq = tone_freq(rng.below(TONE_COUNT));
            let n = (0.8 * SAMPLE_RATE as f64) as usize;
            let samples = (0..n)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    let frac = i as f64 / n as f64;
                    let env = match label {
                        0 => 1.0,                                      // <NEWS>: flat
                        1 => 0.1 + 0.9 * frac,                          // <CHAT>: ramp
                        _ => (std::f64::consts::PI * frac).sin(),       // <STORY>: arch
                    };
                    (0.5 * env * (2.0 * std::f64::consts::PI * freq * t).sin()) as f32
                })
                .collect();
            (
                samples,
                StructuredOutput::new(vec![TaskTag::Ssr], "", vec![attr(TaskTag::Ssr, label)]),
            )
        }
        [TaskTag::Ved] => {
            let used = label_idx.unwrap_or_else(|| rng.below(3));
            let label = VED_GENERATED_LABELS[used.min(2)];
            let freq = tone_freq(rng.below(TONE_COUNT));
            let mut samples = tone_wave(freq, 8_000, 0.5); // 0.5 s base
            let tail = 3_200; // 0.2 s appended segment
            match label {
                1 => samples.extend(std::iter::repeat_n(0.0f32, tail)), // <COUGH>: silence gap
                2 => samples.extend((0..tail).map(|_| rng.uniform(-0.4, 0.4) as f32)), // <NOISE>
                _ => {} // <NONE>: nothing appended
            }
            (
                samples,
                StructuredOutput::new(vec![TaskTag::Ved], "", vec![attr(TaskTag::Ved, label)]),
            )
        }
        [TaskTag::Asr, TaskTag::Sap] => {
            let ks = draw_tones(&mut rng, 0, TONE_COUNT);
            let secs = ks.len() as f64 * TONE_SAMPLES as f64 / SAMPLE_RATE as f64;
            let label = sap_label_for_duration(secs);
            (
                tone_seq_wave(&ks),
                StructuredOutput::new(
                    vec![TaskTag::Asr, TaskTag::Sap],
                    transcript(&ks),
                    vec![attr(TaskTag::Sap, label)],
                ),
            )
        }
        [TaskTag::Asr, TaskTag::Sgc] => {
            let label = label_idx.unwrap_or_else(|| rng.below(2));
            // low register (k <= 3) stays under 400 Hz, high register above it
            let ks = if label == 0 {
                draw_tones(&mut rng, 0, 4)
            } else {
                draw_tones(&mut rng, 8, 16)
            };
            debug_assert_eq!(sgc_label_for_pitch(tone_freq(ks[0])), label);
            (
                tone_seq_wave(&ks),
                StructuredOutput::new(
                    vec![TaskTag::Asr, TaskTag::Sgc],
                    transcript(&ks),
                    vec![attr(TaskTag::Sgc, label)],
                ),
            )
        }
        other => return Err(SynthError::UnsupportedTasks(other.to_vec())),
    };
    Ok((AudioSignal::new(samples, SAMPLE_RATE)?, output))
}

fn draw_tones(rng: &mut Rng, lo: usize, hi: usize) -> Vec<usize> {
    let n = rng.range(3, 8);
    (0..n).map(|_| lo + rng.below(hi - lo)).collect()
}

// ---- instruction template pools ----

const ASR_NL: &[&str] = &[
    "what does this audio say?",
    "transcribe the audio",
    "write down what is spoken",
    "turn this recording into text",
    "give me the transcript",
    "what is being said here?",
    "please transcribe this clip",
    "what did you hear in the audio?",
    "convert the speech to text",
];

const SRWT_NL: &[&str] = &[
    "transcribe the audio with timestamps",
    "when is each tone spoken?",
    "write the transcript and mark the start frames",
    "give me a time aligned transcript",
    "transcribe and tell me where each word begins",
    "what is said and at which frame?",
    "produce a transcript with frame offsets",
    "align the words to their start times",
];

const VED_NL: &[&str] = &[
    "is there any vocal event in this audio?",
    "detect any unusual sound at the end",
    "what event do you hear in the clip?",
    "tell me if the recording contains a noise burst",
    "classify the vocal event in this audio",
    "did you notice any event in the sound?",
    "report any audio event you detect",
    "what kind of event ends this recording?",
];

const SER_NL: &[&str] = &[
    "what emotion does the speaker convey?",
    "how does the speaker feel?",
    "classify the emotion in this clip",
    "tell me the emotional tone of the audio",
    "what mood do you hear?",
    "identify the speaker emotion",
    "is the speaker happy or sad or something else?",
    "describe the emotion in the voice",
];

const SSR_NL: &[&str] = &[
    "what speaking style is used here?",
    "classify the style of this recording",
    "is this news, chat or story style?",
    "tell me the delivery style of the audio",
    "which style does the speaker use?",
    "identify the speaking style",
    "what kind of delivery is this?",
    "describe the style of the speech",
];

const SGC_NL: &[&str] = &[
    "is the speaker male or female?",
    "what is the gender of the speaker?",
    "classify the speaker gender",
    "tell me whether a man or a woman is speaking",
    "identify the gender from the voice",
    "does this sound like a male or female voice?",
    "guess the speaker gender",
    "what gender do you hear?",
];

const SAP_NL: &[&str] = &[
    "how old is the speaker?",
    "what is the age of the speaker?",
    "estimate the speaker age",
    "is the speaker a child, an adult or an old person?",
    "tell me the age group of the voice",
    "classify the speaker age",
    "which age bracket fits this speaker?",
    "guess how old the person is",
];

const STTC_NL: &[&str] = &[
    "chat with me for a moment",
    "tell me something about the tones",
    "answer a quick question for me",
    "let us talk",
    "i have a question for you",
    "can we have a short chat?",
    "respond to my question please",
    "say something back to me",
];

const ASR_SAP_NL: &[&str] = &[
    "what does this audio say and how old is the speaker?",
    "transcribe the clip and estimate the speaker age",
    "give me the transcript and the age group",
    "write down the words and tell me the speaker age",
    "transcribe this and guess how old the speaker is",
];

const ASR_SGC_NL: &[&str] = &[
    "what does this audio say and is the speaker male or female?",
    "transcribe the clip and tell me the gender",
    "give me the transcript and the speaker gender",
    "write down the words and classify the gender",
    "transcribe this and identify the voice gender",
];

/// Natural-language paraphrase pool for a task set.
pub fn template_pool(tasks: &[TaskTag]) -> &'static [&'static str] {
    match tasks {
        [TaskTag::Asr] => ASR_NL,
        [TaskTag::Srwt] => SRWT_NL,
        [TaskTag::Ved] => VED_NL,
        [TaskTag::Ser] => SER_NL,
        [TaskTag::Ssr] => SSR_NL,
        [TaskTag::Sgc] => SGC_NL,
        [TaskTag::Sap] => SAP_NL,
        [TaskTag::Sttc] => STTC_NL,
        [TaskTag::Asr, TaskTag::Sap] => ASR_SAP_NL,
        [TaskTag::Asr, TaskTag::Sgc] => ASR_SGC_NL,
        _ => panic!("no template pool for {tasks:?}"),
    }
}

pub fn natural_instruction(tasks: &[TaskTag], rng: &mut Rng) -> Instruction {
    Instruction::natural(*rng.pick(template_pool(tasks)), tasks)
}

/// Text question/answer pairs over the tone alphabet. Answers are short and
/// fully determined by the question.
pub fn text_qa_pair(seed: u64) -> (String, String) {
    let mut rng = Rng::new(seed);
    match rng.below(6) {
        0 => {
            let k = rng.below(TONE_COUNT - 1);
            (
                format!("which tone comes after {}?", TONE_NAMES[k]),
                TONE_NAMES[k + 1].to_string(),
            )
        }
        1 => {
            let k = 1 + rng.below(TONE_COUNT - 1);
            (
                format!("which tone comes before {}?", TONE_NAMES[k]),
                TONE_NAMES[k - 1].to_string(),
            )
        }
        2 => ("what is the first tone called?".into(), "do".into()),
        3 => (
            "how many tones are in the alphabet?".into(),
            "16".into(),
        ),
        4 => {
            let k = rng.below(TONE_COUNT);
            (
                format!("repeat the word {}", TONE_NAMES[k]),
                TONE_NAMES[k].to_string(),
            )
        }
        _ => {
            let k = rng.below(TONE_COUNT);
            (
                format!("say the tone {} twice", TONE_NAMES[k]),
                format!("{} {}", TONE_NAMES[k], TONE_NAMES[k]),
            )
        }
    }
}

/// The seven audio-bearing tasks, in generation order.
pub const SPEECH_TASKS: [TaskTag; 7] = [
    TaskTag::Asr,
    TaskTag::Srwt,
    TaskTag::Ved,
    TaskTag::Ser,
    TaskTag::Ssr,
    TaskTag::Sgc,
    TaskTag::Sap,
];

pub const COMPOUND_TASKS: [&[TaskTag]; 2] = [
    &[TaskTag::Asr, TaskTag::Sap],
    &[TaskTag::Asr, TaskTag::Sgc],
];

fn labeled_class_count(tasks: &[TaskTag]) -> Option<usize> {
    match tasks {
        [TaskTag::Sgc] => Some(2),
        [TaskTag::Sap] => Some(3),
        [TaskTag::Ser] => Some(5),
        [TaskTag::Ssr] => Some(3),
        [TaskTag::Ved] => Some(3),
        [TaskTag::Asr, TaskTag::Sgc] => Some(2),
        _ => None,
    }
}

/// One single-task sample with a fixed-tag instruction; the spec's basic
/// generation entry point.
pub fn gen_sample(task: TaskTag, seed: u64) -> Result<TrainingSample, SynthError> {
    let (audio, target) = synth_audio(&[task], None, seed)?;
    Ok(TrainingSample {
        audio: Some(audio),
        instruction: Instruction::fixed(&[task]),
        target,
    })
}

// ---- manifest ----

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum AudioRef {
    File { file: String },
    Inline { seed: u64, label: Option<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CorpusEntry {
    pub id: String,
    pub category: String,
    pub tasks: Vec<String>,
    pub instruction: String,
    pub form: String,
    pub audio: Option<AudioRef>,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
}

impl CorpusEntry {
    pub fn task_tags(&self) -> Result<Vec<TaskTag>, SynthError> {
        self.tasks
            .iter()
            .map(|s| {
                TaskTag::from_surface(s).ok_or_else(|| SynthError::BadManifest {
                    line: 0,
                    reason: format!("unknown task {s:?} in entry {}", self.id),
                })
            })
            .collect()
    }

    pub fn instruction_struct(&self) -> Result<Instruction, SynthError> {
        let form = InstructionForm::from_str_opt(&self.form).ok_or_else(|| {
            SynthError::BadManifest {
                line: 0,
                reason: format!("unknown form {:?} in entry {}", self.form, self.id),
            }
        })?;
        Ok(Instruction {
            text: self.instruction.clone(),
            form,
            intended_tasks: self.task_tags()?,
        })
    }

    /// Reconstruct the waveform: read the referenced file or re-synthesize
    /// the inline spec.
    pub fn realize_audio(&self, base_dir: &Path) -> Result<Option<AudioSignal>, SynthError> {
        match &self.audio {
            None => Ok(None),
            Some(AudioRef::File { file }) => {
                Ok(Some(read_audio(&base_dir.join(file), SAMPLE_RATE)?))
            }
            Some(AudioRef::Inline { seed, label }) => {
                let tasks = self.task_tags()?;
                let (audio, output) = synth_audio(&tasks, *label, *seed)?;
                debug_assert_eq!(render_target(&output).unwrap(), self.target);
                Ok(Some(audio))
            }
        }
    }
}

impl CorpusManifest {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(s: &str) -> Result<CorpusManifest, SynthError> {
        let mut entries = Vec::new();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: CorpusEntry =
                serde_json::from_str(line).map_err(|err| SynthError::BadManifest {
                    line: i + 1,
                    reason: err.to_string(),
                })?;
            entries.push(e);
        }
        Ok(CorpusManifest { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read(path: &Path) -> Result<CorpusManifest, SynthError> {
        let s = std::fs::read_to_string(path).map_err(|e| SynthError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        CorpusManifest::from_jsonl(&s)
    }
}

/// How gen_corpus materializes waveforms.
pub enum AudioMode<'a> {
    /// Raw float32 files under this directory; entries reference them.
    Files(&'a Path),
    /// Entries carry the (seed, label) recipe instead of a file.
    Inline,
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusCounts {
    /// Fixed-instruction single task samples, per speech task.
    pub single_per_task: usize,
    /// Fixed-instruction compound samples (total, cycled over pairs).
    pub multi: usize,
    /// Text question/answer pairs.
    pub text_qa: usize,
    /// Natural-instruction -> task-identifier text pairs.
    pub intent: usize,
    /// Natural-instruction speech samples, per speech task.
    pub joint_per_task: usize,
    /// Natural-instruction compound samples (total).
    pub joint_multi: usize,
}

fn push_speech_entries(
    entries: &mut Vec<CorpusEntry>,
    manifest_rng: &mut Rng,
    seed: u64,
    category: SampleCategory,
    tasks: &[TaskTag],
    count: usize,
    natural: bool,
    mode: &AudioMode,
) -> Result<(), SynthError> {
    let classes = labeled_class_count(tasks);
    for i in 0..count {
        let entry_seed = mix_seed(seed, entries.len() as u64 + 1);
        let label = classes.map(|c| i % c);
        let (audio, output) = synth_audio(tasks, label, entry_seed)?;
        let instruction = if natural {
            natural_instruction(tasks, manifest_rng)
        } else {
            Instruction::fixed(tasks)
        };
        let id = format!("{}-{:05}", category.as_str().replace('_', "-"), entries.len());
        let audio_ref = match mode {
            AudioMode::Inline => AudioRef::Inline {
                seed: entry_seed,
                label,
            },
            AudioMode::Files(dir) => {
                let file = format!("{id}.f32");
                write_raw_f32(&dir.join(&file), &audio)?;
                AudioRef::File { file }
            }
        };
        entries.push(CorpusEntry {
            id,
            category: category.as_str().to_string(),
            tasks: tasks.iter().map(|t| t.surface().to_string()).collect(),
            instruction: instruction.text,
            form: instruction.form.as_str().to_string(),
            audio: Some(audio_ref),
            target: render_target(&output).expect("generated targets are valid"),
        });
    }
    Ok(())
}

/// Stratified, seed-deterministic corpus over every sample category.
/// With `AudioMode::Files` the waveforms land next to the manifest as raw
/// float32; with `AudioMode::Inline` each entry carries its recipe.
pub fn gen_corpus(
    counts: &CorpusCounts,
    seed: u64,
    mode: AudioMode,
) -> Result<CorpusManifest, SynthError> {
    let mut entries = Vec::new();
    let mut manifest_rng = Rng::derive(seed, 0x0515);

    for task in SPEECH_TASKS {
        push_speech_entries(
            &mut entries,
            &mut manifest_rng,
            seed,
            SampleCategory::SingleTaskSpeech,
            &[task],
            counts.single_per_task,
            false,
            &mode,
        )?;
    }
    for i in 0..counts.multi {
        let pair = COMPOUND_TASKS[i % COMPOUND_TASKS.len()];
        push_speech_entries(
            &mut entries,
            &mut manifest_rng,
            seed,
            SampleCategory::MultiTaskSpeech,
            pair,
            1,
            false,
            &mode,
        )?;
    }
    for _ in 0..counts.text_qa {
        let entry_seed = mix_seed(seed, entries.len() as u64 + 1);
        let (q, a) = text_qa_pair(entry_seed);
        let id = format!("text-qa-{:05}", entries.len());
        entries.push(CorpusEntry {
            id,
            category: SampleCategory::TextQa.as_str().to_string(),
            tasks: vec![TaskTag::Sttc.surface().to_string()],
            instruction: q,
            form: InstructionForm::Natural.as_str().to_string(),
            audio: None,
            target: render_target(&StructuredOutput::new(vec![TaskTag::Sttc], a, vec![]))
                .unwrap(),
        });
    }
    for i in 0..counts.intent {
        // roughly one in ten intent samples is a multi-intent compound
        let tasks: Vec<TaskTag> = if i % 10 == 9 {
            COMPOUND_TASKS[(i / 10) % COMPOUND_TASKS.len()].to_vec()
        } else {
            vec![TaskTag::ALL[i % TaskTag::ALL.len()]]
        };
        let instruction = natural_instruction(&tasks, &mut manifest_rng);
        let id = format!("intent-{:05}", entries.len());
        entries.push(CorpusEntry {
            id,
            category: SampleCategory::IntentText.as_str().to_string(),
            tasks: tasks.iter().map(|t| t.surface().to_string()).collect(),
            instruction: instruction.text,
            form: instruction.form.as_str().to_string(),
            audio: None,
            target: render_target(&StructuredOutput::new(tasks, "", vec![])).unwrap(),
        });
    }
    for task in SPEECH_TASKS {
        push_speech_entries(
            &mut entries,
            &mut manifest_rng,
            seed,
            SampleCategory::JointMultimodal,
            &[task],
            counts.joint_per_task,
            true,
            &mode,
        )?;
    }
    for i in 0..counts.joint_multi {
        let pair = COMPOUND_TASKS[i % COMPOUND_TASKS.len()];
        push_speech_entries(
            &mut entries,
            &mut manifest_rng,
            seed,
            SampleCategory::JointMultimodal,
            pair,
            1,
            true,
            &mode,
        )?;
    }
    Ok(CorpusManifest { entries })
}

/// Natural-instruction held-out evaluation set: `n` joint-style speech
/// samples cycling through tasks and compounds.
pub fn gen_eval_corpus(n: usize, seed: u64) -> Result<CorpusManifest, SynthError> {
    let mut entries = Vec::new();
    let mut manifest_rng = Rng::derive(seed, 0xE7A1);
    let mut i = 0;
    while entries.len() < n {
        let tasks: Vec<TaskTag> = if i % 10 == 9 {
            COMPOUND_TASKS[(i / 10) % COMPOUND_TASKS.len()].to_vec()
        } else {
            vec![SPEECH_TASKS[i % SPEECH_TASKS.len()]]
        };
        push_speech_entries(
            &mut entries,
            &mut manifest_rng,
            seed,
            SampleCategory::JointMultimodal,
            &tasks,
            1,
            true,
            &AudioMode::Inline,
        )?;
        i += 1;
    }
    Ok(CorpusManifest { entries })
}

/// Paired fixed/natural evaluation set: for each speech task, `per_task`
/// items, each emitted twice with identical audio and both instruction
/// forms. Ids share a stem and end in "-fi" / "-nl".
pub fn gen_fi_nl_corpus(per_task: usize, seed: u64) -> Result<CorpusManifest, SynthError> {
    let mut entries = Vec::new();
    let mut manifest_rng = Rng::derive(seed, 0xF1);
    for task in SPEECH_TASKS {
        let classes = labeled_class_count(&[task]);
        for i in 0..per_task {
            let entry_seed = mix_seed(seed, 0xF1_000 + entries.len() as u64);
            let label = classes.map(|c| i % c);
            let (_, output) = synth_audio(&[task], label, entry_seed)?;
            let stem = format!("finl-{}-{:04}", &task.surface()[1..task.surface().len() - 1], i);
            let target = render_target(&output).unwrap();
            let natural = natural_instruction(&[task], &mut manifest_rng);
            for (suffix, text, form) in [
                ("fi", Instruction::fixed(&[task]).text, InstructionForm::Fixed),
                ("nl", natural.text.clone(), InstructionForm::Natural),
            ] {
                entries.push(CorpusEntry {
                    id: format!("{stem}-{suffix}"),
                    category: SampleCategory::JointMultimodal.as_str().to_string(),
                    tasks: vec![task.surface().to_string()],
                    instruction: text.clone(),
                    form: form.as_str().to_string(),
                    audio: Some(AudioRef::Inline {
                        seed: entry_seed,
                        label,
                    }),
                    target: target.clone(),
                });
            }
        }
    }
    Ok(CorpusManifest { entries })
}
