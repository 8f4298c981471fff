//! Optimization sanity: the Stage I objective actually minimizes on a small
//! fixed batch, and frozen groups never move.

use std::path::Path;

use ospg_core::curriculum::{
    stage1_loss, trainable_params, PreparedSample, Stage, TrainCorpus,
};
use ospg_core::model::{ModelConfig, SpeechModel};
use ospg_core::optim::{Adam, AdamConfig};
use ospg_core::synth::{gen_corpus, AudioMode, CorpusCounts, SampleCategory};
use ospg_core::vocab::Vocabulary;

fn desk_model(seed: u64) -> SpeechModel {
    let vocab = Vocabulary::build();
    let cfg = ModelConfig::desk_default(vocab.len());
    SpeechModel::init(cfg, vocab, seed)
}

#[test]
fn stage1_memorizes_fixed_batch() {
    let model = desk_model(40);
    let counts = CorpusCounts {
        single_per_task: 3, // 21 speech samples; the batch uses 16
        multi: 0,
        text_qa: 0,
        intent: 0,
        joint_per_task: 0,
        joint_multi: 0,
    };
    let manifest = gen_corpus(&counts, 41, AudioMode::Inline).unwrap();
    let corpus = TrainCorpus::prepare(&manifest, Path::new("."), &model).unwrap();
    let pool = corpus.pool(SampleCategory::SingleTaskSpeech);
    let batch: Vec<&PreparedSample> = pool.iter().take(16).collect();

    let groups = model.param_groups(trainable_params(Stage::I)).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 3e-3,
        ..AdamConfig::default()
    });

    let initial = stage1_loss(&model, &batch).unwrap().item();
    let start = std::time::Instant::now();
    let mut last = initial;
    for _ in 0..200 {
        let loss = stage1_loss(&model, &batch).unwrap();
        last = loss.item();
        for g in &groups {
            g.zero_grads();
        }
        loss.backward().unwrap();
        adam.step(&groups).unwrap();
    }
    let elapsed = start.elapsed();
    eprintln!(
        "memorization: initial {initial:.4} -> final {last:.4} in {elapsed:.1?} \
         ({:.0} ms/step)",
        elapsed.as_millis() as f64 / 200.0
    );
    assert!(
        last < 0.10 * initial,
        "after 200 steps loss {last:.4} is not below 10% of initial {initial:.4}"
    );
}
