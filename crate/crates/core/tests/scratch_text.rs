//! Temporary text-pathway tuning harness, not part of the suite.

use std::path::Path;

use ospg_core::curriculum::{text_loss, trainable_params, PreparedSample, Stage, TrainCorpus};
use ospg_core::model::{ModelConfig, SpeechModel};
use ospg_core::optim::{Adam, AdamConfig};
use ospg_core::rng::Rng;
use ospg_core::synth::{
    gen_corpus, natural_instruction, AudioMode, CorpusCounts, SampleCategory, COMPOUND_TASKS,
};
use ospg_core::grammar::TaskTag;
use ospg_core::vocab::Vocabulary;

#[test]
#[ignore]
fn text_intent_learning() {
    let t0 = std::time::Instant::now();
    let vocab = Vocabulary::build();
    let cfg = ModelConfig::desk_default(vocab.len());
    let model = SpeechModel::init(cfg, vocab, 7);

    let counts = CorpusCounts {
        single_per_task: 0,
        multi: 0,
        text_qa: 200,
        intent: 200,
        joint_per_task: 0,
        joint_multi: 0,
    };
    let manifest = gen_corpus(&counts, 1234, AudioMode::Inline).unwrap();
    let corpus = TrainCorpus::prepare(&manifest, Path::new("."), &model).unwrap();
    let pool = corpus.pool(SampleCategory::IntentText);

    let groups = model.param_groups(trainable_params(Stage::II)).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    });
    let mut rng = Rng::new(5);
    for step in 0..=500 {
        let batch: Vec<&PreparedSample> =
            (0..16).map(|_| &pool[rng.below(pool.len())]).collect();
        let loss = text_loss(&model, &batch).unwrap();
        if step % 100 == 0 {
            eprintln!("[{:.0?}] step {step}: loss {:.4}", t0.elapsed(), loss.item());
        }
        for g in &groups {
            g.zero_grads();
        }
        loss.backward().unwrap();
        adam.step(&groups).unwrap();
    }

    // exact-match intent accuracy over every (task set, template) pair
    let mut correct = 0;
    let mut total = 0;
    let mut trng = Rng::new(99);
    let mut all_sets: Vec<Vec<TaskTag>> = TaskTag::ALL.iter().map(|&t| vec![t]).collect();
    all_sets.extend(COMPOUND_TASKS.iter().map(|p| p.to_vec()));
    for tasks in &all_sets {
        for _ in 0..ospg_core::synth::template_pool(tasks).len() {
            let instr = natural_instruction(tasks, &mut trng);
            let expect: String = tasks.iter().map(|t| t.surface()).collect();
            let out = model.infer(None, &instr, 12).unwrap();
            total += 1;
            if out == expect {
                correct += 1;
            } else if total % 7 == 0 {
                eprintln!("  miss: {:?} -> {:?} (want {expect})", instr.text, out);
            }
        }
    }
    eprintln!(
        "[{:.0?}] intent exact-match: {}/{} = {:.1}%",
        t0.elapsed(),
        correct,
        total,
        100.0 * correct as f64 / total as f64
    );
}
