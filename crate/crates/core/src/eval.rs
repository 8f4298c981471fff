//! Instruction-following and task-metric evaluation.
//!
//! The default judge is a deterministic rule: an output is correct when it
//! parses and its task set equals the instructed intent. An external
//! LLM judge can be plugged in through the [`Judge`] trait (see
//! [`crate::http_judge`]); nothing in the test suite depends on one.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::grammar::{parse_output, AttributeTag, Instruction, TaskTag};
use crate::model::{ModelError, SpeechModel};
use crate::synth::{CorpusManifest, SynthError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot compute IFR over zero verdicts")]
    EmptyVerdicts,
    #[error("reference token sequence is empty")]
    EmptyReference,
    #[error("item {stem} is missing its {form} variant")]
    MissingForm { stem: String, form: &'static str },
    #[error("judge transport failure: {0}")]
    Judge(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// One judged evaluation item.
#[derive(Debug, Clone)]
pub struct JudgeVerdict {
    pub correct: bool,
    pub rationale: String,
}

impl JudgeVerdict {
    pub fn correct() -> JudgeVerdict {
        JudgeVerdict {
            correct: true,
            rationale: String::new(),
        }
    }

    pub fn incorrect(rationale: impl Into<String>) -> JudgeVerdict {
        let rationale = rationale.into();
        assert!(!rationale.is_empty(), "incorrect verdicts carry a reason");
        JudgeVerdict {
            correct: false,
            rationale,
        }
    }
}

/// Anything that can decide whether an output fulfills an instruction.
pub trait Judge {
    fn judge(&self, instruction: &Instruction, output: &str) -> Result<JudgeVerdict, EvalError>;
}

/// Deterministic default: parse the output and compare task sets.
pub struct RuleJudge;

impl Judge for RuleJudge {
    fn judge(&self, instruction: &Instruction, output: &str) -> Result<JudgeVerdict, EvalError> {
        Ok(rule_judge(instruction, output))
    }
}

pub fn rule_judge(instruction: &Instruction, output: &str) -> JudgeVerdict {
    match parse_output(output) {
        Ok(parsed) => {
            if parsed.task_set() == instruction.intended_set() {
                JudgeVerdict::correct()
            } else {
                JudgeVerdict::incorrect(format!(
                    "task mismatch: intended {:?}, output declared {:?}",
                    instruction.intended_tasks, parsed.tasks
                ))
            }
        }
        Err(e) => JudgeVerdict::incorrect(format!("output does not parse: {e}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfrReport {
    pub n_correct: usize,
    pub n_total: usize,
    pub ifr_percent: f64,
}

/// IFR = correct / total * 100, exactly.
pub fn compute_ifr(verdicts: &[JudgeVerdict]) -> Result<IfrReport, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyVerdicts);
    }
    let n_correct = verdicts.iter().filter(|v| v.correct).count();
    Ok(IfrReport {
        n_correct,
        n_total: verdicts.len(),
        ifr_percent: 100.0 * n_correct as f64 / verdicts.len() as f64,
    })
}

/// Word error rate in percent: 100 * (S + D + I) / |ref| by minimum edit
/// distance.
pub fn compute_wer(reference: &[&str], hypothesis: &[&str]) -> Result<f64, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    Ok(100.0 * edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Character error rate: WER over character tokens.
pub fn compute_cer(reference: &str, hypothesis: &str) -> Result<f64, EvalError> {
    let r: Vec<String> = reference.chars().map(String::from).collect();
    let h: Vec<String> = hypothesis.chars().map(String::from).collect();
    let rr: Vec<&str> = r.iter().map(String::as_str).collect();
    let hh: Vec<&str> = h.iter().map(String::as_str).collect();
    compute_wer(&rr, &hh)
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Symbol-level accuracy in percent, 100 - WER floored at zero. Used for
/// the synthetic transcription score.
pub fn token_accuracy(reference: &[&str], hypothesis: &[&str]) -> Result<f64, EvalError> {
    Ok((100.0 - compute_wer(reference, hypothesis)?).max(0.0))
}

/// Fraction of samples whose predicted attribute set equals the target
/// set, in percent. Order-insensitive.
pub fn task_accuracy(pairs: &[(Vec<AttributeTag>, Vec<AttributeTag>)]) -> f64 {
    assert!(!pairs.is_empty(), "task_accuracy over zero samples");
    let matches = pairs
        .iter()
        .filter(|(target, predicted)| {
            let t: std::collections::BTreeSet<&str> =
                target.iter().map(|a| a.surface()).collect();
            let p: std::collections::BTreeSet<&str> =
                predicted.iter().map(|a| a.surface()).collect();
            t == p
        })
        .count();
    100.0 * matches as f64 / pairs.len() as f64
}

/// One inference plus its verdict, for report files.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalOutcome {
    pub id: String,
    pub instruction: String,
    pub output: String,
    pub target: String,
    pub correct: bool,
    pub rationale: String,
}

/// Run the model over a manifest and judge every output.
pub fn run_ifr_eval(
    model: &SpeechModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    judge: &dyn Judge,
    max_new: usize,
) -> Result<(IfrReport, Vec<EvalOutcome>), EvalError> {
    let mut verdicts = Vec::with_capacity(manifest.entries.len());
    let mut outcomes = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let instruction = entry.instruction_struct()?;
        let audio = entry.realize_audio(base_dir)?;
        let output = model.infer(audio.as_ref(), &instruction, max_new)?;
        let verdict = judge.judge(&instruction, &output)?;
        outcomes.push(EvalOutcome {
            id: entry.id.clone(),
            instruction: entry.instruction.clone(),
            output: output.clone(),
            target: entry.target.clone(),
            correct: verdict.correct,
            rationale: verdict.rationale.clone(),
        });
        verdicts.push(verdict);
    }
    Ok((compute_ifr(&verdicts)?, outcomes))
}

/// One row of the fixed-vs-natural comparison. For transcription tasks the
/// metric is WER (lower is better); for attribute tasks it is accuracy.
/// `delta` is always natural minus fixed.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FiNlRow {
    pub task: String,
    pub test_name: String,
    pub metric_fi: f64,
    pub metric_nl: f64,
    pub delta: f64,
}

fn is_transcription(task: TaskTag) -> bool {
    matches!(task, TaskTag::Asr | TaskTag::Srwt)
}

struct FormOutputs {
    targets: Vec<String>,
    outputs: Vec<String>,
}

fn task_metric(task: TaskTag, data: &FormOutputs) -> Result<f64, EvalError> {
    if is_transcription(task) {
        // pooled corpus-level WER over content tokens
        let mut edits = 0usize;
        let mut ref_len = 0usize;
        for (target, output) in data.targets.iter().zip(&data.outputs) {
            let ref_content = parse_output(target)
                .map(|o| o.content)
                .unwrap_or_default();
            let hyp_content = parse_output(output).map(|o| o.content).unwrap_or_default();
            let r: Vec<&str> = ref_content.split_whitespace().collect();
            let h: Vec<&str> = hyp_content.split_whitespace().collect();
            edits += edit_distance(&r, &h);
            ref_len += r.len();
        }
        if ref_len == 0 {
            return Err(EvalError::EmptyReference);
        }
        Ok(100.0 * edits as f64 / ref_len as f64)
    } else {
        let pairs: Vec<(Vec<AttributeTag>, Vec<AttributeTag>)> = data
            .targets
            .iter()
            .zip(&data.outputs)
            .map(|(target, output)| {
                let t = parse_output(target).map(|o| o.attributes).unwrap_or_default();
                let p = parse_output(output).map(|o| o.attributes).unwrap_or_default();
                (t, p)
            })
            .collect();
        Ok(task_accuracy(&pairs))
    }
}

/// Paired evaluation: every item inferred once under its fixed-tag prompt
/// and once under a natural paraphrase, grouped per task.
pub fn fi_vs_nl_report(
    model: &SpeechModel,
    manifest: &CorpusManifest,
    base_dir: &Path,
    max_new: usize,
) -> Result<Vec<FiNlRow>, EvalError> {
    // stem -> (fi entry, nl entry)
    let mut pairs: BTreeMap<String, [Option<&crate::synth::CorpusEntry>; 2]> = BTreeMap::new();
    for entry in &manifest.entries {
        let (stem, slot) = match entry.id.rsplit_once('-') {
            Some((stem, "fi")) => (stem.to_string(), 0),
            Some((stem, "nl")) => (stem.to_string(), 1),
            _ => continue,
        };
        pairs.entry(stem).or_insert([None, None])[slot] = Some(entry);
    }
    let mut per_task: BTreeMap<TaskTag, [FormOutputs; 2]> = BTreeMap::new();
    for (stem, pair) in &pairs {
        let [Some(fi), Some(nl)] = pair else {
            let missing = if pair[0].is_none() { "fixed" } else { "natural" };
            return Err(EvalError::MissingForm {
                stem: stem.clone(),
                form: missing,
            });
        };
        let task = fi.task_tags()?[0];
        let slot = per_task.entry(task).or_insert_with(|| {
            [
                FormOutputs {
                    targets: vec![],
                    outputs: vec![],
                },
                FormOutputs {
                    targets: vec![],
                    outputs: vec![],
                },
            ]
        });
        for (i, entry) in [fi, nl].into_iter().enumerate() {
            let instruction = entry.instruction_struct()?;
            let audio = entry.realize_audio(base_dir)?;
            let output = model.infer(audio.as_ref(), &instruction, max_new)?;
            slot[i].targets.push(entry.target.clone());
            slot[i].outputs.push(output);
        }
    }
    let mut rows = Vec::new();
    for (task, [fi, nl]) in &per_task {
        let metric_fi = task_metric(*task, fi)?;
        let metric_nl = task_metric(*task, nl)?;
        rows.push(FiNlRow {
            task: task.surface().to_string(),
            test_name: "synthetic-tones".to_string(),
            metric_fi,
            metric_nl,
            delta: metric_nl - metric_fi,
        });
    }
    Ok(rows)
}

/// Aligned plain-text rendering of the FI/NL table.
pub fn render_fi_nl_table(rows: &[FiNlRow]) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<8} {:<16} {:>8} {:>8} {:>8}\n",
        "Task", "Test", "FI", "NL", "Delta"
    ));
    for r in rows {
        s.push_str(&format!(
            "{:<8} {:<16} {:>8.2} {:>8.2} {:>+8.2}\n",
            r.task, r.test_name, r.metric_fi, r.metric_nl, r.delta
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instr(tasks: &[TaskTag]) -> Instruction {
        Instruction::natural("do the thing", tasks)
    }

    #[test]
    fn rule_judge_accepts_matching_task() {
        let v = rule_judge(&instr(&[TaskTag::Asr]), "<asr>hello");
        assert!(v.correct);
    }

    #[test]
    fn rule_judge_rejects_wrong_task_with_rationale() {
        let v = rule_judge(&instr(&[TaskTag::Asr]), "<sap><ADULT>");
        assert!(!v.correct);
        assert!(v.rationale.contains("task mismatch"));
    }

    #[test]
    fn rule_judge_accepts_multi_task() {
        let v = rule_judge(&instr(&[TaskTag::Asr, TaskTag::Sap]), "<asr><sap>hi<ADULT>");
        assert!(v.correct);
    }

    #[test]
    fn rule_judge_parse_failure_is_incorrect() {
        let v = rule_judge(&instr(&[TaskTag::Asr]), "no tags here");
        assert!(!v.correct);
        assert!(!v.rationale.is_empty());
    }

    #[test]
    fn ifr_basic_counts() {
        let mk = |ok: bool| {
            if ok {
                JudgeVerdict::correct()
            } else {
                JudgeVerdict::incorrect("x")
            }
        };
        let all: Vec<JudgeVerdict> = (0..10).map(|_| mk(true)).collect();
        assert_eq!(compute_ifr(&all).unwrap().ifr_percent, 100.0);
        let none: Vec<JudgeVerdict> = (0..10).map(|_| mk(false)).collect();
        assert_eq!(compute_ifr(&none).unwrap().ifr_percent, 0.0);
        let mixed: Vec<JudgeVerdict> =
            (0..500).map(|i| mk(i < 451)).collect();
        let r = compute_ifr(&mixed).unwrap();
        assert_eq!(r.n_correct, 451);
        assert_eq!(r.ifr_percent, 90.2);
    }

    #[test]
    fn ifr_empty_errors() {
        assert!(matches!(
            compute_ifr(&[]),
            Err(EvalError::EmptyVerdicts)
        ));
    }

    #[test]
    fn wer_identical_is_zero() {
        assert_eq!(compute_wer(&["a", "b"], &["a", "b"]).unwrap(), 0.0);
    }

    #[test]
    fn wer_single_substitution() {
        let w = compute_wer(&["a", "b", "c", "d"], &["a", "x", "c", "d"]).unwrap();
        assert_eq!(w, 25.0);
    }

    #[test]
    fn wer_full_deletion() {
        assert_eq!(compute_wer(&["a"], &[]).unwrap(), 100.0);
    }

    #[test]
    fn wer_empty_reference_errors() {
        assert!(matches!(
            compute_wer(&[], &["a"]),
            Err(EvalError::EmptyReference)
        ));
    }

    #[test]
    fn cer_is_wer_over_chars() {
        assert_eq!(compute_cer("abc", "axc").unwrap(), 100.0 / 3.0);
    }

    #[test]
    fn task_accuracy_set_semantics() {
        let adult = AttributeTag::from_surface("<ADULT>").unwrap();
        let old = AttributeTag::from_surface("<OLD>").unwrap();
        let pairs = vec![
            (vec![adult], vec![adult]),
            (vec![adult], vec![old]),
            (vec![adult, old], vec![old, adult]),
            (vec![], vec![]),
        ];
        assert_eq!(task_accuracy(&pairs), 75.0);
    }
}
