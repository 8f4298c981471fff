//! Property tests: grammar and tokenizer round trips, framing shape law,
//! WER against a brute-force table, IFR as a fold.

mod common;

use proptest::prelude::*;

use ospg_core::eval::{compute_ifr, edit_distance, JudgeVerdict};
use ospg_core::frontend::{frame_and_window, AudioSignal, FrontendConfig};
use ospg_core::grammar::{
    parse_output, render_target, AttributeTag, StructuredOutput, TaskTag,
};
use ospg_core::vocab::Vocabulary;

fn arb_tasks() -> impl Strategy<Value = Vec<TaskTag>> {
    proptest::sample::subsequence(TaskTag::ALL.to_vec(), 1..=4).prop_shuffle()
}

fn arb_content() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[a-z0-9 .,|?-]{0,24}").unwrap()
}

fn arb_output() -> impl Strategy<Value = StructuredOutput> {
    (arb_tasks(), arb_content()).prop_flat_map(|(tasks, content)| {
        let labels: Vec<AttributeTag> = tasks
            .iter()
            .flat_map(|t| t.attribute_labels().iter().map(|&l| AttributeTag::from_surface(l).unwrap()))
            .collect();
        let n = labels.len();
        (
            Just(tasks),
            Just(content),
            proptest::sample::subsequence(labels, 0..=n).prop_shuffle(),
        )
            .prop_map(|(tasks, content, attributes)| StructuredOutput {
                tasks,
                content,
                attributes,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn grammar_render_parse_roundtrip(o in arb_output()) {
        let text = render_target(&o).unwrap();
        let back = parse_output(&text).unwrap();
        prop_assert_eq!(back, o);
    }

    #[test]
    fn tokenizer_roundtrip(s in "[a-z0-9 .,|?-]{0,40}") {
        let v = Vocabulary::build();
        let ids = v.tokenize(&s).unwrap();
        prop_assert_eq!(v.detokenize(&ids).unwrap(), s);
    }

    #[test]
    fn tokenizer_roundtrip_with_tags(o in arb_output()) {
        let v = Vocabulary::build();
        let text = render_target(&o).unwrap();
        let ids = v.tokenize(&text).unwrap();
        prop_assert_eq!(v.detokenize(&ids).unwrap(), text);
        // tags stay atomic: id count == tag count + content chars
        let expected = o.tasks.len() + o.attributes.len() + o.content.chars().count();
        prop_assert_eq!(ids.len(), expected);
    }

    #[test]
    fn task_mask_partitions(o in arb_output()) {
        let v = Vocabulary::build();
        let ids = v.tokenize(&render_target(&o).unwrap()).unwrap();
        let mask = v.task_identifier_positions(&ids);
        prop_assert_eq!(mask.len(), ids.len());
        prop_assert_eq!(mask.iter().filter(|&&m| m).count(), o.tasks.len());
    }

    #[test]
    fn framing_shape_law(
        extra in 0usize..4000,
        frame_len in 2usize..500,
        hop in 1usize..300,
    ) {
        let len = frame_len + extra;
        let cfg = FrontendConfig {
            frame_len,
            frame_hop: hop,
            fft_size: 512,
            ..FrontendConfig::default()
        };
        prop_assume!(frame_len <= cfg.fft_size);
        let signal = AudioSignal::new(vec![0.0; len], cfg.sample_rate).unwrap();
        let frames = frame_and_window(&signal, &cfg).unwrap();
        prop_assert_eq!(frames.len(), (len - frame_len) / hop + 1);
    }

    #[test]
    fn wer_matches_brute_force(
        a in proptest::collection::vec(0u8..5, 0..10),
        b in proptest::collection::vec(0u8..5, 0..10),
    ) {
        prop_assert_eq!(edit_distance(&a, &b), common::brute_force_edit_distance(&a, &b));
    }

    #[test]
    fn ifr_equals_fold(bits in proptest::collection::vec(any::<bool>(), 1..50)) {
        let verdicts: Vec<JudgeVerdict> = bits
            .iter()
            .map(|&ok| if ok { JudgeVerdict::correct() } else { JudgeVerdict::incorrect("r") })
            .collect();
        let report = compute_ifr(&verdicts).unwrap();
        let hand = bits.iter().filter(|&&b| b).count();
        prop_assert_eq!(report.n_correct, hand);
        prop_assert_eq!(report.ifr_percent, 100.0 * hand as f64 / bits.len() as f64);
    }
}
