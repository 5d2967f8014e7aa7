use std::fs;

use convsynth::eval::{
    assemble_report, emit_report, evaluate, pct_conversational, read_report_json, EvalOptions,
    EvalRecord, ModelUnderTest, Response, ResponseSource,
};
use convsynth::pipeline::QaSample;
use convsynth::textmetrics::flesch_reading_ease;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct ExampleResponse {
    label: String,
    reported_score: f64,
    oracle_sentences: usize,
    oracle_words: usize,
    oracle_syllables: usize,
    response: String,
}

fn examples() -> Vec<ExampleResponse> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/example_responses.jsonl"
    );
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn sample(i: usize) -> QaSample {
    QaSample {
        sample_id: format!("qa-{i:04}"),
        question: "What is the advantage of a build pipeline?".into(),
        answer_original: "It automates things.".into(),
        answer_simplified: "It does the boring work for you.".into(),
        flesch_score: 90.0,
        attempts_used: 1,
        section_id: format!("s{i}"),
    }
}

fn record(score: f64) -> EvalRecord {
    EvalRecord {
        sample_id: "x".into(),
        question: "q".into(),
        expected_answer: "e".into(),
        generated_answer: "g".into(),
        flesch_score: score,
        is_conversational: score >= 60.0,
        semantic_similarity: None,
    }
}

#[test]
fn example_responses_track_reference_counts() {
    for ex in examples() {
        let ours = flesch_reading_ease(&ex.response).unwrap();
        assert_eq!(
            ours.flesch_score >= 60.0,
            ex.reported_score >= 60.0,
            "{}",
            ex.label
        );
        assert_eq!(ours.sentence_count, ex.oracle_sentences, "{}", ex.label);
        assert_eq!(ours.word_count, ex.oracle_words, "{}", ex.label);
        // The first response is cut off mid-list in its source and is full of
        // initialisms and compounds; the syllable check covers the others.
        if ex.label != "llama-base" {
            assert!(
                ours.syllable_count.abs_diff(ex.oracle_syllables) <= 1,
                "{}: {} vs {}",
                ex.label,
                ours.syllable_count,
                ex.oracle_syllables
            );
        }
    }
}

#[test]
fn four_example_responses_half_conversational() {
    let chosen = [
        "gpt-4o-mini-base",
        "llama-finetuned",
        "gpt-4o-mini-finetuned",
        "gpt-4.1-mini-base",
    ];
    let all = examples();
    let samples: Vec<QaSample> = (0..4).map(sample).collect();
    let replay: Vec<Response> = chosen
        .iter()
        .enumerate()
        .map(|(i, label)| Response {
            sample_id: samples[i].sample_id.clone(),
            generated_answer: Some(
                all.iter()
                    .find(|e| e.label == *label)
                    .unwrap()
                    .response
                    .clone(),
            ),
            flesch_score: None,
            error: None,
        })
        .collect();
    let report = evaluate(
        &ModelUnderTest::new("examples", "replay", ""),
        &samples,
        ResponseSource::Replay(&replay),
        &EvalOptions::default(),
    )
    .unwrap();
    assert_eq!(report.pct_conversational, 50.0);
    // Stored scores reproduce exactly when recomputed from the stored text.
    for r in &report.records {
        assert_eq!(
            flesch_reading_ease(&r.generated_answer)
                .unwrap()
                .flesch_score,
            r.flesch_score
        );
    }
}

#[test]
fn aggregate_rows_follow_model_order() {
    let dir = tempfile::tempdir().unwrap();
    let reports: Vec<_> = ["zeta", "alpha"]
        .iter()
        .map(|label| {
            let model = ModelUnderTest::new(*label, "m", "");
            assemble_report(&model, 60.0, 2, vec![record(70.0), record(20.0)], 0, 0).unwrap()
        })
        .collect();
    let files = emit_report(&reports, dir.path()).unwrap();
    let agg = fs::read_to_string(files.aggregate_csv).unwrap();
    let models: Vec<&str> = agg
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(models, vec!["zeta", "alpha"]);
    assert_eq!(read_report_json(&files.report_json).unwrap(), reports);
}

proptest! {
    #[test]
    fn percentages_decompose(
        a in prop::collection::vec(0.0..121.0f64, 1..200),
        b in prop::collection::vec(0.0..121.0f64, 1..200),
    ) {
        let ra: Vec<_> = a.iter().map(|&s| record(s)).collect();
        let rb: Vec<_> = b.iter().map(|&s| record(s)).collect();
        let pa = pct_conversational(&ra, 60.0).unwrap();
        let pb = pct_conversational(&rb, 60.0).unwrap();
        let all: Vec<_> = ra.iter().chain(&rb).cloned().collect();
        let combined = pct_conversational(&all, 60.0).unwrap();
        let weighted = (pa * a.len() as f64 + pb * b.len() as f64) / (a.len() + b.len()) as f64;
        // Each side carries at most one rounding to tenths.
        prop_assert!((combined - weighted).abs() <= 0.1 + 1e-9);
        prop_assert!((0.0..=100.0).contains(&combined));
    }

    #[test]
    fn exclusions_are_accounted_for(outcomes in prop::collection::vec(0..3u8, 1..60)) {
        let samples: Vec<_> = (0..outcomes.len()).map(sample).collect();
        let replay: Vec<Response> = samples
            .iter()
            .zip(&outcomes)
            .filter(|(_, o)| **o != 0)
            .map(|(s, o)| Response {
                sample_id: s.sample_id.clone(),
                generated_answer: (*o == 1).then(|| "Sure. It is fine.".to_string()),
                flesch_score: None,
                error: None,
            })
            .collect();
        match evaluate(
            &ModelUnderTest::new("m", "m", ""),
            &samples,
            ResponseSource::Replay(&replay),
            &EvalOptions::default(),
        ) {
            Ok(r) => {
                prop_assert_eq!(r.n_samples + r.missing_count + r.embedding_failure_count, samples.len());
                prop_assert_eq!(r.comparable, r.missing_count == 0);
            }
            Err(_) => prop_assert!(outcomes.iter().all(|&o| o != 1)),
        }
    }
}
