//! Agreement between the readability engine and frozen reference values produced by
//! an independent implementation backed by a pronouncing dictionary.

use convsynth::textmetrics::{count_syllables, flesch_reading_ease, segment_sentences};
use serde_json::Value;
use std::path::PathBuf;

const SCORE_TOLERANCE: f64 = 2.0;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

fn reference(id: &str) -> Value {
    let oracle: Value = serde_json::from_str(&read("flesch_oracle.json")).unwrap();
    oracle["documents"]
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["id"] == id)
        .cloned()
        .unwrap_or_else(|| panic!("no reference for {id}"))
}

#[test]
fn dictionary_syllable_agreement() {
    let tsv = read("syllable_oracle.tsv");
    let mut total = 0usize;
    let mut misses = Vec::new();
    for line in tsv.lines().filter(|l| !l.starts_with('#')) {
        let (word, n) = line.split_once('\t').unwrap();
        let expected: usize = n.parse().unwrap();
        total += 1;
        let got = count_syllables(word).unwrap();
        if got != expected {
            misses.push(format!("{word}:{got}/{expected}"));
        }
    }
    let rate = 1.0 - misses.len() as f64 / total as f64;
    assert!(
        rate >= 0.97,
        "exact rate {rate:.3}; misses: {}",
        misses.join(" ")
    );
}

#[test]
fn corpus_scores_track_reference() {
    let corpus = read("corpus50.jsonl");
    let mut within = 0usize;
    let mut report = Vec::new();
    let mut docs = 0usize;
    for line in corpus.lines() {
        let rec: Value = serde_json::from_str(line).unwrap();
        let id = rec["id"].as_str().unwrap();
        let expected = reference(id)["score"].as_f64().unwrap();
        let stats = flesch_reading_ease(rec["text"].as_str().unwrap()).unwrap();
        let diff = stats.flesch_score - expected;
        docs += 1;
        if diff.abs() <= SCORE_TOLERANCE {
            within += 1;
        } else {
            report.push(format!("{id}: {:.2} vs {expected:.2}", stats.flesch_score));
        }
    }
    assert_eq!(docs, 50);
    assert!(
        within * 10 >= docs * 9,
        "{within}/{docs} within tolerance; outside: {}",
        report.join(", ")
    );
}

#[test]
fn fixed_paragraph_matches_reference() {
    let stats = flesch_reading_ease(&read("paragraph200.txt")).unwrap();
    let expected = reference("paragraph200.txt");
    assert!(
        (stats.flesch_score - expected["score"].as_f64().unwrap()).abs() <= SCORE_TOLERANCE,
        "{stats:?}"
    );
    assert_eq!(stats.word_count as u64, expected["words"].as_u64().unwrap());
}

#[test]
fn simplified_answer_sentence_count_matches_reference() {
    let text = read("simplified_answer.txt");
    let expected = reference("simplified_answer.txt");
    assert_eq!(
        segment_sentences(&text).len() as u64,
        expected["sentences"].as_u64().unwrap()
    );
    let stats = flesch_reading_ease(&text).unwrap();
    assert_eq!(
        stats.syllable_count as u64,
        expected["syllables"].as_u64().unwrap()
    );
    assert_eq!(stats.word_count as u64, expected["words"].as_u64().unwrap());
}
