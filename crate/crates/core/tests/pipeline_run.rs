mod common;

use std::collections::HashSet;
use std::fs;
use std::sync::Arc;

use common::*;
use convsynth::dedup::{pairwise_violations, read_snapshot_entries};
use convsynth::gateway::{
    http_requests_issued, GatewayError, HttpTransport, ScriptedReply, ScriptedTransport, Transport,
};
use convsynth::pipeline::{
    read_dataset, read_traces, run_pipeline, Backends, CorpusSection, GenerationTrace,
    IngestSummary, Manifest, Outcome, PipelineConfig, PipelineError, RunOptions, DATASET_FILE,
    INDEX_FILE, MANIFEST_FILE, SPLITS_FILE, TRACES_FILE,
};
use convsynth::textmetrics::flesch_reading_ease;
use serde_json::json;

fn opts(dir: &std::path::Path) -> RunOptions {
    RunOptions {
        out_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

fn without_times(mut traces: Vec<GenerationTrace>) -> Vec<GenerationTrace> {
    for t in &mut traces {
        t.started_at_ms = 0;
        t.finished_at_ms = 0;
    }
    traces
}

fn section(id: &str, text: &str) -> CorpusSection {
    CorpusSection::new(id, text)
}

fn summary(n: usize) -> IngestSummary {
    IngestSummary {
        records: n,
        sections: n,
        ..Default::default()
    }
}

#[test]
fn corpus_run_accounts_for_every_section() {
    let config = small_config(10_000);
    let (sections, ingest) = corpus50(&config);
    assert_eq!(sections.len(), 50);
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(
        &config,
        &sections,
        &ingest,
        &simulated_backends(),
        &opts(dir.path()),
    )
    .unwrap();
    let c = m.counts;
    assert_eq!(c.consumed, 50);
    assert_eq!(
        c.accepted + c.discarded_readability + c.rejected_duplicate + c.generation_error,
        50
    );
    // The simulated model exercises every outcome on this corpus.
    assert!(c.accepted > 0 && c.discarded_readability > 0, "{c:?}");
    assert!(c.rejected_duplicate > 0 && c.generation_error > 0, "{c:?}");
    assert!(!m.complete);
    assert_eq!(m.shortfall.unwrap().produced, c.accepted);

    let samples = read_dataset(&dir.path().join(DATASET_FILE)).unwrap();
    assert_eq!(samples.len(), c.accepted);
    for s in &samples {
        let rescored = flesch_reading_ease(&s.answer_simplified)
            .unwrap()
            .flesch_score;
        assert_eq!(rescored, s.flesch_score);
        assert!(rescored >= config.accept_threshold);
        assert!((1..=config.max_attempts).contains(&s.attempts_used));
    }

    let traces = read_traces(&dir.path().join(TRACES_FILE)).unwrap();
    assert_eq!(traces.len(), 50);
    for t in &traces {
        assert!(t.rephrase_calls <= config.max_attempts);
        if t.outcome == Outcome::DiscardedReadability {
            assert_eq!(t.attempt_scores.len(), config.max_attempts as usize);
            assert!(t
                .attempt_scores
                .iter()
                .all(|&s| s < config.accept_threshold));
        }
        if t.outcome == Outcome::RejectedDuplicate {
            assert!(t.similarity.unwrap() > config.dedup_threshold);
        }
    }
}

#[test]
fn persisted_questions_pass_dedup() {
    let config = small_config(10_000);
    let (sections, ingest) = corpus50(&config);
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(
        &config,
        &sections,
        &ingest,
        &simulated_backends(),
        &opts(dir.path()),
    )
    .unwrap();
    let file = fs::File::open(dir.path().join(INDEX_FILE)).unwrap();
    let entries = read_snapshot_entries(std::io::BufReader::new(file)).unwrap();
    let samples = read_dataset(&dir.path().join(DATASET_FILE)).unwrap();
    let ids: Vec<&str> = entries.iter().map(|(id, _)| id.as_str()).collect();
    let expected: Vec<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    assert_eq!(ids, expected);
    assert!(pairwise_violations(&entries, config.dedup_threshold)
        .unwrap()
        .is_empty());
}

#[test]
fn repeated_runs_are_identical() {
    let config = small_config(10_000);
    let (sections, ingest) = corpus50(&config);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let m = run_pipeline(
            &config,
            &sections,
            &ingest,
            &simulated_backends(),
            &opts(dir.path()),
        )
        .unwrap();
        (
            m,
            fs::read_to_string(dir.path().join(DATASET_FILE)).unwrap(),
            fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap(),
            without_times(read_traces(&dir.path().join(TRACES_FILE)).unwrap()),
        )
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!(first, run());
}

/// Generator that always produces the same easy answer; embeddings come from
/// `vector_for(question)`.
fn fixed_backends(vector_for: fn(&str) -> Vec<f64>) -> Backends {
    let t: Arc<dyn Transport> = Arc::new(FnTransport(Box::new(move |path, body| {
        if path == "embeddings" {
            let inputs = embedding_inputs(body);
            return embeddings_body(inputs.iter().map(|q| vector_for(q)).collect());
        }
        if is_generation_request(body) {
            let text = first_user(body);
            let topic = text
                .rsplit("\n\n")
                .next()
                .unwrap()
                .split(' ')
                .next()
                .unwrap();
            return chat_body(
                &json!({"question": format!("What about {topic}?"), "answer": "It is long."})
                    .to_string(),
            );
        }
        chat_body("It is fun. We like it a lot.")
    })));
    Backends {
        generator: gateway(t.clone()),
        embedder: gateway(t),
    }
}

fn long_text(topic: &str) -> String {
    format!("{topic} {}", "filler words here. ".repeat(40))
}

#[test]
fn near_duplicate_question_is_rejected() {
    fn vector_for(q: &str) -> Vec<f64> {
        match q {
            "What about Alpha?" => vec![1.0, 0.0, 0.0],
            "What about Beta?" => vec![0.9, (1.0f64 - 0.81).sqrt(), 0.0],
            _ => vec![0.0, 0.0, 1.0],
        }
    }
    let config = PipelineConfig {
        shuffle: false,
        ..small_config(10)
    };
    let sections = vec![
        section("a", &long_text("Alpha")),
        section("b", &long_text("Beta")),
        section("c", &long_text("Gamma")),
    ];
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(
        &config,
        &sections,
        &summary(3),
        &fixed_backends(vector_for),
        &opts(dir.path()),
    )
    .unwrap();
    assert_eq!(m.sample_ids, vec!["qa-a", "qa-c"]);
    let traces = read_traces(&dir.path().join(TRACES_FILE)).unwrap();
    let b = &traces[1];
    assert_eq!(b.outcome, Outcome::RejectedDuplicate);
    assert_eq!(b.duplicate_of.as_deref(), Some("qa-a"));
    assert!((b.similarity.unwrap() - 0.9).abs() < 1e-12);
}

#[test]
fn exhausted_corpus_reports_shortfall() {
    fn vector_for(q: &str) -> Vec<f64> {
        let n: usize = q
            .trim_start_matches("What about T")
            .trim_end_matches('?')
            .parse()
            .unwrap();
        let mut v = vec![0.0; 8];
        v[n] = 1.0;
        v
    }
    let config = PipelineConfig {
        target_samples: 10,
        validation_size: 2,
        subset_sizes: vec![1, 8],
        ..Default::default()
    };
    let sections: Vec<_> = (0..8)
        .map(|i| section(&format!("s{i}"), &long_text(&format!("T{i}"))))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(
        &config,
        &sections,
        &summary(8),
        &fixed_backends(vector_for),
        &opts(dir.path()),
    )
    .unwrap();
    assert_eq!(m.counts.accepted, 8);
    let s = m.shortfall.expect("shortfall");
    assert_eq!((s.target, s.produced), (10, 8));
    assert!(!m.complete);
    assert!(m.splits.is_none());
    assert!(!dir.path().join(SPLITS_FILE).exists());
}

#[test]
fn target_stops_consumption() {
    fn vector_for(q: &str) -> Vec<f64> {
        let n: usize = q
            .trim_start_matches("What about T")
            .trim_end_matches('?')
            .parse()
            .unwrap();
        let mut v = vec![0.0; 32];
        v[n] = 1.0;
        v
    }
    let config = PipelineConfig {
        target_samples: 5,
        validation_size: 1,
        subset_sizes: vec![4],
        concurrency_limit: 3,
        ..Default::default()
    };
    let sections: Vec<_> = (0..20)
        .map(|i| section(&format!("s{i}"), &long_text(&format!("T{i}"))))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(
        &config,
        &sections,
        &summary(20),
        &fixed_backends(vector_for),
        &opts(dir.path()),
    )
    .unwrap();
    assert!(m.complete && m.shortfall.is_none());
    assert_eq!(m.counts.accepted, 5);
    assert_eq!(m.counts.consumed, 5);
    let splits = m.splits.unwrap();
    assert_eq!(splits.validation_size, 1);
    assert!(dir.path().join(SPLITS_FILE).exists());
    assert_eq!(
        Manifest::read(&dir.path().join(MANIFEST_FILE))
            .unwrap()
            .sample_ids,
        m.sample_ids
    );
}

#[test]
fn unparseable_generator_output_is_traced() {
    let t: Arc<dyn Transport> = Arc::new(FnTransport(Box::new(|path, body| {
        if path == "embeddings" {
            let n = embedding_inputs(body).len();
            return embeddings_body((0..n).map(|i| vec![i as f64 + 1.0, 1.0]).collect());
        }
        if is_generation_request(body) {
            let text = first_user(body);
            if text.contains("Labelled") {
                return chat_body("Q: Where is it?\nA: It is in town.");
            }
            return chat_body("I found this passage interesting.");
        }
        chat_body("It is fun. We like it.")
    })));
    let backends = Backends {
        generator: gateway(t.clone()),
        embedder: gateway(t),
    };
    let config = PipelineConfig {
        shuffle: false,
        ..small_config(10)
    };
    let sections = vec![
        section("labelled", &long_text("Labelled")),
        section("prose", &long_text("Prose")),
    ];
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(
        &config,
        &sections,
        &summary(2),
        &backends,
        &opts(dir.path()),
    )
    .unwrap();
    assert_eq!(m.counts.accepted, 1);
    assert_eq!(m.counts.generation_error, 1);
    let samples = read_dataset(&dir.path().join(DATASET_FILE)).unwrap();
    assert_eq!(samples[0].question, "Where is it?");
    assert_eq!(samples[0].answer_original, "It is in town.");
    let traces = read_traces(&dir.path().join(TRACES_FILE)).unwrap();
    assert_eq!(traces[1].outcome, Outcome::GenerationError);
    assert!(traces[1]
        .error
        .as_deref()
        .unwrap()
        .contains("no question and answer"));
}

#[test]
fn resume_continues_without_duplicates() {
    let config = small_config(10_000);
    let (sections, ingest) = corpus50(&config);
    let full_dir = tempfile::tempdir().unwrap();
    let full = run_pipeline(
        &config,
        &sections,
        &ingest,
        &simulated_backends(),
        &opts(full_dir.path()),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(
        &config,
        &sections,
        &ingest,
        &simulated_backends(),
        &RunOptions {
            limit: Some(17),
            ..opts(dir.path())
        },
    )
    .unwrap();
    assert_eq!(first.counts.consumed, 17);
    assert!(first.shortfall.is_none());

    // An interrupted write leaves a partial line behind.
    let traces_path = dir.path().join(TRACES_FILE);
    let mut text = fs::read_to_string(&traces_path).unwrap();
    text.push_str("{\"section_id\": \"sec-0");
    fs::write(&traces_path, text).unwrap();

    let resumed = run_pipeline(
        &config,
        &sections,
        &ingest,
        &simulated_backends(),
        &RunOptions {
            resume: true,
            ..opts(dir.path())
        },
    )
    .unwrap();
    assert_eq!(resumed.counts, full.counts);
    assert_eq!(resumed.sample_ids, full.sample_ids);
    let ids: HashSet<_> = resumed.sample_ids.iter().collect();
    assert_eq!(ids.len(), resumed.sample_ids.len());
    assert_eq!(
        without_times(read_traces(&traces_path).unwrap()),
        without_times(read_traces(&full_dir.path().join(TRACES_FILE)).unwrap())
    );
}

#[test]
fn fresh_run_refuses_existing_output() {
    let config = small_config(10_000);
    let (sections, ingest) = corpus50(&config);
    let dir = tempfile::tempdir().unwrap();
    let o = RunOptions {
        limit: Some(2),
        ..opts(dir.path())
    };
    run_pipeline(&config, &sections, &ingest, &simulated_backends(), &o).unwrap();
    let err = run_pipeline(&config, &sections, &ingest, &simulated_backends(), &o).unwrap_err();
    assert!(matches!(err, PipelineError::Precondition(_)), "{err}");
}

fn single_section_run(transport: Arc<dyn Transport>) -> PipelineError {
    let backends = Backends {
        generator: gateway(transport.clone()),
        embedder: gateway(transport),
    };
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(
        &small_config(10),
        &[section("a", &long_text("Alpha"))],
        &summary(1),
        &backends,
        &opts(dir.path()),
    )
    .unwrap_err()
}

#[test]
fn missing_credentials_abort_the_run() {
    let before = http_requests_issued();
    match single_section_run(Arc::new(HttpTransport::new())) {
        PipelineError::Gateway(GatewayError::MissingApiKey { var }) => {
            assert_eq!(var, "CONVSYNTH_TEST_UNSET_KEY")
        }
        other => panic!("{other}"),
    }
    assert_eq!(http_requests_issued(), before);
}

#[test]
fn rejected_credentials_abort_the_run() {
    let t = Arc::new(ScriptedTransport::new(vec![ScriptedReply::status(
        401, "bad key",
    )]));
    let err = single_section_run(t);
    assert!(
        matches!(
            err,
            PipelineError::Gateway(GatewayError::Auth { status: 401, .. })
        ),
        "{err}"
    );
}
