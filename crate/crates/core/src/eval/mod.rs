//! Evaluation of a model's answers on the validation split: the share of
//! conversational answers and their semantic similarity to the expected answers.

mod report;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::{cosine_similarity, EmbeddingVector};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::pipeline::QaSample;
use crate::textmetrics::{
    flesch_reading_ease, meets_threshold, CONVERSATIONAL_THRESHOLD, MAX_FLESCH_SCORE,
};

pub use report::{
    aggregate_rows, emit_report, read_records_csv, read_report_json, AggregateRow, RecordRow,
    ReportFiles, AGGREGATE_CSV, RECORDS_CSV, REPORT_JSON,
};

pub const DEFAULT_EVAL_TEMPERATURE: f64 = 0.0;
const EMBED_BATCH_PAIRS: usize = 32;

/// Embeds a batch of texts, one vector per text in order.
pub type EmbedFn<'a> = dyn Fn(&[String]) -> Result<Vec<EmbeddingVector>, GatewayError> + 'a;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

/// A model endpoint plus the prompt settings it is evaluated with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelUnderTest {
    pub label: String,
    pub model_id: String,
    pub system_prompt: String,
    pub max_output_tokens: u32,
    /// Size of the fine-tuning set, reported in the aggregate table when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_set_size: Option<usize>,
}

impl ModelUnderTest {
    pub fn new(label: impl Into<String>, model_id: impl Into<String>, system_prompt: &str) -> Self {
        Self {
            label: label.into(),
            model_id: model_id.into(),
            system_prompt: system_prompt.to_string(),
            max_output_tokens: 256,
            training_set_size: None,
        }
    }
}

/// The answer a model gave to one validation question, or why it gave none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub sample_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_answer: Option<String>,
    /// A previously computed score, used when replaying results without text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flesch_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub question: String,
    pub expected_answer: String,
    pub generated_answer: String,
    pub flesch_score: f64,
    pub is_conversational: bool,
    /// Cosine similarity of the generated and expected answer embeddings.
    pub semantic_similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_label: String,
    pub model_id: String,
    pub threshold: f64,
    pub validation_size: usize,
    pub n_samples: usize,
    pub missing_count: usize,
    pub embedding_failure_count: usize,
    pub pct_conversational: f64,
    pub mean_semantic_similarity: Option<f64>,
    pub training_set_size: Option<usize>,
    /// False when some validation samples had to be left out.
    pub comparable: bool,
    pub records: Vec<EvalRecord>,
}

fn check_threshold(threshold: f64) -> Result<(), EvalError> {
    if threshold > 0.0 && threshold <= MAX_FLESCH_SCORE {
        Ok(())
    } else {
        Err(EvalError::Precondition(format!(
            "threshold {threshold} outside (0, {MAX_FLESCH_SCORE:.2}]"
        )))
    }
}

fn fatal(e: &GatewayError) -> bool {
    matches!(
        e,
        GatewayError::MissingApiKey { .. }
            | GatewayError::Auth { .. }
            | GatewayError::InvalidConfig(_)
    )
}

/// Asks `model` every validation question at temperature 0, with up to
/// `concurrency` requests in flight. Per-sample failures are kept as responses
/// without text; credential and configuration errors stop the run.
pub fn generate_responses(
    gateway: &Gateway,
    model: &ModelUnderTest,
    samples: &[QaSample],
    concurrency: usize,
) -> Result<Vec<Response>, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::Precondition("validation set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.question.trim().is_empty()) {
        return Err(EvalError::Precondition(format!(
            "sample {} has an empty question",
            s.sample_id
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .map_err(|e| EvalError::Precondition(format!("worker pool: {e}")))?;
    let ask = |s: &QaSample| -> Result<Response, GatewayError> {
        let mut messages = Vec::with_capacity(2);
        if !model.system_prompt.trim().is_empty() {
            messages.push(ChatMessage::system(model.system_prompt.clone()));
        }
        messages.push(ChatMessage::user(s.question.clone()));
        let request = CompletionRequest::new(model.model_id.clone(), messages)
            .temperature(DEFAULT_EVAL_TEMPERATURE)
            .max_output_tokens(model.max_output_tokens);
        Ok(match gateway.complete_chat(&request) {
            Ok(c) => Response {
                sample_id: s.sample_id.clone(),
                generated_answer: Some(c.content),
                flesch_score: None,
                error: None,
            },
            Err(e) if fatal(&e) => return Err(e),
            Err(e) => {
                log::warn!("{}: sample {}: {e}", model.label, s.sample_id);
                Response {
                    sample_id: s.sample_id.clone(),
                    generated_answer: None,
                    flesch_score: None,
                    error: Some(e.to_string()),
                }
            }
        })
    };
    Ok(pool.install(|| samples.par_iter().map(ask).collect::<Result<Vec<_>, _>>())?)
}

/// Matches replayed responses to `samples` by sample id.
pub fn replay_responses(samples: &[QaSample], replay: &[Response]) -> Vec<Response> {
    let by_id: HashMap<&str, &Response> =
        replay.iter().map(|r| (r.sample_id.as_str(), r)).collect();
    samples
        .iter()
        .map(|s| match by_id.get(s.sample_id.as_str()) {
            Some(r) => (*r).clone(),
            None => Response {
                sample_id: s.sample_id.clone(),
                generated_answer: None,
                flesch_score: None,
                error: Some("no replayed response".into()),
            },
        })
        .collect()
}

/// Scores each response. Samples without a usable answer are counted as missing
/// and left out. A replayed score is used as is when the response has no text.
pub fn score_responses(
    samples: &[QaSample],
    responses: &[Response],
    threshold: f64,
) -> (Vec<EvalRecord>, usize) {
    let by_id: HashMap<&str, &Response> = responses
        .iter()
        .map(|r| (r.sample_id.as_str(), r))
        .collect();
    let mut missing = 0;
    let mut records = Vec::with_capacity(samples.len());
    for s in samples {
        let Some(r) = by_id.get(s.sample_id.as_str()) else {
            missing += 1;
            continue;
        };
        let text = r.generated_answer.clone().unwrap_or_default();
        let score = match (text.trim().is_empty(), r.flesch_score) {
            (true, Some(recorded)) if recorded.is_finite() => Some(recorded),
            (true, _) => None,
            (false, _) => match flesch_reading_ease(&text) {
                Ok(stats) => Some(stats.flesch_score),
                Err(e) => {
                    log::warn!("sample {}: answer not scorable: {e}", s.sample_id);
                    None
                }
            },
        };
        let Some(score) = score else {
            missing += 1;
            continue;
        };
        records.push(EvalRecord {
            sample_id: s.sample_id.clone(),
            question: s.question.clone(),
            expected_answer: s.answer_simplified.clone(),
            generated_answer: text,
            flesch_score: score,
            is_conversational: meets_threshold(score, threshold),
            semantic_similarity: None,
        });
    }
    (records, missing)
}

/// Rounds a percentage to one decimal.
pub fn round_pct(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Percentage of records scoring at least `threshold`, to one decimal.
pub fn pct_conversational(records: &[EvalRecord], threshold: f64) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Precondition("no records to score".into()));
    }
    check_threshold(threshold)?;
    let passing = records
        .iter()
        .filter(|r| meets_threshold(r.flesch_score, threshold))
        .count();
    Ok(pct_of(passing, records.len()))
}

fn pct_of(count: usize, total: usize) -> f64 {
    // One rounding step, in tenths of a percent.
    let tenths = (count as f64 * 1000.0 / total as f64).round();
    tenths / 10.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilaritySummary {
    pub records: Vec<EvalRecord>,
    pub mean: Option<f64>,
    pub failures: usize,
}

fn pair_similarities(embed: &EmbedFn<'_>, pairs: &[&EvalRecord]) -> Result<Vec<f64>, GatewayError> {
    let texts: Vec<String> = pairs
        .iter()
        .flat_map(|r| [r.generated_answer.clone(), r.expected_answer.clone()])
        .collect();
    let vectors = embed(&texts)?;
    vectors
        .chunks(2)
        .map(|p| {
            cosine_similarity(&p[0], &p[1])
                .map_err(|e| GatewayError::Protocol(format!("similarity: {e}")))
        })
        .collect()
}

/// Embeds generated and expected answers and stores their cosine similarity in
/// each record. Batches that fail are retried one record at a time; records that
/// still fail are dropped and counted. Records without generated text (score-only
/// replays) keep no similarity and are not counted as failures.
pub fn semantic_similarity_report(
    records: Vec<EvalRecord>,
    embed: &EmbedFn<'_>,
) -> Result<SimilaritySummary, EvalError> {
    if let Some(r) = records
        .iter()
        .find(|r| !r.generated_answer.is_empty() && r.expected_answer.trim().is_empty())
    {
        return Err(EvalError::Precondition(format!(
            "sample {} has an empty expected answer",
            r.sample_id
        )));
    }
    let (with_text, without): (Vec<EvalRecord>, Vec<EvalRecord>) = records
        .into_iter()
        .partition(|r| !r.generated_answer.trim().is_empty());
    let mut sims: Vec<Option<f64>> = vec![None; with_text.len()];
    for (chunk_no, chunk) in with_text.chunks(EMBED_BATCH_PAIRS).enumerate() {
        let offset = chunk_no * EMBED_BATCH_PAIRS;
        let refs: Vec<&EvalRecord> = chunk.iter().collect();
        match pair_similarities(embed, &refs) {
            Ok(values) => {
                for (i, v) in values.into_iter().enumerate() {
                    sims[offset + i] = Some(v);
                }
            }
            Err(e) if fatal(&e) => return Err(e.into()),
            Err(e) => {
                log::warn!("embedding batch failed ({e}); retrying records one by one");
                for (i, r) in chunk.iter().enumerate() {
                    match pair_similarities(embed, &[r]) {
                        Ok(v) => sims[offset + i] = v.first().copied(),
                        Err(e) if fatal(&e) => return Err(e.into()),
                        Err(e) => log::warn!("sample {}: embedding failed: {e}", r.sample_id),
                    }
                }
            }
        }
    }
    let mut failures = 0;
    let mut kept: Vec<EvalRecord> = Vec::with_capacity(with_text.len() + without.len());
    for (mut r, s) in with_text.into_iter().zip(sims) {
        match s {
            Some(s) => {
                r.semantic_similarity = Some(s);
                kept.push(r);
            }
            None => failures += 1,
        }
    }
    let values: Vec<f64> = kept.iter().filter_map(|r| r.semantic_similarity).collect();
    let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
    kept.extend(without);
    Ok(SimilaritySummary {
        records: kept,
        mean,
        failures,
    })
}

/// Where a model's answers come from.
pub enum ResponseSource<'a> {
    Endpoint {
        gateway: &'a Gateway,
        concurrency: usize,
    },
    Replay(&'a [Response]),
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub threshold: f64,
    /// Gateway and model id for semantic similarity; skipped when `None`.
    pub embedder: Option<(&'a Gateway, &'a str)>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self {
            threshold: CONVERSATIONAL_THRESHOLD,
            embedder: None,
        }
    }
}

/// Runs one model over `samples` and computes both metrics.
pub fn evaluate(
    model: &ModelUnderTest,
    samples: &[QaSample],
    source: ResponseSource<'_>,
    opts: &EvalOptions<'_>,
) -> Result<EvalReport, EvalError> {
    check_threshold(opts.threshold)?;
    if samples.is_empty() {
        return Err(EvalError::Precondition("validation set is empty".into()));
    }
    let responses = match source {
        ResponseSource::Endpoint {
            gateway,
            concurrency,
        } => generate_responses(gateway, model, samples, concurrency)?,
        ResponseSource::Replay(replay) => replay_responses(samples, replay),
    };
    let (records, missing_count) = score_responses(samples, &responses, opts.threshold);
    let (records, failures) = match opts.embedder {
        Some((gateway, embedding_model)) => {
            let embed = |texts: &[String]| gateway.embed_texts(embedding_model, texts);
            let s = semantic_similarity_report(records, &embed)?;
            (s.records, s.failures)
        }
        None => (records, 0),
    };
    assemble_report(
        model,
        opts.threshold,
        samples.len(),
        records,
        missing_count,
        failures,
    )
}

/// Builds a report from scored records. `validation_size` must equal the records
/// plus everything left out.
pub fn assemble_report(
    model: &ModelUnderTest,
    threshold: f64,
    validation_size: usize,
    records: Vec<EvalRecord>,
    missing_count: usize,
    embedding_failure_count: usize,
) -> Result<EvalReport, EvalError> {
    if records.len() + missing_count + embedding_failure_count != validation_size {
        return Err(EvalError::Precondition(format!(
            "{} records + {missing_count} missing + {embedding_failure_count} embedding failures \
             do not add up to {validation_size} validation samples",
            records.len()
        )));
    }
    if records.is_empty() {
        return Err(EvalError::Precondition(format!(
            "{}: no usable responses out of {validation_size}",
            model.label
        )));
    }
    let pct = pct_conversational(&records, threshold)?;
    let sims: Vec<f64> = records
        .iter()
        .filter_map(|r| r.semantic_similarity)
        .collect();
    let mean = (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64);
    let comparable = missing_count == 0 && embedding_failure_count == 0;
    if !comparable {
        log::warn!(
            "{}: {missing_count} missing responses and {embedding_failure_count} embedding \
             failures; percentages are over {} of {validation_size} samples",
            model.label,
            records.len()
        );
    }
    Ok(EvalReport {
        model_label: model.label.clone(),
        model_id: model.model_id.clone(),
        threshold,
        validation_size,
        n_samples: records.len(),
        missing_count,
        embedding_failure_count,
        pct_conversational: pct,
        mean_semantic_similarity: mean,
        training_set_size: model.training_set_size,
        comparable,
        records,
    })
}

/// Reads responses saved as JSONL, one [`Response`] per line.
pub fn read_responses(path: &Path) -> Result<Vec<Response>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Format {
                path: path.to_path_buf(),
                line: n + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
