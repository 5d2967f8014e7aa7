//! Synthetic conversational QA dataset generation.
//!
//! Sections are read from a JSONL corpus, short ones dropped and the rest shuffled
//! with a fixed seed. For each section a model writes a question and an answer,
//! then rewrites the answer until it reaches the reading-ease gate or runs out of
//! attempts. Questions that pass the gate are embedded and checked against the
//! questions accepted so far; near duplicates are rejected.

mod generate;
mod ingest;
mod run;
mod split;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::textmetrics::MAX_FLESCH_SCORE;

pub use generate::{
    generate_qa, parse_qa_output, simplify_answer, simplify_until_pass, GeneratedQa,
    Simplification, StepError,
};
pub use ingest::{ingest_corpus, ingest_file, IngestSummary};
pub use run::{
    read_dataset, read_traces, run_pipeline, Backends, Manifest, OutcomeCounts, RunOptions,
    Shortfall, DATASET_FILE, INDEX_FILE, MANIFEST_FILE, SPLITS_FILE, TRACES_FILE,
};
pub use split::{export_finetune_file, split_dataset, DatasetSplits};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl PipelineError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSection {
    pub section_id: String,
    pub text: String,
    pub char_length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

impl CorpusSection {
    pub fn new(section_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            section_id: section_id.into(),
            char_length: text.chars().count(),
            text,
            title: None,
            source_url: None,
        }
    }

    pub fn sample_id(&self) -> String {
        format!("qa-{}", self.section_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub sample_id: String,
    pub question: String,
    pub answer_original: String,
    pub answer_simplified: String,
    pub flesch_score: f64,
    pub attempts_used: u32,
    pub section_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    DiscardedReadability,
    RejectedDuplicate,
    GenerationError,
}

/// What happened to one consumed section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub section_id: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    /// Reading-ease score of each rephrase attempt, in order.
    pub attempt_scores: Vec<f64>,
    pub generation_calls: u32,
    pub rephrase_calls: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

/// Prompt templates. Placeholders: `{section}` in `generation_user`, `{question}`
/// and `{answer}` in `rephrase_user`, `{score}` in `simplify_further`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub generation_system: String,
    pub generation_user: String,
    pub json_correction: String,
    pub rephrase_system: String,
    pub rephrase_user: String,
    pub simplify_further: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            generation_system: "You write quiz material from encyclopedia articles.".into(),
            generation_user: "Read the text below. Write one interesting question that the \
                text answers, and the correct answer, using only facts from the text. Reply \
                with a JSON object that has exactly two string fields, \"question\" and \
                \"answer\", and nothing else.\n\n{section}"
                .into(),
            json_correction: "That reply was not valid. Send only a JSON object with the \
                string fields \"question\" and \"answer\"."
                .into(),
            rephrase_system: "You are a helpful assistant.".into(),
            rephrase_user: "Rewrite the answer below so it sounds like something a person \
                would say out loud in a relaxed chat. Keep every fact and keep the meaning \
                unchanged. Reply with the rewritten answer only.\n\nQuestion: \
                {question}\n\n{answer}"
                .into(),
            simplify_further: "That is still hard to read (reading-ease score {score}). Make \
                it simpler, with shorter sentences and everyday words, and keep the meaning."
                .into(),
        }
    }
}

impl PromptTemplates {
    fn validate(&self) -> Result<(), PipelineError> {
        let need = |name: &str, template: &str, placeholder: &str| {
            if template.contains(placeholder) {
                Ok(())
            } else {
                Err(PipelineError::Config(format!(
                    "prompt {name} lacks the {placeholder} placeholder"
                )))
            }
        };
        need("generation_user", &self.generation_user, "{section}")?;
        need("rephrase_user", &self.rephrase_user, "{question}")?;
        need("rephrase_user", &self.rephrase_user, "{answer}")?;
        if self.json_correction.trim().is_empty() || self.simplify_further.trim().is_empty() {
            return Err(PipelineError::Config(
                "follow-up prompts must not be empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub min_section_chars: usize,
    pub accept_threshold: f64,
    pub max_attempts: u32,
    pub dedup_threshold: f64,
    pub target_samples: usize,
    pub validation_size: usize,
    pub subset_sizes: Vec<usize>,
    pub generation_model: String,
    pub embedding_model: String,
    pub concurrency_limit: usize,
    pub random_seed: u64,
    pub shuffle: bool,
    pub generation_temperature: f64,
    pub max_output_tokens: u32,
    pub prompts: PromptTemplates,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_section_chars: 700,
            accept_threshold: 75.0,
            max_attempts: 3,
            dedup_threshold: 0.8,
            target_samples: 10_000,
            validation_size: 1_000,
            subset_sizes: vec![100, 1_000, 5_000, 9_000],
            generation_model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-3-small".into(),
            concurrency_limit: 8,
            random_seed: 0,
            shuffle: true,
            generation_temperature: 0.7,
            max_output_tokens: 512,
            prompts: PromptTemplates::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.accept_threshold > 0.0 && self.accept_threshold <= MAX_FLESCH_SCORE) {
            return bad(format!(
                "accept_threshold {} outside (0, {MAX_FLESCH_SCORE:.2}]",
                self.accept_threshold
            ));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return bad(format!(
                "dedup_threshold {} outside (0, 1]",
                self.dedup_threshold
            ));
        }
        if self.target_samples == 0 {
            return bad("target_samples must be positive".into());
        }
        if self.validation_size >= self.target_samples {
            return bad(format!(
                "validation_size {} must be below target_samples {}",
                self.validation_size, self.target_samples
            ));
        }
        let room = self.target_samples - self.validation_size;
        if let Some(s) = self.subset_sizes.iter().find(|&&s| s == 0 || s > room) {
            return bad(format!(
                "subset size {s} must be in 1..={room} (target_samples - validation_size)"
            ));
        }
        if self.concurrency_limit == 0 {
            return bad("concurrency_limit must be positive".into());
        }
        if self.generation_model.trim().is_empty() || self.embedding_model.trim().is_empty() {
            return bad("generation_model and embedding_model must be set".into());
        }
        if !(self.generation_temperature.is_finite() && self.generation_temperature >= 0.0) {
            return bad("generation_temperature must be >= 0".into());
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive".into());
        }
        self.prompts.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.min_section_chars, 700);
        assert_eq!(c.accept_threshold, 75.0);
        assert_eq!(c.max_attempts, 3);
        assert_eq!(c.dedup_threshold, 0.8);
        assert_eq!(c.target_samples, 10_000);
        assert_eq!(c.validation_size, 1_000);
        assert_eq!(c.subset_sizes, vec![100, 1_000, 5_000, 9_000]);
        assert_eq!(c.concurrency_limit, 8);
    }

    #[test]
    fn size_constraints() {
        let mut c = PipelineConfig {
            validation_size: 10_000,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.validation_size = 1_000;
        c.subset_sizes = vec![9_001];
        assert!(c.validate().is_err());
        c.subset_sizes = vec![9_000];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn templates_need_placeholders() {
        let mut c = PipelineConfig::default();
        c.prompts.generation_user = "no placeholder".into();
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn char_length_counts_characters() {
        let s = CorpusSection::new("s", "naïve café");
        assert_eq!(s.char_length, 10);
        assert_eq!(s.sample_id(), "qa-s");
    }
}
