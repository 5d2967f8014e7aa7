use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CorpusSection, PipelineConfig, PipelineError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub sections: usize,
    pub too_short: usize,
    pub missing_text: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

fn string_field<'a>(record: &'a Value, names: &[&str]) -> Option<&'a str> {
    names
        .iter()
        .find_map(|n| record.get(*n).and_then(Value::as_str))
}

/// Reads JSONL records with a `text` field. Records without usable text, broken
/// lines and repeated ids are skipped and counted. Sections shorter than
/// `min_section_chars` are dropped. The survivors are shuffled with the configured
/// seed unless shuffling is disabled.
pub fn ingest_corpus<R: BufRead>(
    reader: R,
    config: &PipelineConfig,
) -> Result<(Vec<CorpusSection>, IngestSummary), PipelineError> {
    let mut summary = IngestSummary::default();
    let mut sections = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        summary.records += 1;
        let record: Value = match serde_json::from_str(&line) {
            Ok(v @ Value::Object(_)) => v,
            _ => {
                log::warn!("corpus line {}: not a JSON object, skipped", n + 1);
                summary.malformed += 1;
                continue;
            }
        };
        let Some(text) = record.get("text").and_then(Value::as_str) else {
            log::warn!("corpus line {}: no text field, skipped", n + 1);
            summary.missing_text += 1;
            continue;
        };
        let id = match record.get("id").or_else(|| record.get("section_id")) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(num)) => num.to_string(),
            _ => format!("line-{}", n + 1),
        };
        if !seen.insert(id.clone()) {
            log::warn!("corpus line {}: repeated id {id:?}, skipped", n + 1);
            summary.duplicate_ids += 1;
            continue;
        }
        let mut section = CorpusSection::new(id, text);
        if section.char_length < config.min_section_chars {
            summary.too_short += 1;
            continue;
        }
        section.title = string_field(&record, &["title"]).map(str::to_string);
        section.source_url = string_field(&record, &["url", "source_url"]).map(str::to_string);
        sections.push(section);
    }
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(config.random_seed);
        sections.shuffle(&mut rng);
    }
    summary.sections = sections.len();
    Ok((sections, summary))
}

pub fn ingest_file(
    path: &Path,
    config: &PipelineConfig,
) -> Result<(Vec<CorpusSection>, IngestSummary), PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    ingest_corpus(BufReader::new(file), config).map_err(|e| match e {
        PipelineError::Io { source, .. } => PipelineError::io(path, source),
        other => other,
    })
}
