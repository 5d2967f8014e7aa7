use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::generate::{generate_qa, simplify_answer, GeneratedQa, Simplification, StepError};
use super::split::{split_dataset, DatasetSplits};
use super::{
    CorpusSection, GenerationTrace, IngestSummary, Outcome, PipelineConfig, PipelineError, QaSample,
};
use crate::dedup::{
    read_snapshot_entries, snapshot_line, Decision, EmbeddingVector, QuestionIndex,
};
use crate::gateway::{Gateway, GatewayError};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const INDEX_FILE: &str = "index.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS_FILE: &str = "splits.json";

const MANIFEST_VERSION: u32 = 1;

/// Model clients for the two kinds of calls the pipeline makes.
#[derive(Debug, Clone)]
pub struct Backends {
    pub generator: Gateway,
    pub embedder: Gateway,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue from the files already in `out_dir`.
    pub resume: bool,
    /// Maximum number of sections consumed by this invocation.
    pub limit: Option<usize>,
    /// Where the question index lives; defaults to `out_dir/index.tsv`.
    pub index_snapshot: Option<PathBuf>,
}

impl RunOptions {
    fn index_path(&self) -> PathBuf {
        self.index_snapshot
            .clone()
            .unwrap_or_else(|| self.out_dir.join(INDEX_FILE))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub consumed: usize,
    pub accepted: usize,
    pub discarded_readability: usize,
    pub rejected_duplicate: usize,
    pub generation_error: usize,
}

impl OutcomeCounts {
    fn record(&mut self, outcome: Outcome) {
        self.consumed += 1;
        match outcome {
            Outcome::Accepted => self.accepted += 1,
            Outcome::DiscardedReadability => self.discarded_readability += 1,
            Outcome::RejectedDuplicate => self.rejected_duplicate += 1,
            Outcome::GenerationError => self.generation_error += 1,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.accepted + self.discarded_readability + self.rejected_duplicate + self.generation_error
            == self.consumed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub target: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub validation_size: usize,
    pub subset_sizes: Vec<usize>,
}

/// Run summary written to `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config: PipelineConfig,
    pub ingest: IngestSummary,
    pub counts: OutcomeCounts,
    pub target_samples: usize,
    pub complete: bool,
    /// Set when the corpus ran out before the target was reached.
    pub shortfall: Option<Shortfall>,
    pub sample_ids: Vec<String>,
    pub splits: Option<SplitSummary>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Reads a JSONL file. A broken final line (an interrupted write) is dropped with a
/// warning; a broken line anywhere else is an error.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| PipelineError::io(path, e))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if Some(n) == last => {
                log::warn!(
                    "{}:{}: dropping truncated record ({e})",
                    path.display(),
                    n + 1
                );
            }
            Err(e) => {
                return Err(PipelineError::Format {
                    path: path.to_path_buf(),
                    line: n + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<QaSample>, PipelineError> {
    read_jsonl(path)
}

pub fn read_traces(path: &Path) -> Result<Vec<GenerationTrace>, PipelineError> {
    read_jsonl(path)
}

fn read_index_entries(path: &Path) -> Result<Vec<(String, EmbeddingVector)>, PipelineError> {
    match File::open(path) {
        Ok(f) => read_snapshot_entries(BufReader::new(f)).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            line: 0,
            reason: e.to_string(),
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(PipelineError::io(path, e)),
    }
}

struct State {
    traces: Vec<GenerationTrace>,
    samples: Vec<QaSample>,
    index: QuestionIndex,
}

/// Loads the files of an interrupted run. Records are written index first, then
/// dataset, then trace, so a section counts as consumed only once its trace exists;
/// dataset rows and index entries without a trace are dropped.
fn load_state(opts: &RunOptions, config: &PipelineConfig) -> Result<State, PipelineError> {
    let traces = read_traces(&opts.out_dir.join(TRACES_FILE))?;
    let mut seen = HashSet::new();
    if let Some(t) = traces.iter().find(|t| !seen.insert(t.section_id.as_str())) {
        return Err(PipelineError::Precondition(format!(
            "trace log lists section {} twice",
            t.section_id
        )));
    }
    let accepted: HashSet<&str> = traces
        .iter()
        .filter(|t| t.outcome == Outcome::Accepted)
        .filter_map(|t| t.sample_id.as_deref())
        .collect();
    let mut samples = read_dataset(&opts.out_dir.join(DATASET_FILE))?;
    samples.retain(|s| accepted.contains(s.sample_id.as_str()));
    let mut ids = HashSet::new();
    samples.retain(|s| ids.insert(s.sample_id.clone()));
    if samples.len() != accepted.len() {
        return Err(PipelineError::Precondition(format!(
            "{} accepted traces but {} dataset rows; the output directory is inconsistent",
            accepted.len(),
            samples.len()
        )));
    }
    let mut index = QuestionIndex::new(config.dedup_threshold)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    for (id, v) in read_index_entries(&opts.index_path())? {
        if ids.contains(&id) && !index.contains(&id) {
            index
                .insert_unchecked(&id, v)
                .map_err(|e| PipelineError::Precondition(format!("index snapshot: {e}")))?;
        }
    }
    if index.len() != samples.len() {
        return Err(PipelineError::Precondition(format!(
            "index snapshot holds {} of {} accepted questions",
            index.len(),
            samples.len()
        )));
    }
    Ok(State {
        traces,
        samples,
        index,
    })
}

struct Outputs {
    dataset: BufWriter<File>,
    traces: BufWriter<File>,
    index: BufWriter<File>,
    paths: [PathBuf; 3],
}

impl Outputs {
    /// Truncates the three logs and rewrites them from `state`.
    fn create(opts: &RunOptions, state: &State) -> Result<Self, PipelineError> {
        let paths = [
            opts.out_dir.join(DATASET_FILE),
            opts.out_dir.join(TRACES_FILE),
            opts.index_path(),
        ];
        let open = |p: &Path| -> Result<BufWriter<File>, PipelineError> {
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(p)
                .map_err(|e| PipelineError::io(p, e))?;
            Ok(BufWriter::new(f))
        };
        let mut out = Self {
            dataset: open(&paths[0])?,
            traces: open(&paths[1])?,
            index: open(&paths[2])?,
            paths,
        };
        for (id, v) in state.index.entries() {
            out.write_index(id, v)?;
        }
        for s in &state.samples {
            out.write_sample(s)?;
        }
        for t in &state.traces {
            out.write_trace(t)?;
        }
        out.flush()?;
        Ok(out)
    }

    fn write_line(w: &mut BufWriter<File>, path: &Path, line: &str) -> Result<(), PipelineError> {
        w.write_all(line.as_bytes())
            .map_err(|e| PipelineError::io(path, e))
    }

    fn write_sample(&mut self, s: &QaSample) -> Result<(), PipelineError> {
        let line = serde_json::to_string(s).expect("sample serializes") + "\n";
        Self::write_line(&mut self.dataset, &self.paths[0], &line)
    }

    fn write_trace(&mut self, t: &GenerationTrace) -> Result<(), PipelineError> {
        let line = serde_json::to_string(t).expect("trace serializes") + "\n";
        Self::write_line(&mut self.traces, &self.paths[1], &line)
    }

    fn write_index(&mut self, id: &str, v: &EmbeddingVector) -> Result<(), PipelineError> {
        Self::write_line(&mut self.index, &self.paths[2], &snapshot_line(id, v))
    }

    fn flush(&mut self) -> Result<(), PipelineError> {
        self.index
            .flush()
            .map_err(|e| PipelineError::io(&self.paths[2], e))?;
        self.dataset
            .flush()
            .map_err(|e| PipelineError::io(&self.paths[0], e))?;
        self.traces
            .flush()
            .map_err(|e| PipelineError::io(&self.paths[1], e))
    }
}

enum Work {
    Gated {
        qa: GeneratedQa,
        answer: String,
        score: f64,
        attempts_used: u32,
        scores: Vec<f64>,
        rephrase_calls: u32,
    },
    Discarded {
        qa: GeneratedQa,
        scores: Vec<f64>,
        rephrase_calls: u32,
    },
    Failed {
        generation_calls: u32,
        question: Option<String>,
        scores: Vec<f64>,
        rephrase_calls: u32,
        error: String,
    },
}

struct Processed<'a> {
    section: &'a CorpusSection,
    work: Work,
    started_at_ms: u64,
    finished_at_ms: u64,
}

/// Errors that would fail every section alike end the run instead of being traced.
fn fatal(e: &StepError) -> Option<GatewayError> {
    match e {
        StepError::Gateway(
            g @ (GatewayError::MissingApiKey { .. }
            | GatewayError::Auth { .. }
            | GatewayError::InvalidConfig(_)),
        ) => Some(g.clone()),
        _ => None,
    }
}

fn process_section<'a>(
    backends: &Backends,
    config: &PipelineConfig,
    section: &'a CorpusSection,
) -> Result<Processed<'a>, GatewayError> {
    let started_at_ms = now_ms();
    let work = match generate_qa(&backends.generator, config, section) {
        Err(e) => {
            if let Some(f) = fatal(&e) {
                return Err(f);
            }
            Work::Failed {
                generation_calls: 0,
                question: None,
                scores: Vec::new(),
                rephrase_calls: 0,
                error: e.to_string(),
            }
        }
        Ok(qa) => {
            let (result, rephrase_calls) =
                simplify_answer(&backends.generator, config, &qa.question, &qa.answer);
            match result {
                Ok(Simplification::Accepted {
                    answer,
                    score,
                    attempts_used,
                    attempt_scores,
                }) => Work::Gated {
                    qa,
                    answer,
                    score,
                    attempts_used,
                    scores: attempt_scores,
                    rephrase_calls,
                },
                Ok(Simplification::Discarded { attempt_scores }) => Work::Discarded {
                    qa,
                    scores: attempt_scores,
                    rephrase_calls,
                },
                Err((e, scores)) => {
                    if let Some(f) = fatal(&e) {
                        return Err(f);
                    }
                    Work::Failed {
                        generation_calls: qa.calls,
                        question: Some(qa.question),
                        scores,
                        rephrase_calls,
                        error: e.to_string(),
                    }
                }
            }
        }
    };
    Ok(Processed {
        section,
        work,
        started_at_ms,
        finished_at_ms: now_ms(),
    })
}

fn trace_for(p: &Processed, outcome: Outcome) -> GenerationTrace {
    let (generation_calls, rephrase_calls, scores, question) = match &p.work {
        Work::Gated {
            qa,
            scores,
            rephrase_calls,
            ..
        }
        | Work::Discarded {
            qa,
            scores,
            rephrase_calls,
        } => (
            qa.calls,
            *rephrase_calls,
            scores.clone(),
            Some(qa.question.clone()),
        ),
        Work::Failed {
            generation_calls,
            question,
            scores,
            rephrase_calls,
            ..
        } => (
            *generation_calls,
            *rephrase_calls,
            scores.clone(),
            question.clone(),
        ),
    };
    GenerationTrace {
        section_id: p.section.section_id.clone(),
        outcome,
        sample_id: None,
        attempt_scores: scores,
        generation_calls,
        rephrase_calls,
        question,
        duplicate_of: None,
        similarity: None,
        error: match &p.work {
            Work::Failed { error, .. } => Some(error.clone()),
            _ => None,
        },
        started_at_ms: p.started_at_ms,
        finished_at_ms: p.finished_at_ms,
    }
}

fn write_manifest(out_dir: &Path, manifest: &Manifest) -> Result<(), PipelineError> {
    let path = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(format!("{MANIFEST_FILE}.tmp"));
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    fs::write(&tmp, text).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))
}

fn write_splits(out_dir: &Path, splits: &DatasetSplits) -> Result<(), PipelineError> {
    let path = out_dir.join(SPLITS_FILE);
    let text = serde_json::to_string_pretty(splits).expect("splits serialize") + "\n";
    fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))
}

/// Consumes `sections` in order until `target_samples` samples are accepted or the
/// sections run out. Up to `concurrency_limit` sections are generated and
/// simplified in parallel; embedding, dedup and all file writes then happen in
/// section order, so results do not depend on thread timing.
///
/// Writes `dataset.jsonl`, `traces.jsonl`, the index snapshot, `manifest.json` and,
/// once the dataset is large enough, `splits.json` under `opts.out_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    sections: &[CorpusSection],
    ingest: &IngestSummary,
    backends: &Backends,
    opts: &RunOptions,
) -> Result<Manifest, PipelineError> {
    config.validate()?;
    fs::create_dir_all(&opts.out_dir).map_err(|e| PipelineError::io(&opts.out_dir, e))?;
    let state = if opts.resume {
        load_state(opts, config)?
    } else {
        for name in [DATASET_FILE, TRACES_FILE] {
            let p = opts.out_dir.join(name);
            if p.exists() {
                return Err(PipelineError::Precondition(format!(
                    "{} already exists; resume the run or choose another output directory",
                    p.display()
                )));
            }
        }
        State {
            traces: Vec::new(),
            samples: Vec::new(),
            index: QuestionIndex::new(config.dedup_threshold)
                .map_err(|e| PipelineError::Config(e.to_string()))?,
        }
    };
    let mut outputs = Outputs::create(opts, &state)?;
    let State {
        traces,
        mut samples,
        mut index,
    } = state;

    let mut counts = OutcomeCounts::default();
    let consumed: HashSet<&str> = traces.iter().map(|t| t.section_id.as_str()).collect();
    for t in &traces {
        counts.record(t.outcome);
    }
    let pending: Vec<&CorpusSection> = sections
        .iter()
        .filter(|s| !consumed.contains(s.section_id.as_str()))
        .collect();
    let budget = opts.limit.unwrap_or(usize::MAX).min(pending.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.concurrency_limit)
        .build()
        .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;

    let mut next = 0;
    while counts.accepted < config.target_samples && next < budget {
        let end = (next + config.concurrency_limit).min(budget);
        let window = &pending[next..end];
        let processed: Vec<Processed> = pool.install(|| {
            window
                .par_iter()
                .map(|s| process_section(backends, config, s))
                .collect::<Result<_, _>>()
        })?;

        let questions: Vec<String> = processed
            .iter()
            .filter_map(|p| match &p.work {
                Work::Gated { qa, .. } => Some(qa.question.clone()),
                _ => None,
            })
            .collect();
        let embeddings = if questions.is_empty() {
            Ok(Vec::new())
        } else {
            backends
                .embedder
                .embed_texts(&config.embedding_model, &questions)
        };
        if let Err(e @ (GatewayError::MissingApiKey { .. } | GatewayError::Auth { .. })) =
            &embeddings
        {
            return Err(PipelineError::Gateway(e.clone()));
        }
        let mut vectors = embeddings.as_ref().ok().map(|v| v.iter());

        for p in &processed {
            if counts.accepted >= config.target_samples {
                break;
            }
            next += 1;
            let trace = match &p.work {
                Work::Discarded { .. } => trace_for(p, Outcome::DiscardedReadability),
                Work::Failed { .. } => trace_for(p, Outcome::GenerationError),
                Work::Gated {
                    qa,
                    answer,
                    score,
                    attempts_used,
                    ..
                } => {
                    let sample_id = p.section.sample_id();
                    let vector = vectors.as_mut().and_then(|it| it.next()).cloned();
                    match (vector, &embeddings) {
                        (Some(v), _) => match index.check_and_insert(&sample_id, v) {
                            Ok(Decision::Accepted) => {
                                let sample = QaSample {
                                    sample_id: sample_id.clone(),
                                    question: qa.question.clone(),
                                    answer_original: qa.answer.clone(),
                                    answer_simplified: answer.clone(),
                                    flesch_score: *score,
                                    attempts_used: *attempts_used,
                                    section_id: p.section.section_id.clone(),
                                };
                                outputs.write_index(
                                    &sample_id,
                                    index.get(&sample_id).expect("just inserted"),
                                )?;
                                outputs.write_sample(&sample)?;
                                samples.push(sample);
                                GenerationTrace {
                                    sample_id: Some(sample_id),
                                    ..trace_for(p, Outcome::Accepted)
                                }
                            }
                            Ok(Decision::Rejected {
                                nearest_id,
                                similarity,
                            }) => GenerationTrace {
                                duplicate_of: Some(nearest_id),
                                similarity: Some(similarity),
                                ..trace_for(p, Outcome::RejectedDuplicate)
                            },
                            Err(e) => GenerationTrace {
                                error: Some(format!("dedup: {e}")),
                                ..trace_for(p, Outcome::GenerationError)
                            },
                        },
                        (None, Err(e)) => GenerationTrace {
                            error: Some(format!("embedding: {e}")),
                            ..trace_for(p, Outcome::GenerationError)
                        },
                        (None, Ok(_)) => unreachable!("one embedding per gated question"),
                    }
                }
            };
            counts.record(trace.outcome);
            outputs.write_trace(&trace)?;
        }
        outputs.flush()?;
        log::info!(
            "consumed {} sections, {} accepted",
            counts.consumed,
            counts.accepted
        );
    }

    let complete = counts.accepted >= config.target_samples;
    let exhausted = next >= pending.len();
    let shortfall = (!complete && exhausted).then_some(Shortfall {
        target: config.target_samples,
        produced: counts.accepted,
    });
    if let Some(s) = &shortfall {
        log::warn!(
            "corpus exhausted: produced {} of {} requested samples",
            s.produced,
            s.target
        );
    }

    let max_subset = config.subset_sizes.iter().copied().max().unwrap_or(0);
    let splits = if samples.len() >= config.validation_size + max_subset {
        let splits = split_dataset(&samples, config)?;
        write_splits(&opts.out_dir, &splits)?;
        Some(SplitSummary {
            validation_size: splits.validation.len(),
            subset_sizes: splits.subsets.keys().copied().collect(),
        })
    } else {
        let stale = opts.out_dir.join(SPLITS_FILE);
        if stale.exists() {
            fs::remove_file(&stale).map_err(|e| PipelineError::io(&stale, e))?;
        }
        None
    };

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        seed: config.random_seed,
        config: config.clone(),
        ingest: ingest.clone(),
        counts,
        target_samples: config.target_samples,
        complete,
        shortfall,
        sample_ids: samples.iter().map(|s| s.sample_id.clone()).collect(),
        splits,
    };
    write_manifest(&opts.out_dir, &manifest)?;
    Ok(manifest)
}
