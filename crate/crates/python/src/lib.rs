//! Python module `convsynth`: readability scoring, question dedup and report math.

use convsynth::dedup::{self, Decision, EmbeddingVector};
use convsynth::eval::{self, EvalRecord};
use convsynth::prompts;
use convsynth::textmetrics::{self, TextStats};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Counts and score for one passage.
#[pyclass(name = "TextStats", frozen, get_all)]
struct PyTextStats {
    sentence_count: usize,
    word_count: usize,
    syllable_count: usize,
    flesch_score: f64,
}

#[pymethods]
impl PyTextStats {
    fn __repr__(&self) -> String {
        format!(
            "TextStats(flesch_score={}, sentences={}, words={}, syllables={})",
            self.flesch_score, self.sentence_count, self.word_count, self.syllable_count
        )
    }
}

impl From<TextStats> for PyTextStats {
    fn from(s: TextStats) -> Self {
        Self {
            sentence_count: s.sentence_count,
            word_count: s.word_count,
            syllable_count: s.syllable_count,
            flesch_score: s.flesch_score,
        }
    }
}

#[pyfunction]
fn flesch_reading_ease(text: &str) -> PyResult<PyTextStats> {
    textmetrics::flesch_reading_ease(text)
        .map(Into::into)
        .map_err(value_error)
}

#[pyfunction]
fn count_syllables(word: &str) -> PyResult<usize> {
    textmetrics::count_syllables(word).map_err(value_error)
}

/// True when `score` reaches `threshold`.
#[pyfunction]
fn meets_threshold(score: f64, threshold: f64) -> bool {
    textmetrics::meets_threshold(score, threshold)
}

fn vector(values: Vec<f64>) -> PyResult<EmbeddingVector> {
    EmbeddingVector::new(values).map_err(value_error)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    dedup::cosine_similarity(&vector(a)?, &vector(b)?).map_err(value_error)
}

/// Share of scores reaching `threshold`, in percent with one decimal.
#[pyfunction]
#[pyo3(signature = (scores, threshold = textmetrics::CONVERSATIONAL_THRESHOLD))]
fn pct_conversational(scores: Vec<f64>, threshold: f64) -> PyResult<f64> {
    let records: Vec<EvalRecord> = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| EvalRecord {
            sample_id: i.to_string(),
            question: String::new(),
            expected_answer: String::new(),
            generated_answer: String::new(),
            flesch_score: s,
            is_conversational: textmetrics::meets_threshold(s, threshold),
            semantic_similarity: None,
        })
        .collect();
    eval::pct_conversational(&records, threshold).map_err(value_error)
}

#[pyfunction]
fn prompt(name: &str) -> PyResult<&'static str> {
    prompts::preset(name).ok_or_else(|| PyKeyError::new_err(name.to_string()))
}

/// Accepted questions; rejects candidates whose cosine similarity to any entry is
/// above the threshold.
#[pyclass(name = "QuestionIndex")]
struct PyQuestionIndex {
    inner: dedup::QuestionIndex,
}

#[pymethods]
impl PyQuestionIndex {
    #[new]
    #[pyo3(signature = (threshold = 0.8))]
    fn new(threshold: f64) -> PyResult<Self> {
        Ok(Self {
            inner: dedup::QuestionIndex::new(threshold).map_err(value_error)?,
        })
    }

    /// Returns `(accepted, nearest_id, similarity)`; the last two are `None` when
    /// accepted.
    fn check_and_insert(
        &mut self,
        id: &str,
        embedding: Vec<f64>,
    ) -> PyResult<(bool, Option<String>, Option<f64>)> {
        match self
            .inner
            .check_and_insert(id, vector(embedding)?)
            .map_err(value_error)?
        {
            Decision::Accepted => Ok((true, None, None)),
            Decision::Rejected {
                nearest_id,
                similarity,
            } => Ok((false, Some(nearest_id), Some(similarity))),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, id: &str) -> bool {
        self.inner.contains(id)
    }
}

#[pymodule]
#[pyo3(name = "convsynth")]
fn convsynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTextStats>()?;
    m.add_class::<PyQuestionIndex>()?;
    m.add_function(wrap_pyfunction!(flesch_reading_ease, m)?)?;
    m.add_function(wrap_pyfunction!(count_syllables, m)?)?;
    m.add_function(wrap_pyfunction!(meets_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(pct_conversational, m)?)?;
    m.add_function(wrap_pyfunction!(prompt, m)?)?;
    m.add(
        "PROMPT_PRESETS",
        prompts::preset_names().collect::<Vec<_>>(),
    )?;
    Ok(())
}
