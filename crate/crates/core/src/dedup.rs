//! Embedding vectors, cosine similarity and the near-duplicate question index.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default similarity above which a candidate question counts as a duplicate.
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum DedupError {
    #[error("embedding vector is empty")]
    EmptyVector,
    #[error("embedding component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-magnitude vector")]
    ZeroMagnitude,
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("snapshot line {line}: {reason}")]
    Snapshot { line: usize, reason: String },
    #[error("snapshot i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for DedupError {
    fn from(e: std::io::Error) -> Self {
        DedupError::Io(e.to_string())
    }
}

/// A dense, unnormalized embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DedupError> {
        if values.is_empty() {
            return Err(DedupError::EmptyVector);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(DedupError::NonFinite { index, value });
        }
        Ok(Self { values })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, k: f64) -> Result<Self, DedupError> {
        Self::new(self.values.iter().map(|v| v * k).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = DedupError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine of the angle between two vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, DedupError> {
    if a.dimension() != b.dimension() {
        return Err(DedupError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(DedupError::ZeroMagnitude);
    }
    Ok(cosine_with_norms(&a.values, na, &b.values, nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum Decision {
    Accepted,
    Rejected { nearest_id: String, similarity: f64 },
}

impl Decision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Decision::Accepted)
    }
}

#[derive(Debug, Clone)]
struct Entry {
    id: String,
    vector: EmbeddingVector,
    norm: f64,
}

/// Accepted questions and their embeddings. Candidates are compared against every
/// entry by exact linear scan.
#[derive(Debug, Clone)]
pub struct QuestionIndex {
    threshold: f64,
    dimension: Option<usize>,
    entries: Vec<Entry>,
    ids: HashSet<String>,
}

impl Default for QuestionIndex {
    fn default() -> Self {
        Self::new(DEFAULT_DEDUP_THRESHOLD).expect("default threshold is valid")
    }
}

impl QuestionIndex {
    /// An empty index. The dimension is fixed by the first inserted vector.
    pub fn new(threshold: f64) -> Result<Self, DedupError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(DedupError::InvalidThreshold(threshold));
        }
        Ok(Self {
            threshold,
            dimension: None,
            entries: Vec::new(),
            ids: HashSet::new(),
        })
    }

    pub fn with_dimension(threshold: f64, dimension: usize) -> Result<Self, DedupError> {
        if dimension == 0 {
            return Err(DedupError::EmptyVector);
        }
        let mut index = Self::new(threshold)?;
        index.dimension = Some(dimension);
        Ok(index)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|e| (e.id.as_str(), &e.vector))
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.iter().find(|e| e.id == id).map(|e| &e.vector)
    }

    fn check_dimension(&self, v: &EmbeddingVector) -> Result<(), DedupError> {
        match self.dimension {
            Some(d) if d != v.dimension() => Err(DedupError::DimensionMismatch {
                expected: d,
                actual: v.dimension(),
            }),
            _ => Ok(()),
        }
    }

    /// Most similar existing entry. Ties go to the earliest inserted entry.
    pub fn nearest(&self, v: &EmbeddingVector) -> Result<Option<(&str, f64)>, DedupError> {
        self.check_dimension(v)?;
        let norm = v.norm();
        if norm == 0.0 {
            return Err(DedupError::ZeroMagnitude);
        }
        let mut best: Option<(&str, f64)> = None;
        for e in &self.entries {
            let s = cosine_with_norms(&v.values, norm, &e.vector.values, e.norm);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((e.id.as_str(), s));
            }
        }
        Ok(best)
    }

    /// Decision for `v` against the current entries, without inserting.
    pub fn check(&self, v: &EmbeddingVector) -> Result<Decision, DedupError> {
        Ok(match self.nearest(v)? {
            Some((id, s)) if s > self.threshold => Decision::Rejected {
                nearest_id: id.to_string(),
                similarity: s,
            },
            _ => Decision::Accepted,
        })
    }

    /// Rejects `v` when its similarity to some entry is strictly above the threshold,
    /// otherwise inserts it under `id`.
    pub fn check_and_insert(
        &mut self,
        id: &str,
        v: EmbeddingVector,
    ) -> Result<Decision, DedupError> {
        if self.ids.contains(id) {
            return Err(DedupError::DuplicateId(id.to_string()));
        }
        let decision = self.check(&v)?;
        if decision.is_accepted() {
            self.push(id.to_string(), v);
        }
        Ok(decision)
    }

    /// Inserts without a similarity check, e.g. when restoring a snapshot.
    pub fn insert_unchecked(&mut self, id: &str, v: EmbeddingVector) -> Result<(), DedupError> {
        if self.ids.contains(id) {
            return Err(DedupError::DuplicateId(id.to_string()));
        }
        self.check_dimension(&v)?;
        if v.norm() == 0.0 {
            return Err(DedupError::ZeroMagnitude);
        }
        self.push(id.to_string(), v);
        Ok(())
    }

    fn push(&mut self, id: String, vector: EmbeddingVector) {
        self.dimension.get_or_insert(vector.dimension());
        let norm = vector.norm();
        self.ids.insert(id.clone());
        self.entries.push(Entry { id, vector, norm });
    }

    /// Keeps only entries whose id satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|e| keep(&e.id));
        self.ids = self.entries.iter().map(|e| e.id.clone()).collect();
    }

    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<(), DedupError> {
        for e in &self.entries {
            out.write_all(snapshot_line(&e.id, &e.vector).as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(reader: R, threshold: f64) -> Result<Self, DedupError> {
        let mut index = Self::new(threshold)?;
        for (id, v) in read_snapshot_entries(reader)? {
            index.insert_unchecked(&id, v)?;
        }
        Ok(index)
    }
}

/// One snapshot line: id, a tab, then space-separated components, newline-terminated.
pub fn snapshot_line(id: &str, v: &EmbeddingVector) -> String {
    let mut line = String::with_capacity(id.len() + v.dimension() * 20);
    line.push_str(id);
    line.push('\t');
    for (i, x) in v.values().iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        // `{}` prints the shortest representation that parses back to the same f64.
        let _ = write!(line, "{x}");
    }
    line.push('\n');
    line
}

pub fn read_snapshot_entries<R: BufRead>(
    reader: R,
) -> Result<Vec<(String, EmbeddingVector)>, DedupError> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DedupError::Snapshot {
            line: n + 1,
            reason,
        };
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| bad("missing tab separator".into()))?;
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        let values = rest
            .split(' ')
            .map(|t| t.parse::<f64>().map_err(|e| bad(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let v = EmbeddingVector::new(values).map_err(|e| bad(e.to_string()))?;
        out.push((id.to_string(), v));
    }
    Ok(out)
}

/// A pair of entries whose similarity exceeds the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub first: String,
    pub second: String,
    pub similarity: f64,
}

/// Brute-force scan of all entry pairs for similarities strictly above `threshold`.
pub fn pairwise_violations(
    entries: &[(String, EmbeddingVector)],
    threshold: f64,
) -> Result<Vec<Violation>, DedupError> {
    let mut out = Vec::new();
    for (i, (a_id, a)) in entries.iter().enumerate() {
        for (b_id, b) in &entries[i + 1..] {
            let s = cosine_similarity(a, b)?;
            if s > threshold {
                out.push(Violation {
                    first: a_id.clone(),
                    second: b_id.clone(),
                    similarity: s,
                });
            }
        }
    }
    Ok(out)
}
