use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};

pub const REPORT_JSON: &str = "report.json";
pub const RECORDS_CSV: &str = "records.csv";
pub const AGGREGATE_CSV: &str = "aggregate.csv";

/// One row of `aggregate.csv`. Percentages carry one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub pct_conversational: String,
    pub mean_semantic_similarity: String,
    pub training_set_size: Option<usize>,
    pub n_samples: usize,
    pub missing_count: usize,
    pub embedding_failure_count: usize,
    pub threshold: f64,
    pub comparable: bool,
}

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub model: String,
    pub sample_id: String,
    pub flesch_score: f64,
    pub is_conversational: bool,
    pub semantic_similarity: Option<f64>,
    pub question: String,
    pub expected_answer: String,
    pub generated_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub report_json: PathBuf,
    pub records_csv: PathBuf,
    pub aggregate_csv: PathBuf,
}

pub fn aggregate_rows(reports: &[EvalReport]) -> Vec<AggregateRow> {
    reports
        .iter()
        .map(|r| AggregateRow {
            model: r.model_label.clone(),
            pct_conversational: format!("{:.1}", r.pct_conversational),
            mean_semantic_similarity: r
                .mean_semantic_similarity
                .map(|m| format!("{m:.4}"))
                .unwrap_or_default(),
            training_set_size: r.training_set_size,
            n_samples: r.n_samples,
            missing_count: r.missing_count,
            embedding_failure_count: r.embedding_failure_count,
            threshold: r.threshold,
            comparable: r.comparable,
        })
        .collect()
}

fn write_csv<T: Serialize>(
    path: &Path,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), EvalError> {
    let csv_err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes `report.json`, `records.csv` and `aggregate.csv` into `dir`, one
/// aggregate row per report in the given order.
pub fn emit_report(reports: &[EvalReport], dir: &Path) -> Result<ReportFiles, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Precondition("no reports to write".into()));
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = ReportFiles {
        report_json: dir.join(REPORT_JSON),
        records_csv: dir.join(RECORDS_CSV),
        aggregate_csv: dir.join(AGGREGATE_CSV),
    };
    let json = serde_json::to_string_pretty(reports).expect("report serializes") + "\n";
    fs::write(&files.report_json, json).map_err(io(&files.report_json))?;
    write_csv(
        &files.records_csv,
        reports.iter().flat_map(|rep| {
            rep.records.iter().map(|r| RecordRow {
                model: rep.model_label.clone(),
                sample_id: r.sample_id.clone(),
                flesch_score: r.flesch_score,
                is_conversational: r.is_conversational,
                semantic_similarity: r.semantic_similarity,
                question: r.question.clone(),
                expected_answer: r.expected_answer.clone(),
                generated_answer: r.generated_answer.clone(),
            })
        }),
    )?;
    write_csv(&files.aggregate_csv, aggregate_rows(reports))?;
    Ok(files)
}

pub fn read_report_json(path: &Path) -> Result<Vec<EvalReport>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EvalError::Format {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RecordRow>, EvalError> {
    let csv_err = |source| EvalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    csv::Reader::from_path(path)
        .map_err(csv_err)?
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{assemble_report, EvalRecord, ModelUnderTest};

    fn report(label: &str, scores: &[f64]) -> EvalReport {
        let records: Vec<EvalRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| EvalRecord {
                sample_id: format!("qa-{i}"),
                question: "Why, \"really\"?".into(),
                expected_answer: "Because.".into(),
                generated_answer: "Just because,\nok.".into(),
                flesch_score: s,
                is_conversational: s >= 60.0,
                semantic_similarity: Some(0.1 * i as f64),
            })
            .collect();
        let model = ModelUnderTest {
            training_set_size: Some(9000),
            ..ModelUnderTest::new(label, "m", "")
        };
        assemble_report(&model, 60.0, records.len(), records, 0, 0).unwrap()
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![report("a", &[61.5, 12.25]), report("b", &[99.0])];
        let files = emit_report(&reports, dir.path()).unwrap();
        assert_eq!(read_report_json(&files.report_json).unwrap(), reports);
        let rows = read_records_csv(&files.records_csv).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].generated_answer, "Just because,\nok.");
        assert_eq!(rows[1].flesch_score, 12.25);
        let agg = fs::read_to_string(&files.aggregate_csv).unwrap();
        let lines: Vec<&str> = agg.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("model,pct_conversational,mean_semantic_similarity"));
        assert!(
            lines[1].starts_with("a,50.0,0.0500,9000,2,"),
            "{}",
            lines[1]
        );
        assert!(lines[2].starts_with("b,100.0,"), "{}", lines[2]);
    }
}
