use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineConfig, PipelineError, QaSample};
use crate::gateway::ChatMessage;

/// Sample ids of the validation split and of each nested training subset, keyed by
/// subset size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub seed: u64,
    pub validation: Vec<String>,
    pub subsets: BTreeMap<usize, Vec<String>>,
}

impl DatasetSplits {
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Looks up `ids` in `samples`, keeping the order of `ids`.
    pub fn resolve<'a>(
        ids: &[String],
        samples: &'a [QaSample],
    ) -> Result<Vec<&'a QaSample>, PipelineError> {
        let by_id: HashMap<&str, &QaSample> =
            samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    PipelineError::Precondition(format!("split references unknown sample {id}"))
                })
            })
            .collect()
    }
}

/// Draws the validation split and nested training subsets from one seeded shuffle.
/// Validation takes the first `validation_size` shuffled samples; every training
/// subset is a prefix of the remaining order, so smaller subsets sit inside larger
/// ones.
pub fn split_dataset(
    samples: &[QaSample],
    config: &PipelineConfig,
) -> Result<DatasetSplits, PipelineError> {
    let max_subset = config.subset_sizes.iter().copied().max().unwrap_or(0);
    let needed = config.validation_size + max_subset;
    if samples.len() < needed {
        return Err(PipelineError::Precondition(format!(
            "{} samples cannot cover validation_size {} + largest subset {max_subset} = {needed}",
            samples.len(),
            config.validation_size
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.random_seed);
    // Keep this stream apart from the corpus shuffle that uses the same seed.
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let ids: Vec<String> = order
        .iter()
        .map(|&i| samples[i].sample_id.clone())
        .collect();
    let (validation, training) = ids.split_at(config.validation_size);
    let subsets = config
        .subset_sizes
        .iter()
        .map(|&n| (n, training[..n].to_vec()))
        .collect();
    Ok(DatasetSplits {
        seed: config.random_seed,
        validation: validation.to_vec(),
        subsets,
    })
}

#[derive(Serialize)]
struct ChatRecord {
    messages: [ChatMessage; 3],
}

/// Writes one chat record per sample (system prompt, question, simplified answer)
/// as JSONL. Returns the number of records.
pub fn export_finetune_file<'a>(
    split: impl IntoIterator<Item = &'a QaSample>,
    system_prompt: &str,
    path: &Path,
) -> Result<usize, PipelineError> {
    let split: Vec<&QaSample> = split.into_iter().collect();
    if split.is_empty() {
        return Err(PipelineError::Precondition(
            "refusing to export an empty split".into(),
        ));
    }
    let file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in &split {
        let record = ChatRecord {
            messages: [
                ChatMessage::system(system_prompt),
                ChatMessage::user(s.question.clone()),
                ChatMessage::assistant(s.answer_simplified.clone()),
            ],
        };
        serde_json::to_writer(&mut out, &record).expect("record serializes");
        out.write_all(b"\n")
            .map_err(|e| PipelineError::io(path, e))?;
    }
    out.flush().map_err(|e| PipelineError::io(path, e))?;
    Ok(split.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn samples(n: usize) -> Vec<QaSample> {
        (0..n)
            .map(|i| QaSample {
                sample_id: format!("qa-{i}"),
                question: format!("Question {i}?"),
                answer_original: "Original.".into(),
                answer_simplified: "Simple.".into(),
                flesch_score: 90.0,
                attempts_used: 1,
                section_id: format!("s{i}"),
            })
            .collect()
    }

    #[test]
    fn small_config_splits() {
        let config = PipelineConfig {
            target_samples: 20,
            validation_size: 5,
            subset_sizes: vec![2, 10],
            random_seed: 3,
            ..Default::default()
        };
        let s = split_dataset(&samples(20), &config).unwrap();
        assert_eq!(s.validation.len(), 5);
        assert_eq!(s.subsets[&2], s.subsets[&10][..2]);
        let v: HashSet<_> = s.validation.iter().collect();
        assert!(s.subsets[&10].iter().all(|id| !v.contains(id)));
    }

    #[test]
    fn too_few_samples() {
        let err = split_dataset(&samples(5_000), &PipelineConfig::default()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("validation_size 1000") && msg.contains("9000"),
            "{msg}"
        );
    }

    #[test]
    fn empty_export_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ft.jsonl");
        assert!(export_finetune_file(&[], "sys", &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn export_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ft.jsonl");
        let data = samples(3);
        assert_eq!(export_finetune_file(&data, "sys", &path).unwrap(), 3);
        let text = std::fs::read_to_string(&path).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(
            first,
            serde_json::json!({"messages": [
                {"role": "system", "content": "sys"},
                {"role": "user", "content": "Question 0?"},
                {"role": "assistant", "content": "Simple."}
            ]})
        );
    }
}
