//! Run configuration: one TOML file per experiment.
//!
//! String values may reference environment variables as `${NAME}`; `$$` is a
//! literal dollar sign. API keys never appear in the file, only the names of the
//! variables that hold them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayConfig;
use crate::pipeline::PipelineConfig;
use crate::prompts;
use crate::textmetrics::{CONVERSATIONAL_THRESHOLD, MAX_FLESCH_SCORE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: environment variable {var} is not set (referenced at {at})")]
    UnsetVariable {
        path: PathBuf,
        var: String,
        at: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// JSONL corpus with a `text` field per record.
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Defaults to `index.tsv` inside the output directory.
    pub index_snapshot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub generator_profile: String,
    pub embedding_profile: String,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            generator_profile: "default".into(),
            embedding_profile: "default".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// A chat-completions endpoint reached through a profile.
    Endpoint,
    /// Answers read from a JSONL file of `{sample_id, generated_answer?, flesch_score?}`.
    Replay,
    /// Repeats each question; for plumbing checks.
    Echo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalModel {
    pub label: String,
    #[serde(default = "default_kind")]
    pub kind: ModelKind,
    #[serde(default)]
    pub profile: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    /// Name of a prompt preset.
    #[serde(default)]
    pub prompt: Option<String>,
    /// Literal system prompt; takes precedence over `prompt`.
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub training_set_size: Option<usize>,
    #[serde(default)]
    pub replay: Option<PathBuf>,
}

fn default_kind() -> ModelKind {
    ModelKind::Endpoint
}

fn default_max_tokens() -> u32 {
    256
}

impl EvalModel {
    pub fn resolved_system_prompt(&self) -> Result<String, ConfigError> {
        if let Some(p) = &self.system_prompt {
            return Ok(p.clone());
        }
        let name = self
            .prompt
            .as_deref()
            .unwrap_or(prompts::DEFAULT_EXPORT_PRESET);
        prompts::preset(name).map(str::to_string).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "model {}: unknown prompt preset {name:?} (known: {})",
                self.label,
                prompts::preset_names().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub concurrency: usize,
    /// JSONL of validation samples. Defaults to the validation split of the run in
    /// `paths.output_dir`.
    pub validation: Option<PathBuf>,
    /// Profile used to embed answers for semantic similarity; skipped when unset.
    pub embedding_profile: Option<String>,
    pub embedding_model: String,
    pub output_dir: Option<PathBuf>,
    pub models: Vec<EvalModel>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            threshold: CONVERSATIONAL_THRESHOLD,
            concurrency: 8,
            validation: None,
            embedding_profile: None,
            embedding_model: "text-embedding-3-small".into(),
            output_dir: None,
            models: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub pipeline: PipelineConfig,
    pub profiles: BTreeMap<String, GatewayConfig>,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

/// Replaces `${NAME}` with the value of environment variable `NAME` and `$$` with
/// `$`. Returns the name of the first unset variable on failure.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("$$") {
            out.push('$');
            rest = after;
        } else if let Some(body) = tail.strip_prefix("${") {
            let end = body
                .find('}')
                .ok_or_else(|| format!("unterminated ${{ in {text:?}"))?;
            let name = &body[..end];
            out.push_str(&lookup(name).ok_or_else(|| name.to_string())?);
            rest = &body[end + 1..];
        } else {
            out.push('$');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(
    value: &mut toml::Value,
    at: &str,
    lookup: &dyn Fn(&str) -> Option<String>,
) -> Result<(), (String, String)> {
    match value {
        toml::Value::String(s) => {
            *s = interpolate(s, lookup).map_err(|var| (var, at.to_string()))?;
        }
        toml::Value::Array(items) => {
            for (i, v) in items.iter_mut().enumerate() {
                interpolate_value(v, &format!("{at}[{i}]"), lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (k, v) in t.iter_mut() {
                let key = if at.is_empty() {
                    k.clone()
                } else {
                    format!("{at}.{k}")
                };
                interpolate_value(v, &key, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, path, base, &|name| std::env::var(name).ok())
    }

    /// Parses `text`, substitutes variables and resolves relative paths against
    /// `base`. `origin` only labels errors.
    pub fn from_toml(
        text: &str,
        origin: &Path,
        base: &Path,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let mut value: toml::Value = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        interpolate_value(&mut value, "", lookup).map_err(|(var, at)| {
            if var.starts_with("unterminated") {
                parse_err(var)
            } else {
                ConfigError::UnsetVariable {
                    path: origin.to_path_buf(),
                    var,
                    at,
                }
            }
        })?;
        let mut config: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        fix(&mut self.paths.corpus);
        fix(&mut self.paths.output_dir);
        fix(&mut self.paths.index_snapshot);
        fix(&mut self.eval.validation);
        fix(&mut self.eval.output_dir);
        for m in &mut self.eval.models {
            fix(&mut m.replay);
        }
    }

    pub fn profile(&self, name: &str) -> Result<&GatewayConfig, ConfigError> {
        self.profiles.get(name).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "profile {name:?} is not defined (defined: {})",
                self.profiles.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    /// Checks everything that does not depend on the command being run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pipeline
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (name, p) in &self.profiles {
            p.validate()
                .map_err(|e| ConfigError::Invalid(format!("profile {name}: {e}")))?;
        }
        let t = self.eval.threshold;
        if !(t > 0.0 && t <= MAX_FLESCH_SCORE) {
            return Err(ConfigError::Invalid(format!(
                "eval.threshold {t} outside (0, {MAX_FLESCH_SCORE:.2}]"
            )));
        }
        if self.eval.concurrency == 0 {
            return Err(ConfigError::Invalid(
                "eval.concurrency must be positive".into(),
            ));
        }
        if let Some(p) = &self.eval.embedding_profile {
            self.profile(p)?;
        }
        let mut labels = std::collections::HashSet::new();
        for m in &self.eval.models {
            if !labels.insert(m.label.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate model label {:?}",
                    m.label
                )));
            }
            m.resolved_system_prompt()?;
            match m.kind {
                ModelKind::Endpoint => {
                    let profile = m.profile.as_deref().ok_or_else(|| {
                        ConfigError::Invalid(format!("model {}: endpoint needs a profile", m.label))
                    })?;
                    self.profile(profile)?;
                    if m.model_id.as_deref().is_none_or(|id| id.trim().is_empty()) {
                        return Err(ConfigError::Invalid(format!(
                            "model {}: endpoint needs a model_id",
                            m.label
                        )));
                    }
                }
                ModelKind::Replay if m.replay.is_none() => {
                    return Err(ConfigError::Invalid(format!(
                        "model {}: replay needs a replay file",
                        m.label
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Annotated schema printed by `--help`.
pub const CONFIG_SCHEMA: &str = r#"Config file (TOML). Every key is optional unless noted; ${VAR} in any string
is replaced by the environment variable VAR, $$ is a literal $.

[paths]
corpus = "corpus.jsonl"          # JSONL, one record per section, needs "text"
output_dir = "run"               # dataset.jsonl, traces.jsonl, index.tsv, manifest.json, splits.json
index_snapshot = "run/index.tsv" # question embeddings, one "id<TAB>v1 v2 ..." per line

[pipeline]
min_section_chars = 700
accept_threshold = 75.0          # reading-ease gate, inclusive
max_attempts = 3                 # rewrite attempts per answer
dedup_threshold = 0.8            # reject questions with cosine similarity above this
target_samples = 10000
validation_size = 1000
subset_sizes = [100, 1000, 5000, 9000]
generation_model = "gpt-4o-mini"
embedding_model = "text-embedding-3-small"
concurrency_limit = 8
random_seed = 0
shuffle = true
generation_temperature = 0.7
max_output_tokens = 512

[pipeline.prompts]               # placeholders in braces are required
generation_system = "..."
generation_user = "... {section}"
json_correction = "..."
rephrase_system = "..."
rephrase_user = "... {question} ... {answer}"
simplify_further = "... {score} ..."

[profiles.NAME]                  # OpenAI-compatible endpoint
base_url = "https://api.openai.com/v1"   # required
api_key_env = "OPENAI_API_KEY"           # required; name of the variable, not the key
timeout_secs = 60
max_retries = 4                  # at most 8
backoff_base_secs = 1.0          # delay before retry n: base * 2^(n-1) * jitter

[synth]
generator_profile = "default"
embedding_profile = "default"

[eval]
threshold = 60.0                 # conversational if score >= threshold
concurrency = 8
validation = "validation.jsonl"  # default: validation split of paths.output_dir
embedding_profile = "default"    # omit to skip semantic similarity
embedding_model = "text-embedding-3-small"
output_dir = "eval"              # default: <paths.output_dir>/eval

[[eval.models]]
label = "base"                   # required, unique
kind = "endpoint"                # endpoint | replay | echo
profile = "default"              # endpoint only
model_id = "gpt-4o-mini"         # endpoint only
prompt = "verbose-base"          # preset: verbose-base | concise-finetune (default)
system_prompt = "..."            # overrides prompt
max_output_tokens = 256
training_set_size = 9000         # shown in aggregate.csv
replay = "answers.jsonl"         # replay only: {"sample_id", "generated_answer"?, "flesch_score"?}
"#;
