use serde_json::Value;
use thiserror::Error;

use super::{CorpusSection, PipelineConfig};
use crate::gateway::{ChatMessage, CompletionRequest, Gateway, GatewayError};
use crate::textmetrics::{flesch_reading_ease, meets_threshold, TextError};

#[derive(Debug, Error)]
pub enum StepError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("generator output has no question and answer: {0}")]
    Unparseable(String),
    #[error("rephrased answer cannot be scored: {0}")]
    Unscorable(#[from] TextError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQa {
    pub question: String,
    pub answer: String,
    pub calls: u32,
}

/// Extracts a question and an answer from model output. The expected form is a
/// JSON object `{"question": ..., "answer": ...}`, possibly wrapped in prose or code
/// fences. Plain `Q:` / `A:` labelled lines are accepted as well. Both fields must
/// be non-empty.
pub fn parse_qa_output(text: &str) -> Option<(String, String)> {
    parse_json_pair(text).or_else(|| parse_labelled_pair(text))
}

fn parse_json_pair(text: &str) -> Option<(String, String)> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let v: Value = serde_json::from_str(&text[start..=end]).ok()?;
    let field = |name: &str| non_empty(v.get(name).and_then(Value::as_str)?);
    Some((field("question")?, field("answer")?))
}

fn non_empty(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_string())
}

fn strip_label<'a>(line: &'a str, labels: &[&str]) -> Option<&'a str> {
    let line = line.trim_start();
    labels.iter().find_map(|l| {
        let head = line.get(..l.len())?;
        head.eq_ignore_ascii_case(l).then(|| &line[l.len()..])
    })
}

fn parse_labelled_pair(text: &str) -> Option<(String, String)> {
    const Q: &[&str] = &["question:", "q:"];
    const A: &[&str] = &["answer:", "a:"];
    let lines: Vec<&str> = text.lines().collect();
    let qi = lines.iter().position(|l| strip_label(l, Q).is_some())?;
    let ai = qi
        + 1
        + lines[qi + 1..]
            .iter()
            .position(|l| strip_label(l, A).is_some())?;
    let mut question = vec![strip_label(lines[qi], Q)?];
    question.extend(&lines[qi + 1..ai]);
    let mut answer = vec![strip_label(lines[ai], A)?];
    answer.extend(&lines[ai + 1..]);
    Some((
        non_empty(&question.join("\n"))?,
        non_empty(&answer.join("\n"))?,
    ))
}

fn excerpt(text: &str) -> String {
    text.chars().take(160).collect()
}

fn request(config: &PipelineConfig, messages: Vec<ChatMessage>) -> CompletionRequest {
    CompletionRequest::new(config.generation_model.clone(), messages)
        .temperature(config.generation_temperature)
        .max_output_tokens(config.max_output_tokens)
}

fn system_then(system: &str, rest: ChatMessage) -> Vec<ChatMessage> {
    if system.trim().is_empty() {
        vec![rest]
    } else {
        vec![ChatMessage::system(system), rest]
    }
}

/// Asks for a question and answer about `section`. Output that does not parse gets
/// one correction turn before the step fails.
pub fn generate_qa(
    gateway: &Gateway,
    config: &PipelineConfig,
    section: &CorpusSection,
) -> Result<GeneratedQa, StepError> {
    let prompts = &config.prompts;
    let user = prompts.generation_user.replace("{section}", &section.text);
    let mut messages = system_then(&prompts.generation_system, ChatMessage::user(user));
    let first = gateway.complete_chat(&request(config, messages.clone()))?;
    if let Some((question, answer)) = parse_qa_output(&first.content) {
        return Ok(GeneratedQa {
            question,
            answer,
            calls: 1,
        });
    }
    messages.push(ChatMessage::assistant(first.content));
    messages.push(ChatMessage::user(prompts.json_correction.clone()));
    let second = gateway.complete_chat(&request(config, messages))?;
    match parse_qa_output(&second.content) {
        Some((question, answer)) => Ok(GeneratedQa {
            question,
            answer,
            calls: 2,
        }),
        None => Err(StepError::Unparseable(excerpt(&second.content))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Simplification {
    Accepted {
        answer: String,
        score: f64,
        attempts_used: u32,
        attempt_scores: Vec<f64>,
    },
    Discarded {
        attempt_scores: Vec<f64>,
    },
}

impl Simplification {
    pub fn attempt_scores(&self) -> &[f64] {
        match self {
            Simplification::Accepted { attempt_scores, .. }
            | Simplification::Discarded { attempt_scores } => attempt_scores,
        }
    }
}

/// Calls `rephrase` until a reply scores at least `threshold`, at most
/// `max_attempts` times. `rephrase` receives the 1-based attempt number and the
/// previous reply with its score. On failure the scores gathered so far are
/// returned with the error.
pub fn simplify_until_pass<E, F>(
    max_attempts: u32,
    threshold: f64,
    mut rephrase: F,
) -> Result<Simplification, (E, Vec<f64>)>
where
    E: From<TextError>,
    F: FnMut(u32, Option<(&str, f64)>) -> Result<String, E>,
{
    let mut scores = Vec::new();
    let mut previous: Option<(String, f64)> = None;
    for attempt in 1..=max_attempts {
        let reply = match rephrase(attempt, previous.as_ref().map(|(t, s)| (t.as_str(), *s))) {
            Ok(r) => r,
            Err(e) => return Err((e, scores)),
        };
        let score = match flesch_reading_ease(&reply) {
            Ok(stats) => stats.flesch_score,
            Err(e) => return Err((e.into(), scores)),
        };
        scores.push(score);
        if meets_threshold(score, threshold) {
            return Ok(Simplification::Accepted {
                answer: reply,
                score,
                attempts_used: attempt,
                attempt_scores: scores,
            });
        }
        previous = Some((reply, score));
    }
    Ok(Simplification::Discarded {
        attempt_scores: scores,
    })
}

/// Rewrites `answer` in a single conversation: the first turn asks for a
/// conversational rewrite, later turns ask to simplify the previous reply further.
/// Returns the result and the number of model calls made.
pub fn simplify_answer(
    gateway: &Gateway,
    config: &PipelineConfig,
    question: &str,
    answer: &str,
) -> (Result<Simplification, (StepError, Vec<f64>)>, u32) {
    let prompts = &config.prompts;
    let opening = prompts
        .rephrase_user
        .replace("{question}", question)
        .replace("{answer}", answer);
    let mut messages = system_then(&prompts.rephrase_system, ChatMessage::user(opening));
    let mut calls = 0;
    let result = simplify_until_pass(
        config.max_attempts,
        config.accept_threshold,
        |_, previous| -> Result<String, StepError> {
            if let Some((text, score)) = previous {
                messages.push(ChatMessage::assistant(text));
                let follow_up = prompts
                    .simplify_further
                    .replace("{score}", &format!("{score:.1}"));
                messages.push(ChatMessage::user(follow_up));
            }
            calls += 1;
            Ok(gateway
                .complete_chat(&request(config, messages.clone()))?
                .content)
        },
    );
    (result, calls)
}
