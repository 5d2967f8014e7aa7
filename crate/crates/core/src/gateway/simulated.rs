//! Deterministic offline stand-in for a language model and an embedding model.
//!
//! Replies are pure functions of the request, so dry runs are reproducible:
//!
//! * Embeddings are signed feature hashes of the lowercase word tokens.
//! * A chat request whose first user message mentions both `"question"` and
//!   `"answer"` is a question-generation request. The reply is a JSON object built
//!   from the last paragraph of that message. A small share of passages gets prose
//!   instead of JSON, either every time or only before the first correction turn.
//! * A chat request whose first user message has several paragraphs is a rephrase
//!   request for its last paragraph. Each assistant turn already in the
//!   conversation counts as one earlier attempt. Depending on a hash of the passage
//!   the reply becomes plain on the first, second or third attempt, or never.
//! * Anything else is answered with a short plain restatement of the last user
//!   message.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{HttpReply, Transport, TransportError};
use crate::textmetrics::{count_syllables, flesch_reading_ease, segment_sentences, words};

pub const SIMULATED_EMBEDDING_DIM: usize = 256;

fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn digest64(text: &str) -> u64 {
    let d = digest(text);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Signed feature hashing of lowercase alphanumeric tokens into `dim` buckets.
/// Texts sharing most of their words get high cosine similarity.
pub fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim.max(1)];
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    for token in &tokens {
        let d = digest(token);
        let bucket =
            (u64::from_le_bytes(d[..8].try_into().expect("8 bytes")) % v.len() as u64) as usize;
        v[bucket] += if d[8] & 1 == 0 { 1.0 } else { -1.0 };
    }
    if v.iter().all(|x| *x == 0.0) {
        let bucket = (digest64(text) % v.len() as u64) as usize;
        v[bucket] = 1.0;
    }
    v
}

pub(crate) fn embeddings_reply(body: &Value, embed: impl Fn(&str) -> Vec<f64>) -> HttpReply {
    let inputs: Vec<&str> = match &body["input"] {
        Value::String(s) => vec![s.as_str()],
        Value::Array(items) => items.iter().filter_map(Value::as_str).collect(),
        _ => Vec::new(),
    };
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"object": "embedding", "index": i, "embedding": embed(t)}))
        .collect();
    let tokens: usize = inputs.iter().map(|t| t.split_whitespace().count()).sum();
    let reply = json!({
        "object": "list",
        "data": data,
        "model": body["model"],
        "usage": {"prompt_tokens": tokens, "total_tokens": tokens}
    });
    HttpReply {
        status: 200,
        body: reply.to_string(),
    }
}

fn chat_reply(content: &str, prompt_words: usize) -> HttpReply {
    let completion = content.split_whitespace().count();
    let reply = json!({
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": prompt_words,
            "completion_tokens": completion,
            "total_tokens": prompt_words + completion
        }
    });
    HttpReply {
        status: 200,
        body: reply.to_string(),
    }
}

fn last_paragraph(text: &str) -> &str {
    text.rsplit("\n\n")
        .map(str::trim)
        .find(|p| !p.is_empty())
        .unwrap_or("")
}

fn capitalise(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn score(text: &str) -> f64 {
    flesch_reading_ease(text).map_or(f64::NEG_INFINITY, |s| s.flesch_score)
}

/// Short sentences of short words drawn from `text`.
fn plain_version(text: &str) -> String {
    const CANNED: &str = "It is a long story. Here is the gist of it. People still talk about it.";
    for max_syllables in [2, 1] {
        let picked: Vec<String> = words(text)
            .filter(|w| w.chars().all(char::is_alphabetic) && w.len() <= 8)
            .filter(|w| count_syllables(w).is_ok_and(|n| n <= max_syllables))
            .map(str::to_lowercase)
            .take(24)
            .collect();
        if picked.len() < 4 {
            continue;
        }
        let mut out = String::from("Well, here is the short version.");
        for chunk in picked.chunks(6) {
            out.push(' ');
            out.push_str(&capitalise(&chunk.join(" ")));
            out.push('.');
        }
        if score(&out) >= 80.0 {
            return out;
        }
    }
    CANNED.to_string()
}

/// A wordier version of `text` that scores below 70.
fn dense_version(text: &str) -> String {
    const TAIL: &str = "Consequently, contemporaneous documentation demonstrates considerable \
        historiographical complexity regarding institutional administration.";
    let mut out = format!("In summary, {text}");
    for _ in 0..8 {
        if score(&out) < 70.0 {
            break;
        }
        out.push(' ');
        out.push_str(TAIL);
    }
    out
}

fn subject(text: &str) -> String {
    words(text).take(4).collect::<Vec<_>>().join(" ")
}

fn generation_reply(passage: &str, corrections: usize) -> String {
    let bucket = digest64(passage) % 20;
    if bucket == 0 || (bucket == 1 && corrections == 0) {
        return format!("Here is an interesting fact: {}", subject(passage));
    }
    let answer: Vec<&str> = segment_sentences(passage).into_iter().take(2).collect();
    json!({
        "question": format!("What should I know about {}?", subject(passage)),
        "answer": answer.join(" "),
    })
    .to_string()
}

fn rephrase_reply(passage: &str, attempt: usize) -> String {
    let passes_at = match digest64(passage) % 10 {
        0 | 1 => usize::MAX,
        2 => 3,
        3 => 2,
        _ => 1,
    };
    if attempt >= passes_at {
        plain_version(passage)
    } else {
        dense_version(passage)
    }
}

/// Offline backend for dry runs. Counts calls so callers can assert that a run
/// stayed in-process.
#[derive(Debug, Default)]
pub struct SimulatedTransport {
    calls: AtomicUsize,
}

impl SimulatedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for SimulatedTransport {
    fn post_json(
        &self,
        url: &str,
        _bearer: Option<&str>,
        body: &Value,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if url.ends_with("/embeddings") {
            return Ok(embeddings_reply(body, |t| {
                hashed_embedding(t, SIMULATED_EMBEDDING_DIM)
            }));
        }
        if !url.ends_with("/chat/completions") {
            return Ok(HttpReply {
                status: 404,
                body: json!({"error": {"message": format!("no route {url}")}}).to_string(),
            });
        }
        let messages = body["messages"].as_array().cloned().unwrap_or_default();
        let content_of = |m: &Value| m["content"].as_str().unwrap_or_default().to_string();
        let users: Vec<String> = messages
            .iter()
            .filter(|m| m["role"] == "user")
            .map(content_of)
            .collect();
        let assistant_turns = messages.iter().filter(|m| m["role"] == "assistant").count();
        let prompt_words = messages
            .iter()
            .map(|m| content_of(m).split_whitespace().count())
            .sum();
        let Some(first) = users.first() else {
            return Ok(HttpReply {
                status: 400,
                body: json!({"error": {"message": "no user message"}}).to_string(),
            });
        };
        let content = if first.contains("\"question\"") && first.contains("\"answer\"") {
            generation_reply(last_paragraph(first), assistant_turns)
        } else if first.trim().contains("\n\n") {
            rephrase_reply(last_paragraph(first), assistant_turns + 1)
        } else {
            plain_version(users.last().expect("non-empty"))
        };
        Ok(chat_reply(&content, prompt_words))
    }

    fn needs_credentials(&self) -> bool {
        false
    }
}
