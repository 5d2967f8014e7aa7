//! In-process transports for tests.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::simulated::{embeddings_reply, hashed_embedding, SIMULATED_EMBEDDING_DIM};
use super::{HttpReply, Sleeper, Transport, TransportError};

/// One entry of a transcript file. A string `body` is sent verbatim, any other JSON
/// value is serialized. `delay` is the simulated latency in seconds; a delay longer
/// than the request timeout produces a timeout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub status: u16,
    #[serde(default)]
    pub body: Value,
    #[serde(default)]
    pub delay: f64,
}

impl ScriptedReply {
    pub fn ok(body: Value) -> Self {
        Self {
            status: 200,
            body,
            delay: 0.0,
        }
    }

    pub fn status(status: u16, message: &str) -> Self {
        Self {
            status,
            body: json!({ "error": { "message": message } }),
            delay: 0.0,
        }
    }

    pub fn raw(status: u16, body: &str) -> Self {
        Self {
            status,
            body: Value::String(body.to_string()),
            delay: 0.0,
        }
    }

    pub fn delay(mut self, secs: f64) -> Self {
        self.delay = secs;
        self
    }

    fn body_text(&self) -> String {
        match &self.body {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub url: String,
    pub body: Value,
}

/// Replays a fixed list of replies in order and records every request.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    replies: Mutex<VecDeque<ScriptedReply>>,
    requests: Mutex<Vec<RecordedRequest>>,
}

impl ScriptedTransport {
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        Self {
            replies: Mutex::new(replies.into()),
            requests: Mutex::default(),
        }
    }

    /// Loads a transcript: a JSON array of `{status, body, delay}` objects.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let replies: Vec<ScriptedReply> = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(replies))
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl Transport for ScriptedTransport {
    fn post_json(
        &self,
        url: &str,
        _bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        self.requests.lock().unwrap().push(RecordedRequest {
            url: url.to_string(),
            body: body.clone(),
        });
        let reply = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| TransportError::Connection("transcript exhausted".into()))?;
        if reply.delay > timeout.as_secs_f64() {
            return Err(TransportError::Timeout);
        }
        Ok(HttpReply {
            status: reply.status,
            body: reply.body_text(),
        })
    }

    fn needs_credentials(&self) -> bool {
        false
    }
}

/// Answers chat requests with the last user message and embeds texts with
/// [`hashed_embedding`].
#[derive(Debug, Default)]
pub struct EchoTransport {
    calls: AtomicUsize,
}

impl EchoTransport {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for EchoTransport {
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
        let content = body["messages"]
            .as_array()
            .and_then(|ms| ms.iter().rev().find(|m| m["role"] == "user"))
            .and_then(|m| m["content"].as_str())
            .unwrap_or_default();
        let reply = json!({
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
            "usage": {"prompt_tokens": 0, "completion_tokens": 0, "total_tokens": 0}
        });
        Ok(HttpReply {
            status: 200,
            body: reply.to_string(),
        })
    }

    fn needs_credentials(&self) -> bool {
        false
    }
}

/// Records requested sleeps instead of sleeping.
#[derive(Debug, Default)]
pub struct RecordingSleeper {
    sleeps: Mutex<Vec<Duration>>,
}

impl RecordingSleeper {
    pub fn sleeps(&self) -> Vec<Duration> {
        self.sleeps.lock().unwrap().clone()
    }

    pub fn total(&self) -> Duration {
        self.sleeps().iter().sum()
    }
}

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.sleeps.lock().unwrap().push(d);
    }
}
