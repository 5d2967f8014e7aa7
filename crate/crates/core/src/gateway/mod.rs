//! Client for OpenAI-compatible chat-completion and embedding endpoints.
//!
//! Requests go through a [`Transport`], so the same retry and parsing logic runs
//! against the real HTTP client and against the scripted, echo and simulated
//! backends used for tests and dry runs.

mod mock;
mod simulated;
mod transport;

use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dedup::EmbeddingVector;

pub use mock::{
    EchoTransport, RecordedRequest, RecordingSleeper, ScriptedReply, ScriptedTransport,
};
pub use simulated::{hashed_embedding, SimulatedTransport, SIMULATED_EMBEDDING_DIM};
pub use transport::{http_requests_issued, HttpReply, HttpTransport, Transport, TransportError};

/// Hard ceiling on configured retries.
pub const MAX_RETRIES_LIMIT: u32 = 8;

const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error("API key environment variable {var} is not set")]
    MissingApiKey { var: String },
    #[error("authentication rejected (HTTP {status}): {excerpt}")]
    Auth { status: u16, excerpt: String },
    #[error("HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("rate limited after {attempts} attempt(s): {excerpt}")]
    RateLimited { attempts: u32, excerpt: String },
    #[error("server error HTTP {status} after {attempts} attempt(s): {excerpt}")]
    Server {
        status: u16,
        attempts: u32,
        excerpt: String,
    },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("connection failed after {attempts} attempt(s): {message}")]
    Connection { attempts: u32, message: String },
    #[error("malformed response ({reason}): {excerpt}")]
    MalformedResponse { reason: String, excerpt: String },
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl GatewayError {
    /// True for failures of the remote service or the connection to it.
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            GatewayError::Auth { .. }
                | GatewayError::Http { .. }
                | GatewayError::RateLimited { .. }
                | GatewayError::Server { .. }
                | GatewayError::Timeout { .. }
                | GatewayError::Connection { .. }
        )
    }
}

fn excerpt(body: &str) -> String {
    let mut out: String = body.chars().take(EXCERPT_CHARS).collect();
    if body.chars().count() > EXCERPT_CHARS {
        out.push('…');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Body of a chat-completion call, serialized with the wire field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(rename = "max_tokens")]
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.model_id.trim().is_empty() {
            return invalid("model id is empty");
        }
        if self.messages.is_empty() {
            return invalid("messages list is empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return invalid("temperature must be a finite value >= 0");
        }
        if self.max_output_tokens == 0 {
            return invalid("max_output_tokens must be positive");
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role == Role::System && i > 0 {
                return invalid("a system message may only appear first");
            }
            if m.role != Role::Assistant && m.content.trim().is_empty() {
                return Err(GatewayError::InvalidRequest(format!(
                    "message {i} ({:?}) has empty content",
                    m.role
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatCompletion {
    pub content: String,
    pub usage: Usage,
    /// Transport calls made, including the successful one.
    pub attempts: u32,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    4
}

fn default_backoff() -> f64 {
    1.0
}

/// Endpoint and retry settings. The API key itself never appears here, only the
/// name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    #[serde(rename = "api_key_env")]
    pub api_key_env_name: String,
    #[serde(rename = "timeout_secs", default = "default_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(rename = "backoff_base_secs", default = "default_backoff")]
    pub backoff_base: f64,
}

impl GatewayConfig {
    pub fn new(base_url: impl Into<String>, api_key_env_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env_name: api_key_env_name.into(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            backoff_base: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(m));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad(format!(
                "base_url {:?} is not an http(s) URL",
                self.base_url
            ));
        }
        if self.api_key_env_name.trim().is_empty() {
            return bad("api_key_env is empty".into());
        }
        if !(self.request_timeout.is_finite() && self.request_timeout > 0.0) {
            return bad(format!(
                "timeout_secs {} must be positive",
                self.request_timeout
            ));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return bad(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            ));
        }
        if !(self.backoff_base.is_finite() && self.backoff_base >= 0.0) {
            return bad(format!(
                "backoff_base_secs {} must be >= 0",
                self.backoff_base
            ));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout)
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{path}", self.base_url.trim_end_matches('/'))
    }

    /// Upper bound on the total backoff sleep across all retries.
    pub fn max_total_backoff(&self) -> Duration {
        let factor = (1u64 << self.max_retries) - 1;
        Duration::from_secs_f64(self.backoff_base * factor as f64)
    }

    /// Sleep before retry number `retry` (1-based), `jitter` in [0.5, 1].
    pub fn backoff_delay(&self, retry: u32, jitter: f64) -> Duration {
        let exp = 2f64.powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.backoff_base * exp * jitter.clamp(0.5, 1.0))
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

enum Attempt {
    Done(String),
    Retry(GatewayError),
    Fail(GatewayError),
}

/// Stateless client; cheap to clone and safe to share between worker threads.
#[derive(Clone)]
pub struct Gateway {
    config: GatewayConfig,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(config: GatewayConfig, transport: Arc<dyn Transport>) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(Self {
            config,
            transport,
            sleeper: Arc::new(ThreadSleeper),
        })
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleeper>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    fn api_key(&self) -> Result<Option<String>, GatewayError> {
        match std::env::var(&self.config.api_key_env_name) {
            Ok(k) if !k.is_empty() => Ok(Some(k)),
            _ if self.transport.needs_credentials() => Err(GatewayError::MissingApiKey {
                var: self.config.api_key_env_name.clone(),
            }),
            _ => Ok(None),
        }
    }

    fn attempt(&self, url: &str, key: Option<&str>, body: &Value, attempts: u32) -> Attempt {
        match self
            .transport
            .post_json(url, key, body, self.config.timeout())
        {
            Ok(reply) => match reply.status {
                200..=299 => Attempt::Done(reply.body),
                401 | 403 => Attempt::Fail(GatewayError::Auth {
                    status: reply.status,
                    excerpt: excerpt(&reply.body),
                }),
                429 => Attempt::Retry(GatewayError::RateLimited {
                    attempts,
                    excerpt: excerpt(&reply.body),
                }),
                500..=599 => Attempt::Retry(GatewayError::Server {
                    status: reply.status,
                    attempts,
                    excerpt: excerpt(&reply.body),
                }),
                status => Attempt::Fail(GatewayError::Http {
                    status,
                    excerpt: excerpt(&reply.body),
                }),
            },
            Err(TransportError::Timeout) => Attempt::Retry(GatewayError::Timeout { attempts }),
            Err(TransportError::Connection(message)) => {
                Attempt::Retry(GatewayError::Connection { attempts, message })
            }
        }
    }

    /// Posts `body`, retrying rate limits, server errors, timeouts and connection
    /// failures with exponential backoff. Returns the response body and the number
    /// of attempts made.
    fn post_with_retry(&self, path: &str, body: &Value) -> Result<(String, u32), GatewayError> {
        let key = self.api_key()?;
        let url = self.config.endpoint(path);
        let total = self.config.max_retries + 1;
        let mut attempt = 1;
        loop {
            match self.attempt(&url, key.as_deref(), body, attempt) {
                Attempt::Done(text) => return Ok((text, attempt)),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= total => return Err(e),
                Attempt::Retry(e) => {
                    let delay = self
                        .config
                        .backoff_delay(attempt, rand::thread_rng().gen_range(0.5..=1.0));
                    log::warn!("{path}: {e}; retrying in {delay:?}");
                    self.sleeper.sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    /// Sends a chat request and returns the first choice's content verbatim.
    pub fn complete_chat(
        &self,
        request: &CompletionRequest,
    ) -> Result<ChatCompletion, GatewayError> {
        request.validate()?;
        let body = serde_json::to_value(request)
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let (text, attempts) = self.post_with_retry("chat/completions", &body)?;
        let (content, usage) = parse_chat_response(&text)?;
        Ok(ChatCompletion {
            content,
            usage,
            attempts,
        })
    }

    /// Embeds `texts`, returning one vector per input in input order.
    pub fn embed_texts(
        &self,
        model_id: &str,
        texts: &[String],
    ) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model id is empty".into()));
        }
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!("text {i} is empty")));
        }
        let body = json!({ "model": model_id, "input": texts });
        let (text, _) = self.post_with_retry("embeddings", &body)?;
        parse_embedding_response(&text, texts.len())
    }
}

fn malformed(reason: impl Into<String>, body: &str) -> GatewayError {
    GatewayError::MalformedResponse {
        reason: reason.into(),
        excerpt: excerpt(body),
    }
}

pub(crate) fn parse_chat_response(body: &str) -> Result<(String, Usage), GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(e.to_string(), body))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed("no choices[0].message.content", body))?;
    let usage = match v.get("usage") {
        None | Some(Value::Null) => Usage::default(),
        Some(u) => {
            serde_json::from_value(u.clone()).map_err(|e| malformed(format!("usage: {e}"), body))?
        }
    };
    Ok((content.to_string(), usage))
}

#[derive(Deserialize)]
struct EmbeddingItem {
    index: usize,
    embedding: Vec<f64>,
}

pub(crate) fn parse_embedding_response(
    body: &str,
    expected: usize,
) -> Result<Vec<EmbeddingVector>, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(e.to_string(), body))?;
    let data = v
        .get("data")
        .cloned()
        .ok_or_else(|| malformed("no data array", body))?;
    let mut items: Vec<EmbeddingItem> =
        serde_json::from_value(data).map_err(|e| malformed(format!("data: {e}"), body))?;
    if items.len() != expected {
        return Err(GatewayError::Protocol(format!(
            "expected {expected} embeddings, got {}",
            items.len()
        )));
    }
    items.sort_by_key(|item| item.index);
    if items.iter().enumerate().any(|(i, item)| item.index != i) {
        return Err(GatewayError::Protocol(
            "embedding indices do not cover the input batch".into(),
        ));
    }
    let dim = items[0].embedding.len();
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        if item.embedding.len() != dim {
            return Err(GatewayError::Protocol(format!(
                "embedding {} has dimension {}, expected {dim}",
                item.index,
                item.embedding.len()
            )));
        }
        out.push(
            EmbeddingVector::new(item.embedding)
                .map_err(|e| GatewayError::Protocol(format!("embedding {}: {e}", item.index)))?,
        );
    }
    Ok(out)
}
