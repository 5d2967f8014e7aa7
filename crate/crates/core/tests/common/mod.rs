#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use convsynth::gateway::{
    Gateway, GatewayConfig, HttpReply, SimulatedTransport, Transport, TransportError,
};
use convsynth::pipeline::{ingest_file, Backends, CorpusSection, IngestSummary, PipelineConfig};
use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn gateway(transport: Arc<dyn Transport>) -> Gateway {
    let config = GatewayConfig {
        max_retries: 0,
        ..GatewayConfig::new("http://models.invalid/v1", "CONVSYNTH_TEST_UNSET_KEY")
    };
    Gateway::new(config, transport).unwrap()
}

pub fn simulated_backends() -> Backends {
    let t: Arc<dyn Transport> = Arc::new(SimulatedTransport::new());
    Backends {
        generator: gateway(t.clone()),
        embedder: gateway(t),
    }
}

/// A config small enough for fixture corpora.
pub fn small_config(target: usize) -> PipelineConfig {
    PipelineConfig {
        target_samples: target,
        validation_size: 1,
        subset_sizes: vec![1],
        ..Default::default()
    }
}

pub fn corpus50(config: &PipelineConfig) -> (Vec<CorpusSection>, IngestSummary) {
    ingest_file(&fixture("corpus50.jsonl"), config).unwrap()
}

type Route = dyn Fn(&str, &Value) -> Value + Send + Sync;

/// Transport answering every request with `route(path_tail, body)`; the returned
/// value is sent as a 200 response.
pub struct FnTransport(pub Box<Route>);

impl Transport for FnTransport {
    fn post_json(
        &self,
        url: &str,
        _bearer: Option<&str>,
        body: &Value,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportError> {
        let tail = url.rsplit('/').next().unwrap_or_default();
        Ok(HttpReply {
            status: 200,
            body: (self.0)(tail, body).to_string(),
        })
    }

    fn needs_credentials(&self) -> bool {
        false
    }
}

pub fn chat_body(content: &str) -> Value {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
}

pub fn embeddings_body(vectors: Vec<Vec<f64>>) -> Value {
    let data: Vec<Value> = vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| json!({"index": i, "embedding": v}))
        .collect();
    json!({"data": data})
}

/// First user message of a chat request.
pub fn first_user(body: &Value) -> String {
    body["messages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["role"] == "user")
        .and_then(|m| m["content"].as_str())
        .unwrap_or_default()
        .to_string()
}

pub fn is_generation_request(body: &Value) -> bool {
    first_user(body).starts_with("Read the text below")
}

pub fn embedding_inputs(body: &Value) -> Vec<String> {
    body["input"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}
