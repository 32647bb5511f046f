//! OpenAI-compatible HTTP backend.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, CompletionBackend, EmbeddingBackend, SamplingParams};

pub const API_KEY_VAR: &str = "SILICO_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    max_n: usize,
    max_batch: usize,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    index: usize,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: usize,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

impl HttpBackend {
    /// `base_url` is the server root; `/v1/...` is appended. The API key is
    /// read from `SILICO_API_KEY` when set.
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(120))
                .build(),
            max_n: 128,
            max_batch: 512,
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = ureq::AgentBuilder::new().timeout(timeout).build();
        self
    }

    pub fn with_limits(mut self, max_n: usize, max_batch: usize) -> Self {
        self.max_n = max_n.max(1);
        self.max_batch = max_batch.max(1);
        self
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<ureq::Response, BackendError> {
        let mut req = self
            .agent
            .post(&format!("{}{path}", self.base_url))
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => Ok(resp),
            Err(ureq::Error::Status(status, resp)) => {
                let message = resp
                    .into_string()
                    .unwrap_or_else(|_| String::from("<unreadable body>"));
                if status == 408 || status == 429 || status >= 500 {
                    Err(BackendError::Transient(format!("HTTP {status}: {message}")))
                } else {
                    Err(BackendError::Permanent { status, message })
                }
            }
            Err(ureq::Error::Transport(t)) => Err(BackendError::Transient(t.to_string())),
        }
    }
}

fn malformed(e: impl std::fmt::Display) -> BackendError {
    BackendError::Transient(format!("malformed response: {e}"))
}

impl CompletionBackend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn max_n(&self) -> usize {
        self.max_n
    }

    fn complete(
        &self,
        prompt: &str,
        model_id: &str,
        params: &SamplingParams,
        sample_indices: &[u32],
    ) -> Result<Vec<String>, BackendError> {
        let body = json!({
            "model": model_id,
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "n": sample_indices.len(),
            "stop": params.stop,
        });
        let resp: CompletionResponse = self
            .post("/v1/completions", body)?
            .into_json()
            .map_err(malformed)?;
        let mut choices = resp.choices;
        choices.sort_by_key(|c| c.index);
        if choices.len() != sample_indices.len() {
            return Err(malformed(format!(
                "{} choices for n = {}",
                choices.len(),
                sample_indices.len()
            )));
        }
        Ok(choices.into_iter().map(|c| c.text).collect())
    }
}

impl EmbeddingBackend for HttpBackend {
    fn backend_id(&self) -> String {
        format!("http:{}", self.base_url)
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }

    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": model_id, "input": texts });
        let resp: EmbeddingResponse = self
            .post("/v1/embeddings", body)?
            .into_json()
            .map_err(malformed)?;
        let mut data = resp.data;
        data.sort_by_key(|d| d.index);
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}
