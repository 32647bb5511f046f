//! Completion and embedding access with retries, a bounded request pool and
//! a content-addressed cache.

mod cache;
pub mod http;
pub mod mock;
mod retry;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::battery::sha256_hex;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use cache::JsonlStore;
pub use retry::RetryPolicy;

/// Failure reported by a backend for a single upstream call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: timeouts, resets, 429 and 5xx.
    Transient(String),
    /// The request itself was rejected.
    Permanent { status: u16, message: String },
}

fn default_max_tokens() -> u32 {
    64
}
fn default_temperature() -> f64 {
    1.0
}
fn default_stop() -> Option<Vec<String>> {
    Some(vec!["\n".to_string()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_stop")]
    pub stop: Option<Vec<String>>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            max_tokens: default_max_tokens(),
            temperature: default_temperature(),
            stop: default_stop(),
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        if let Some(stop) = &self.stop {
            if stop.iter().any(String::is_empty) {
                return Err(Error::Config("stop strings must be non-empty".into()));
            }
        }
        Ok(())
    }

    /// Short stable hash of the parameters.
    pub fn params_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("params serialize");
        sha256_hex(json.as_bytes())[..16].to_string()
    }

    /// Cuts `text` at the earliest stop string.
    pub fn apply_stop(&self, text: &str) -> String {
        let cut = self
            .stop
            .iter()
            .flatten()
            .filter_map(|s| text.find(s.as_str()))
            .min()
            .unwrap_or(text.len());
        text[..cut].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_id: String,
    pub prompt: String,
    pub model_id: String,
    pub params: SamplingParams,
    pub n_samples: u32,
    /// Index of the first sample; samples are `first_index..first_index + n_samples`.
    #[serde(default)]
    pub first_index: u32,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config(format!(
                "request {} asks for zero samples",
                self.prompt_id
            )));
        }
        if self.first_index.checked_add(self.n_samples).is_none() {
            return Err(Error::Config("sample indices overflow".into()));
        }
        self.params.validate()
    }

    pub fn indices(&self) -> std::ops::Range<u32> {
        self.first_index..self.first_index + self.n_samples
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_id: String,
    pub sample_index: u32,
    /// Continuation only; never includes the prompt.
    pub text: String,
    pub backend_id: String,
    pub model_id: String,
    pub params_hash: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector<T> {
    pub values: Vec<T>,
    pub dim: usize,
    pub model_id: String,
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>, model_id: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Integrity("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity("embedding has non-finite components".into()));
        }
        Ok(EmbeddingVector {
            dim: values.len(),
            values,
            model_id: model_id.into(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector {
            values: self.values.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
            dim: self.dim,
            model_id: self.model_id.clone(),
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    /// Stable identity; part of every cache key.
    fn backend_id(&self) -> String;

    /// Largest number of samples a single upstream call may request.
    fn max_n(&self) -> usize {
        128
    }

    /// One upstream call returning one text per requested sample index.
    fn complete(
        &self,
        prompt: &str,
        model_id: &str,
        params: &SamplingParams,
        sample_indices: &[u32],
    ) -> Result<Vec<String>, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> String;

    fn max_batch(&self) -> usize {
        512
    }

    fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedCompletion {
    #[serde(flatten)]
    record: CompletionRecord,
}

/// Upstream call counters.
#[derive(Debug, Default)]
pub struct CallCounts {
    pub completion_calls: AtomicU64,
    pub embedding_calls: AtomicU64,
}

impl CallCounts {
    pub fn completion(&self) -> u64 {
        self.completion_calls.load(Ordering::Relaxed)
    }

    pub fn embedding(&self) -> u64 {
        self.embedding_calls.load(Ordering::Relaxed)
    }
}

/// Front door for all model traffic.
pub struct Gateway {
    completer: Arc<dyn CompletionBackend>,
    embedder: Arc<dyn EmbeddingBackend>,
    completions: JsonlStore<CachedCompletion>,
    embeddings: JsonlStore<EmbeddingVector<f64>>,
    retry: RetryPolicy,
    max_in_flight: usize,
    expected_dim: Option<usize>,
    dims: Mutex<HashMap<String, usize>>,
    counts: CallCounts,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("completer", &self.completer.backend_id())
            .field("embedder", &self.embedder.backend_id())
            .field("max_in_flight", &self.max_in_flight)
            .finish()
    }
}

impl Gateway {
    /// Gateway with in-memory caches.
    pub fn new(completer: Arc<dyn CompletionBackend>, embedder: Arc<dyn EmbeddingBackend>) -> Self {
        Gateway {
            completer,
            embedder,
            completions: JsonlStore::in_memory(),
            embeddings: JsonlStore::in_memory(),
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            expected_dim: None,
            dims: Mutex::new(HashMap::new()),
            counts: CallCounts::default(),
        }
    }

    /// Persists caches as `completions.jsonl` and `embeddings.jsonl` in `dir`.
    pub fn with_cache_dir(mut self, dir: &Path) -> Result<Self> {
        self.completions = JsonlStore::open(&dir.join("completions.jsonl"))?;
        self.embeddings = JsonlStore::open(&dir.join("embeddings.jsonl"))?;
        Ok(self)
    }

    /// Persists only the completion cache, at `path`.
    pub fn with_completion_cache(mut self, path: &Path) -> Result<Self> {
        self.completions = JsonlStore::open(path)?;
        Ok(self)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.max_in_flight = limit.max(1);
        self
    }

    /// Every embedding must have this dimension.
    pub fn with_expected_dim(mut self, dim: Option<usize>) -> Self {
        self.expected_dim = dim;
        self
    }

    pub fn counts(&self) -> &CallCounts {
        &self.counts
    }

    pub fn completion_backend_id(&self) -> String {
        self.completer.backend_id()
    }

    pub fn embedding_backend_id(&self) -> String {
        self.embedder.backend_id()
    }

    fn completion_key(&self, req: &CompletionRequest, params_hash: &str, index: u32) -> String {
        let parts = serde_json::json!([
            self.completer.backend_id(),
            req.model_id,
            req.prompt,
            params_hash,
            index
        ]);
        sha256_hex(parts.to_string().as_bytes())
    }

    /// Returns exactly `n_samples` records ordered by sample index. Missing
    /// samples are fetched and persisted before returning; cached ones cost
    /// no upstream call.
    pub fn complete(&self, req: &CompletionRequest) -> Result<Vec<CompletionRecord>> {
        req.validate()?;
        let params_hash = req.params.params_hash();
        let keys: BTreeMap<u32, String> = req
            .indices()
            .map(|i| (i, self.completion_key(req, &params_hash, i)))
            .collect();
        let missing: Vec<u32> = req
            .indices()
            .filter(|i| !self.completions.contains(&keys[i]))
            .collect();

        let backend_id = self.completer.backend_id();
        for chunk in missing.chunks(self.completer.max_n().max(1)) {
            let texts = self.retry.run(|| {
                self.counts.completion_calls.fetch_add(1, Ordering::Relaxed);
                self.completer
                    .complete(&req.prompt, &req.model_id, &req.params, chunk)
            })?;
            if texts.len() != chunk.len() {
                return Err(Error::Integrity(format!(
                    "backend returned {} texts for {} samples",
                    texts.len(),
                    chunk.len()
                )));
            }
            let now = Utc::now();
            let entries = chunk
                .iter()
                .zip(texts)
                .map(|(&i, text)| {
                    let record = CompletionRecord {
                        prompt_id: req.prompt_id.clone(),
                        sample_index: i,
                        text: req.params.apply_stop(&text),
                        backend_id: backend_id.clone(),
                        model_id: req.model_id.clone(),
                        params_hash: params_hash.clone(),
                        created_at: now,
                    };
                    (keys[&i].clone(), CachedCompletion { record })
                })
                .collect();
            self.completions.insert_many(entries)?;
        }

        keys.iter()
            .map(|(i, key)| {
                let mut record = self
                    .completions
                    .get(key)
                    .ok_or_else(|| Error::Integrity(format!("sample {i} missing after fetch")))?
                    .record;
                // Identical prompt text under a different id shares the cache entry.
                record.prompt_id = req.prompt_id.clone();
                Ok(record)
            })
            .collect()
    }

    /// One record list per request, in request order.
    pub fn complete_each(&self, requests: &[CompletionRequest]) -> Result<Vec<Vec<CompletionRecord>>> {
        bounded_map(requests, self.max_in_flight, |r| self.complete(r))
    }

    /// Runs requests through the bounded pool; output is sorted by
    /// `(prompt_id, sample_index)` whatever the completion order.
    pub fn complete_many(&self, requests: &[CompletionRequest]) -> Result<Vec<CompletionRecord>> {
        let mut out: Vec<CompletionRecord> = self.complete_each(requests)?.into_iter().flatten().collect();
        out.sort_by(|a, b| {
            a.prompt_id
                .cmp(&b.prompt_id)
                .then(a.sample_index.cmp(&b.sample_index))
        });
        Ok(out)
    }

    fn embedding_key(model_id: &str, text: &str) -> String {
        let mut bytes = model_id.as_bytes().to_vec();
        bytes.push(0);
        bytes.extend_from_slice(text.as_bytes());
        sha256_hex(&bytes)
    }

    fn check_dim(&self, v: &EmbeddingVector<f64>) -> Result<()> {
        if v.values.len() != v.dim || v.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::Integrity(format!(
                "malformed embedding for model {}",
                v.model_id
            )));
        }
        if let Some(expected) = self.expected_dim {
            if v.dim != expected {
                return Err(Error::Integrity(format!(
                    "embedding dimension {} differs from configured {expected}",
                    v.dim
                )));
            }
        }
        let mut dims = self.dims.lock().expect("dimension map");
        let seen = *dims.entry(v.model_id.clone()).or_insert(v.dim);
        if seen != v.dim {
            return Err(Error::Integrity(format!(
                "embedding dimension drifted from {seen} to {} for model {}",
                v.dim, v.model_id
            )));
        }
        Ok(())
    }

    /// One vector per input text, in input order. Texts are deduplicated,
    /// batched to the backend limit and cached by `(model_id, text)`.
    pub fn embed(&self, texts: &[String], model_id: &str) -> Result<Vec<EmbeddingVector<f64>>> {
        if texts.is_empty() {
            return Err(Error::Domain("nothing to embed".into()));
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(Error::Domain(format!("text {i} is empty")));
        }
        let keys: Vec<String> = texts
            .iter()
            .map(|t| Self::embedding_key(model_id, t))
            .collect();
        let mut pending: BTreeMap<&str, &str> = BTreeMap::new();
        for (t, k) in texts.iter().zip(&keys) {
            if !self.embeddings.contains(k) {
                pending.insert(k.as_str(), t.as_str());
            }
        }
        let pending: Vec<(&str, &str)> = pending.into_iter().collect();
        let batches: Vec<&[(&str, &str)]> = pending.chunks(self.embedder.max_batch().max(1)).collect();
        bounded_map(&batches, self.max_in_flight, |batch| {
            let inputs: Vec<String> = batch.iter().map(|(_, t)| t.to_string()).collect();
            let vectors = self.retry.run(|| {
                self.counts.embedding_calls.fetch_add(1, Ordering::Relaxed);
                self.embedder.embed(&inputs, model_id)
            })?;
            if vectors.len() != inputs.len() {
                return Err(Error::Integrity(format!(
                    "backend returned {} embeddings for {} texts",
                    vectors.len(),
                    inputs.len()
                )));
            }
            let mut entries = Vec::with_capacity(vectors.len());
            for ((key, _), values) in batch.iter().zip(vectors) {
                let v = EmbeddingVector::new(values, model_id)?;
                self.check_dim(&v)?;
                entries.push((key.to_string(), v));
            }
            self.embeddings.insert_many(entries)
        })?;

        keys.iter()
            .map(|k| {
                let v = self
                    .embeddings
                    .get(k)
                    .ok_or_else(|| Error::Integrity("embedding missing after fetch".into()))?;
                self.check_dim(&v)?;
                Ok(v)
            })
            .collect()
    }
}

/// Applies `f` to every item with at most `limit` running at once; results
/// keep input order. The first error wins.
fn bounded_map<I: Sync, O: Send>(
    items: &[I],
    limit: usize,
    f: impl Fn(&I) -> Result<O> + Sync,
) -> Result<Vec<O>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<O>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let workers = limit.max(1).min(items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                let failed = out.is_err();
                *slots[i].lock().expect("result slot") = Some(out);
                if failed {
                    // Stop handing out new work.
                    next.store(items.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut out = Vec::with_capacity(items.len());
    let mut first_err = None;
    for slot in slots {
        match slot.into_inner().expect("result slot") {
            Some(Ok(v)) => out.push(v),
            Some(Err(e)) => {
                first_err.get_or_insert(e);
            }
            None => {}
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl CompletionBackend for Echo {
        fn backend_id(&self) -> String {
            "echo".into()
        }
        fn complete(
            &self,
            _prompt: &str,
            _model_id: &str,
            _params: &SamplingParams,
            idx: &[u32],
        ) -> Result<Vec<String>, BackendError> {
            Ok(idx.iter().map(|i| format!(" sample {i}. more\nrest")).collect())
        }
    }

    struct Flat(usize);

    impl EmbeddingBackend for Flat {
        fn backend_id(&self) -> String {
            "flat".into()
        }
        fn embed(&self, texts: &[String], _m: &str) -> Result<Vec<Vec<f64>>, BackendError> {
            Ok(texts.iter().map(|t| vec![t.len() as f64; self.0]).collect())
        }
    }

    fn request(n: u32) -> CompletionRequest {
        CompletionRequest {
            prompt_id: "p".into(),
            prompt: "prompt".into(),
            model_id: "m".into(),
            params: SamplingParams::default(),
            n_samples: n,
            first_index: 0,
        }
    }

    #[test]
    fn stop_applied_and_ordered() {
        let g = Gateway::new(Arc::new(Echo), Arc::new(Flat(3)));
        let recs = g.complete(&request(4)).unwrap();
        assert_eq!(recs.len(), 4);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.sample_index, i as u32);
            assert_eq!(r.text, format!(" sample {i}. more"));
        }
    }

    #[test]
    fn rejects_invalid_requests() {
        let g = Gateway::new(Arc::new(Echo), Arc::new(Flat(3)));
        assert!(g.complete(&request(0)).is_err());
        let mut r = request(1);
        r.params.temperature = -1.0;
        assert!(g.complete(&r).is_err());
        r.params.temperature = 1.0;
        r.params.max_tokens = 0;
        assert!(g.complete(&r).is_err());
    }

    #[test]
    fn embed_dedups_and_validates() {
        let g = Gateway::new(Arc::new(Echo), Arc::new(Flat(3)));
        let v = g.embed(&["x".into(), "x".into()], "e").unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(g.counts().embedding(), 1);
        assert!(g.embed(&[], "e").is_err());
        assert!(g.embed(&["".into()], "e").is_err());
    }

    #[test]
    fn expected_dim_enforced() {
        let g = Gateway::new(Arc::new(Echo), Arc::new(Flat(3))).with_expected_dim(Some(4));
        assert!(matches!(g.embed(&["x".into()], "e"), Err(Error::Integrity(_))));
    }

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<usize> = (0..50).collect();
        let out = bounded_map(&items, 7, |&i| Ok(i * 2)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
    }
}
