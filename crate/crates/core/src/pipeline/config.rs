//! JSON run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::battery::{Battery, BatteryConfig};
use crate::error::{Error, Result};
use crate::gateway::http::HttpBackend;
use crate::gateway::mock::{MockCompletionBackend, MockEmbedder, MockWorld};
use crate::gateway::{CompletionBackend, EmbeddingBackend, RetryPolicy, SamplingParams};
use crate::justify::{justification_params, KConfig, DEFAULT_LABEL_SAMPLES};

use super::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatterySource {
    Path(PathBuf),
    Inline(Box<BatteryConfig>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompletionBackendConfig {
    /// Offline planted-effect backend. Its world seed is derived from the
    /// run's root seed.
    Mock(MockWorld),
    Http {
        base_url: String,
        #[serde(default)]
        max_n: Option<usize>,
    },
}

fn default_mock_dim() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingBackendConfig {
    /// Bag-of-words embedder over the mock world's vocabulary.
    Mock {
        #[serde(default = "default_mock_dim")]
        dim: usize,
    },
    Http { base_url: String },
}

fn default_completion_model() -> String {
    "davinci".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionConfig {
    pub backend: CompletionBackendConfig,
    #[serde(default = "default_completion_model")]
    pub model_id: String,
    #[serde(default)]
    pub params: SamplingParams,
}

fn default_embedding_model() -> String {
    "text-embedding".into()
}

fn default_max_batch() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub backend: EmbeddingBackendConfig,
    #[serde(default = "default_embedding_model")]
    pub model_id: String,
    /// Expected vector dimension; checked on every embedding when set.
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

fn default_label_model() -> String {
    "labeler".into()
}

fn default_label_samples() -> usize {
    DEFAULT_LABEL_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelingConfig {
    /// Defaults to the completion backend.
    #[serde(default)]
    pub backend: Option<CompletionBackendConfig>,
    #[serde(default = "default_label_model")]
    pub model_id: String,
    #[serde(default = "default_label_samples")]
    pub samples_per_cluster: usize,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            backend: None,
            model_id: default_label_model(),
            samples_per_cluster: default_label_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JustifyConfig {
    /// Issues to justify; empty means every issue.
    #[serde(default)]
    pub issues: Vec<String>,
    #[serde(default = "justification_params")]
    pub params: SamplingParams,
    #[serde(default)]
    pub k: KConfig,
}

impl Default for JustifyConfig {
    fn default() -> Self {
        JustifyConfig {
            issues: Vec::new(),
            params: justification_params(),
            k: KConfig::default(),
        }
    }
}

fn default_n_samples() -> u32 {
    500
}

fn default_in_flight() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub battery: BatterySource,
    /// CSV with columns issue_id, expected_sign, source.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default = "default_n_samples")]
    pub n_samples: u32,
    #[serde(default)]
    pub seed: u64,
    pub completion: CompletionConfig,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub labeling: LabelingConfig,
    #[serde(default)]
    pub justify: JustifyConfig,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

impl RunConfig {
    /// Reads a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let BatterySource::Path(p) = &mut config.battery {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = &mut config.ground_truth {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        self.completion.params.validate()?;
        self.justify.params.validate()?;
        if self.embedding.max_batch == 0 {
            return Err(Error::Config("embedding.max_batch must be positive".into()));
        }
        if self.embedding.dim == Some(0) {
            return Err(Error::Config("embedding.dim must be positive".into()));
        }
        let k = &self.justify.k;
        if k.k_min < 2 || k.k_max < k.k_min {
            return Err(Error::Config(format!("invalid k range {}..={}", k.k_min, k.k_max)));
        }
        Ok(())
    }

    pub fn load_battery(&self) -> Result<Battery> {
        match &self.battery {
            BatterySource::Path(p) => Battery::load(p),
            BatterySource::Inline(c) => Battery::new((**c).clone()),
        }
    }

    /// Hash of the configuration as it affects outputs.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::battery::sha256_hex(json.as_bytes())
    }

    fn mock_world(&self, world: &MockWorld) -> MockWorld {
        let mut w = world.clone();
        w.seed = derive_seed(self.seed, "mock-world");
        w
    }

    fn completion_backend_for(&self, cfg: &CompletionBackendConfig) -> Arc<dyn CompletionBackend> {
        match cfg {
            CompletionBackendConfig::Mock(world) => {
                Arc::new(MockCompletionBackend::new(self.mock_world(world)))
            }
            CompletionBackendConfig::Http { base_url, max_n } => {
                let b = HttpBackend::new(base_url.clone());
                Arc::new(match max_n {
                    Some(n) => b.with_limits(*n, self.embedding.max_batch),
                    None => b,
                })
            }
        }
    }

    pub fn completion_backend(&self) -> Arc<dyn CompletionBackend> {
        self.completion_backend_for(&self.completion.backend)
    }

    pub fn labeling_backend(&self) -> Arc<dyn CompletionBackend> {
        self.completion_backend_for(
            self.labeling
                .backend
                .as_ref()
                .unwrap_or(&self.completion.backend),
        )
    }

    pub fn embedding_backend(&self) -> Result<Arc<dyn EmbeddingBackend>> {
        Ok(match &self.embedding.backend {
            EmbeddingBackendConfig::Mock { dim } => {
                let vocab = match &self.completion.backend {
                    CompletionBackendConfig::Mock(w) => w.vocabulary(),
                    CompletionBackendConfig::Http { .. } => Vec::new(),
                };
                Arc::new(MockEmbedder::new(*dim, self.embedding.max_batch, &vocab)?)
            }
            EmbeddingBackendConfig::Http { base_url } => Arc::new(
                HttpBackend::new(base_url.clone()).with_limits(128, self.embedding.max_batch),
            ),
        })
    }
}
