use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::SamplingParams;

use super::{derive_seed, Stage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub completion_backend_id: String,
    pub completion_model_id: String,
    pub completion_params: SamplingParams,
    pub embedding_backend_id: String,
    pub embedding_model_id: String,
    pub embedding_dim: Option<usize>,
    pub labeling_backend_id: String,
    pub labeling_model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub completed_at: DateTime<Utc>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub battery_hash: String,
    pub config_hash: String,
    pub backends: BackendInfo,
    pub root_seed: u64,
    pub seeds: BTreeMap<String, u64>,
    /// Whether justification embeddings were unit-normalized before k-means.
    #[serde(default)]
    pub cluster_normalize: bool,
    pub stages: BTreeMap<Stage, StageRecord>,
    pub tool_version: String,
    pub created_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn new(
        run_id: &str,
        battery_hash: String,
        config_hash: String,
        backends: BackendInfo,
        root_seed: u64,
    ) -> Self {
        let seeds = ["mock-world"]
            .iter()
            .map(|l| (l.to_string(), derive_seed(root_seed, l)))
            .collect();
        RunManifest {
            run_id: run_id.to_string(),
            battery_hash,
            config_hash,
            backends,
            root_seed,
            seeds,
            cluster_normalize: false,
            stages: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at: Utc::now(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Refuses to mix outputs of different batteries or configs in one run.
    pub fn check_compatible(&self, other: &RunManifest) -> Result<()> {
        if self.battery_hash != other.battery_hash {
            return Err(Error::Stage(format!(
                "run {} was created from a different battery (hash {} vs {})",
                self.run_id,
                &self.battery_hash[..12],
                &other.battery_hash[..12]
            )));
        }
        if self.config_hash != other.config_hash {
            return Err(Error::Stage(format!(
                "run {} was created with a different configuration or seed; use a new run id",
                self.run_id
            )));
        }
        Ok(())
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.stages.contains_key(&stage)
    }

    pub(super) fn complete(&mut self, stage: Stage, outputs: Vec<String>) {
        self.stages.insert(
            stage,
            StageRecord {
                completed_at: Utc::now(),
                outputs,
            },
        );
    }

    pub(super) fn clear(&mut self, stage: Stage) {
        self.stages.remove(&stage);
    }
}
