//! Resumable staged runs under `runs/<run_id>/`.
//!
//! Each stage reads only outputs of stages already flagged complete in the
//! run manifest, writes its own outputs, and then sets its flag. Rerunning a
//! completed stage does nothing unless forced; forcing also clears the flags
//! of every stage downstream of it.

pub mod analysis;
pub mod config;
pub mod demo;
mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::axis::SignClass;
use crate::battery::{Battery, PromptInstance};
use crate::error::{Error, Result};
use crate::gateway::{EmbeddingBackend, Gateway};
use crate::justify::{
    cluster_sign_group, embedding_text, label_clusters, run_justifications, GroupOutcome,
    JustificationRecord, ScoredParent,
};
use crate::stats::{score_directions, summarize, GroundTruth, QuestionStatus, RegressionResult};

use analysis::{
    coefficient_data, completion_requests, regress_scores, score_completions, sign_counts,
    RegressionRow, ScoreRow, SignCounts,
};
pub use config::RunConfig;
pub use manifest::{BackendInfo, RunManifest, StageRecord};

/// Stable 64-bit seed for `label` under `root`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Battery,
    Complete,
    Score,
    Regress,
    Justify,
    Cluster,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Battery,
        Stage::Complete,
        Stage::Score,
        Stage::Regress,
        Stage::Justify,
        Stage::Cluster,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Battery => "battery",
            Stage::Complete => "complete",
            Stage::Score => "score",
            Stage::Regress => "regress",
            Stage::Justify => "justify",
            Stage::Cluster => "cluster",
            Stage::Report => "report",
        }
    }

    pub fn prerequisite(self) -> Option<Stage> {
        match self {
            Stage::Battery => None,
            Stage::Complete => Some(Stage::Battery),
            Stage::Score => Some(Stage::Complete),
            Stage::Regress => Some(Stage::Score),
            Stage::Justify => Some(Stage::Score),
            Stage::Cluster => Some(Stage::Justify),
            Stage::Report => Some(Stage::Regress),
        }
    }

    /// Every stage that depends on this one, directly or not.
    pub fn downstream(self) -> Vec<Stage> {
        let mut out = Vec::new();
        for s in Stage::ALL {
            let mut cur = s.prerequisite();
            while let Some(p) = cur {
                if p == self {
                    out.push(s);
                    break;
                }
                cur = p.prerequisite();
            }
        }
        // The report summarizes clusters when they exist.
        if self == Stage::Justify || self == Stage::Cluster {
            out.push(Stage::Report);
        }
        out.sort();
        out.dedup();
        out
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    /// Already complete; nothing was done.
    pub skipped: bool,
    pub summary: String,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-issue justification summary written next to the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustifySummary {
    pub run_id: String,
    pub counts: BTreeMap<String, SignCounts>,
    /// Parents whose completion had no sentence to justify.
    pub skipped_empty_parents: BTreeMap<String, usize>,
}

/// Contents of `clusters/<issue>_<sign>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFile {
    pub run_id: String,
    pub issue_id: String,
    pub sign_group: SignClass,
    pub excluded_indeterminate: usize,
    pub outcome: GroupOutcome,
}

/// One row of `clusters_summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummaryRow {
    pub issue_id: String,
    pub sign_group: SignClass,
    pub rank: usize,
    pub cluster_id: usize,
    pub label: String,
    pub size: usize,
    pub n_lib: usize,
    pub n_con: usize,
    pub prop_lib: f64,
    pub p_vs_most_conservative: Option<f64>,
    pub test_method: Option<String>,
}

/// One row of `verdicts.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub issue_id: String,
    pub status: QuestionStatus,
    pub n_wordings: usize,
    pub n_matching: usize,
    pub n_significant: usize,
    pub n_significant_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    /// Question-level direction accuracy; `k / n` over scored questions.
    pub accuracy: Option<f64>,
    pub k: u64,
    pub n: u64,
    pub binomial_p: Option<f64>,
    pub binomial_p_two_sided: Option<f64>,
    pub granularities: crate::stats::AccuracySummary,
    pub n_regressions: usize,
    pub n_significant: usize,
    pub degenerate_fits: Vec<String>,
    pub warnings: Vec<String>,
}

/// A run directory with its manifest, config and gateways.
pub struct Run {
    dir: PathBuf,
    config: RunConfig,
    battery: Battery,
    manifest: RunManifest,
    gateway: Gateway,
    labeler: Gateway,
}

impl std::fmt::Debug for Run {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Run").field("dir", &self.dir).finish()
    }
}

impl Run {
    /// Opens `runs_dir/run_id`, creating it and its manifest on first use.
    /// An existing manifest whose battery or config hash differs is refused.
    pub fn open(runs_dir: &Path, run_id: &str, config: RunConfig) -> Result<Run> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
            return Err(Error::Config(format!("invalid run id {run_id:?}")));
        }
        config.validate()?;
        let battery = config.load_battery()?;
        let dir = runs_dir.join(run_id);
        std::fs::create_dir_all(&dir)?;

        let completer = config.completion_backend();
        let labeler_backend = config.labeling_backend();
        let embedder: Arc<dyn EmbeddingBackend> = config.embedding_backend()?;
        let backends = BackendInfo {
            completion_backend_id: completer.backend_id(),
            completion_model_id: config.completion.model_id.clone(),
            completion_params: config.completion.params.clone(),
            embedding_backend_id: embedder.backend_id(),
            embedding_model_id: config.embedding.model_id.clone(),
            embedding_dim: config.embedding.dim,
            labeling_backend_id: labeler_backend.backend_id(),
            labeling_model_id: config.labeling.model_id.clone(),
        };
        let mut fresh = RunManifest::new(
            run_id,
            battery.content_hash(),
            config_hash(&config)?,
            backends,
            config.seed,
        );
        fresh.cluster_normalize = config.justify.k.normalize;
        let manifest_path = dir.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let existing = RunManifest::load(&manifest_path)?;
            existing.check_compatible(&fresh)?;
            existing
        } else {
            write_json(&manifest_path, &fresh)?;
            fresh
        };

        let gateway = Gateway::new(Arc::clone(&completer), Arc::clone(&embedder))
            .with_cache_dir(&dir)?
            .with_retry(config.retry)
            .with_max_in_flight(config.max_in_flight)
            .with_expected_dim(config.embedding.dim);
        let labeler = Gateway::new(labeler_backend, embedder)
            .with_completion_cache(&dir.join("labels.jsonl"))?
            .with_retry(config.retry)
            .with_max_in_flight(config.max_in_flight);
        Ok(Run {
            dir,
            config,
            battery,
            manifest,
            gateway,
            labeler,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn battery(&self) -> &Battery {
        &self.battery
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn save_manifest(&self) -> Result<()> {
        write_json(&self.path("manifest.json"), &self.manifest)
    }

    pub fn run_stage(&mut self, stage: Stage, force: bool) -> Result<StageOutcome> {
        if let Some(pre) = stage.prerequisite() {
            if !self.manifest.is_complete(pre) {
                return Err(Error::Stage(format!(
                    "stage {stage} needs stage {pre} to be completed first"
                )));
            }
        }
        if self.manifest.is_complete(stage) && !force {
            return Ok(StageOutcome {
                stage,
                skipped: true,
                summary: format!("{stage} already complete"),
            });
        }
        for s in std::iter::once(stage).chain(stage.downstream()) {
            self.manifest.clear(s);
        }
        self.save_manifest()?;
        let (summary, outputs) = match stage {
            Stage::Battery => self.stage_battery()?,
            Stage::Complete => self.stage_complete()?,
            Stage::Score => self.stage_score()?,
            Stage::Regress => self.stage_regress()?,
            Stage::Justify => self.stage_justify()?,
            Stage::Cluster => self.stage_cluster()?,
            Stage::Report => self.stage_report()?,
        };
        self.manifest.complete(stage, outputs);
        self.save_manifest()?;
        Ok(StageOutcome {
            stage,
            skipped: false,
            summary,
        })
    }

    /// Runs every stage in order; justify and cluster only when the config
    /// names issues to justify.
    pub fn run_all(&mut self, force: bool) -> Result<Vec<StageOutcome>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let wanted = match stage {
                Stage::Justify | Stage::Cluster => !self.config.justify.issues.is_empty(),
                _ => true,
            };
            if wanted {
                // Report comes last so it sees clusters.
                out.push(self.run_stage(stage, force)?);
            }
        }
        Ok(out)
    }

    fn prompts(&self) -> Result<Vec<PromptInstance>> {
        read_jsonl(&self.path("prompts.jsonl"))
    }

    fn stage_battery(&mut self) -> Result<(String, Vec<String>)> {
        let prompts = self.battery.expand()?;
        write_jsonl(&self.path("prompts.jsonl"), &prompts)?;
        Ok((
            format!(
                "{} prompts from {} question wordings",
                prompts.len(),
                self.battery.question_count()
            ),
            vec!["prompts.jsonl".into()],
        ))
    }

    fn completions(&self, prompts: &[PromptInstance]) -> Result<Vec<crate::gateway::CompletionRecord>> {
        let requests = completion_requests(
            prompts,
            &self.config.completion.model_id,
            &self.config.completion.params,
            self.config.n_samples,
        );
        self.gateway.complete_many(&requests)
    }

    fn stage_complete(&mut self) -> Result<(String, Vec<String>)> {
        let prompts = self.prompts()?;
        let before = self.gateway.counts().completion();
        let records = self.completions(&prompts)?;
        let calls = self.gateway.counts().completion() - before;
        Ok((
            format!("{} completions, {calls} backend calls", records.len()),
            vec!["completions.jsonl".into()],
        ))
    }

    fn stage_score(&mut self) -> Result<(String, Vec<String>)> {
        let prompts = self.prompts()?;
        let completions = self.completions(&prompts)?;
        let scoring = score_completions(
            &self.gateway,
            &self.battery,
            &prompts,
            &completions,
            &self.config.embedding.model_id,
        )?;
        write_csv(&self.path("scores.csv"), &scoring.rows)?;
        Ok((
            format!(
                "{} scores, {} empty completions left unscored",
                scoring.rows.len(),
                scoring.n_empty
            ),
            vec!["scores.csv".into(), "embeddings.jsonl".into()],
        ))
    }

    fn stage_regress(&mut self) -> Result<(String, Vec<String>)> {
        let prompts = self.prompts()?;
        let rows: Vec<ScoreRow> = read_csv(&self.path("scores.csv"))?;
        let (results, notes) = regress_scores(&self.battery, &prompts, &rows)?;
        let out: Vec<RegressionRow> = results.iter().map(RegressionRow::from).collect();
        write_csv(&self.path("regressions.csv"), &out)?;
        let mut summary = format!("{} regressions", out.len());
        for n in notes {
            summary.push_str(&format!("\n  skipped {n}"));
        }
        Ok((summary, vec!["regressions.csv".into()]))
    }

    fn justify_issues(&self) -> Vec<String> {
        if self.config.justify.issues.is_empty() {
            self.battery
                .issues()
                .iter()
                .map(|i| i.issue_id.clone())
                .collect()
        } else {
            self.config.justify.issues.clone()
        }
    }

    fn stage_justify(&mut self) -> Result<(String, Vec<String>)> {
        let issues = self.justify_issues();
        if let Some(bad) = issues.iter().find(|i| self.battery.issue(i).is_none()) {
            return Err(Error::Config(format!("justify names unknown issue {bad}")));
        }
        let wanted: BTreeSet<&str> = issues.iter().map(String::as_str).collect();
        let prompts: Vec<PromptInstance> = self
            .prompts()?
            .into_iter()
            .filter(|p| wanted.contains(p.issue_id.as_str()))
            .collect();
        let completions = self.completions(&prompts)?;
        let scores: Vec<ScoreRow> = read_csv(&self.path("scores.csv"))?;
        let score_of: BTreeMap<(&str, u32), f64> = scores
            .iter()
            .map(|r| ((r.prompt_id.as_str(), r.sample_index), r.score))
            .collect();
        let prompt_of: BTreeMap<&str, &PromptInstance> =
            prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();

        let mut parents = Vec::new();
        let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
        for c in &completions {
            let p = prompt_of[c.prompt_id.as_str()];
            match score_of.get(&(c.prompt_id.as_str(), c.sample_index)) {
                Some(&score) => parents.push(ScoredParent {
                    issue_id: p.issue_id.clone(),
                    prompt_id: c.prompt_id.clone(),
                    sample_index: c.sample_index,
                    side: p.side,
                    prompt: p.full_text.clone(),
                    completion: c.text.clone(),
                    score,
                }),
                None => *skipped.entry(p.issue_id.clone()).or_default() += 1,
            }
        }
        let records = run_justifications(
            &parents,
            &self.gateway,
            &self.config.completion.model_id,
            &self.config.justify.params,
        )?;
        write_jsonl(&self.path("justifications.jsonl"), &records)?;
        let summary = JustifySummary {
            run_id: self.manifest.run_id.clone(),
            counts: sign_counts(&records),
            skipped_empty_parents: skipped,
        };
        write_json(&self.path("justifications_summary.json"), &summary)?;
        Ok((
            format!("{} justifications for {} parents", records.len(), parents.len()),
            vec![
                "justifications.jsonl".into(),
                "justifications_summary.json".into(),
            ],
        ))
    }

    fn stage_cluster(&mut self) -> Result<(String, Vec<String>)> {
        let records: Vec<JustificationRecord> = read_jsonl(&self.path("justifications.jsonl"))?;
        let texts: Vec<String> = records.iter().map(embedding_text).collect();
        let vectors: Vec<Vec<f64>> = if texts.is_empty() {
            Vec::new()
        } else {
            self.gateway
                .embed(&texts, &self.config.embedding.model_id)?
                .into_iter()
                .map(|v| v.values)
                .collect()
        };
        let member_text: BTreeMap<String, String> = records
            .iter()
            .map(|r| (r.member_id(), r.text.clone()))
            .collect();
        let counts = sign_counts(&records);
        let mut jobs: Vec<(String, SignClass)> = Vec::new();
        for issue in counts.keys() {
            for sign in [SignClass::Positive, SignClass::Negative] {
                jobs.push((issue.clone(), sign));
            }
        }

        let root = self.config.seed;
        let k_config = self.config.justify.k;
        let label_model = self.config.labeling.model_id.clone();
        let samples = self.config.labeling.samples_per_cluster;
        let run_id = self.manifest.run_id.clone();
        let battery = &self.battery;
        let labeler = &self.labeler;
        let files: Vec<ClusterFile> = jobs
            .par_iter()
            .map(|(issue, sign)| {
                let label = format!("{issue}:{sign}");
                let mut outcome = cluster_sign_group(
                    issue,
                    *sign,
                    &records,
                    &vectors,
                    &k_config,
                    derive_seed(root, &format!("kmeans:{label}")),
                )?;
                if let GroupOutcome::Clustered(report) = &mut outcome {
                    let issue_text = battery
                        .issue(issue)
                        .and_then(|i| i.wordings.first())
                        .map(|w| w.text.clone())
                        .unwrap_or_else(|| issue.clone());
                    label_clusters(
                        report,
                        &member_text,
                        &issue_text,
                        labeler,
                        &label_model,
                        samples,
                        derive_seed(root, &format!("labels:{label}")),
                    )?;
                }
                Ok(ClusterFile {
                    run_id: run_id.clone(),
                    issue_id: issue.clone(),
                    sign_group: *sign,
                    excluded_indeterminate: counts[issue].indeterminate,
                    outcome,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let cluster_dir = self.path("clusters");
        if cluster_dir.exists() {
            std::fs::remove_dir_all(&cluster_dir)?;
        }
        let mut outputs = Vec::new();
        for f in &files {
            let name = format!("clusters/{}_{}.json", f.issue_id, f.sign_group);
            write_json(&self.path(&name), f)?;
            outputs.push(name);
        }
        write_csv(&self.path("clusters_summary.csv"), &cluster_summary_rows(&files))?;
        outputs.push("clusters_summary.csv".into());
        let clustered = files
            .iter()
            .filter(|f| matches!(f.outcome, GroupOutcome::Clustered(_)))
            .count();
        Ok((
            format!("{clustered} of {} sign groups clustered", files.len()),
            outputs,
        ))
    }

    fn ground_truth(&self) -> Result<GroundTruth> {
        match &self.config.ground_truth {
            Some(p) => GroundTruth::load(p),
            None => GroundTruth::from_entries(Vec::new()),
        }
    }

    fn stage_report(&mut self) -> Result<(String, Vec<String>)> {
        let rows: Vec<RegressionRow> = read_csv(&self.path("regressions.csv"))?;
        let results: Vec<RegressionResult<f64>> = rows.into_iter().map(Into::into).collect();
        let mut outputs = vec![
            "coefficients.csv".to_string(),
            "verdicts.csv".to_string(),
            "summary.json".to_string(),
        ];
        write_csv(
            &self.path("coefficients.csv"),
            &coefficient_data(&self.battery, &results),
        )?;

        let truth = self.ground_truth()?;
        let (outcomes, verdicts) = score_directions(&results, &truth);
        let verdict_rows: Vec<VerdictRow> = verdicts
            .iter()
            .map(|v| VerdictRow {
                issue_id: v.issue_id.clone(),
                status: v.status,
                n_wordings: v.n_wordings,
                n_matching: v.n_matching,
                n_significant: v.n_significant,
                n_significant_correct: v.n_significant_correct,
            })
            .collect();
        write_csv(&self.path("verdicts.csv"), &verdict_rows)?;

        let topics: BTreeMap<String, String> = self
            .battery
            .issues()
            .iter()
            .map(|i| (i.issue_id.clone(), i.topic.clone()))
            .collect();
        let granularities = summarize(&outcomes, &verdicts, &topics)?;
        let known: Vec<&str> = self
            .battery
            .issues()
            .iter()
            .map(|i| i.issue_id.as_str())
            .collect();
        let mut warnings: Vec<String> = truth.unknown_issue_warnings(known.iter().copied());
        if let Some(p) = &self.config.ground_truth {
            if truth.is_empty() {
                warnings.push(format!("ground truth {} is empty", p.display()));
            }
        }
        let q = &granularities.question;
        let summary = Summary {
            run_id: self.manifest.run_id.clone(),
            accuracy: q.accuracy,
            k: q.k,
            n: q.n,
            binomial_p: q.binomial_p_one_sided,
            binomial_p_two_sided: q.binomial_p_two_sided,
            n_regressions: results.len(),
            n_significant: outcomes.iter().filter(|o| o.significant).count(),
            degenerate_fits: results
                .iter()
                .filter(|r| r.fit.degenerate)
                .map(|r| format!("{}#{}:{}", r.issue_id, r.wording_index, r.stem_id))
                .collect(),
            granularities,
            warnings,
        };
        write_json(&self.path("summary.json"), &summary)?;

        if self.manifest.is_complete(Stage::Cluster) {
            let files = self.cluster_files()?;
            write_csv(&self.path("clusters_summary.csv"), &cluster_summary_rows(&files))?;
            outputs.push("clusters_summary.csv".into());
        }
        let acc = summary
            .accuracy
            .map_or("n/a".to_string(), |a| format!("{a:.3}"));
        Ok((
            format!(
                "accuracy {acc} ({} of {} questions), binomial p {}",
                summary.k,
                summary.n,
                summary
                    .binomial_p
                    .map_or("n/a".to_string(), |p| format!("{p:.3e}"))
            ),
            outputs,
        ))
    }

    /// Cluster outputs, in file-name order.
    pub fn cluster_files(&self) -> Result<Vec<ClusterFile>> {
        let dir = self.path("clusters");
        let mut names: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.retain(|p| p.extension().is_some_and(|e| e == "json"));
        names.sort();
        names
            .iter()
            .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
            .collect()
    }
}

fn cluster_summary_rows(files: &[ClusterFile]) -> Vec<ClusterSummaryRow> {
    let mut rows = Vec::new();
    for f in files {
        if let GroupOutcome::Clustered(report) = &f.outcome {
            for (rank, c) in report.clusters.iter().enumerate() {
                rows.push(ClusterSummaryRow {
                    issue_id: f.issue_id.clone(),
                    sign_group: f.sign_group,
                    rank,
                    cluster_id: c.cluster_id,
                    label: c.label.clone().unwrap_or_default(),
                    size: c.size,
                    n_lib: c.n_lib,
                    n_con: c.n_con,
                    prop_lib: c.prop_lib,
                    p_vs_most_conservative: c.p_vs_most_conservative,
                    test_method: c
                        .test_method
                        .map(|m| serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
                });
            }
        }
    }
    rows
}

/// Config hash independent of where the battery and ground-truth files live.
fn config_hash(config: &RunConfig) -> Result<String> {
    let mut c = config.clone();
    c.battery = config::BatterySource::Path(PathBuf::from("battery"));
    if let Some(p) = &config.ground_truth {
        let bytes = std::fs::read(p).map_err(|e| {
            Error::Config(format!("cannot read ground truth {}: {e}", p.display()))
        })?;
        c.ground_truth = Some(PathBuf::from(crate::battery::sha256_hex(&bytes)));
    }
    Ok(c.content_hash())
}
