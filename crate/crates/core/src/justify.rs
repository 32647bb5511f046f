//! "This is because" justifications: generation, sign-split clustering,
//! partisan composition tests and cluster labels.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::axis::{classify_sign, SignClass};
use crate::battery::{sha256_hex, Side};
use crate::cluster::{select_k, unit_normalize, ClusterQuality, KChoice};
use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway, SamplingParams};
use crate::stats::{two_proportion_test, ProportionMethod};

pub const JUSTIFICATION_CUE: &str = "This is because";
pub const JUSTIFICATIONS_PER_PARENT: u32 = 3;
pub const LABEL_PROMPT_LEAD: &str =
    "The following are clusters of semantically similar responses to the question of whether";
pub const LABEL_INSTRUCTION: &str = "Please write concise, specific, and not overly broad labels for each of the clusters that describe their unique theme and distinguish them from the other clusters. It does not have to encompass all responses but should instead reflect the primary theme evident in the substantial part of the responses.";
pub const MAX_LABEL_CHARS: usize = 80;
pub const DEFAULT_LABEL_SAMPLES: usize = 100;

/// Completion defaults with room for a full sentence.
pub fn justification_params() -> SamplingParams {
    SamplingParams {
        max_tokens: 96,
        ..SamplingParams::default()
    }
}

/// Prefix through the first `.`, `!` or `?` that is followed by whitespace or
/// the end of the text. Without one, the whole text, trimmed.
pub fn truncate_to_sentence(text: &str) -> String {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            match chars.peek() {
                None => return text.to_string(),
                Some((_, next)) if next.is_whitespace() => {
                    return text[..i + c.len_utf8()].to_string()
                }
                _ => {}
            }
        }
    }
    text.to_string()
}

pub fn build_justification_prompt(original_prompt: &str, completion: &str) -> Result<String> {
    let sentence = truncate_to_sentence(completion);
    if sentence.is_empty() {
        return Err(Error::Domain("cannot justify an empty completion".into()));
    }
    Ok(format!("{original_prompt} {sentence} {JUSTIFICATION_CUE}"))
}

/// A scored completion eligible for justification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredParent {
    pub issue_id: String,
    pub prompt_id: String,
    pub sample_index: u32,
    pub side: Side,
    pub prompt: String,
    pub completion: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JustificationRecord {
    pub issue_id: String,
    pub parent_prompt_id: String,
    pub parent_sample_index: u32,
    pub justification_index: u32,
    pub side: Side,
    /// Inherited from the parent's score.
    pub sign_group: SignClass,
    pub text: String,
    /// Key of the text in the embedding cache.
    pub embedding_ref: String,
}

impl JustificationRecord {
    pub fn member_id(&self) -> String {
        format!(
            "{}:{}:{}",
            self.parent_prompt_id, self.parent_sample_index, self.justification_index
        )
    }
}

/// Three justifications per parent, in parent order.
pub fn run_justifications(
    parents: &[ScoredParent],
    gateway: &Gateway,
    model_id: &str,
    params: &SamplingParams,
) -> Result<Vec<JustificationRecord>> {
    let requests = parents
        .iter()
        .map(|p| {
            Ok(CompletionRequest {
                prompt_id: format!("{}:{}", p.prompt_id, p.sample_index),
                prompt: build_justification_prompt(&p.prompt, &p.completion)?,
                model_id: model_id.to_string(),
                params: params.clone(),
                n_samples: JUSTIFICATIONS_PER_PARENT,
                // Parents sharing a prompt still get their own samples.
                first_index: p.sample_index * JUSTIFICATIONS_PER_PARENT,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let batches = gateway.complete_each(&requests)?;
    let mut out = Vec::with_capacity(parents.len() * JUSTIFICATIONS_PER_PARENT as usize);
    for (parent, records) in parents.iter().zip(batches) {
        let sign_group = classify_sign(parent.score);
        let first = parent.sample_index * JUSTIFICATIONS_PER_PARENT;
        for r in records {
            let text = truncate_to_sentence(&r.text);
            out.push(JustificationRecord {
                issue_id: parent.issue_id.clone(),
                parent_prompt_id: parent.prompt_id.clone(),
                parent_sample_index: parent.sample_index,
                justification_index: r.sample_index - first,
                side: parent.side,
                sign_group,
                embedding_ref: sha256_hex(text.as_bytes())[..16].to_string(),
                text,
            });
        }
    }
    Ok(out)
}

/// Text used for embedding; empty justifications fall back to a placeholder
/// so every record has a vector.
pub fn embedding_text(record: &JustificationRecord) -> String {
    if record.text.trim().is_empty() {
        "(empty)".to_string()
    } else {
        record.text.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub override_k: Option<usize>,
    /// Scale embeddings to unit length before clustering.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for KConfig {
    fn default() -> Self {
        KConfig {
            k_min: 2,
            k_max: 8,
            override_k: None,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    /// Index in the fitted k-means model.
    pub cluster_id: usize,
    pub label: Option<String>,
    pub size: usize,
    pub n_lib: usize,
    pub n_con: usize,
    pub prop_lib: f64,
    /// One-sided test that this cluster is more liberal than the first one;
    /// absent for the first cluster itself.
    pub p_vs_most_conservative: Option<f64>,
    pub test_method: Option<ProportionMethod>,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub issue_id: String,
    pub sign_group: SignClass,
    pub k: usize,
    pub k_choice: KChoice,
    pub normalized: bool,
    pub n_records: usize,
    pub qualities: Vec<ClusterQuality<f64>>,
    /// Ascending by liberal proportion, ties by size descending.
    pub clusters: Vec<ClusterEntry>,
    pub label_prompt: Option<String>,
    pub label_response: Option<String>,
    pub label_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GroupOutcome {
    Clustered(Box<ClusterReport>),
    Skipped {
        issue_id: String,
        sign_group: SignClass,
        n_records: usize,
        notice: String,
    },
}

/// Clusters one issue's justifications within one sign group.
///
/// `records` and `embeddings` are parallel; records outside `sign_group`
/// are ignored.
pub fn cluster_sign_group(
    issue_id: &str,
    sign_group: SignClass,
    records: &[JustificationRecord],
    embeddings: &[Vec<f64>],
    k_config: &KConfig,
    seed: u64,
) -> Result<GroupOutcome> {
    if sign_group == SignClass::Indeterminate {
        return Err(Error::Domain("indeterminate scores are never clustered".into()));
    }
    if records.len() != embeddings.len() {
        return Err(Error::Domain(format!(
            "{} records but {} embeddings",
            records.len(),
            embeddings.len()
        )));
    }
    if k_config.k_min < 2 || k_config.k_max < k_config.k_min {
        return Err(Error::Config(format!(
            "invalid k range {}..={}",
            k_config.k_min, k_config.k_max
        )));
    }
    let (group, points): (Vec<&JustificationRecord>, Vec<Vec<f64>>) = records
        .iter()
        .zip(embeddings)
        .filter(|(r, _)| r.issue_id == issue_id && r.sign_group == sign_group)
        .map(|(r, e)| (r, e.clone()))
        .unzip();
    let n = group.len();
    if n < 2 * k_config.k_min {
        return Ok(GroupOutcome::Skipped {
            issue_id: issue_id.to_string(),
            sign_group,
            n_records: n,
            notice: format!(
                "{n} {sign_group} justifications, fewer than {} needed",
                2 * k_config.k_min
            ),
        });
    }
    let k_range: Vec<usize> = (k_config.k_min..=k_config.k_max.min(n - 1)).collect();
    let points = if k_config.normalize {
        unit_normalize(&points)
    } else {
        points
    };
    let selection = select_k(&points, &k_range, seed, k_config.override_k)?;

    let k = selection.k;
    let mut clusters: Vec<ClusterEntry> = (0..k)
        .map(|c| ClusterEntry {
            cluster_id: c,
            label: None,
            size: 0,
            n_lib: 0,
            n_con: 0,
            prop_lib: 0.0,
            p_vs_most_conservative: None,
            test_method: None,
            members: Vec::new(),
        })
        .collect();
    for (r, &a) in group.iter().zip(&selection.model.assignments) {
        let c = &mut clusters[a];
        c.size += 1;
        match r.side {
            Side::Liberal => c.n_lib += 1,
            Side::Conservative => c.n_con += 1,
        }
        c.members.push(r.member_id());
    }
    clusters.retain(|c| c.size > 0);
    for c in &mut clusters {
        c.prop_lib = c.n_lib as f64 / c.size as f64;
    }
    clusters.sort_by(|a, b| {
        a.prop_lib
            .total_cmp(&b.prop_lib)
            .then(b.size.cmp(&a.size))
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    let (base_lib, base_size) = (clusters[0].n_lib as u64, clusters[0].size as u64);
    for c in clusters.iter_mut().skip(1) {
        let t = two_proportion_test(c.n_lib as u64, c.size as u64, base_lib, base_size)?;
        c.p_vs_most_conservative = Some(t.p_value.clamp(0.0, 1.0));
        c.test_method = Some(t.method);
    }

    Ok(GroupOutcome::Clustered(Box::new(ClusterReport {
        issue_id: issue_id.to_string(),
        sign_group,
        k: clusters.len(),
        k_choice: selection.choice,
        normalized: k_config.normalize,
        n_records: n,
        qualities: selection.qualities,
        clusters,
        label_prompt: None,
        label_response: None,
        label_warning: None,
    })))
}

/// Cluster-labeling prompt. `clusters` lists the sampled texts of each
/// cluster in report order.
pub fn build_label_prompt(issue_text: &str, clusters: &[Vec<String>]) -> String {
    let issue = issue_text.trim();
    let issue = issue.strip_prefix("whether ").unwrap_or(issue);
    let mut prompt = format!("{LABEL_PROMPT_LEAD} {issue}.\n");
    for (i, texts) in clusters.iter().enumerate() {
        prompt.push_str(&format!("\nCluster {}:\n", i + 1));
        for t in texts {
            prompt.push_str("- ");
            prompt.push_str(&t.replace('\n', " "));
            prompt.push('\n');
        }
    }
    prompt.push('\n');
    prompt.push_str(LABEL_INSTRUCTION);
    prompt
}

fn clip_label(label: &str) -> String {
    let label = label.trim().trim_matches(|c| c == '*' || c == '"').trim();
    if label.chars().count() <= MAX_LABEL_CHARS {
        return label.to_string();
    }
    let cut: String = label.chars().take(MAX_LABEL_CHARS).collect();
    cut.trim_end().to_string()
}

/// Reads one label per numbered line ("1. x", "2) x", "Cluster 3: x").
/// Returns `None` unless exactly labels 1..=k are present and non-empty.
pub fn parse_labels(response: &str, k: usize) -> Option<Vec<String>> {
    let mut found: BTreeMap<usize, String> = BTreeMap::new();
    for line in response.lines() {
        let mut rest = line.trim().trim_start_matches(['*', '#', '-']).trim_start();
        if let Some(r) = rest.strip_prefix("Cluster ").or_else(|| rest.strip_prefix("cluster ")) {
            rest = r;
        }
        let digits: String = rest.chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            continue;
        }
        let after = rest[digits.len()..].trim_start_matches(['*']);
        let Some(after) = after.strip_prefix(['.', ')', ':', '-']) else {
            continue;
        };
        let label = clip_label(after);
        let Ok(num) = digits.parse::<usize>() else {
            continue;
        };
        if !label.is_empty() {
            found.entry(num).or_insert(label);
        }
    }
    if found.len() != k || found.keys().copied().ne(1..=k) {
        return None;
    }
    Some(found.into_values().collect())
}

/// Samples up to `samples_per_cluster` member texts per cluster, asks the
/// labeling model, and stores labels, prompt and raw response on the report.
/// A label count mismatch is retried once before falling back to
/// `cluster-1..k`.
pub fn label_clusters(
    report: &mut ClusterReport,
    texts: &BTreeMap<String, String>,
    issue_text: &str,
    gateway: &Gateway,
    model_id: &str,
    samples_per_cluster: usize,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled: Vec<Vec<String>> = report
        .clusters
        .iter()
        .map(|c| {
            let take = samples_per_cluster.min(c.members.len());
            let mut idx = sample(&mut rng, c.members.len(), take).into_vec();
            idx.sort_unstable();
            idx.into_iter()
                .map(|i| texts.get(&c.members[i]).cloned().unwrap_or_default())
                .collect()
        })
        .collect();
    let prompt = build_label_prompt(issue_text, &sampled);
    let k = report.clusters.len();
    let params = SamplingParams {
        max_tokens: 256,
        temperature: 0.0,
        stop: None,
    };
    let mut labels = None;
    let mut response = String::new();
    for attempt in 0..2u32 {
        let records = gateway.complete(&CompletionRequest {
            prompt_id: format!("label:{}:{}", report.issue_id, report.sign_group),
            prompt: prompt.clone(),
            model_id: model_id.to_string(),
            params: params.clone(),
            n_samples: attempt + 1,
            first_index: 0,
        })?;
        response = records[attempt as usize].text.clone();
        labels = parse_labels(&response, k);
        if labels.is_some() {
            break;
        }
    }
    let labels = labels.unwrap_or_else(|| {
        report.label_warning = Some(format!(
            "labeling response did not contain {k} numbered labels; using placeholders"
        ));
        (1..=k).map(|i| format!("cluster-{i}")).collect()
    });
    for (c, l) in report.clusters.iter_mut().zip(labels) {
        c.label = Some(l);
    }
    report.label_prompt = Some(prompt);
    report.label_response = Some(response);
    Ok(())
}
