//! Stage computations over in-memory data; file handling lives in the stages.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::axis::{project, AnchorTable};
use crate::battery::{Battery, PromptInstance, Side};
use crate::error::{Error, Result};
use crate::gateway::{CompletionRecord, CompletionRequest, Gateway, SamplingParams};
use crate::justify::truncate_to_sentence;
use crate::stats::{ols_binary, OlsFit, RegressionResult, SIGNIFICANCE};

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub prompt_id: String,
    pub sample_index: u32,
    pub side: Side,
    pub issue_id: String,
    pub wording_index: usize,
    pub sim_pos: f64,
    pub sim_neg: f64,
    pub score: f64,
}

pub fn completion_requests(
    prompts: &[PromptInstance],
    model_id: &str,
    params: &SamplingParams,
    n_samples: u32,
) -> Vec<CompletionRequest> {
    prompts
        .iter()
        .map(|p| CompletionRequest {
            prompt_id: p.prompt_id.clone(),
            prompt: p.full_text.clone(),
            model_id: model_id.to_string(),
            params: params.clone(),
            n_samples,
            first_index: 0,
        })
        .collect()
}

/// Text that gets embedded for a completion: its first sentence.
pub fn scoring_text(completion: &str) -> String {
    truncate_to_sentence(completion)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scoring {
    pub rows: Vec<ScoreRow>,
    /// Completions with no text to embed; left unscored.
    pub n_empty: usize,
}

/// Embeds every completion and every anchor phrase, then projects each
/// completion onto its issue's axis.
pub fn score_completions(
    gateway: &Gateway,
    battery: &Battery,
    prompts: &[PromptInstance],
    completions: &[CompletionRecord],
    model_id: &str,
) -> Result<Scoring> {
    let by_id: HashMap<&str, &PromptInstance> =
        prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();

    let mut phrases: BTreeSet<String> = BTreeSet::new();
    for issue in battery.issues() {
        let axis = battery.axis(&issue.axis_ref).ok_or_else(|| {
            Error::Config(format!("issue {} names unknown axis {}", issue.issue_id, issue.axis_ref))
        })?;
        phrases.extend(axis.anchors().cloned());
    }
    let phrases: Vec<String> = phrases.into_iter().collect();
    let anchor_vecs = gateway.embed(&phrases, model_id)?;
    let anchors: AnchorTable<f64> = phrases
        .iter()
        .cloned()
        .zip(anchor_vecs.into_iter().map(|v| v.values))
        .collect();

    let mut kept: Vec<(&CompletionRecord, &PromptInstance)> = Vec::new();
    let mut texts = Vec::new();
    let mut n_empty = 0;
    for c in completions {
        let prompt = by_id.get(c.prompt_id.as_str()).ok_or_else(|| {
            Error::Integrity(format!("completion for unknown prompt {}", c.prompt_id))
        })?;
        let text = scoring_text(&c.text);
        if text.is_empty() {
            n_empty += 1;
            continue;
        }
        kept.push((c, prompt));
        texts.push(text);
    }
    let vectors = if texts.is_empty() {
        Vec::new()
    } else {
        gateway.embed(&texts, model_id)?
    };

    let rows = kept
        .iter()
        .zip(&vectors)
        .map(|((c, p), v)| {
            let issue = battery
                .issue(&p.issue_id)
                .ok_or_else(|| Error::Integrity(format!("prompt for unknown issue {}", p.issue_id)))?;
            let axis = battery
                .axis(&issue.axis_ref)
                .ok_or_else(|| Error::Config(format!("unknown axis {}", issue.axis_ref)))?;
            let proj = project(&v.values, axis, &anchors)?;
            Ok(ScoreRow {
                prompt_id: c.prompt_id.clone(),
                sample_index: c.sample_index,
                side: p.side,
                issue_id: p.issue_id.clone(),
                wording_index: p.wording_index,
                sim_pos: proj.sim_pos,
                sim_neg: proj.sim_neg,
                score: proj.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scoring { rows, n_empty })
}

/// Fits one regression per (issue, wording, stem) in battery order.
/// Wordings lacking data for either side are reported in the notes.
pub fn regress_scores(
    battery: &Battery,
    prompts: &[PromptInstance],
    rows: &[ScoreRow],
) -> Result<(Vec<RegressionResult<f64>>, Vec<String>)> {
    let stem_of: HashMap<&str, &str> = prompts
        .iter()
        .map(|p| (p.prompt_id.as_str(), p.stem_id.as_str()))
        .collect();
    let mut groups: HashMap<(&str, usize, &str), (Vec<f64>, Vec<f64>)> = HashMap::new();
    for r in rows {
        let stem = stem_of.get(r.prompt_id.as_str()).ok_or_else(|| {
            Error::Integrity(format!("score for unknown prompt {}", r.prompt_id))
        })?;
        let g = groups
            .entry((r.issue_id.as_str(), r.wording_index, stem))
            .or_default();
        match r.side {
            Side::Liberal => g.0.push(r.score),
            Side::Conservative => g.1.push(r.score),
        }
    }
    let mut results = Vec::new();
    let mut notes = Vec::new();
    for issue in battery.issues() {
        for w in 0..issue.wordings.len() {
            for stem in issue.stems(w)? {
                let key = (issue.issue_id.as_str(), w, stem.stem_id.as_str());
                let Some((lib, con)) = groups.get(&key) else {
                    notes.push(format!("{} wording {w} {}: no scores", issue.issue_id, stem.stem_id));
                    continue;
                };
                match ols_binary(lib, con) {
                    Ok(fit) => results.push(RegressionResult {
                        issue_id: issue.issue_id.clone(),
                        wording_index: w,
                        stem_id: stem.stem_id.clone(),
                        fit,
                    }),
                    Err(Error::Domain(m)) => {
                        notes.push(format!("{} wording {w} {}: {m}", issue.issue_id, stem.stem_id))
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok((results, notes))
}

/// One row of `regressions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub issue_id: String,
    pub wording_index: usize,
    pub stem_id: String,
    pub n_lib: usize,
    pub n_con: usize,
    pub alpha: f64,
    pub beta: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub df: usize,
    pub degenerate: bool,
}

impl From<&RegressionResult<f64>> for RegressionRow {
    fn from(r: &RegressionResult<f64>) -> Self {
        RegressionRow {
            issue_id: r.issue_id.clone(),
            wording_index: r.wording_index,
            stem_id: r.stem_id.clone(),
            n_lib: r.fit.n_lib,
            n_con: r.fit.n_con,
            alpha: r.fit.alpha,
            beta: r.fit.beta,
            se: r.fit.se,
            t_stat: r.fit.t_stat,
            p_value: r.fit.p_value,
            df: r.fit.df,
            degenerate: r.fit.degenerate,
        }
    }
}

impl From<RegressionRow> for RegressionResult<f64> {
    fn from(r: RegressionRow) -> Self {
        RegressionResult {
            issue_id: r.issue_id,
            wording_index: r.wording_index,
            stem_id: r.stem_id,
            fit: OlsFit {
                alpha: r.alpha,
                beta: r.beta,
                se: r.se,
                t_stat: r.t_stat,
                p_value: r.p_value,
                df: r.df,
                n_lib: r.n_lib,
                n_con: r.n_con,
                degenerate: r.degenerate,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Blue,
    Red,
    Gray,
}

impl Color {
    pub fn of(beta: f64, p_value: f64) -> Color {
        if p_value < SIGNIFICANCE && beta > 0.0 {
            Color::Blue
        } else if p_value < SIGNIFICANCE && beta < 0.0 {
            Color::Red
        } else {
            Color::Gray
        }
    }
}

/// One row of `coefficients.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDatum {
    pub issue_id: String,
    pub wording_index: usize,
    pub stem_id: String,
    pub wording_label: String,
    pub beta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub color: Color,
}

pub fn coefficient_data(
    battery: &Battery,
    results: &[RegressionResult<f64>],
) -> Vec<CoefficientDatum> {
    results
        .iter()
        .map(|r| {
            let (ci_low, ci_high) = r.fit.confidence_interval(0.95);
            let wording_label = battery
                .issue(&r.issue_id)
                .and_then(|i| {
                    let text = &i.wordings.get(r.wording_index)?.text;
                    let multi = i.stems(r.wording_index).map_or(false, |s| s.len() > 1);
                    Some(if multi {
                        format!("{text} [{}]", r.stem_id)
                    } else {
                        text.clone()
                    })
                })
                .unwrap_or_else(|| format!("{}#{}", r.issue_id, r.wording_index));
            CoefficientDatum {
                issue_id: r.issue_id.clone(),
                wording_index: r.wording_index,
                stem_id: r.stem_id.clone(),
                wording_label,
                beta: r.fit.beta,
                ci_low: ci_low.min(r.fit.beta),
                ci_high: ci_high.max(r.fit.beta),
                p_value: r.fit.p_value,
                color: Color::of(r.fit.beta, r.fit.p_value),
            }
        })
        .collect()
}

/// Per-issue sign-group counts for the justification conservation check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignCounts {
    pub parents: usize,
    pub positive: usize,
    pub negative: usize,
    pub indeterminate: usize,
}

impl SignCounts {
    pub fn total(&self) -> usize {
        self.positive + self.negative + self.indeterminate
    }
}

pub fn sign_counts(
    records: &[crate::justify::JustificationRecord],
) -> BTreeMap<String, SignCounts> {
    use crate::axis::SignClass;
    let mut out: BTreeMap<String, SignCounts> = BTreeMap::new();
    let mut parents: BTreeMap<&str, BTreeSet<(&str, u32)>> = BTreeMap::new();
    for r in records {
        let c = out.entry(r.issue_id.clone()).or_default();
        match r.sign_group {
            SignClass::Positive => c.positive += 1,
            SignClass::Negative => c.negative += 1,
            SignClass::Indeterminate => c.indeterminate += 1,
        }
        parents
            .entry(r.issue_id.as_str())
            .or_default()
            .insert((r.parent_prompt_id.as_str(), r.parent_sample_index));
    }
    for (issue, set) in parents {
        if let Some(c) = out.get_mut(issue) {
            c.parents = set.len();
        }
    }
    out
}
