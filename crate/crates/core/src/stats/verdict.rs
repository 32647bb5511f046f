//! Direction agreement between fitted priming effects and observed gaps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::scalar::Scalar;

use super::binomial::{binomial_test, binomial_test_two_sided};
use super::ground_truth::{ExpectedSign, GroundTruth, GroundTruthEntry};
use super::ols::OlsFit;

pub const SIGNIFICANCE: f64 = 0.05;

/// Priming effect for one (issue, wording, stem) question wording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult<T> {
    pub issue_id: String,
    pub wording_index: usize,
    pub stem_id: String,
    pub fit: OlsFit<T>,
}

impl<T: Scalar> RegressionResult<T> {
    pub fn beta(&self) -> T {
        self.fit.beta
    }

    pub fn p_value(&self) -> f64 {
        self.fit.p_value
    }

    pub fn predicted_sign(&self) -> PredictedSign {
        if self.fit.beta > T::zero() {
            PredictedSign::LiberalPositive
        } else if self.fit.beta < T::zero() {
            PredictedSign::ConservativePositive
        } else {
            PredictedSign::None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictedSign {
    LiberalPositive,
    ConservativePositive,
    /// beta is exactly zero.
    None,
}

impl PredictedSign {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictedSign::LiberalPositive => "liberal_positive",
            PredictedSign::ConservativePositive => "conservative_positive",
            PredictedSign::None => "none",
        }
    }

    fn agrees(self, expected: ExpectedSign) -> bool {
        matches!(
            (self, expected),
            (PredictedSign::LiberalPositive, ExpectedSign::LiberalPositive)
                | (PredictedSign::ConservativePositive, ExpectedSign::ConservativePositive)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionOutcome {
    pub issue_id: String,
    pub wording_index: usize,
    pub stem_id: String,
    pub predicted_sign: PredictedSign,
    pub significant: bool,
    /// `None` when the issue has no ground truth.
    pub matches: Option<bool>,
}

pub fn direction_outcome<T: Scalar>(
    result: &RegressionResult<T>,
    truth: Option<&GroundTruthEntry>,
) -> DirectionOutcome {
    let predicted_sign = result.predicted_sign();
    DirectionOutcome {
        issue_id: result.issue_id.clone(),
        wording_index: result.wording_index,
        stem_id: result.stem_id.clone(),
        predicted_sign,
        significant: result.fit.p_value < SIGNIFICANCE,
        matches: truth.map(|t| predicted_sign.agrees(t.expected_sign)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Correct,
    Incorrect,
    /// Exactly half the wordings agree.
    Mixed,
    /// No ground truth; excluded from accuracy denominators.
    Unscored,
}

impl QuestionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QuestionStatus::Correct => "correct",
            QuestionStatus::Incorrect => "incorrect",
            QuestionStatus::Mixed => "mixed",
            QuestionStatus::Unscored => "unscored",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub issue_id: String,
    pub status: QuestionStatus,
    pub n_wordings: usize,
    pub n_matching: usize,
    pub n_significant: usize,
    pub n_significant_correct: usize,
}

/// Majority-of-wordings verdict for one question.
pub fn aggregate_question(issue_id: &str, outcomes: &[DirectionOutcome]) -> QuestionVerdict {
    let n_wordings = outcomes.len();
    let scored = outcomes.iter().all(|o| o.matches.is_some()) && n_wordings > 0;
    let n_matching = outcomes.iter().filter(|o| o.matches == Some(true)).count();
    let n_significant = outcomes.iter().filter(|o| o.significant).count();
    let n_significant_correct = outcomes
        .iter()
        .filter(|o| o.significant && o.matches == Some(true))
        .count();
    let status = if !scored {
        QuestionStatus::Unscored
    } else if 2 * n_matching > n_wordings {
        QuestionStatus::Correct
    } else if 2 * n_matching == n_wordings {
        QuestionStatus::Mixed
    } else {
        QuestionStatus::Incorrect
    };
    QuestionVerdict {
        issue_id: issue_id.to_string(),
        status,
        n_wordings,
        n_matching,
        n_significant,
        n_significant_correct,
    }
}

/// k correct out of n scored units, with exact binomial p against chance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub k: u64,
    pub n: u64,
    pub accuracy: Option<f64>,
    pub binomial_p_one_sided: Option<f64>,
    pub binomial_p_two_sided: Option<f64>,
}

impl Accuracy {
    pub fn new(k: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Ok(Accuracy {
                k,
                n,
                accuracy: None,
                binomial_p_one_sided: None,
                binomial_p_two_sided: None,
            });
        }
        Ok(Accuracy {
            k,
            n,
            accuracy: Some(k as f64 / n as f64),
            binomial_p_one_sided: Some(binomial_test(k, n, 0.5)?),
            binomial_p_two_sided: Some(binomial_test_two_sided(k, n, 0.5)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    /// One unit per question wording (including stem variants).
    pub wording: Accuracy,
    /// Wordings with p < 0.05 only.
    pub wording_significant_only: Accuracy,
    /// One unit per question, by majority of its wordings. Mixed counts as wrong.
    pub question: Accuracy,
    /// One unit per topic, by majority of its scored questions.
    pub issue: Accuracy,
    pub n_unscored_questions: usize,
    pub n_mixed_questions: usize,
}

/// `topics` maps issue_id → topic.
pub fn summarize(
    outcomes: &[DirectionOutcome],
    verdicts: &[QuestionVerdict],
    topics: &BTreeMap<String, String>,
) -> Result<AccuracySummary> {
    let scored: Vec<&DirectionOutcome> = outcomes.iter().filter(|o| o.matches.is_some()).collect();
    let k_w = scored.iter().filter(|o| o.matches == Some(true)).count() as u64;
    let sig: Vec<_> = scored.iter().filter(|o| o.significant).collect();
    let k_sig = sig.iter().filter(|o| o.matches == Some(true)).count() as u64;

    let scored_q: Vec<&QuestionVerdict> = verdicts
        .iter()
        .filter(|v| v.status != QuestionStatus::Unscored)
        .collect();
    let k_q = scored_q
        .iter()
        .filter(|v| v.status == QuestionStatus::Correct)
        .count() as u64;

    let mut by_topic: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for v in &scored_q {
        let topic = topics.get(&v.issue_id).map_or(v.issue_id.as_str(), String::as_str);
        let e = by_topic.entry(topic).or_default();
        e.1 += 1;
        if v.status == QuestionStatus::Correct {
            e.0 += 1;
        }
    }
    let k_t = by_topic.values().filter(|(c, n)| 2 * c > *n).count() as u64;

    Ok(AccuracySummary {
        wording: Accuracy::new(k_w, scored.len() as u64)?,
        wording_significant_only: Accuracy::new(k_sig, sig.len() as u64)?,
        question: Accuracy::new(k_q, scored_q.len() as u64)?,
        issue: Accuracy::new(k_t, by_topic.len() as u64)?,
        n_unscored_questions: verdicts.len() - scored_q.len(),
        n_mixed_questions: verdicts
            .iter()
            .filter(|v| v.status == QuestionStatus::Mixed)
            .count(),
    })
}

/// Outcomes and per-question verdicts for a set of regressions.
pub fn score_directions<T: Scalar>(
    results: &[RegressionResult<T>],
    truth: &GroundTruth,
) -> (Vec<DirectionOutcome>, Vec<QuestionVerdict>) {
    let outcomes: Vec<DirectionOutcome> = results
        .iter()
        .map(|r| direction_outcome(r, truth.get(&r.issue_id)))
        .collect();
    let mut grouped: BTreeMap<&str, Vec<DirectionOutcome>> = BTreeMap::new();
    for o in &outcomes {
        grouped.entry(o.issue_id.as_str()).or_default().push(o.clone());
    }
    // Keep first-appearance order of issues.
    let mut order: Vec<&str> = Vec::new();
    for o in &outcomes {
        if !order.contains(&o.issue_id.as_str()) {
            order.push(o.issue_id.as_str());
        }
    }
    let verdicts = order
        .iter()
        .map(|id| aggregate_question(id, &grouped[id]))
        .collect();
    (outcomes, verdicts)
}
