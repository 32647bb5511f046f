//! Semantic axis scoring.
//!
//! A completion is placed on an axis by comparing its cosine similarity to the
//! positive anchor phrases against its similarity to the negative ones. When a
//! side has several anchors their similarities are averaged.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::battery::Side;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub axis_id: String,
    pub positive_anchors: Vec<String>,
    pub negative_anchors: Vec<String>,
}

impl AxisSpec {
    pub fn new<P, N>(axis_id: &str, positive: P, negative: N) -> Result<Self>
    where
        P: IntoIterator,
        P::Item: Into<String>,
        N: IntoIterator,
        N::Item: Into<String>,
    {
        let spec = AxisSpec {
            axis_id: axis_id.to_string(),
            positive_anchors: positive.into_iter().map(Into::into).collect(),
            negative_anchors: negative.into_iter().map(Into::into).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive_anchors.is_empty() || self.negative_anchors.is_empty() {
            return Err(Error::Config(format!(
                "axis {:?} needs at least one anchor on each side",
                self.axis_id
            )));
        }
        if let Some(p) = self
            .positive_anchors
            .iter()
            .find(|p| self.negative_anchors.contains(p))
        {
            return Err(Error::Config(format!(
                "axis {:?} lists {p:?} as both positive and negative",
                self.axis_id
            )));
        }
        if let Some(p) = self.anchors().find(|p| p.trim().is_empty()) {
            return Err(Error::Config(format!(
                "axis {:?} has an empty anchor {p:?}",
                self.axis_id
            )));
        }
        Ok(())
    }

    /// The same axis with its poles exchanged.
    pub fn swapped(&self) -> AxisSpec {
        AxisSpec {
            axis_id: format!("{}~swapped", self.axis_id),
            positive_anchors: self.negative_anchors.clone(),
            negative_anchors: self.positive_anchors.clone(),
        }
    }

    pub fn anchors(&self) -> impl Iterator<Item = &String> {
        self.positive_anchors.iter().chain(&self.negative_anchors)
    }
}

/// Cosine similarity, clamped to `[-1, 1]` against rounding.
pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "cosine of vectors with dims {} and {}",
            u.len(),
            v.len()
        )));
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == T::zero() || nv == T::zero() {
        return Err(Error::Domain("cosine with a zero vector".into()));
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Anchor phrase embeddings keyed by phrase.
#[derive(Debug, Clone)]
pub struct AnchorTable<T> {
    vectors: HashMap<String, Vec<T>>,
}

impl<T> Default for AnchorTable<T> {
    fn default() -> Self {
        AnchorTable {
            vectors: HashMap::new(),
        }
    }
}

impl<T: Scalar> AnchorTable<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, phrase: impl Into<String>, vector: Vec<T>) {
        self.vectors.insert(phrase.into(), vector);
    }

    pub fn get(&self, phrase: &str) -> Option<&[T]> {
        self.vectors.get(phrase).map(Vec::as_slice)
    }

    fn require(&self, phrase: &str) -> Result<&[T]> {
        self.get(phrase).ok_or_else(|| {
            Error::Config(format!("no embedding for anchor phrase {phrase:?}"))
        })
    }
}

impl<T: Scalar> FromIterator<(String, Vec<T>)> for AnchorTable<T> {
    fn from_iter<I: IntoIterator<Item = (String, Vec<T>)>>(iter: I) -> Self {
        AnchorTable {
            vectors: iter.into_iter().collect(),
        }
    }
}

/// Similarities of one vector to an axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub sim_pos: T,
    pub sim_neg: T,
    pub score: T,
}

impl<T: Scalar> Projection<T> {
    pub fn into_score(self, prompt_id: &str, sample_index: u32, side: Side) -> AxisScore<T> {
        AxisScore {
            prompt_id: prompt_id.to_string(),
            sample_index,
            side,
            sim_pos: self.sim_pos,
            sim_neg: self.sim_neg,
            score: self.score,
        }
    }
}

/// A completion's position on an axis. `score` is kept unclamped in `[-2, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisScore<T> {
    pub prompt_id: String,
    pub sample_index: u32,
    pub side: Side,
    pub sim_pos: T,
    pub sim_neg: T,
    pub score: T,
}

// Sorted before summing so the mean does not depend on anchor order.
fn mean_similarity<T: Scalar>(
    vector: &[T],
    phrases: &[String],
    anchors: &AnchorTable<T>,
) -> Result<T> {
    let mut sims = phrases
        .iter()
        .map(|p| {
            let a = anchors.require(p)?;
            if a.len() != vector.len() {
                return Err(Error::Config(format!(
                    "anchor {p:?} has dim {} but completion has dim {}",
                    a.len(),
                    vector.len()
                )));
            }
            cosine(vector, a)
        })
        .collect::<Result<Vec<T>>>()?;
    sims.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let sum: T = sims.iter().copied().sum();
    Ok(sum / T::from_usize_lossy(sims.len()))
}

pub fn project<T: Scalar>(
    vector: &[T],
    axis: &AxisSpec,
    anchors: &AnchorTable<T>,
) -> Result<Projection<T>> {
    let sim_pos = mean_similarity(vector, &axis.positive_anchors, anchors)?;
    let sim_neg = mean_similarity(vector, &axis.negative_anchors, anchors)?;
    Ok(Projection {
        sim_pos,
        sim_neg,
        score: sim_pos - sim_neg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignClass {
    Positive,
    Negative,
    Indeterminate,
}

impl SignClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SignClass::Positive => "positive",
            SignClass::Negative => "negative",
            SignClass::Indeterminate => "indeterminate",
        }
    }
}

impl fmt::Display for SignClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_sign<T: Scalar>(score: T) -> SignClass {
    if score > T::zero() {
        SignClass::Positive
    } else if score < T::zero() {
        SignClass::Negative
    } else {
        SignClass::Indeterminate
    }
}
