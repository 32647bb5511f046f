use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kmeans::{kmeans, ClusterModel, KMeansConfig};
use super::quality::ClusterQuality;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KChoice {
    /// Highest silhouette; ties by higher CH, then lower DB, then smaller k.
    Automatic,
    /// Explicit override supplied by the analyst.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + serde::de::DeserializeOwned"))]
pub struct KSelection<T> {
    pub k: usize,
    pub choice: KChoice,
    pub qualities: Vec<ClusterQuality<T>>,
    pub model: ClusterModel<T>,
}

fn better<T: Scalar>(a: &ClusterQuality<T>, b: &ClusterQuality<T>) -> bool {
    let cmp = |x: T, y: T| x.partial_cmp(&y).unwrap_or(Ordering::Equal);
    match cmp(a.silhouette, b.silhouette) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    match cmp(a.calinski_harabasz, b.calinski_harabasz) {
        Ordering::Greater => return true,
        Ordering::Less => return false,
        Ordering::Equal => {}
    }
    match cmp(a.davies_bouldin, b.davies_bouldin) {
        Ordering::Less => return true,
        Ordering::Greater => return false,
        Ordering::Equal => {}
    }
    a.k < b.k
}

/// Fits k-means for every k in `k_range` and picks one.
pub fn select_k<T: Scalar>(
    points: &[Vec<T>],
    k_range: &[usize],
    seed: u64,
    override_k: Option<usize>,
) -> Result<KSelection<T>> {
    if k_range.is_empty() {
        return Err(Error::Domain("empty k range".into()));
    }
    let n = points.len();
    if let Some(&bad) = k_range.iter().find(|&&k| k < 2 || k + 1 > n) {
        return Err(Error::Domain(format!(
            "k = {bad} outside [2, {}] for {n} points",
            n.saturating_sub(1)
        )));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();

    let mut qualities = Vec::with_capacity(ks.len());
    let mut models = Vec::with_capacity(ks.len());
    for &k in &ks {
        let model = kmeans(points, &KMeansConfig::new(k, seed))?;
        qualities.push(ClusterQuality::compute(points, &model.assignments)?);
        models.push(model);
    }

    if let Some(k) = override_k {
        let model = match ks.iter().position(|&x| x == k) {
            Some(i) => models.swap_remove(i),
            None => kmeans(points, &KMeansConfig::new(k, seed))?,
        };
        return Ok(KSelection {
            k,
            choice: KChoice::Manual,
            qualities,
            model,
        });
    }

    let mut best = 0;
    for i in 1..qualities.len() {
        if better(&qualities[i], &qualities[best]) {
            best = i;
        }
    }
    Ok(KSelection {
        k: ks[best],
        choice: KChoice::Automatic,
        qualities,
        model: models.swap_remove(best),
    })
}
