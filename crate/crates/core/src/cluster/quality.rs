//! Internal cluster-quality indices used to choose k.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{distance, squared_distance, Scalar};

use super::kmeans::check_points;

/// Above this many points silhouette distances are recomputed per row
/// instead of cached in a full matrix.
const CONDENSED_LIMIT: usize = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ClusterQuality<T> {
    pub k: usize,
    #[serde(with = "crate::scalar::nonfinite")]
    pub silhouette: T,
    #[serde(with = "crate::scalar::nonfinite")]
    pub calinski_harabasz: T,
    /// `+inf` when two cluster centroids coincide; see `davies_bouldin_degenerate`.
    #[serde(with = "crate::scalar::nonfinite")]
    pub davies_bouldin: T,
    pub davies_bouldin_degenerate: bool,
}

impl<T: Scalar> ClusterQuality<T> {
    pub fn compute(points: &[Vec<T>], assignments: &[usize]) -> Result<Self> {
        let k = relabel(assignments).1;
        let db = davies_bouldin(points, assignments)?;
        Ok(ClusterQuality {
            k,
            silhouette: silhouette(points, assignments)?,
            calinski_harabasz: calinski_harabasz(points, assignments)?,
            davies_bouldin: db,
            davies_bouldin_degenerate: db.is_infinite(),
        })
    }
}

/// Maps arbitrary labels onto 0..k in order of first appearance.
fn relabel(assignments: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut next = 0;
    let labels = assignments
        .iter()
        .map(|&a| {
            *map.entry(a).or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect();
    (labels, next)
}

fn check<T: Scalar>(points: &[Vec<T>], assignments: &[usize]) -> Result<(Vec<usize>, usize, usize)> {
    let dim = check_points(points)?;
    if points.len() != assignments.len() {
        return Err(Error::Domain(format!(
            "{} points but {} assignments",
            points.len(),
            assignments.len()
        )));
    }
    let (labels, k) = relabel(assignments);
    if k < 2 {
        return Err(Error::Domain("quality indices need at least 2 clusters".into()));
    }
    Ok((labels, k, dim))
}

fn centroids<T: Scalar>(points: &[Vec<T>], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<T>>, Vec<usize>) {
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(p) {
            *s = *s + x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let ct = T::from_usize_lossy(c);
        s.iter_mut().for_each(|x| *x = *x / ct);
    }
    (sums, counts)
}

fn point_silhouette<T: Scalar>(
    i: usize,
    labels: &[usize],
    counts: &[usize],
    dist_to: impl Fn(usize) -> T,
) -> T {
    let own = labels[i];
    if counts[own] == 1 {
        return T::zero();
    }
    let mut sums = vec![T::zero(); counts.len()];
    for (j, &l) in labels.iter().enumerate() {
        if j != i {
            sums[l] = sums[l] + dist_to(j);
        }
    }
    let a = sums[own] / T::from_usize_lossy(counts[own] - 1);
    let b = sums
        .iter()
        .zip(counts)
        .enumerate()
        .filter(|&(l, (_, &c))| l != own && c > 0)
        .map(|(_, (&s, &c))| s / T::from_usize_lossy(c))
        .fold(T::infinity(), T::min);
    let denom = a.max(b);
    if denom == T::zero() {
        T::zero()
    } else {
        (b - a) / denom
    }
}

/// Mean silhouette width. Singleton clusters contribute 0.
pub fn silhouette<T: Scalar>(points: &[Vec<T>], assignments: &[usize]) -> Result<T> {
    let (labels, k, _) = check(points, assignments)?;
    let n = points.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);

    let per_point: Vec<T> = if n <= CONDENSED_LIMIT {
        let rows: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| distance(&points[i], &points[j])).collect())
            .collect();
        (0..n)
            .into_par_iter()
            .map(|i| point_silhouette(i, &labels, &counts, |j| rows[i][j]))
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map(|i| point_silhouette(i, &labels, &counts, |j| distance(&points[i], &points[j])))
            .collect()
    };
    let s = per_point.into_iter().sum::<T>() / T::from_usize_lossy(n);
    Ok(s.max(-T::one()).min(T::one()))
}

/// Between-cluster over within-cluster dispersion, each per degree of freedom.
pub fn calinski_harabasz<T: Scalar>(points: &[Vec<T>], assignments: &[usize]) -> Result<T> {
    let (labels, k, dim) = check(points, assignments)?;
    let n = points.len();
    if k >= n {
        return Err(Error::Domain(format!(
            "Calinski-Harabasz needs k < n (k = {k}, n = {n})"
        )));
    }
    let (cents, counts) = centroids(points, &labels, k, dim);
    let mut overall = vec![T::zero(); dim];
    for p in points {
        for (o, &x) in overall.iter_mut().zip(p) {
            *o = *o + x;
        }
    }
    let nt = T::from_usize_lossy(n);
    overall.iter_mut().for_each(|x| *x = *x / nt);

    let between: T = cents
        .iter()
        .zip(&counts)
        .map(|(c, &m)| T::from_usize_lossy(m) * squared_distance(c, &overall))
        .sum();
    let within: T = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| squared_distance(p, &cents[l]))
        .sum();
    if within == T::zero() {
        return Ok(if between == T::zero() {
            T::one()
        } else {
            T::infinity()
        });
    }
    Ok((between / T::from_usize_lossy(k - 1)) / (within / T::from_usize_lossy(n - k)))
}

/// Mean over clusters of the worst (σ_i + σ_j) / d(c_i, c_j) ratio.
/// Coincident centroids give `+inf`.
pub fn davies_bouldin<T: Scalar>(points: &[Vec<T>], assignments: &[usize]) -> Result<T> {
    let (labels, k, dim) = check(points, assignments)?;
    let (cents, counts) = centroids(points, &labels, k, dim);
    let mut scatter = vec![T::zero(); k];
    for (p, &l) in points.iter().zip(&labels) {
        scatter[l] = scatter[l] + distance(p, &cents[l]);
    }
    for (s, &c) in scatter.iter_mut().zip(&counts) {
        *s = *s / T::from_usize_lossy(c);
    }
    let mut total = T::zero();
    for i in 0..k {
        let mut worst = T::neg_infinity();
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = distance(&cents[i], &cents[j]);
            let r = if d == T::zero() {
                T::infinity()
            } else {
                (scatter[i] + scatter[j]) / d
            };
            worst = worst.max(r);
        }
        total = total + worst;
    }
    Ok(total / T::from_usize_lossy(k))
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Domain("labelings differ in length".into()));
    }
    let n = a.len() as f64;
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&c| pairs(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| pairs(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| pairs(c)).sum();
    let total = n * (n - 1.0) / 2.0;
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
