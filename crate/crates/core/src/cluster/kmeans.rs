use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ starts; the lowest final inertia wins.
    #[serde(default = "default_n_init")]
    pub n_init: usize,
}

fn default_n_init() -> usize {
    10
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iter: 300,
            tol: 1e-6,
            n_init: default_n_init(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<T> {
    pub k: usize,
    pub centroids: Vec<Vec<T>>,
    pub assignments: Vec<usize>,
    pub inertia: T,
    pub seed: u64,
    pub iterations_run: usize,
    /// Inertia after each assignment step; non-increasing.
    pub inertia_history: Vec<T>,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

pub(crate) fn check_points<T: Scalar>(points: &[Vec<T>]) -> Result<usize> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Domain("no points".into()))?;
    if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(Error::Domain(format!(
            "point {i} has dim {} but point 0 has dim {dim}",
            p.len()
        )));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite coordinate".into()));
    }
    Ok(dim)
}

fn fnv1a(bits: impl Iterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bits {
        for byte in b.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Point indices sorted by content so seeding ignores input order.
fn canonical_order<T: Scalar>(points: &[Vec<T>]) -> Vec<usize> {
    let keys: Vec<u64> = points
        .iter()
        .map(|p| fnv1a(p.iter().map(|x| x.as_f64().to_bits())))
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a].cmp(&keys[b]).then_with(|| {
            points[a]
                .iter()
                .zip(&points[b])
                .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    order
}

fn plus_plus_init<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let order = canonical_order(points);
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = order[rng.gen_range(0..n)];
    chosen[first] = true;
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &points[first]).as_f64())
        .collect();

    while centroids.len() < k {
        let total: f64 = order.iter().map(|&i| d2[i]).sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for &i in &order {
                if d2[i] <= 0.0 {
                    continue;
                }
                acc += d2[i];
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| *order.iter().rev().find(|&&i| d2[i] > 0.0).unwrap())
        } else {
            // Every point coincides with a centroid already.
            *order.iter().find(|&&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, &points[pick]).as_f64();
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>]) -> (Vec<usize>, T) {
    let pairs: Vec<(usize, T)> = points.par_iter().map(|p| nearest(p, centroids)).collect();
    let inertia = pairs.iter().map(|&(_, d)| d).sum();
    (pairs.into_iter().map(|(a, _)| a).collect(), inertia)
}

fn means<T: Scalar>(points: &[Vec<T>], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<T>> {
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p) {
            *s = *s + x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            let ct = T::from_usize_lossy(c);
            for x in s.iter_mut() {
                *x = *x / ct;
            }
        }
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty<T: Scalar>(
    points: &[Vec<T>],
    assignments: &mut [usize],
    centroids: &[Vec<T>],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let far = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .max_by(|&a, &b| {
                let da = squared_distance(&points[a], &centroids[assignments[a]]);
                let db = squared_distance(&points[b], &centroids[assignments[b]]);
                da.partial_cmp(&db).unwrap_or(Ordering::Equal).then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with two members");
        counts[assignments[far]] -= 1;
        assignments[far] = empty;
        counts[empty] = 1;
    }
}

/// Seed of restart `r`; restart 0 uses the configured seed itself.
fn restart_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded k-means: k-means++ initialization followed by Lloyd iterations,
/// repeated `n_init` times.
pub fn kmeans<T: Scalar>(points: &[Vec<T>], config: &KMeansConfig) -> Result<ClusterModel<T>> {
    let dim = check_points(points)?;
    let (n, k) = (points.len(), config.k);
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds {n} points")));
    }
    let mut best: Option<ClusterModel<T>> = None;
    for r in 0..config.n_init.max(1) {
        let model = lloyd(points, config, dim, restart_seed(config.seed, r));
        if best.as_ref().map_or(true, |b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one start"))
}

fn lloyd<T: Scalar>(points: &[Vec<T>], config: &KMeansConfig, dim: usize, seed: u64) -> ClusterModel<T> {
    let k = config.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let (mut assignments, first) = assign(points, &centroids);
    let mut history = vec![first];
    let mut iterations = 0;

    while iterations < config.max_iter {
        repair_empty(points, &mut assignments, &centroids, k);
        let updated = means(points, &assignments, k, dim);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| squared_distance(a, b).sqrt().as_f64())
            .fold(0.0, f64::max);
        centroids = updated;
        let (next, inertia) = assign(points, &centroids);
        iterations += 1;
        history.push(inertia);
        let changed = next != assignments;
        assignments = next;
        if !changed || shift < config.tol {
            break;
        }
    }

    repair_empty(points, &mut assignments, &centroids, k);
    let centroids = means(points, &assignments, k, dim);
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum();

    ClusterModel {
        k,
        centroids,
        assignments,
        inertia,
        seed: config.seed,
        iterations_run: iterations,
        inertia_history: history,
    }
}

/// Scales every nonzero row to unit length.
pub fn unit_normalize<T: Scalar>(points: &[Vec<T>]) -> Vec<Vec<T>> {
    points
        .iter()
        .map(|p| {
            let norm = p.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm > T::zero() {
                p.iter().map(|&x| x / norm).collect()
            } else {
                p.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(raw: &[[f64; 2]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn k1_is_mean() {
        let p = pts(&[[0.0, 0.0], [2.0, 0.0], [4.0, 3.0]]);
        let m = kmeans(&p, &KMeansConfig::new(1, 3)).unwrap();
        assert!((m.centroids[0][0] - 2.0).abs() < 1e-12);
        assert!((m.centroids[0][1] - 1.0).abs() < 1e-12);
        // sum of squared deviations = n * per-point variance
        let expected = 4.0 + 1.0 + 0.0 + 1.0 + 4.0 + 4.0;
        assert!((m.inertia - expected).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n() {
        let p = pts(&[[0.0, 0.0], [2.0, 0.0], [4.0, 3.0], [1.0, 1.0]]);
        let m = kmeans(&p, &KMeansConfig::new(4, 9)).unwrap();
        assert_eq!(m.inertia, 0.0);
        assert_eq!(m.cluster_sizes(), vec![1; 4]);
    }

    #[test]
    fn two_pairs() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        for seed in 0..10 {
            let m = kmeans(&p, &KMeansConfig::new(2, seed)).unwrap();
            assert_eq!(m.assignments[0], m.assignments[1]);
            assert_eq!(m.assignments[2], m.assignments[3]);
            assert_ne!(m.assignments[0], m.assignments[2]);
            assert!((m.inertia - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let p = pts(&[[0.0, 0.0]]);
        assert!(kmeans(&p, &KMeansConfig::new(2, 0)).is_err());
        assert!(kmeans(&p, &KMeansConfig::new(0, 0)).is_err());
        let ragged = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(kmeans(&ragged, &KMeansConfig::new(1, 0)).is_err());
    }

    #[test]
    fn duplicates_keep_clusters_nonempty() {
        let p = pts(&[[1.0, 1.0]; 5]);
        let m = kmeans(&p, &KMeansConfig::new(3, 1)).unwrap();
        assert!(m.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn reordering_permutes_assignments() {
        let p = pts(&[
            [0.0, 0.0],
            [0.2, 0.1],
            [5.0, 5.0],
            [5.1, 4.9],
            [9.0, 0.0],
            [9.2, 0.3],
        ]);
        let perm = [3, 0, 5, 1, 4, 2];
        let q: Vec<Vec<f64>> = perm.iter().map(|&i| p[i].clone()).collect();
        let a = kmeans(&p, &KMeansConfig::new(3, 17)).unwrap();
        let b = kmeans(&q, &KMeansConfig::new(3, 17)).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(b.assignments[j], a.assignments[i]);
        }
    }

    #[test]
    fn f32_points() {
        let p: Vec<Vec<f32>> = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        let m = kmeans(&p, &KMeansConfig::new(2, 4)).unwrap();
        assert!((m.inertia - 1.0).abs() < 1e-6);
    }
}
