mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silico::cluster::{
    adjusted_rand_index, calinski_harabasz, davies_bouldin, kmeans, select_k, silhouette,
    unit_normalize, KChoice, KMeansConfig,
};

#[test]
fn kmeans_against_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..120 {
        let n = rng.gen_range(3..=8);
        let k = rng.gen_range(2..=3.min(n - 1));
        let points = random_points(&mut rng, n, 2);
        let model = kmeans(&points, &KMeansConfig::new(k, case)).unwrap();
        let parts = partitions(n, k);
        let global = parts
            .iter()
            .map(|p| partition_inertia(&points, p, k))
            .fold(f64::INFINITY, f64::min);
        assert!(model.inertia >= global - 1e-9);
        let near_local = parts
            .iter()
            .filter(|p| lloyd_stable(&points, p, k))
            .any(|p| (partition_inertia(&points, p, k) - model.inertia).abs() < 1e-9);
        assert!(near_local, "case {case}: inertia {} not at a local optimum", model.inertia);
    }
}

#[test]
fn kmeans_history_non_increasing_and_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let points = random_points(&mut rng, 200, 4);
    let a = kmeans(&points, &KMeansConfig::new(5, 3)).unwrap();
    let b = kmeans(&points, &KMeansConfig::new(5, 3)).unwrap();
    assert_eq!(a, b);
    for w in a.inertia_history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
    assert!(a.cluster_sizes().iter().all(|&s| s > 0));
}

#[test]
fn kmeans_ignores_input_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (points, _) = three_blobs(&mut rng, 90, 10.0);
    let mut rev = points.clone();
    rev.reverse();
    let a = kmeans(&points, &KMeansConfig::new(3, 1)).unwrap();
    let b = kmeans(&rev, &KMeansConfig::new(3, 1)).unwrap();
    assert!((a.inertia - b.inertia).abs() < 1e-9);
}

#[test]
fn kmeans_rejects_bad_input() {
    let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    assert!(kmeans(&p, &KMeansConfig::new(3, 0)).is_err());
    assert!(kmeans(&p, &KMeansConfig::new(0, 0)).is_err());
    assert!(kmeans(&[vec![0.0], vec![1.0, 2.0]], &KMeansConfig::new(1, 0)).is_err());
    assert!(kmeans(&[vec![f64::NAN]], &KMeansConfig::new(1, 0)).is_err());
}

#[test]
fn select_k_recovers_three_blobs() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (points, truth) = three_blobs(&mut rng, 300, 10.0);
        let ks: Vec<usize> = (2..=8).collect();
        let sel = select_k(&points, &ks, seed, None).unwrap();
        assert_eq!(sel.k, 3, "seed {seed}");
        assert_eq!(sel.choice, KChoice::Automatic);
        assert_eq!(adjusted_rand_index(&sel.model.assignments, &truth).unwrap(), 1.0);
    }
}

#[test]
fn select_k_override() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (points, _) = three_blobs(&mut rng, 60, 10.0);
    let sel = select_k(&points, &[2, 3, 4], 0, Some(4)).unwrap();
    assert_eq!(sel.k, 4);
    assert_eq!(sel.choice, KChoice::Manual);
    assert!(select_k(&points, &[], 0, None).is_err());
    assert!(select_k(&points[..3], &[3], 0, None).is_err());
}

fn fixtures() -> Vec<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut out = Vec::new();
    for n in 3..=10 {
        for _ in 0..25 {
            let k = rng.gen_range(2..n.min(4) + 1).min(n - 1);
            let points = random_points(&mut rng, n, 3);
            let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
            // Shuffle so the forced members are not always first.
            for i in (1..n).rev() {
                labels.swap(i, rng.gen_range(0..=i));
            }
            out.push((points, labels));
        }
    }
    out
}

#[test]
fn indices_match_formula_oracles() {
    for (points, labels) in fixtures() {
        let s = silhouette(&points, &labels).unwrap();
        assert!((s - silhouette_oracle(&points, &labels)).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&s));
        let ch = calinski_harabasz(&points, &labels).unwrap();
        let ch_o = calinski_harabasz_oracle(&points, &labels);
        assert!((ch - ch_o).abs() < 1e-9 * ch_o.abs().max(1.0));
        let db = davies_bouldin(&points, &labels).unwrap();
        let db_o = davies_bouldin_oracle(&points, &labels);
        assert!((db - db_o).abs() < 1e-9 * db_o.abs().max(1.0));
    }
}

#[test]
fn index_edge_cases() {
    let p: Vec<Vec<f64>> = vec![vec![0.0], vec![0.0], vec![1.0], vec![1.0]];
    assert!(calinski_harabasz(&p, &[0, 0, 1, 1]).unwrap().is_infinite());
    let same: Vec<Vec<f64>> = vec![vec![0.0], vec![0.0], vec![0.0]];
    assert!(davies_bouldin(&same, &[0, 1, 1]).unwrap().is_infinite());
    assert!(silhouette(&p, &[0, 0, 0, 0]).is_err());
    // Singleton point 0 contributes 0.
    let s: f64 = silhouette(&[vec![0.0], vec![5.0], vec![6.0]], &[0, 1, 1]).unwrap();
    assert!((s - (4.0 / 5.0 + 5.0 / 6.0) / 3.0).abs() < 1e-15);
}

#[test]
fn ari_properties() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    assert!(adjusted_rand_index(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap() < 0.0);
    assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
}

proptest! {
    #[test]
    fn silhouette_bounded(
        raw in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 4..25),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = raw.len();
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s = silhouette(&raw, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn kmeans_assignments_are_nearest_centroid(
        raw in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 6..40),
        k in 2usize..5,
        seed in 0u64..100,
    ) {
        let m = kmeans(&raw, &KMeansConfig::new(k, seed)).unwrap();
        prop_assert_eq!(m.assignments.len(), raw.len());
        prop_assert!(m.cluster_sizes().iter().all(|&s| s > 0));
        let recomputed: f64 = raw.iter().zip(&m.assignments).map(|(p, &a)| sq_dist(p, &m.centroids[a])).sum();
        prop_assert!((recomputed - m.inertia).abs() < 1e-9);
    }

    #[test]
    fn unit_normalize_gives_unit_rows(raw in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..20)) {
        for (r, u) in raw.iter().zip(unit_normalize(&raw)) {
            let norm: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let un: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                prop_assert!((un - 1.0).abs() < 1e-12);
            }
        }
    }
}
