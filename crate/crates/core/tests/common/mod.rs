//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

/// Two-group regression computed from group means and pooled residuals.
#[derive(Debug, Clone, Copy)]
pub struct TwoGroupOracle {
    pub alpha: f64,
    pub beta: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn two_group_oracle(lib: &[f64], con: &[f64]) -> TwoGroupOracle {
    let (m1, m0) = (mean(lib), mean(con));
    let ss: f64 = lib.iter().map(|x| (x - m1).powi(2)).sum::<f64>()
        + con.iter().map(|x| (x - m0).powi(2)).sum::<f64>();
    let df = (lib.len() + con.len() - 2) as f64;
    let s2 = ss / df;
    let se = (s2 * (1.0 / lib.len() as f64 + 1.0 / con.len() as f64)).sqrt();
    let beta = m1 - m0;
    let t = beta / se;
    let dist = StudentsT::new(0.0, 1.0, df).unwrap();
    TwoGroupOracle {
        alpha: m0,
        beta,
        se,
        t,
        p: 2.0 * dist.sf(t.abs()),
    }
}

fn t_density(x: f64, df: f64) -> f64 {
    let c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

// Adaptive Simpson with Richardson correction.
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Student t CDF by integrating the density from 0.
pub fn t_cdf_by_integration(t: f64, df: f64) -> f64 {
    let f = |x: f64| t_density(x, df);
    // Split the range so each piece is smooth on its own scale.
    let mut edges = vec![0.0];
    let mut e = 0.5;
    while e < t.abs() {
        edges.push(e);
        e *= 2.0;
    }
    edges.push(t.abs());
    let half: f64 = edges.windows(2).map(|w| integrate(&f, w[0], w[1], 1e-15)).sum();
    if t >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

pub fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

pub fn binomial_pmf(i: u64, n: u64, p: f64) -> f64 {
    choose(n, i) as f64 * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
}

/// P(X ≥ k) by summing every term.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    (k..=n).map(|i| binomial_pmf(i, n, p)).sum()
}

/// P(X ≥ k1) for the hypergeometric count in group 1, from exact integers.
pub fn hypergeometric_upper_tail(k1: u64, n1: u64, k2: u64, n2: u64) -> f64 {
    let total = k1 + k2;
    let num: u128 = (k1..=n1.min(total))
        .filter(|&x| total - x <= n2)
        .map(|x| choose(n1, x) * choose(n2, total - x))
        .sum();
    num as f64 / choose(n1 + n2, total) as f64
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn cluster_means(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, c) in sums.iter_mut().zip(counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

pub fn partition_inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let means = cluster_means(points, labels, k);
    points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &means[l])).sum()
}

/// Every labeling of `n` points into exactly `k` non-empty clusters.
pub fn partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let labels: Vec<usize> = (0..n)
            .map(|_| {
                let l = c % k;
                c /= k;
                l
            })
            .collect();
        let mut seen = vec![false; k];
        labels.iter().for_each(|&l| seen[l] = true);
        if seen.iter().all(|&s| s) {
            out.push(labels);
        }
    }
    out
}

/// No point is strictly closer to another cluster's mean than to its own.
pub fn lloyd_stable(points: &[Vec<f64>], labels: &[usize], k: usize) -> bool {
    let means = cluster_means(points, labels, k);
    points.iter().zip(labels).all(|(p, &l)| {
        let own = sq_dist(p, &means[l]);
        means.iter().all(|m| sq_dist(p, m) >= own - 1e-12)
    })
}

pub fn silhouette_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..n {
        let own = labels[i];
        let same: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == own).collect();
        if same.is_empty() {
            continue;
        }
        let a = same.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / same.len() as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .filter_map(|c| {
                let members: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                if members.is_empty() {
                    return None;
                }
                Some(members.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / members.len() as f64)
            })
            .fold(f64::INFINITY, f64::min);
        let d = a.max(b);
        if d > 0.0 {
            total += (b - a) / d;
        }
    }
    total / n as f64
}

pub fn calinski_harabasz_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().unwrap() + 1;
    let means = cluster_means(points, labels, k);
    let all = cluster_means(points, &vec![0; n], 1).remove(0);
    let mut between = 0.0;
    for c in 0..k {
        let size = labels.iter().filter(|&&l| l == c).count() as f64;
        between += size * sq_dist(&means[c], &all);
    }
    let within: f64 = points.iter().zip(labels).map(|(p, &l)| sq_dist(p, &means[l])).sum();
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}

pub fn davies_bouldin_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let means = cluster_means(points, labels, k);
    let scatter: Vec<f64> = (0..k)
        .map(|c| {
            let d: Vec<f64> = points
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| dist(p, &means[c]))
                .collect();
            d.iter().sum::<f64>() / d.len() as f64
        })
        .collect();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| (scatter[i] + scatter[j]) / dist(&means[i], &means[j]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / k as f64
}

/// Three isotropic blobs whose centers are `separation` apart in units of
/// the per-coordinate spread. Returns points and their planted labels.
pub fn three_blobs(rng: &mut ChaCha8Rng, n: usize, separation: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let spread = 1.0;
    let centers = [[0.0, 0.0], [separation, 0.0], [separation / 2.0, separation * 0.866]];
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 3;
        let p = centers[c]
            .iter()
            .map(|&x| x + spread * gaussian(rng))
            .collect();
        points.push(p);
        labels.push(c);
    }
    (points, labels)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect())
        .collect()
}

/// Battery config with `wordings_per_issue[i]` single-stem wordings for issue `i`.
pub fn battery_with(wordings_per_issue: &[usize]) -> silico::battery::BatteryConfig {
    use silico::battery::{BatteryConfig, IssueSpec, WordingConfig};
    let issues = wordings_per_issue
        .iter()
        .enumerate()
        .map(|(i, &w)| IssueSpec {
            issue_id: format!("issue_{i}"),
            topic: format!("topic_{}", i % 7),
            axis_ref: "good_bad".into(),
            wordings: (0..w)
                .map(|j| WordingConfig {
                    text: format!("policy {i} variant {j}"),
                    stems: Vec::new(),
                })
                .collect(),
        })
        .collect();
    BatteryConfig {
        battery_id: "synthetic".into(),
        mode: Default::default(),
        primings: Default::default(),
        sides: silico::battery::Side::BOTH.to_vec(),
        axes: vec![silico::axis::AxisSpec::new("good_bad", ["good idea"], ["bad idea"]).unwrap()],
        issues,
    }
}

/// 179 wordings spread over 49 issues.
pub fn battery_179() -> silico::battery::BatteryConfig {
    let mut counts = vec![3usize; 49];
    let extra = 179 - 3 * 49;
    counts.iter_mut().take(extra).for_each(|c| *c += 1);
    battery_with(&counts)
}
