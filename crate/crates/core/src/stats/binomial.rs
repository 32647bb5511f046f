//! Exact binomial tail and two-proportion tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::special::{ln_choose, normal_sf};

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    // Smallest terms first to limit rounding.
    let mut scaled: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
    scaled.sort_by(f64::total_cmp);
    max + scaled.iter().sum::<f64>().ln()
}

fn ln_binom_pmf(i: u64, n: u64, p: f64) -> f64 {
    ln_choose(n, i) + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()
}

fn check_binomial_args(k: u64, n: u64, p0: f64) -> Result<()> {
    if k > n {
        return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(Error::Domain(format!("p0 = {p0} outside (0, 1)")));
    }
    Ok(())
}

/// One-sided P(X ≥ k) for X ~ Binomial(n, p0), summed in log space.
pub fn binomial_test(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_binomial_args(k, n, p0)?;
    if k == 0 {
        return Ok(1.0);
    }
    let terms: Vec<f64> = (k..=n).map(|i| ln_binom_pmf(i, n, p0)).collect();
    Ok(log_sum_exp(&terms).exp().min(1.0))
}

/// Two-sided exact p: total probability of outcomes no more likely than `k`.
pub fn binomial_test_two_sided(k: u64, n: u64, p0: f64) -> Result<f64> {
    check_binomial_args(k, n, p0)?;
    let observed = ln_binom_pmf(k, n, p0);
    // Relative slack for ties, as in common statistical packages.
    let cutoff = observed + (1.0 + 1e-7f64).ln();
    let terms: Vec<f64> = (0..=n)
        .map(|i| ln_binom_pmf(i, n, p0))
        .filter(|&t| t <= cutoff)
        .collect();
    Ok(log_sum_exp(&terms).exp().min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProportionMethod {
    /// Pooled-variance normal approximation.
    PooledZ,
    /// Conditional (hypergeometric) tail given both margins.
    ExactConditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub p_value: f64,
    pub method: ProportionMethod,
    /// z statistic when the normal approximation was used.
    pub z: Option<f64>,
}

fn check_counts(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<()> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::Domain("two-proportion test needs n1, n2 ≥ 1".into()));
    }
    if k1 > n1 || k2 > n2 {
        return Err(Error::Domain(format!(
            "successes exceed trials ({k1}/{n1}, {k2}/{n2})"
        )));
    }
    Ok(())
}

/// One-sided test that proportion 1 exceeds proportion 2.
///
/// Uses the pooled z-test when every expected cell count is at least 5, and
/// the exact conditional tail otherwise.
pub fn two_proportion_test(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<ProportionTest> {
    check_counts(k1, n1, k2, n2)?;
    let n = (n1 + n2) as f64;
    let pooled = (k1 + k2) as f64 / n;
    let expected = [
        n1 as f64 * pooled,
        n1 as f64 * (1.0 - pooled),
        n2 as f64 * pooled,
        n2 as f64 * (1.0 - pooled),
    ];
    if expected.iter().all(|&e| e >= 5.0) {
        two_proportion_z(k1, n1, k2, n2)
    } else {
        two_proportion_exact(k1, n1, k2, n2)
    }
}

pub fn two_proportion_z(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<ProportionTest> {
    check_counts(k1, n1, k2, n2)?;
    let (p1, p2) = (k1 as f64 / n1 as f64, k2 as f64 / n2 as f64);
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let (p_value, z) = if se == 0.0 {
        // Both groups all-success or all-failure: no evidence either way.
        (1.0, None)
    } else {
        let z = (p1 - p2) / se;
        (normal_sf(z), Some(z))
    };
    Ok(ProportionTest {
        p_value,
        method: ProportionMethod::PooledZ,
        z,
    })
}

/// P(X ≥ k1) where X is group 1's success count given both margins.
pub fn two_proportion_exact(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<ProportionTest> {
    check_counts(k1, n1, k2, n2)?;
    let total = k1 + k2;
    let n = n1 + n2;
    let hi = n1.min(total);
    let ln_denominator = ln_choose(n, total);
    let terms: Vec<f64> = (k1..=hi)
        .filter(|&x| total - x <= n2)
        .map(|x| ln_choose(n1, x) + ln_choose(n2, total - x) - ln_denominator)
        .collect();
    let p_value = if k1 <= total.saturating_sub(n2) {
        1.0
    } else {
        log_sum_exp(&terms).exp().min(1.0)
    };
    Ok(ProportionTest {
        p_value,
        method: ProportionMethod::ExactConditional,
        z: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_fixtures() {
        assert!((binomial_test(1, 1, 0.5).unwrap() - 0.5).abs() < 1e-15);
        for n in [1u64, 5, 10, 30] {
            let p = binomial_test(n, n, 0.5).unwrap();
            assert!((p - 0.5f64.powi(n as i32)).abs() < 1e-15 * p.max(1e-300) + 1e-300);
        }
        assert_eq!(binomial_test(0, 7, 0.3).unwrap(), 1.0);
        assert!(binomial_test(41, 49, 0.5).unwrap() < 1e-3);
    }

    #[test]
    fn binomial_domain() {
        assert!(binomial_test(3, 2, 0.5).is_err());
        assert!(binomial_test(1, 2, 0.0).is_err());
        assert!(binomial_test(1, 2, 1.0).is_err());
    }

    #[test]
    fn two_sided_symmetric_case() {
        // Binomial(10, 0.5), k = 8: P(X ≤ 2) + P(X ≥ 8) = 2 * 56 / 1024
        let p = binomial_test_two_sided(8, 10, 0.5).unwrap();
        assert!((p - 112.0 / 1024.0).abs() < 1e-14);
        assert!((binomial_test_two_sided(5, 10, 0.5).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn equal_proportions_not_significant() {
        for (k, n) in [(3, 10), (50, 100), (0, 4)] {
            let t = two_proportion_test(k, n, k, n).unwrap();
            assert!(t.p_value >= 0.5, "{k}/{n}: {t:?}");
        }
    }

    #[test]
    fn wrong_direction_saturates() {
        let t = two_proportion_test(0, 10, 10, 10).unwrap();
        assert!(t.p_value > 0.999_99, "{t:?}");
    }

    #[test]
    fn small_counts_use_exact() {
        let t = two_proportion_test(3, 4, 0, 4).unwrap();
        assert_eq!(t.method, ProportionMethod::ExactConditional);
        // Tables with x ≥ 3 given margins (4, 4), total 3: only x = 3.
        assert!((t.p_value - 4.0 / 56.0).abs() < 1e-14);
        let t = two_proportion_test(60, 100, 40, 100).unwrap();
        assert_eq!(t.method, ProportionMethod::PooledZ);
        assert!(t.z.unwrap() > 2.8);
    }
}
