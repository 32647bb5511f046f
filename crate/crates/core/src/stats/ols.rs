//! OLS of a score on a binary liberal-priming indicator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::special::{student_t_critical, student_t_two_sided};

/// Fit of `score = alpha + beta * [liberal]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit<T> {
    pub alpha: T,
    /// Liberal-priming coefficient.
    pub beta: T,
    pub se: T,
    pub t_stat: T,
    /// Two-sided, from the t distribution with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub df: usize,
    pub n_lib: usize,
    pub n_con: usize,
    /// Residual variance was zero; `p_value` is 0 when beta ≠ 0 and 1 otherwise.
    pub degenerate: bool,
}

impl<T: Scalar> OlsFit<T> {
    /// Two-sided confidence interval for beta at `level` (e.g. 0.95).
    pub fn confidence_interval(&self, level: f64) -> (T, T) {
        if self.degenerate {
            return (self.beta, self.beta);
        }
        let crit = T::from_f64_lossy(student_t_critical(1.0 - level, self.df as f64));
        (self.beta - crit * self.se, self.beta + crit * self.se)
    }
}

/// Solves the 2×2 normal equations for the design `[1, x]` with `x ∈ {0, 1}`
/// and derives the classical standard error of the slope.
pub fn ols_binary<T: Scalar>(lib: &[T], con: &[T]) -> Result<OlsFit<T>> {
    let (n1, n0) = (lib.len(), con.len());
    let n = n1 + n0;
    if n1 == 0 || n0 == 0 {
        return Err(Error::Domain(format!(
            "each group needs an observation (liberal {n1}, conservative {n0})"
        )));
    }
    if n < 3 {
        return Err(Error::Domain(format!("need at least 3 observations, got {n}")));
    }
    if lib.iter().chain(con).any(|y| !y.is_finite()) {
        return Err(Error::Domain("non-finite score".into()));
    }

    let nt = T::from_usize_lossy(n);
    let n1t = T::from_usize_lossy(n1);
    let n0t = T::from_usize_lossy(n0);

    // Center y for conditioning; the slope is unaffected.
    let center = lib.iter().chain(con).copied().sum::<T>() / nt;
    let s_lib: T = lib.iter().map(|&y| y - center).sum();
    let s_all: T = s_lib + con.iter().map(|&y| y - center).sum::<T>();

    // X'X = [[n, n1], [n1, n1]], det = n1 * n0.
    let det = n1t * n0t;
    let beta = (nt * s_lib - n1t * s_all) / det;
    let alpha_c = (n1t * s_all - n1t * s_lib) / det;
    let alpha = alpha_c + center;

    let rss: T = lib
        .iter()
        .map(|&y| y - center - alpha_c - beta)
        .chain(con.iter().map(|&y| y - center - alpha_c))
        .map(|e| e * e)
        .sum();

    let df = n - 2;
    let scale = lib
        .iter()
        .chain(con)
        .map(|&y| (y - center).abs())
        .fold(T::zero(), T::max);
    let floor = nt * (T::epsilon() * scale).powi(2) * T::from_f64_lossy(16.0);
    if rss <= floor {
        let p_value = if beta == T::zero() { 1.0 } else { 0.0 };
        let t_stat = if beta == T::zero() {
            T::zero()
        } else {
            T::infinity() * beta.signum()
        };
        return Ok(OlsFit {
            alpha,
            beta,
            se: T::zero(),
            t_stat,
            p_value,
            df,
            n_lib: n1,
            n_con: n0,
            degenerate: true,
        });
    }

    let sigma2 = rss / T::from_usize_lossy(df);
    // (X'X)^{-1}[1][1] = n / det
    let se = (sigma2 * nt / det).sqrt();
    let t_stat = beta / se;
    let p_value = student_t_two_sided(t_stat.as_f64(), df as f64);
    Ok(OlsFit {
        alpha,
        beta,
        se,
        t_stat,
        p_value,
        df,
        n_lib: n1,
        n_con: n0,
        degenerate: false,
    })
}
