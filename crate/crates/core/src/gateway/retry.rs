use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::BackendError;

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let cap = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        if cap == 0 {
            return Duration::ZERO;
        }
        Duration::from_millis(rand::thread_rng().gen_range(0..=cap))
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T> {
        let attempts = self.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(BackendError::Permanent { status, message }) => {
                    return Err(Error::Permanent { status, message })
                }
                Err(BackendError::Transient(message)) => {
                    last = message;
                    if attempt + 1 < attempts {
                        std::thread::sleep(self.delay(attempt));
                    }
                }
            }
        }
        Err(Error::Retryable {
            attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_after_transients() {
        let mut calls = 0;
        let out = RetryPolicy::immediate(5).run(|| {
            calls += 1;
            if calls < 3 {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok(calls)
            }
        });
        assert_eq!(out.unwrap(), 3);
    }

    #[test]
    fn gives_up_with_attempt_count() {
        let mut calls = 0;
        let out: Result<()> = RetryPolicy::immediate(5).run(|| {
            calls += 1;
            Err(BackendError::Transient("reset".into()))
        });
        assert_eq!(calls, 5);
        match out.unwrap_err() {
            Error::Retryable { attempts, message } => {
                assert_eq!(attempts, 5);
                assert_eq!(message, "reset");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn permanent_not_retried() {
        let mut calls = 0;
        let out: Result<()> = RetryPolicy::immediate(5).run(|| {
            calls += 1;
            Err(BackendError::Permanent {
                status: 400,
                message: "bad model".into(),
            })
        });
        assert_eq!(calls, 1);
        assert!(matches!(out, Err(Error::Permanent { status: 400, .. })));
    }

    #[test]
    fn delays_are_capped() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 100,
            max_delay_ms: 250,
        };
        for a in 0..10 {
            assert!(p.delay(a) <= Duration::from_millis(250));
        }
    }
}
