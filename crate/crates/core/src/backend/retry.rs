use std::time::Duration;

use super::BackendError;

/// Exponential backoff: attempt `k` (0-based) waits `base * 2^k`, capped at
/// `max_delay`, before attempt `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 4, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails permanently, or the attempt budget
    /// is spent. Only [`BackendError::Transient`] errors are retried.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, BackendError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<T, BackendError> {
        let attempts = self.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() => {
                    log::debug!("attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                    if attempt + 1 < attempts {
                        sleep(self.delay_after(attempt));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        let last = last.expect("at least one attempt");
        Err(match last {
            BackendError::Transient(msg) => {
                BackendError::Transient(format!("{msg} (gave up after {attempts} attempts)"))
            }
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn policy(n: u32) -> RetryPolicy {
        RetryPolicy { max_attempts: n, base_delay: Duration::from_millis(100), max_delay: Duration::from_millis(350) }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = policy(5);
        let delays: Vec<_> = (0..4).map(|k| p.delay_after(k).as_millis()).collect();
        assert_eq!(delays, [100, 200, 350, 350]);
        assert_eq!(p.delay_after(40), Duration::from_millis(350));
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let mut slept = Vec::new();
        let out = policy(3).run(
            |k| if k < 2 { Err(BackendError::Transient("503".into())) } else { Ok(k) },
            |d| slept.push(d.as_millis()),
        );
        assert_eq!(out, Ok(2));
        assert_eq!(slept, [100, 200]);
    }

    #[test]
    fn gives_up_after_budget() {
        let mut calls = 0;
        let out: Result<(), _> = policy(3).run(
            |_| {
                calls += 1;
                Err(BackendError::Transient("timeout".into()))
            },
            |_| {},
        );
        assert_eq!(calls, 3);
        assert!(matches!(out, Err(BackendError::Transient(m)) if m.contains("3 attempts")));
    }

    #[test]
    fn permanent_errors_are_not_retried() {
        let mut calls = 0;
        let out: Result<(), _> = policy(5).run(
            |_| {
                calls += 1;
                Err(BackendError::Permanent("401".into()))
            },
            |_| panic!("no sleep expected"),
        );
        assert_eq!(calls, 1);
        assert_eq!(out, Err(BackendError::Permanent("401".into())));
    }
}
