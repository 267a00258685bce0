use std::sync::Arc;
use std::time::Duration;

/// Fixed backoff schedule for remote calls: one initial attempt, then one retry
/// after each listed delay.
#[derive(Clone)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
    sleeper: Arc<dyn Fn(Duration) + Send + Sync>,
}

impl RetryPolicy {
    /// 1s, 4s, 16s.
    pub fn standard() -> Self {
        Self::with_delays(vec![
            Duration::from_secs(1),
            Duration::from_secs(4),
            Duration::from_secs(16),
        ])
    }

    pub fn with_delays(delays: Vec<Duration>) -> Self {
        Self { delays, sleeper: Arc::new(std::thread::sleep) }
    }

    /// Retries without waiting. Intended for tests.
    pub fn immediate(retries: usize) -> Self {
        Self::with_delays(vec![Duration::ZERO; retries]).with_sleeper(|_| {})
    }

    /// Replaces the sleep function, e.g. to record the schedule.
    pub fn with_sleeper(mut self, f: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(f);
        self
    }

    pub fn max_attempts(&self) -> usize {
        self.delays.len() + 1
    }

    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// schedule is exhausted. `op` returns `Err((error, retryable))`.
    pub(crate) fn run<T, E>(&self, mut op: impl FnMut() -> Result<T, (E, bool)>) -> Result<T, E> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err((e, retryable)) => {
                    if !retryable || attempt >= self.delays.len() {
                        return Err(e);
                    }
                    (self.sleeper)(self.delays[attempt]);
                    attempt += 1;
                }
            }
        }
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self::standard()
    }
}

impl std::fmt::Debug for RetryPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetryPolicy").field("delays", &self.delays).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    #[test]
    fn follows_schedule_then_gives_up() {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let policy = RetryPolicy::standard().with_sleeper(move |d| log.lock().unwrap().push(d));
        let mut calls = 0;
        let out: Result<(), &str> = policy.run(|| {
            calls += 1;
            Err(("down", true))
        });
        assert_eq!(out, Err("down"));
        assert_eq!(calls, 4);
        let secs: Vec<u64> = slept.lock().unwrap().iter().map(|d| d.as_secs()).collect();
        assert_eq!(secs, vec![1, 4, 16]);
    }

    #[test]
    fn non_retryable_stops_immediately() {
        let policy = RetryPolicy::immediate(3);
        let mut calls = 0;
        let out: Result<(), &str> = policy.run(|| {
            calls += 1;
            Err(("bad request", false))
        });
        assert!(out.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn succeeds_after_transient_failures() {
        let policy = RetryPolicy::immediate(3);
        let mut calls = 0;
        let out: Result<u32, &str> = policy.run(|| {
            calls += 1;
            if calls < 3 { Err(("flaky", true)) } else { Ok(7) }
        });
        assert_eq!(out, Ok(7));
    }
}
