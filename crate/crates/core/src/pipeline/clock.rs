use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use chrono::{DateTime, Utc};

/// Source of event timestamps and stage durations.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    /// Monotonic milliseconds since an arbitrary origin.
    fn monotonic_ms(&self) -> f64;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn monotonic_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1000.0
    }
}

/// Deterministic clock for tests: every reading advances one step.
#[derive(Debug)]
pub struct StepClock {
    start: DateTime<Utc>,
    step_ms: u64,
    ticks: AtomicU64,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step_ms: u64) -> Self {
        Self {
            start,
            step_ms,
            ticks: AtomicU64::new(0),
        }
    }

    fn tick(&self) -> u64 {
        self.ticks.fetch_add(1, Ordering::SeqCst)
    }
}

impl Default for StepClock {
    fn default() -> Self {
        Self::new(DateTime::from_timestamp(1_700_000_000, 0).expect("valid epoch"), 1)
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        self.start + chrono::Duration::milliseconds((self.tick() * self.step_ms) as i64)
    }

    fn monotonic_ms(&self) -> f64 {
        (self.tick() * self.step_ms) as f64
    }
}
