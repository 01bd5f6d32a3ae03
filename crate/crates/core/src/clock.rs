use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, TimeZone, Utc};

/// Source of wall-clock time for audit entries and submission stamps.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        // Millisecond resolution keeps serialized stamps short and stable.
        let now = Utc::now();
        Utc.timestamp_millis_opt(now.timestamp_millis()).unwrap()
    }
}

/// Deterministic clock that advances one second per reading.
#[derive(Debug)]
pub struct SteppingClock {
    next: AtomicI64,
}

impl SteppingClock {
    pub fn starting_at(epoch_seconds: i64) -> Self {
        SteppingClock {
            next: AtomicI64::new(epoch_seconds),
        }
    }
}

impl Default for SteppingClock {
    fn default() -> Self {
        // 2021-01-01T00:00:00Z
        SteppingClock::starting_at(1_609_459_200)
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> DateTime<Utc> {
        let s = self.next.fetch_add(1, Ordering::SeqCst);
        Utc.timestamp_opt(s, 0).unwrap()
    }
}
