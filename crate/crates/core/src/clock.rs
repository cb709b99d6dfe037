//! Time sources. Tests use [`StepClock`] so traces are reproducible.

use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, Duration, TimeZone, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Returns `start`, `start + step`, `start + 2·step`, ...
#[derive(Debug)]
pub struct StepClock {
    start: DateTime<Utc>,
    step_ms: i64,
    ticks: AtomicI64,
}

impl StepClock {
    pub fn new(start: DateTime<Utc>, step: Duration) -> Self {
        StepClock { start, step_ms: step.num_milliseconds(), ticks: AtomicI64::new(0) }
    }
}

impl Default for StepClock {
    fn default() -> Self {
        StepClock::new(Utc.with_ymd_and_hms(2024, 4, 9, 12, 0, 0).unwrap(), Duration::seconds(1))
    }
}

impl Clock for StepClock {
    fn now(&self) -> DateTime<Utc> {
        let tick = self.ticks.fetch_add(1, Ordering::SeqCst);
        self.start + Duration::milliseconds(self.step_ms * tick)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_forward() {
        let clock = StepClock::default();
        let a = clock.now();
        let b = clock.now();
        assert_eq!(b - a, Duration::seconds(1));
    }
}
