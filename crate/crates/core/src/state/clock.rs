use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Contest-relative time in whole seconds. Never goes backwards.
pub trait Clock: Send + Sync {
    fn now(&self) -> u64;
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Wall clock anchored at an absolute start time, advanced by a monotonic timer.
#[derive(Debug)]
pub struct SystemClock {
    anchor: Instant,
    offset_ms: u64,
    high_water: AtomicU64,
}

impl SystemClock {
    pub fn starting_at(start_unix_ms: u64) -> Self {
        SystemClock {
            anchor: Instant::now(),
            offset_ms: unix_millis().saturating_sub(start_unix_ms),
            high_water: AtomicU64::new(0),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        let secs = (self.offset_ms + self.anchor.elapsed().as_millis() as u64) / 1000;
        self.high_water.fetch_max(secs, Ordering::SeqCst).max(secs)
    }
}

/// Test clock moved by hand.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(secs: u64) -> Self {
        ManualClock(AtomicU64::new(secs))
    }

    /// Moves the clock to `secs`; earlier values are ignored.
    pub fn set(&self, secs: u64) {
        self.0.fetch_max(secs, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: u64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn system_clock_resumes_from_anchor() {
        let c = SystemClock::starting_at(unix_millis() - 90_500);
        assert!((90..=91).contains(&c.now()));
    }

    #[test]
    fn manual_clock_is_monotone() {
        let c = ManualClock::new(10);
        c.set(5);
        assert_eq!(c.now(), 10);
        c.advance(20);
        assert_eq!(c.now(), 30);
    }
}
