use std::time::{Duration, Instant};

/// Monotonic session time source in microseconds.
pub trait Clock {
    fn now_us(&self) -> i64;
    /// Block until `t_us`; returns immediately if it has already passed.
    fn sleep_until(&mut self, t_us: i64);
}

/// Deterministic clock for replay and simulation. Time only moves when
/// somebody sleeps.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: i64,
}

impl VirtualClock {
    pub fn new(start_us: i64) -> Self {
        Self { now: start_us }
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> i64 {
        self.now
    }

    fn sleep_until(&mut self, t_us: i64) {
        self.now = self.now.max(t_us);
    }
}

/// Wall clock anchored at construction. Sleeps coarsely, then spins for the
/// last stretch to land close to the deadline.
#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
    spin_us: i64,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
            spin_us: 1_500,
        }
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_us(&self) -> i64 {
        self.origin.elapsed().as_micros() as i64
    }

    fn sleep_until(&mut self, t_us: i64) {
        let coarse = t_us - self.spin_us - self.now_us();
        if coarse > 0 {
            std::thread::sleep(Duration::from_micros(coarse as u64));
        }
        while self.now_us() < t_us {
            std::hint::spin_loop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_never_goes_back() {
        let mut c = VirtualClock::new(10);
        c.sleep_until(5);
        assert_eq!(c.now_us(), 10);
        c.sleep_until(1_000);
        assert_eq!(c.now_us(), 1_000);
    }

    #[test]
    fn system_clock_reaches_deadline() {
        let mut c = SystemClock::new();
        let target = c.now_us() + 3_000;
        c.sleep_until(target);
        let now = c.now_us();
        assert!(now >= target);
        assert!(now - target < 20_000, "overshoot {} us", now - target);
    }
}
