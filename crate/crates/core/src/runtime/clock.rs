use std::thread;
use std::time::{Duration, Instant};

use crate::sim::{to_ms, to_ticks, Tick};
use crate::Ms;

/// Time base for a session.
pub trait Clock {
    fn now_ms(&self) -> Ms;
    /// Accounts for `ms` of work done by the loop (token generation, TTFT).
    fn spend(&mut self, ms: Ms);
    /// Moves time forward to `t_ms`; no-op if already past it.
    fn advance_to(&mut self, t_ms: Ms);
}

/// Deterministic clock counting simulator ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Tick,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> Ms {
        to_ms(self.now)
    }

    fn spend(&mut self, ms: Ms) {
        self.now += to_ticks(ms);
    }

    fn advance_to(&mut self, t_ms: Ms) {
        self.now = self.now.max(to_ticks(t_ms));
    }
}

/// Wall time since construction. `spend` sleeps, so emulated costs show up
/// in real time.
#[derive(Debug, Clone, Copy)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> Ms {
        self.start.elapsed().as_secs_f64() * 1000.0
    }

    fn spend(&mut self, ms: Ms) {
        if ms > 0.0 {
            thread::sleep(Duration::from_secs_f64(ms / 1000.0));
        }
    }

    fn advance_to(&mut self, t_ms: Ms) {
        let d = t_ms - self.now_ms();
        self.spend(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_rounds_to_ticks() {
        let mut c = VirtualClock::new();
        c.spend(5.0);
        c.spend(0.004);
        assert_eq!(c.now_ms(), 5.0);
        c.advance_to(3.0);
        assert_eq!(c.now_ms(), 5.0);
        c.advance_to(7.25);
        assert_eq!(c.now_ms(), 7.25);
    }

    #[test]
    fn wall_clock_moves() {
        let mut c = WallClock::new();
        c.spend(2.0);
        assert!(c.now_ms() >= 2.0);
    }
}
