use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Realtime,
    Scripted,
}

/// Millisecond clock. Scripted clocks only move through [`SimClock::advance_to`].
#[derive(Debug, Clone)]
pub struct SimClock {
    mode: ClockMode,
    now: u64,
}

impl SimClock {
    pub fn realtime() -> SimClock {
        SimClock {
            mode: ClockMode::Realtime,
            now: 0,
        }
    }

    pub fn scripted() -> SimClock {
        SimClock {
            mode: ClockMode::Scripted,
            now: 0,
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&self) -> u64 {
        match self.mode {
            ClockMode::Realtime => unix_millis(),
            ClockMode::Scripted => self.now,
        }
    }

    /// Move a scripted clock forward. Time never goes backwards.
    pub fn advance_to(&mut self, t: u64) {
        debug_assert_eq!(self.mode, ClockMode::Scripted);
        self.now = self.now.max(t);
    }
}

pub fn unix_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_moves_only_on_advance() {
        let mut c = SimClock::scripted();
        assert_eq!(c.now(), 0);
        c.advance_to(1500);
        c.advance_to(1000);
        assert_eq!(c.now(), 1500);
    }

    #[test]
    fn realtime_is_epoch_based() {
        assert!(SimClock::realtime().now() > 1_600_000_000_000);
    }
}
