//! Press detection: probe bursts collapse into one event per press.

use std::collections::{BTreeSet, HashMap};

use crate::device_sim::{ButtonProbe, MacAddr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ButtonEvent {
    pub press_id: u64,
    pub mac: MacAddr,
    pub pressed_at: u64,
}

/// Streaming debouncer. A probe starts a new press when its MAC has no
/// earlier probe or the gap since that MAC's previous probe is at least
/// `window_ms`; every probe extends the current burst.
#[derive(Debug, Clone)]
pub struct Debouncer {
    window_ms: u64,
    allow: BTreeSet<MacAddr>,
    last_probe: HashMap<MacAddr, u64>,
    next_press_id: u64,
    ignored: u64,
}

impl Debouncer {
    /// # Panics
    /// If `window_ms` is zero.
    pub fn new(window_ms: u64, allow: impl IntoIterator<Item = MacAddr>) -> Debouncer {
        assert!(window_ms > 0, "debounce window must be positive");
        Debouncer {
            window_ms,
            allow: allow.into_iter().collect(),
            last_probe: HashMap::new(),
            next_press_id: 1,
            ignored: 0,
        }
    }

    /// Continue press numbering after `last` (used when an edge restarts).
    pub fn resume_after(&mut self, last: u64) {
        self.next_press_id = self.next_press_id.max(last + 1);
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    /// Probes dropped because their MAC is not on the allow-list.
    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn observe(&mut self, probe: ButtonProbe) -> Option<ButtonEvent> {
        if !self.allow.contains(&probe.source_mac) {
            self.ignored += 1;
            log::debug!("probe from unlisted {} ignored", probe.source_mac);
            return None;
        }
        let prev = self.last_probe.insert(probe.source_mac, probe.observed_at);
        let starts = match prev {
            None => true,
            Some(prev) => probe.observed_at.saturating_sub(prev) >= self.window_ms,
        };
        if let Some(prev) = prev.filter(|p| *p > probe.observed_at) {
            // Keep the latest time if a probe arrives out of order.
            self.last_probe.insert(probe.source_mac, prev);
        }
        if !starts {
            return None;
        }
        let press_id = self.next_press_id;
        self.next_press_id += 1;
        Some(ButtonEvent {
            press_id,
            mac: probe.source_mac,
            pressed_at: probe.observed_at,
        })
    }
}

/// Batch form of [`Debouncer`] over a time-ordered probe stream.
pub fn detect_press(probes: &[ButtonProbe], window_ms: u64, allow: &[MacAddr]) -> Vec<ButtonEvent> {
    let mut d = Debouncer::new(window_ms, allow.iter().copied());
    probes.iter().filter_map(|p| d.observe(*p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(last: u8) -> MacAddr {
        MacAddr([0xaa, 0xbb, 0xcc, 0xdd, 0xee, last])
    }

    fn probes(m: MacAddr, times: &[u64]) -> Vec<ButtonProbe> {
        times
            .iter()
            .map(|t| ButtonProbe {
                source_mac: m,
                observed_at: *t,
            })
            .collect()
    }

    #[test]
    fn one_burst_one_event() {
        let ev = detect_press(&probes(mac(1), &[0, 800, 1600]), 5000, &[mac(1)]);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].pressed_at, 0);
    }

    #[test]
    fn unknown_mac_ignored() {
        let mut d = Debouncer::new(5000, [mac(1)]);
        assert_eq!(d.observe(probes(mac(9), &[0])[0]), None);
        assert_eq!(d.ignored(), 1);
    }

    #[test]
    fn gap_at_window_splits() {
        let ev = detect_press(&probes(mac(1), &[0, 6000]), 5000, &[mac(1)]);
        assert_eq!(ev.len(), 2);
        let ev = detect_press(&probes(mac(1), &[0, 4999]), 5000, &[mac(1)]);
        assert_eq!(ev.len(), 1);
        let ev = detect_press(&probes(mac(1), &[0, 5000]), 5000, &[mac(1)]);
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn macs_debounce_independently() {
        let mut all = probes(mac(1), &[0]);
        all.extend(probes(mac(2), &[100]));
        all.extend(probes(mac(1), &[200]));
        let ev = detect_press(&all, 5000, &[mac(1), mac(2)]);
        let ids: Vec<(u64, u64)> = ev.iter().map(|e| (e.press_id, e.pressed_at)).collect();
        assert_eq!(ids, vec![(1, 0), (2, 100)]);
    }
}
