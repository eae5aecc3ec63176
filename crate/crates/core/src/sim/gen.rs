//! Seeded random scenarios for invariant testing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device_sim::{Action, MacAddr, NetChannel, NetSetting, Scenario, ScenarioEvent, Target};
use crate::model::Verdict;

#[derive(Debug, Clone)]
pub struct GenOptions {
    pub max_events: usize,
    /// Allow dropped frames on the owner channel.
    pub owner_loss: bool,
    /// Outages that are always repaired: edge_channel, owner_channel, server, edge.
    pub outages: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            max_events: 24,
            owner_loss: true,
            outages: true,
        }
    }
}

const OUTAGE_TARGETS: [Target; 4] = [
    Target::EdgeChannel,
    Target::OwnerChannel,
    Target::Server,
    Target::Edge,
];

/// Build a scenario of presses (some repeated within the debounce window),
/// decisions (some repeated or aimed at entries that do not exist yet) and
/// short outages. Every outage is revived, so every grant can eventually
/// reach the door.
pub fn random_scenario(seed: u64, opts: &GenOptions) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let macs: Vec<MacAddr> = (1..=rng.random_range(1..=3u8))
        .map(|i| MacAddr([0xaa, 0xbb, 0xcc, 0xdd, 0xee, i]))
        .collect();
    let mut events = Vec::new();
    let mut at = 0u64;
    let mut down_until: BTreeMap<Target, u64> = BTreeMap::new();
    let mut presses = 0u64;
    let n = rng.random_range(1..=opts.max_events.max(1));
    for _ in 0..n {
        at += rng.random_range(1..=4000);
        let roll = rng.random_range(0..100);
        let action = if roll < 35 {
            presses += 1;
            Action::Press(macs[rng.random_range(0..macs.len())])
        } else if roll < 65 {
            let ordinal = if presses == 0 || rng.random_bool(0.1) {
                presses + 1
            } else {
                rng.random_range(presses.saturating_sub(2).max(1)..=presses)
            };
            let verdict = if rng.random_bool(0.7) {
                Verdict::Granted
            } else {
                Verdict::Denied
            };
            Action::Decide { ordinal, verdict }
        } else if roll < 80 && opts.outages {
            let target = OUTAGE_TARGETS[rng.random_range(0..OUTAGE_TARGETS.len())];
            if down_until.get(&target).is_some_and(|t| *t >= at) {
                continue;
            }
            let revive = at + rng.random_range(500..=8000);
            down_until.insert(target, revive);
            events.push(ScenarioEvent {
                at: revive,
                action: Action::Revive(target),
            });
            Action::Kill(target)
        } else if opts.owner_loss {
            let rate = [0.0, 0.1, 0.3][rng.random_range(0..3)];
            Action::Net(NetChannel::Owner, NetSetting::DropRate(rate))
        } else {
            continue;
        };
        events.push(ScenarioEvent { at, action });
    }
    // Event times must strictly increase.
    events.sort_by_key(|e| e.at);
    let mut last = None;
    for e in &mut events {
        if let Some(prev) = last {
            e.at = e.at.max(prev + 1);
        }
        last = Some(e.at);
    }
    Scenario { seed, events }
}
