//! Heartbeat failure detection and fault localization.
//!
//! Peripheral components (edge, camera, buzzer, servo) are judged by the age
//! of their last heartbeat: `ok` up to `suspect_after` intervals, `suspected`
//! up to `fail_after` intervals, `failed` beyond. A heartbeat that reports
//! `failed` wins immediately over the timeout. Channels and the store change
//! state on events (connect, disconnect, write failure).
//!
//! Diagnoses collapse cascades: while the edge channel is down, everything
//! behind it is `unreachable` rather than failed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::model::{HealthState, SelfStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Edge,
    Camera,
    Buzzer,
    Servo,
    Store,
    EdgeChannel,
    OwnerChannel,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Edge,
        Component::Camera,
        Component::Buzzer,
        Component::Servo,
        Component::Store,
        Component::EdgeChannel,
        Component::OwnerChannel,
    ];

    /// Components that report through heartbeats from the edge.
    pub const PERIPHERALS: [Component; 4] = [
        Component::Edge,
        Component::Camera,
        Component::Buzzer,
        Component::Servo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Edge => "edge",
            Component::Camera => "camera",
            Component::Buzzer => "buzzer",
            Component::Servo => "servo",
            Component::Store => "store",
            Component::EdgeChannel => "edge_channel",
            Component::OwnerChannel => "owner_channel",
        }
    }

    pub fn is_peripheral(self) -> bool {
        Self::PERIPHERALS.contains(&self)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown component `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub interval_ms: u64,
    pub suspect_after: u64,
    pub fail_after: u64,
}

impl Thresholds {
    pub fn new(interval_ms: u64) -> Thresholds {
        Thresholds {
            interval_ms,
            suspect_after: 2,
            fail_after: 4,
        }
    }

    fn suspect_ms(&self) -> u64 {
        self.interval_ms * self.suspect_after
    }

    fn fail_ms(&self) -> u64 {
        self.interval_ms * self.fail_after
    }

    /// State for a heartbeat last seen at `last_seen`, judged at `now`.
    pub fn classify(&self, last_seen: u64, now: u64) -> HealthState {
        let age = now.saturating_sub(last_seen);
        if age <= self.suspect_ms() {
            HealthState::Ok
        } else if age <= self.fail_ms() {
            HealthState::Suspected
        } else {
            HealthState::Failed
        }
    }

    /// First instant at which a silent component counts as failed.
    pub fn failed_at(&self, last_seen: u64) -> u64 {
        last_seen + self.fail_ms() + 1
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds::new(1000)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComponentStatus {
    pub component: Component,
    pub state: HealthState,
    pub last_seen: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiagnosisItem {
    pub component: Component,
    pub failed_at: u64,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HealthReport {
    pub generated_at: u64,
    pub statuses: Vec<ComponentStatus>,
    /// Failed components, most recently failed first.
    pub diagnosis: Vec<DiagnosisItem>,
}

/// `key=value` lines, as served on `/healthz`.
impl fmt::Display for HealthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "generated_at={}", self.generated_at)?;
        let names: Vec<&str> = self
            .diagnosis
            .iter()
            .map(|d| d.component.as_str())
            .collect();
        if names.is_empty() {
            writeln!(f, "diagnosis=none")?;
        } else {
            writeln!(f, "diagnosis={}", names.join(","))?;
        }
        for d in &self.diagnosis {
            writeln!(
                f,
                "failed.{}=at={} cause={}",
                d.component, d.failed_at, d.cause
            )?;
        }
        for s in &self.statuses {
            write!(
                f,
                "status.{}={} last_seen={}",
                s.component, s.state, s.last_seen
            )?;
            if !s.detail.is_empty() {
                write!(f, " detail={}", s.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub at: u64,
    pub component: Component,
    pub from: HealthState,
    pub to: HealthState,
    pub detail: String,
}

#[derive(Debug, Clone)]
enum Tracker {
    Heartbeat {
        last_seen: u64,
        self_failed: Option<(u64, String)>,
    },
    Channel {
        /// `None` until the first connect.
        connected: Option<bool>,
        changed_at: u64,
    },
    Store {
        failure: Option<(u64, String)>,
        last_ok: u64,
    },
}

/// Judged state of one component before cascade collapse.
struct Judged {
    state: HealthState,
    since: u64,
    last_seen: u64,
    detail: String,
}

#[derive(Debug, Clone)]
pub struct FaultMonitor {
    thresholds: Thresholds,
    started_at: u64,
    trackers: BTreeMap<Component, Tracker>,
    owner_sessions: usize,
    last_states: BTreeMap<Component, HealthState>,
    unknown_heartbeats: u64,
}

impl FaultMonitor {
    pub fn new(thresholds: Thresholds, now: u64) -> FaultMonitor {
        let mut trackers = BTreeMap::new();
        for c in Component::PERIPHERALS {
            trackers.insert(
                c,
                Tracker::Heartbeat {
                    last_seen: now,
                    self_failed: None,
                },
            );
        }
        for c in [Component::EdgeChannel, Component::OwnerChannel] {
            trackers.insert(
                c,
                Tracker::Channel {
                    connected: None,
                    changed_at: now,
                },
            );
        }
        trackers.insert(
            Component::Store,
            Tracker::Store {
                failure: None,
                last_ok: now,
            },
        );
        let last_states = Component::ALL
            .into_iter()
            .map(|c| (c, HealthState::Ok))
            .collect();
        FaultMonitor {
            thresholds,
            started_at: now,
            trackers,
            owner_sessions: 0,
            last_states,
            unknown_heartbeats: 0,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn unknown_heartbeats(&self) -> u64 {
        self.unknown_heartbeats
    }

    /// Record a heartbeat. Unknown or non-peripheral ids are counted and ignored.
    pub fn observe_heartbeat(
        &mut self,
        component: &str,
        status: SelfStatus,
        detail: Option<&str>,
        now: u64,
    ) -> Option<ComponentStatus> {
        let parsed = component
            .parse::<Component>()
            .ok()
            .filter(|c| c.is_peripheral());
        let Some(component) = parsed else {
            self.unknown_heartbeats += 1;
            log::warn!("heartbeat from unknown component `{component}` ignored");
            return None;
        };
        if let Some(Tracker::Heartbeat {
            last_seen,
            self_failed,
        }) = self.trackers.get_mut(&component)
        {
            *last_seen = (*last_seen).max(now);
            match status {
                SelfStatus::Ok => *self_failed = None,
                SelfStatus::Failed => {
                    if self_failed.is_none() {
                        *self_failed = Some((now, detail.unwrap_or("unspecified").to_string()));
                    }
                }
            }
        }
        Some(self.status(component, now))
    }

    /// A peripheral reported failure outside its heartbeat (e.g. an upload
    /// flagged with a camera fault).
    pub fn observe_self_failure(&mut self, component: Component, detail: &str, now: u64) {
        if component.is_peripheral() {
            self.observe_heartbeat(component.as_str(), SelfStatus::Failed, Some(detail), now);
        }
    }

    /// A reconnect restarts the peripherals' timeout clocks: they were
    /// unreachable, not silent. Self-reported failures stay until cleared.
    pub fn observe_edge_channel(&mut self, connected: bool, now: u64) {
        self.set_channel(Component::EdgeChannel, connected, now);
        if connected {
            for c in Component::PERIPHERALS {
                if let Some(Tracker::Heartbeat { last_seen, .. }) = self.trackers.get_mut(&c) {
                    *last_seen = (*last_seen).max(now);
                }
            }
        }
    }

    /// Owner channel is up while at least one owner or bridge session is open.
    pub fn observe_owner_session(&mut self, opened: bool, now: u64) {
        if opened {
            self.owner_sessions += 1;
        } else {
            self.owner_sessions = self.owner_sessions.saturating_sub(1);
        }
        self.set_channel(Component::OwnerChannel, self.owner_sessions > 0, now);
    }

    fn set_channel(&mut self, component: Component, up: bool, now: u64) {
        if let Some(Tracker::Channel {
            connected,
            changed_at,
        }) = self.trackers.get_mut(&component)
        {
            if *connected != Some(up) {
                *connected = Some(up);
                *changed_at = now;
            }
        }
    }

    pub fn observe_store(&mut self, result: Result<(), &str>, now: u64) {
        if let Some(Tracker::Store { failure, last_ok }) = self.trackers.get_mut(&Component::Store)
        {
            match result {
                Ok(()) => {
                    *failure = None;
                    *last_ok = now;
                }
                Err(detail) => {
                    if failure.is_none() {
                        *failure = Some((now, detail.to_string()));
                    }
                }
            }
        }
    }

    fn judge(&self, component: Component, now: u64) -> Judged {
        let t = &self.thresholds;
        match &self.trackers[&component] {
            Tracker::Heartbeat {
                last_seen,
                self_failed: Some((at, detail)),
            } => Judged {
                state: HealthState::Failed,
                since: *at,
                last_seen: *last_seen,
                detail: format!("self-reported failure: {detail}"),
            },
            Tracker::Heartbeat {
                last_seen,
                self_failed: None,
            } => timed(t, *last_seen, now, "heartbeat"),
            Tracker::Channel {
                connected: Some(true),
                changed_at,
            } => Judged {
                state: HealthState::Ok,
                since: *changed_at,
                last_seen: now,
                detail: "connected".into(),
            },
            Tracker::Channel {
                connected: Some(false),
                changed_at,
            } => Judged {
                state: HealthState::Failed,
                since: *changed_at,
                last_seen: *changed_at,
                detail: format!("disconnected at {changed_at}"),
            },
            Tracker::Channel {
                connected: None, ..
            } if component == Component::OwnerChannel => Judged {
                state: HealthState::Ok,
                since: self.started_at,
                last_seen: self.started_at,
                detail: "no owner session yet".into(),
            },
            Tracker::Channel {
                connected: None, ..
            } => timed(t, self.started_at, now, "connection"),
            Tracker::Store {
                failure: Some((at, detail)),
                last_ok,
            } => Judged {
                state: HealthState::Failed,
                since: *at,
                last_seen: *last_ok,
                detail: detail.clone(),
            },
            Tracker::Store {
                failure: None,
                last_ok,
            } => Judged {
                state: HealthState::Ok,
                since: *last_ok,
                last_seen: *last_ok,
                detail: "writable".into(),
            },
        }
    }

    fn edge_link_down(&self, now: u64) -> bool {
        self.judge(Component::EdgeChannel, now).state == HealthState::Failed
    }

    /// Status of one component after cascade collapse.
    pub fn status(&self, component: Component, now: u64) -> ComponentStatus {
        let judged = self.judge(component, now);
        let (state, detail) = if component.is_peripheral() && self.edge_link_down(now) {
            (
                HealthState::Unreachable,
                "unreachable via edge_channel".to_string(),
            )
        } else {
            (judged.state, judged.detail)
        };
        ComponentStatus {
            component,
            state,
            last_seen: judged.last_seen,
            detail,
        }
    }

    pub fn diagnose(&self, now: u64) -> HealthReport {
        let statuses: Vec<ComponentStatus> = Component::ALL
            .into_iter()
            .map(|c| self.status(c, now))
            .collect();
        let mut diagnosis: Vec<DiagnosisItem> = statuses
            .iter()
            .filter(|s| s.state == HealthState::Failed)
            .map(|s| DiagnosisItem {
                component: s.component,
                failed_at: self.judge(s.component, now).since,
                cause: s.detail.clone(),
            })
            .collect();
        diagnosis.sort_by(|a, b| {
            b.failed_at
                .cmp(&a.failed_at)
                .then(a.component.cmp(&b.component))
        });
        HealthReport {
            generated_at: now,
            statuses,
            diagnosis,
        }
    }

    /// Compare current states with the previous evaluation.
    pub fn evaluate(&mut self, now: u64) -> Vec<Transition> {
        let mut out = Vec::new();
        for c in Component::ALL {
            let status = self.status(c, now);
            let prev = self.last_states.insert(c, status.state);
            if let Some(prev) = prev.filter(|p| *p != status.state) {
                out.push(Transition {
                    at: now,
                    component: c,
                    from: prev,
                    to: status.state,
                    detail: status.detail,
                });
            }
        }
        out
    }

    /// Earliest future instant at which a timeout would change some state.
    pub fn next_deadline(&self, now: u64) -> Option<u64> {
        let t = &self.thresholds;
        let mut candidates = Vec::new();
        let mut push_for = |last_seen: u64| {
            for deadline in [last_seen + t.suspect_ms() + 1, t.failed_at(last_seen)] {
                if deadline > now {
                    candidates.push(deadline);
                }
            }
        };
        for tracker in self.trackers.values() {
            match tracker {
                Tracker::Heartbeat {
                    last_seen,
                    self_failed: None,
                } => push_for(*last_seen),
                Tracker::Channel {
                    connected: None, ..
                } => push_for(self.started_at),
                _ => {}
            }
        }
        candidates.into_iter().min()
    }
}

fn timed(t: &Thresholds, last_seen: u64, now: u64, what: &str) -> Judged {
    let state = t.classify(last_seen, now);
    let age = now.saturating_sub(last_seen);
    let (since, detail) = match state {
        HealthState::Ok => (last_seen, format!("{what} {age} ms ago")),
        HealthState::Suspected => (
            last_seen + t.suspect_ms() + 1,
            format!("no {what} for {age} ms"),
        ),
        _ => (t.failed_at(last_seen), format!("no {what} for {age} ms")),
    };
    Judged {
        state,
        since,
        last_seen,
        detail,
    }
}
