//! The in-home controller: detects presses, rings, captures, uploads, and
//! opens the door when the owner's grant comes back.
//!
//! [`EdgeController`] does no IO. Callers feed it probes, link events,
//! incoming messages and clock ticks; it returns the messages to send.

mod debounce;

use std::collections::{BTreeMap, VecDeque};

use base64::Engine;
use serde::Serialize;

pub use debounce::{detect_press, ButtonEvent, Debouncer};

use crate::device_sim::{ActuatorSim, ButtonProbe, CameraSim, MacAddr, Target};
use crate::model::{SelfStatus, Verdict};
use crate::protocol::{Body, EntryUpload, Heartbeat, Hello, Message, Role, SeqState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeConfig {
    pub token: String,
    pub buttons: Vec<MacAddr>,
    pub debounce_ms: u64,
    pub heartbeat_interval_ms: u64,
    pub queue_capacity: usize,
    pub servo_dwell_ms: u64,
    /// Resend an unacknowledged upload after this long.
    pub ack_timeout_ms: u64,
    /// Seeds camera frames.
    pub seed: u64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            token: String::new(),
            buttons: Vec::new(),
            debounce_ms: 5000,
            heartbeat_interval_ms: 1000,
            queue_capacity: 32,
            servo_dwell_ms: 5000,
            ack_timeout_ms: 3000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Peripheral {
    Buzzer,
    Camera,
    Servo,
    /// Notes from the controller itself (uploads, decisions received).
    Controller,
}

impl Peripheral {
    pub fn as_str(self) -> &'static str {
        match self {
            Peripheral::Buzzer => "buzzer",
            Peripheral::Camera => "camera",
            Peripheral::Servo => "servo",
            Peripheral::Controller => "controller",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogLine {
    pub at: u64,
    pub peripheral: Peripheral,
    pub action: String,
}

/// Append-only record of what the edge did, with non-decreasing timestamps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeripheralLog {
    lines: Vec<LogLine>,
}

impl PeripheralLog {
    pub fn push(&mut self, at: u64, peripheral: Peripheral, action: impl Into<String>) {
        let at = self.lines.last().map_or(at, |l| l.at.max(at));
        self.lines.push(LogLine {
            at,
            peripheral,
            action: action.into(),
        });
    }

    pub fn lines(&self) -> &[LogLine] {
        &self.lines
    }

    /// Lines for `peripheral` whose action starts with `prefix`.
    pub fn count(&self, peripheral: Peripheral, prefix: &str) -> usize {
        self.lines
            .iter()
            .filter(|l| l.peripheral == peripheral && l.action.starts_with(prefix))
            .count()
    }

    pub fn render(&self) -> String {
        self.lines
            .iter()
            .map(|l| format!("{} {} {}\n", l.at, l.peripheral.as_str(), l.action))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EdgeStats {
    pub presses: u64,
    pub uploads_sent: u64,
    pub retransmits: u64,
    pub dropped_uploads: u64,
    pub unknown_actuates: u64,
    pub duplicate_actuates: u64,
    pub server_errors: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActuateOutcome {
    Opened,
    Denied,
    ServoFailed,
    Duplicate,
    UnknownEntry,
}

#[derive(Debug, Clone)]
struct PendingUpload {
    press_id: u64,
    pressed_at: u64,
    image: Option<String>,
    camera_fault: bool,
    sent_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Link {
    Down { retry_at: u64 },
    Handshake,
    Up,
}

#[derive(Debug, Clone, Copy)]
struct KnownEntry {
    press_id: u64,
    actuated: bool,
}

#[derive(Debug, Clone)]
pub struct EdgeController {
    config: EdgeConfig,
    debouncer: Debouncer,
    camera: CameraSim,
    buzzer: ActuatorSim,
    servo: ActuatorSim,
    log: PeripheralLog,
    queue: VecDeque<PendingUpload>,
    link: Link,
    seq: SeqState,
    known: BTreeMap<u64, KnownEntry>,
    closes: Vec<(u64, u64)>,
    next_heartbeat: u64,
    stats: EdgeStats,
}

impl EdgeController {
    pub fn new(config: EdgeConfig, now: u64) -> EdgeController {
        assert!(
            config.heartbeat_interval_ms > 0,
            "heartbeat interval must be positive"
        );
        assert!(config.queue_capacity > 0, "queue capacity must be positive");
        EdgeController {
            debouncer: Debouncer::new(config.debounce_ms, config.buttons.iter().copied()),
            camera: CameraSim::default(),
            buzzer: ActuatorSim::buzzer(),
            servo: ActuatorSim::servo(),
            log: PeripheralLog::default(),
            queue: VecDeque::new(),
            link: Link::Down { retry_at: now },
            seq: SeqState::default(),
            known: BTreeMap::new(),
            closes: Vec::new(),
            next_heartbeat: now + config.heartbeat_interval_ms,
            stats: EdgeStats::default(),
            config,
        }
    }

    pub fn config(&self) -> &EdgeConfig {
        &self.config
    }

    pub fn log(&self) -> &PeripheralLog {
        &self.log
    }

    pub fn stats(&self) -> EdgeStats {
        self.stats
    }

    pub fn ignored_probes(&self) -> u64 {
        self.debouncer.ignored()
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    pub fn is_connected(&self) -> bool {
        self.link == Link::Up
    }

    /// Kill or revive an attached peripheral. Returns false for targets the
    /// edge does not own.
    pub fn set_device_killed(&mut self, target: Target, killed: bool) -> bool {
        match target {
            Target::Camera => self.camera.set_killed(killed),
            Target::Buzzer => self.buzzer.set_killed(killed),
            Target::Servo => self.servo.set_killed(killed),
            _ => return false,
        }
        true
    }

    /// Entries acknowledged by the server that have not been actuated yet.
    pub fn awaiting(&self) -> Vec<u64> {
        self.known
            .iter()
            .filter(|(_, k)| !k.actuated)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Whether the server acknowledged `entry_id` to this edge.
    pub fn knows(&self, entry_id: u64) -> bool {
        self.known.contains_key(&entry_id)
    }

    pub fn on_probe(&mut self, probe: ButtonProbe, now: u64) -> Vec<Message> {
        match self.debouncer.observe(probe) {
            Some(event) => self.run_press_pipeline(event, now),
            None => Vec::new(),
        }
    }

    /// Buzzer, camera, then upload (or queue while offline).
    pub fn run_press_pipeline(&mut self, event: ButtonEvent, now: u64) -> Vec<Message> {
        self.stats.presses += 1;
        let press_id = event.press_id;
        match self.buzzer.actuate() {
            Ok(()) => self
                .log
                .push(now, Peripheral::Buzzer, format!("ring press {press_id}")),
            Err(e) => self.log.push(
                now,
                Peripheral::Buzzer,
                format!("ring failed press {press_id}: {e}"),
            ),
        }
        let (image, camera_fault) = match self.camera.capture(press_id, self.config.seed) {
            Ok(img) => {
                self.log
                    .push(now, Peripheral::Camera, format!("capture press {press_id}"));
                let b64 = base64::engine::general_purpose::STANDARD.encode(img.to_pgm());
                (Some(b64), false)
            }
            Err(e) => {
                self.log.push(
                    now,
                    Peripheral::Camera,
                    format!("capture failed press {press_id}: {e}"),
                );
                (None, true)
            }
        };
        if self.queue.len() >= self.config.queue_capacity {
            if let Some(old) = self.queue.pop_front() {
                self.stats.dropped_uploads += 1;
                log::warn!("upload queue full; dropping press {}", old.press_id);
            }
        }
        self.queue.push_back(PendingUpload {
            press_id,
            pressed_at: event.pressed_at,
            image,
            camera_fault,
            sent_at: None,
        });
        if self.link == Link::Up {
            self.flush(now)
        } else {
            Vec::new()
        }
    }

    /// Whether the caller should try to (re)connect now.
    pub fn connect_due(&self, now: u64) -> bool {
        matches!(self.link, Link::Down { retry_at } if now >= retry_at)
    }

    pub fn on_connected(&mut self, _now: u64) -> Vec<Message> {
        self.seq = SeqState::default();
        self.link = Link::Handshake;
        vec![self.seq.stamp(Hello {
            role: Role::Edge,
            token: self.config.token.clone(),
            awaiting: self.awaiting(),
        })]
    }

    pub fn on_connect_failed(&mut self, now: u64) {
        self.link = Link::Down {
            retry_at: now + self.config.heartbeat_interval_ms,
        };
    }

    /// The link dropped: in-flight uploads go back to unsent.
    pub fn on_disconnected(&mut self, now: u64) {
        for p in &mut self.queue {
            p.sent_at = None;
        }
        self.on_connect_failed(now);
    }

    /// Check an incoming sequence number; `false` means drop the connection.
    pub fn accept_seq(&mut self, seq: u64) -> bool {
        self.seq.accept(seq).is_ok()
    }

    pub fn on_message(&mut self, message: Message, now: u64) -> Vec<Message> {
        match message.body {
            Body::HelloAck(_) => {
                self.link = Link::Up;
                self.next_heartbeat = now + self.config.heartbeat_interval_ms;
                let mut out = self.heartbeats();
                out.extend(self.flush(now));
                out
            }
            Body::EntryAck(ack) => {
                self.queue.retain(|p| p.press_id != ack.press_id);
                if let std::collections::btree_map::Entry::Vacant(slot) =
                    self.known.entry(ack.entry_id)
                {
                    slot.insert(KnownEntry {
                        press_id: ack.press_id,
                        actuated: false,
                    });
                    self.log.push(
                        now,
                        Peripheral::Controller,
                        format!("press {} stored as entry {}", ack.press_id, ack.entry_id),
                    );
                }
                Vec::new()
            }
            Body::Actuate(act) => {
                self.apply_decision(act.entry_id, act.verdict, now);
                Vec::new()
            }
            Body::Error(err) => {
                self.stats.server_errors += 1;
                log::warn!("server error {}: {}", err.code.as_str(), err.message);
                Vec::new()
            }
            other => {
                log::warn!("unexpected `{}` on edge channel", other.kind());
                Vec::new()
            }
        }
    }

    pub fn apply_decision(&mut self, entry_id: u64, verdict: Verdict, now: u64) -> ActuateOutcome {
        let Some(entry) = self.known.get_mut(&entry_id) else {
            self.stats.unknown_actuates += 1;
            log::warn!("actuate for unknown entry {entry_id} ignored");
            return ActuateOutcome::UnknownEntry;
        };
        if entry.actuated {
            self.stats.duplicate_actuates += 1;
            return ActuateOutcome::Duplicate;
        }
        entry.actuated = true;
        let press_id = entry.press_id;
        self.log.push(
            now,
            Peripheral::Controller,
            format!("entry {entry_id} (press {press_id}) {}", verdict.as_str()),
        );
        match verdict {
            Verdict::Denied => ActuateOutcome::Denied,
            Verdict::Granted => match self.servo.actuate() {
                Ok(()) => {
                    self.log
                        .push(now, Peripheral::Servo, format!("open entry {entry_id}"));
                    self.closes
                        .push((now + self.config.servo_dwell_ms, entry_id));
                    ActuateOutcome::Opened
                }
                Err(e) => {
                    self.log.push(
                        now,
                        Peripheral::Controller,
                        format!("servo did not open for entry {entry_id}: {e}"),
                    );
                    ActuateOutcome::ServoFailed
                }
            },
        }
    }

    /// Timers: servo auto-close, heartbeats, upload retransmits.
    pub fn tick(&mut self, now: u64) -> Vec<Message> {
        let mut due: Vec<(u64, u64)> = Vec::new();
        self.closes.retain(|c| {
            if c.0 <= now {
                due.push(*c);
                false
            } else {
                true
            }
        });
        due.sort();
        for (at, entry_id) in due {
            self.log
                .push(at, Peripheral::Servo, format!("close entry {entry_id}"));
        }

        let mut out = Vec::new();
        if now >= self.next_heartbeat {
            if self.link == Link::Up {
                out.extend(self.heartbeats());
            }
            let interval = self.config.heartbeat_interval_ms;
            let missed = (now - self.next_heartbeat) / interval + 1;
            self.next_heartbeat += missed * interval;
        }
        if self.link == Link::Up {
            let timeout = self.config.ack_timeout_ms;
            let overdue = self
                .queue
                .iter()
                .any(|p| p.sent_at.is_some_and(|s| s + timeout <= now));
            if overdue {
                for p in &mut self.queue {
                    if p.sent_at.is_some_and(|s| s + timeout <= now) {
                        p.sent_at = None;
                        self.stats.retransmits += 1;
                    }
                }
                out.extend(self.flush(now));
            }
        }
        out
    }

    /// Earliest instant at which [`tick`](Self::tick) or a reconnect has work.
    pub fn next_deadline(&self) -> u64 {
        let mut t = self.next_heartbeat;
        if let Some(c) = self.closes.iter().map(|c| c.0).min() {
            t = t.min(c);
        }
        match self.link {
            Link::Down { retry_at } => t = t.min(retry_at),
            Link::Up => {
                let timeout = self.config.ack_timeout_ms;
                if let Some(s) = self.queue.iter().filter_map(|p| p.sent_at).min() {
                    t = t.min(s + timeout);
                }
            }
            Link::Handshake => {}
        }
        t
    }

    fn heartbeats(&mut self) -> Vec<Message> {
        let checks = [
            ("edge", None),
            (
                "camera",
                self.camera.is_killed().then_some("capture failing"),
            ),
            (
                "buzzer",
                self.buzzer.is_killed().then_some("not responding"),
            ),
            ("servo", self.servo.is_killed().then_some("not responding")),
        ];
        checks
            .into_iter()
            .map(|(component, fault)| {
                self.seq.stamp(Heartbeat {
                    component: component.to_string(),
                    status: if fault.is_some() {
                        SelfStatus::Failed
                    } else {
                        SelfStatus::Ok
                    },
                    detail: fault.map(str::to_string),
                })
            })
            .collect()
    }

    fn flush(&mut self, now: u64) -> Vec<Message> {
        let mut out = Vec::new();
        for i in 0..self.queue.len() {
            if self.queue[i].sent_at.is_some() {
                continue;
            }
            self.queue[i].sent_at = Some(now);
            let p = &self.queue[i];
            let upload = EntryUpload {
                press_id: p.press_id,
                timestamp: p.pressed_at,
                image: p.image.clone(),
                camera_fault: p.camera_fault,
            };
            self.log.push(
                now,
                Peripheral::Controller,
                format!("upload press {}", p.press_id),
            );
            self.stats.uploads_sent += 1;
            out.push(self.seq.stamp(upload));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OwnerSettings;
    use crate::protocol::{Actuate, EntryAck, HelloAck};

    fn button() -> MacAddr {
        "aa:bb:cc:dd:ee:01".parse().unwrap()
    }

    fn edge() -> EdgeController {
        EdgeController::new(
            EdgeConfig {
                token: "t".into(),
                buttons: vec![button()],
                ..EdgeConfig::default()
            },
            0,
        )
    }

    fn connect(e: &mut EdgeController, now: u64) -> Vec<Message> {
        assert!(e.connect_due(now));
        e.on_connected(now);
        e.on_message(
            Message::new(
                0,
                HelloAck {
                    role: Role::Edge,
                    settings: OwnerSettings::default(),
                },
            ),
            now,
        )
    }

    fn press(e: &mut EdgeController, at: u64) -> Vec<Message> {
        e.on_probe(
            ButtonProbe {
                source_mac: button(),
                observed_at: at,
            },
            at,
        )
    }

    fn ack(e: &mut EdgeController, press_id: u64, entry_id: u64, now: u64) {
        e.on_message(Message::new(1, EntryAck { press_id, entry_id }), now);
    }

    #[test]
    fn pipeline_order_buzzer_camera_upload() {
        let mut e = edge();
        connect(&mut e, 0);
        let out = press(&mut e, 10);
        assert_eq!(out.len(), 1);
        let Body::EntryUpload(up) = &out[0].body else {
            panic!("expected upload")
        };
        assert!(up.image.is_some() && !up.camera_fault);
        let kinds: Vec<Peripheral> = e.log().lines().iter().map(|l| l.peripheral).collect();
        assert_eq!(
            kinds,
            vec![
                Peripheral::Buzzer,
                Peripheral::Camera,
                Peripheral::Controller
            ]
        );
    }

    #[test]
    fn killed_camera_degrades_upload() {
        let mut e = edge();
        connect(&mut e, 0);
        e.set_device_killed(Target::Camera, true);
        let out = press(&mut e, 10);
        let Body::EntryUpload(up) = &out[0].body else {
            panic!("expected upload")
        };
        assert!(up.image.is_none() && up.camera_fault);
        assert_eq!(e.log().count(Peripheral::Buzzer, "ring press"), 1);
    }

    #[test]
    fn granted_opens_once_then_closes() {
        let mut e = edge();
        connect(&mut e, 0);
        press(&mut e, 0);
        ack(&mut e, 1, 7, 5);
        let act = Message::new(
            2,
            Actuate {
                entry_id: 7,
                verdict: Verdict::Granted,
            },
        );
        e.on_message(act.clone(), 1000);
        e.on_message(act, 1100);
        e.tick(6000);
        assert_eq!(e.log().count(Peripheral::Servo, "open"), 1);
        assert_eq!(e.log().count(Peripheral::Servo, "close"), 1);
        assert_eq!(e.stats().duplicate_actuates, 1);
        assert!(e.awaiting().is_empty());
    }

    #[test]
    fn denied_leaves_only_a_note() {
        let mut e = edge();
        connect(&mut e, 0);
        press(&mut e, 0);
        ack(&mut e, 1, 1, 5);
        assert_eq!(
            e.apply_decision(1, Verdict::Denied, 100),
            ActuateOutcome::Denied
        );
        assert_eq!(e.log().count(Peripheral::Servo, ""), 0);
        assert_eq!(e.log().count(Peripheral::Controller, "entry 1"), 1);
    }

    #[test]
    fn unknown_entry_not_actuated() {
        let mut e = edge();
        assert_eq!(
            e.apply_decision(3, Verdict::Granted, 0),
            ActuateOutcome::UnknownEntry
        );
        assert_eq!(e.log().count(Peripheral::Servo, ""), 0);
    }

    #[test]
    fn offline_queue_drops_oldest() {
        let mut e = EdgeController::new(
            EdgeConfig {
                buttons: vec![button()],
                queue_capacity: 3,
                ..EdgeConfig::default()
            },
            0,
        );
        for i in 0..5 {
            assert!(press(&mut e, i * 10_000).is_empty());
        }
        assert_eq!(e.queued(), 3);
        assert_eq!(e.stats().dropped_uploads, 2);
        let out = connect(&mut e, 60_000);
        let ids: Vec<u64> = out
            .iter()
            .filter_map(|m| match &m.body {
                Body::EntryUpload(u) => Some(u.press_id),
                _ => None,
            })
            .collect();
        assert_eq!(ids, vec![3, 4, 5]);
    }

    #[test]
    fn unacked_upload_resent_after_timeout_and_reconnect() {
        let mut e = edge();
        connect(&mut e, 0);
        press(&mut e, 0);
        assert!(e
            .tick(2999)
            .iter()
            .all(|m| m.kind() != crate::protocol::MessageKind::EntryUpload));
        let resent = e.tick(3000);
        assert_eq!(
            resent
                .iter()
                .filter(|m| m.kind() == crate::protocol::MessageKind::EntryUpload)
                .count(),
            1
        );
        e.on_disconnected(3500);
        assert!(!e.connect_due(4000));
        let out = connect(&mut e, 4500);
        assert!(out
            .iter()
            .any(|m| m.kind() == crate::protocol::MessageKind::EntryUpload));
    }

    #[test]
    fn heartbeats_every_interval_while_connected() {
        let mut e = edge();
        let mut count = connect(&mut e, 0).len();
        for t in (100..=5000).step_by(100) {
            count += e.tick(t).len();
        }
        // One round at connect plus five timer rounds, four components each.
        assert_eq!(count, 6 * 4);
    }

    #[test]
    fn killed_camera_heartbeat_reports_failed() {
        let mut e = edge();
        connect(&mut e, 0);
        e.set_device_killed(Target::Camera, true);
        let out = e.tick(1000);
        let camera = out
            .iter()
            .find_map(|m| match &m.body {
                Body::Heartbeat(h) if h.component == "camera" => Some(h.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(camera.status, SelfStatus::Failed);
    }

    #[test]
    fn hello_lists_awaiting_entries() {
        let mut e = edge();
        connect(&mut e, 0);
        press(&mut e, 0);
        ack(&mut e, 1, 4, 10);
        e.on_disconnected(20);
        let hello = e.on_connected(1020);
        let Body::Hello(h) = &hello[0].body else {
            panic!("expected hello")
        };
        assert_eq!(h.awaiting, vec![4]);
    }
}
