//! The coordination server as a state machine.
//!
//! Connections are identified by a caller-chosen [`ConnId`]. Every entry
//! point returns [`Output`]s (messages to send, connections to close) in the
//! order they must be performed. The network runtime and the scripted runner
//! both drive this same type.

pub mod images;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use base64::Engine;
use serde::Serialize;

use crate::device_sim::SimImage;
use crate::fault::{Component, FaultMonitor, HealthReport, Thresholds, Transition};
use crate::model::{Access, AlertChannel, EntryRecord, HealthState, OwnerSettings, Verdict};
use crate::protocol::{
    authenticate, check_permitted, Actuate, AuthToken, Body, Decision, DecisionAck, EntryAck,
    EntryUpload, ErrorBody, ErrorCode, FaultReport, HelloAck, HistoryRequest, HistoryResponse,
    Message, Notify, ProtocolError, Role, SeqState, SettingsUpdate,
};
use crate::store::{Created, DecideError, NewEntry, Outbox, OutboxRecord, Store, StoreError};

pub use images::{serve_image, ImageResponse};

pub type ConnId = u64;

/// Which listener a connection arrived on. The `hello` role must match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Listener {
    Edge,
    Owner,
    Bridge,
}

impl Listener {
    fn role(self) -> Role {
        match self {
            Listener::Edge => Role::Edge,
            Listener::Owner => Role::Owner,
            Listener::Bridge => Role::Bridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Output {
    Send { conn: ConnId, message: Message },
    Close { conn: ConnId },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ServerStats {
    pub uploads: u64,
    pub duplicate_uploads: u64,
    pub pushes: u64,
    /// Routings that found no owner connected while pushes were allowed.
    pub pushes_without_owner: u64,
    pub replays: u64,
    pub outbox_writes: u64,
    pub decisions: u64,
    pub rejected_decisions: u64,
    pub actuates: u64,
    pub fault_reports: u64,
    pub protocol_errors: u64,
    pub storage_errors: u64,
}

/// Channels used for one routed entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delivery {
    /// Owner and bridge sessions that received a live push.
    pub pushed: usize,
    /// `Ringer` is present when at least one push went out.
    pub channels: BTreeSet<AlertChannel>,
}

#[derive(Debug)]
struct Session {
    listener: Listener,
    role: Option<Role>,
    seq: SeqState,
    closing: bool,
}

#[derive(Debug)]
pub struct Coordinator {
    store: Store,
    outbox: Outbox,
    monitor: FaultMonitor,
    token: AuthToken,
    sessions: BTreeMap<ConnId, Session>,
    edge: Option<ConnId>,
    stats: ServerStats,
    transitions: Vec<Transition>,
}

impl Coordinator {
    /// Open (and recover) the store, then start monitoring at `now`.
    pub fn open(
        data_dir: &Path,
        outbox_dir: &Path,
        token: AuthToken,
        thresholds: Thresholds,
        now: u64,
    ) -> Result<Coordinator, StoreError> {
        let store = Store::open(data_dir)?;
        for w in store.recovery_warnings() {
            log::warn!("recovery: {w}");
        }
        let outbox = Outbox::open(outbox_dir)?;
        Ok(Coordinator {
            store,
            outbox,
            monitor: FaultMonitor::new(thresholds, now),
            token,
            sessions: BTreeMap::new(),
            edge: None,
            stats: ServerStats::default(),
            transitions: Vec::new(),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut Store {
        &mut self.store
    }

    pub fn outbox(&self) -> &Outbox {
        &self.outbox
    }

    pub fn monitor(&self) -> &FaultMonitor {
        &self.monitor
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    /// Every health state change seen since this instance started.
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn settings(&self) -> &OwnerSettings {
        self.store.settings()
    }

    pub fn health(&self, now: u64) -> HealthReport {
        self.monitor.diagnose(now)
    }

    pub fn image(&self, path: &str) -> ImageResponse {
        serve_image(&self.store, path)
    }

    pub fn edge_connected(&self) -> bool {
        self.edge.is_some()
    }

    pub fn connect(&mut self, conn: ConnId, listener: Listener, _now: u64) {
        self.sessions.insert(
            conn,
            Session {
                listener,
                role: None,
                seq: SeqState::default(),
                closing: false,
            },
        );
    }

    pub fn disconnect(&mut self, conn: ConnId, now: u64) -> Vec<Output> {
        if let Some(session) = self.sessions.remove(&conn) {
            match session.role {
                Some(Role::Edge) if self.edge == Some(conn) => {
                    self.edge = None;
                    self.monitor.observe_edge_channel(false, now);
                }
                Some(Role::Owner | Role::Bridge) => self.monitor.observe_owner_session(false, now),
                _ => {}
            }
        }
        let mut out = Vec::new();
        self.evaluate_faults(now, &mut out);
        out
    }

    /// A frame on `conn` could not be decoded.
    pub fn reject_frame(&mut self, conn: ConnId, err: &ProtocolError, now: u64) -> Vec<Output> {
        let mut out = Vec::new();
        self.protocol_error(conn, err, &mut out);
        self.evaluate_faults(now, &mut out);
        out
    }

    pub fn handle(&mut self, conn: ConnId, message: Message, now: u64) -> Vec<Output> {
        let mut out = Vec::new();
        self.dispatch(conn, message, now, &mut out);
        self.evaluate_faults(now, &mut out);
        out
    }

    /// Timer work: fault detection by heartbeat timeout.
    pub fn tick(&mut self, now: u64) -> Vec<Output> {
        let mut out = Vec::new();
        self.evaluate_faults(now, &mut out);
        out
    }

    pub fn next_deadline(&self, now: u64) -> Option<u64> {
        self.monitor.next_deadline(now)
    }

    fn dispatch(&mut self, conn: ConnId, message: Message, now: u64, out: &mut Vec<Output>) {
        let Some(session) = self.sessions.get_mut(&conn).filter(|s| !s.closing) else {
            return;
        };
        if let Err(e) = session.seq.accept(message.seq) {
            self.protocol_error(conn, &e, out);
            return;
        }
        let kind = message.kind();
        let Some(role) = session.role else {
            self.handle_hello(conn, message, now, out);
            return;
        };
        if let Err(e) = check_permitted(role, kind) {
            self.protocol_error(conn, &e, out);
            return;
        }
        match message.body {
            Body::EntryUpload(upload) => self.handle_upload(conn, upload, now, out),
            Body::Heartbeat(hb) => {
                self.monitor
                    .observe_heartbeat(&hb.component, hb.status, hb.detail.as_deref(), now);
            }
            Body::Decision(d) => self.handle_decision(conn, d, now, out),
            Body::SettingsUpdate(s) => self.update_settings(conn, s.settings, now, out),
            Body::HistoryRequest(req) => self.list_history(conn, req, out),
            other => log::warn!("permitted but unhandled `{}`", other.kind()),
        }
    }

    fn handle_hello(&mut self, conn: ConnId, message: Message, now: u64, out: &mut Vec<Output>) {
        if !matches!(message.body, Body::Hello(_)) {
            let err = ErrorBody {
                code: ErrorCode::NotAuthenticated,
                message: format!("expected hello, got {}", message.kind()),
                entry_id: None,
            };
            self.send_error(conn, err, out);
            return;
        }
        let role = match authenticate(&message, &self.token) {
            Ok(role) => role,
            Err(e) => {
                self.protocol_error(conn, &e, out);
                return;
            }
        };
        let listener = self.sessions[&conn].listener;
        if listener.role() != role {
            let err = ErrorBody {
                code: ErrorCode::RoleViolation,
                message: format!(
                    "role {} is not accepted on the {} listener",
                    role.as_str(),
                    listener.role().as_str()
                ),
                entry_id: None,
            };
            self.send_error(conn, err, out);
            return;
        }
        self.sessions.get_mut(&conn).expect("session").role = Some(role);
        let ack = HelloAck {
            role,
            settings: self.store.settings().clone(),
        };
        self.send(conn, ack, out);
        let Body::Hello(hello) = message.body else {
            unreachable!()
        };
        match role {
            Role::Edge => {
                if let Some(old) = self.edge.replace(conn) {
                    log::warn!("edge reconnected; closing previous edge connection");
                    self.sessions.remove(&old);
                    out.push(Output::Close { conn: old });
                }
                self.monitor.observe_edge_channel(true, now);
                for id in hello.awaiting {
                    match self.store.entry(id) {
                        Some(rec) if rec.access_granted.is_decided() => {
                            let verdict = match rec.access_granted {
                                Access::Yes => Verdict::Granted,
                                _ => Verdict::Denied,
                            };
                            self.stats.actuates += 1;
                            self.send(
                                conn,
                                Actuate {
                                    entry_id: id,
                                    verdict,
                                },
                                out,
                            );
                        }
                        Some(_) => {}
                        None => log::warn!("edge awaits unknown entry {id}"),
                    }
                }
            }
            Role::Owner | Role::Bridge => {
                self.monitor.observe_owner_session(true, now);
                if self.store.settings().allows_push() {
                    let pending: Vec<EntryRecord> = self
                        .store
                        .entries()
                        .filter(|e| !e.access_granted.is_decided())
                        .cloned()
                        .collect();
                    for entry in pending {
                        self.stats.replays += 1;
                        self.send(
                            conn,
                            Notify {
                                entry,
                                ring: false,
                                replay: true,
                            },
                            out,
                        );
                    }
                }
            }
        }
    }

    fn handle_upload(
        &mut self,
        conn: ConnId,
        upload: EntryUpload,
        now: u64,
        out: &mut Vec<Output>,
    ) {
        let image = match upload.image.as_deref().map(decode_image).transpose() {
            Ok(image) => image,
            Err(reason) => {
                let e = ProtocolError::malformed("image", reason);
                self.protocol_error(conn, &e, out);
                return;
            }
        };
        let created = self.store.create_entry(
            NewEntry {
                received_at: now,
                image_pgm: image.as_deref(),
                camera_fault: upload.camera_fault,
                press_id: upload.press_id,
                pressed_at: upload.timestamp,
            },
            now,
        );
        let created = match created {
            Ok(c) => c,
            Err(e) => {
                self.storage_failed(conn, &e, None, now, out);
                return;
            }
        };
        self.monitor.observe_store(Ok(()), now);
        let record = created.record().clone();
        self.send(
            conn,
            EntryAck {
                press_id: upload.press_id,
                entry_id: record.entry_id,
            },
            out,
        );
        match created {
            Created::Duplicate(_) => self.stats.duplicate_uploads += 1,
            Created::Fresh(_) => {
                self.stats.uploads += 1;
                if record.camera_fault {
                    self.monitor.observe_self_failure(
                        Component::Camera,
                        "upload without picture",
                        now,
                    );
                }
                self.route_notification(&record, now, out);
            }
        }
    }

    /// Push to owners unless the service is off or DND is on; write email and
    /// text outbox records whenever the service is on.
    pub fn route_notification(
        &mut self,
        record: &EntryRecord,
        now: u64,
        out: &mut Vec<Output>,
    ) -> Delivery {
        let settings = self.store.settings().clone();
        let mut delivery = Delivery::default();
        if !settings.service_enabled {
            return delivery;
        }
        if settings.allows_push() {
            let owners = self.owner_sessions();
            if owners.is_empty() {
                self.stats.pushes_without_owner += 1;
            }
            let ring = settings.alert_channels.contains(&AlertChannel::Ringer);
            for conn in owners {
                self.send(
                    conn,
                    Notify {
                        entry: record.clone(),
                        ring,
                        replay: false,
                    },
                    out,
                );
                delivery.pushed += 1;
                self.stats.pushes += 1;
            }
            if delivery.pushed > 0 {
                delivery.channels.insert(AlertChannel::Ringer);
            }
        }
        for channel in [AlertChannel::Email, AlertChannel::Text] {
            if !settings.alert_channels.contains(&channel) {
                continue;
            }
            let rec = OutboxRecord {
                channel,
                entry_id: record.entry_id,
                written_at: now,
                rendered_text: render_alert(record),
            };
            match self.outbox.deliver(rec) {
                Ok(written) => {
                    if written {
                        self.stats.outbox_writes += 1;
                    }
                    delivery.channels.insert(channel);
                }
                Err(e) => log::warn!("{} outbox write failed: {e}", channel.as_str()),
            }
        }
        delivery
    }

    fn handle_decision(&mut self, conn: ConnId, d: Decision, now: u64, out: &mut Vec<Output>) {
        match self.store.decide(d.entry_id, d.verdict, now) {
            Ok(record) => {
                self.monitor.observe_store(Ok(()), now);
                self.stats.decisions += 1;
                self.send(
                    conn,
                    DecisionAck {
                        entry: record.clone(),
                    },
                    out,
                );
                for other in self.owner_sessions() {
                    if other != conn {
                        self.send(
                            other,
                            DecisionAck {
                                entry: record.clone(),
                            },
                            out,
                        );
                    }
                }
                if let Some(edge) = self.edge {
                    self.stats.actuates += 1;
                    self.send(
                        edge,
                        Actuate {
                            entry_id: d.entry_id,
                            verdict: d.verdict,
                        },
                        out,
                    );
                }
            }
            Err(DecideError::NoSuchEntry(id)) => {
                self.stats.rejected_decisions += 1;
                let err = ErrorBody {
                    code: ErrorCode::NoSuchEntry,
                    message: format!("no such entry {id}"),
                    entry_id: Some(id),
                };
                self.send_error(conn, err, out);
            }
            Err(DecideError::AlreadyDecided(rec)) => {
                self.stats.rejected_decisions += 1;
                let err = ErrorBody {
                    code: ErrorCode::AlreadyDecided,
                    message: format!(
                        "entry {} was already decided ({})",
                        rec.entry_id,
                        rec.access_granted.as_str()
                    ),
                    entry_id: Some(rec.entry_id),
                };
                self.send_error(conn, err, out);
            }
            Err(DecideError::Storage(e)) => {
                self.storage_failed(conn, &e, Some(d.entry_id), now, out)
            }
        }
    }

    fn update_settings(
        &mut self,
        conn: ConnId,
        settings: OwnerSettings,
        now: u64,
        out: &mut Vec<Output>,
    ) {
        if let Err(e) = self.store.set_settings(settings.clone(), now) {
            self.storage_failed(conn, &e, None, now, out);
            return;
        }
        self.monitor.observe_store(Ok(()), now);
        // The echo is the acknowledgment; other owners get it as a sync.
        self.send(
            conn,
            SettingsUpdate {
                settings: settings.clone(),
            },
            out,
        );
        for other in self.owner_sessions() {
            if other != conn {
                self.send(
                    other,
                    SettingsUpdate {
                        settings: settings.clone(),
                    },
                    out,
                );
            }
        }
    }

    fn list_history(&mut self, conn: ConnId, req: HistoryRequest, out: &mut Vec<Output>) {
        if req.from_ms > req.to_ms || req.limit == 0 {
            let err = ErrorBody {
                code: ErrorCode::MalformedPayload,
                message: "history range needs from_ms <= to_ms and limit >= 1".into(),
                entry_id: None,
            };
            // A bad query is not a framing problem; keep the session.
            self.stats.protocol_errors += 1;
            self.send(conn, Body::Error(err), out);
            return;
        }
        let entries = self
            .store
            .history(req.from_ms, req.to_ms, req.limit as usize);
        self.send(conn, HistoryResponse { entries }, out);
    }

    fn storage_failed(
        &mut self,
        conn: ConnId,
        e: &StoreError,
        entry_id: Option<u64>,
        now: u64,
        out: &mut Vec<Output>,
    ) {
        self.stats.storage_errors += 1;
        self.monitor.observe_store(Err(&e.to_string()), now);
        let err = ErrorBody {
            code: ErrorCode::StorageError,
            message: e.to_string(),
            entry_id,
        };
        self.send_error(conn, err, out);
    }

    fn evaluate_faults(&mut self, now: u64, out: &mut Vec<Output>) {
        for t in self.monitor.evaluate(now) {
            self.transitions.push(t.clone());
            if t.to != HealthState::Failed {
                continue;
            }
            log::warn!("{} failed: {}", t.component, t.detail);
            let report = FaultReport {
                component: t.component.as_str().to_string(),
                state: t.to,
                detail: t.detail,
                at: t.at,
            };
            for conn in self.owner_sessions() {
                self.stats.fault_reports += 1;
                self.send(conn, report.clone(), out);
            }
        }
    }

    fn owner_sessions(&self) -> Vec<ConnId> {
        self.sessions
            .iter()
            .filter(|(_, s)| matches!(s.role, Some(Role::Owner | Role::Bridge)))
            .map(|(id, _)| *id)
            .collect()
    }

    fn send(&mut self, conn: ConnId, body: impl Into<Body>, out: &mut Vec<Output>) {
        if let Some(session) = self.sessions.get_mut(&conn) {
            out.push(Output::Send {
                conn,
                message: session.seq.stamp(body),
            });
        }
    }

    fn protocol_error(&mut self, conn: ConnId, e: &ProtocolError, out: &mut Vec<Output>) {
        let Body::Error(err) = e.to_body() else {
            unreachable!("to_body yields error bodies")
        };
        self.send_error(conn, err, out);
    }

    /// Send an error and close the connection if the code is fatal.
    fn send_error(&mut self, conn: ConnId, err: ErrorBody, out: &mut Vec<Output>) {
        let fatal = err.code.is_fatal();
        if fatal {
            self.stats.protocol_errors += 1;
            log::info!("closing connection {conn}: {}: {}", err.code, err.message);
        }
        self.send(conn, Body::Error(err), out);
        if fatal {
            out.push(Output::Close { conn });
            // Disconnect bookkeeping happens when the caller reports the close.
            if let Some(session) = self.sessions.get_mut(&conn) {
                session.closing = true;
            }
        }
    }
}

fn decode_image(b64: &str) -> Result<Vec<u8>, String> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|e| format!("invalid base64: {e}"))?;
    SimImage::from_pgm(&bytes).map_err(|e| e.to_string())?;
    Ok(bytes)
}

fn render_alert(record: &EntryRecord) -> String {
    match &record.image_url {
        Some(url) => format!(
            "Visitor at the door: entry {} received at {}. Picture: {}",
            record.entry_id,
            record.received_at,
            url.replace(".pgm", ".png")
        ),
        None => format!(
            "Visitor at the door: entry {} received at {}. No picture (camera fault).",
            record.entry_id, record.received_at
        ),
    }
}
