//! Deterministic end-to-end runner.
//!
//! One edge, one coordinator and one scripted owner run in a single thread
//! under a scripted clock. Frames between them go through [`wire::Link`],
//! either in memory or over loopback TCP; the report does not depend on which.
//!
//! At each instant the runner first handles scenario events and frame
//! deliveries due at that time (in scheduling order), then runs timers
//! (edge heartbeats, retries, servo dwell, fault timeouts), and repeats until
//! nothing more is due at that instant.

pub mod gen;
mod report;
pub mod wire;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use report::Report;
pub use wire::{Dir, InFlight, Link, Transport, WireError};

use crate::device_sim::{
    mix_seed, Action, ButtonProbe, ButtonSim, Fate, ImpairPolicy, Impairment, MacAddr, NetChannel,
    NetSetting, Scenario, SettingsPatch, Target,
};
use crate::edge::{EdgeConfig, EdgeController, EdgeStats, Peripheral, PeripheralLog};
use crate::fault::{HealthReport, Thresholds, Transition};
use crate::model::AlertChannel;
use crate::model::{Access, EntryRecord, HealthState, OwnerSettings, Verdict};
use crate::protocol::{AuthToken, Body, Decision, Hello, Message, Role, SeqState, SettingsUpdate};
use crate::server::{ConnId, Coordinator, Listener, Output};
use crate::store::{Store, StoreError};

/// Time added after the last scenario event when there is no `end` line.
pub const DEFAULT_TAIL_MS: u64 = 10_000;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub transport: Transport,
    pub heartbeat_interval_ms: u64,
    pub debounce_ms: u64,
    pub queue_capacity: usize,
    pub servo_dwell_ms: u64,
    pub ack_timeout_ms: u64,
    /// Keep server state here instead of a temporary directory.
    pub data_dir: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let edge = EdgeConfig::default();
        SimConfig {
            transport: Transport::InProcess,
            heartbeat_interval_ms: edge.heartbeat_interval_ms,
            debounce_ms: edge.debounce_ms,
            queue_capacity: edge.queue_capacity,
            servo_dwell_ms: edge.servo_dwell_ms,
            ack_timeout_ms: edge.ack_timeout_ms,
            data_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invariant `{name}` violated at {at} ms: {detail}")]
    Invariant {
        name: &'static str,
        at: u64,
        detail: String,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushSeen {
    pub at: u64,
    pub entry_id: u64,
    pub ring: bool,
    pub replay: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionSeen {
    pub at: u64,
    pub ordinal: u64,
    pub entry_id: Option<u64>,
    pub verdict: Verdict,
    pub outcome: String,
}

/// Everything a run produced. `report` is the rendered summary.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: Report,
    pub end_ms: u64,
    pub entries: Vec<EntryRecord>,
    /// Distinct `access_granted` values observed per entry, in order.
    pub access_history: BTreeMap<u64, Vec<Access>>,
    pub peripheral_log: PeripheralLog,
    pub pushes: Vec<PushSeen>,
    pub decisions: Vec<DecisionSeen>,
    pub transitions: Vec<Transition>,
    pub final_health: Option<HealthReport>,
    pub edge_stats: EdgeStats,
    pub outbox_email: usize,
    pub outbox_text: usize,
}

/// Run a scenario to completion.
pub fn run(scenario: &Scenario, config: &SimConfig) -> Result<RunOutcome, SimError> {
    Runner::new(scenario, config)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Edge = 0,
    Owner = 1,
}

#[derive(Debug)]
enum Event {
    Scenario(usize),
    Probe(ButtonProbe),
    Deliver {
        side: Side,
        gen: u64,
        dir: Dir,
        frame: InFlight,
    },
}

#[derive(Debug)]
struct Slot {
    link: Link,
    conn: ConnId,
    gen: u64,
}

#[derive(Debug)]
enum EdgeInbound {
    Message(Message),
    Disconnected,
}

#[derive(Debug, Default)]
struct OwnerClient {
    seq: SeqState,
    settings: OwnerSettings,
    pushes: Vec<PushSeen>,
    fault_reports: u64,
    errors: Vec<String>,
    decisions: Vec<DecisionSeen>,
    pending: HashMap<u64, VecDeque<usize>>,
}

struct Runner<'a> {
    scenario: &'a Scenario,
    config: SimConfig,
    now: u64,
    end: u64,
    queue: BTreeMap<(u64, u64), Event>,
    next_seq: u64,
    _tmp: Option<tempfile::TempDir>,
    data_dir: PathBuf,
    outbox_dir: PathBuf,
    token: AuthToken,
    thresholds: Thresholds,
    server: Option<Coordinator>,
    edge: EdgeController,
    edge_hung: bool,
    edge_inbox: Vec<EdgeInbound>,
    buttons: BTreeMap<MacAddr, ButtonSim>,
    owner: OwnerClient,
    slots: [Option<Slot>; 2],
    impair: [Impairment; 2],
    listeners: Option<[TcpListener; 2]>,
    killed: BTreeSet<Target>,
    next_conn: ConnId,
    next_gen: u64,
    transitions: Vec<Transition>,
    access_seen: BTreeMap<u64, Vec<Access>>,
    lossy: bool,
    disrupted: bool,
    servo_killed: bool,
}

impl<'a> Runner<'a> {
    fn new(scenario: &'a Scenario, config: &SimConfig) -> Result<Runner<'a>, SimError> {
        let (tmp, data_root) = match &config.data_dir {
            Some(dir) => (None, dir.clone()),
            None => {
                let tmp = tempfile::tempdir()?;
                let root = tmp.path().to_path_buf();
                (Some(tmp), root)
            }
        };
        let seed = scenario.seed;
        let token = derive_token(seed);
        let buttons: BTreeMap<MacAddr, ButtonSim> = scenario
            .events
            .iter()
            .filter_map(|e| match e.action {
                Action::Press(mac) => Some((mac, ButtonSim::new(mac))),
                _ => None,
            })
            .collect();
        let edge = EdgeController::new(
            EdgeConfig {
                token: token.to_hex(),
                buttons: buttons.keys().copied().collect(),
                debounce_ms: config.debounce_ms,
                heartbeat_interval_ms: config.heartbeat_interval_ms,
                queue_capacity: config.queue_capacity,
                servo_dwell_ms: config.servo_dwell_ms,
                ack_timeout_ms: config.ack_timeout_ms,
                seed,
            },
            0,
        );
        let listeners = match config.transport {
            Transport::InProcess => None,
            Transport::Sockets => Some([
                TcpListener::bind("127.0.0.1:0")?,
                TcpListener::bind("127.0.0.1:0")?,
            ]),
        };
        let end = scenario
            .end_at()
            .unwrap_or_else(|| scenario.last_at() + DEFAULT_TAIL_MS);
        Ok(Runner {
            scenario,
            config: config.clone(),
            now: 0,
            end,
            queue: BTreeMap::new(),
            next_seq: 0,
            _tmp: tmp,
            data_dir: data_root.join("data"),
            outbox_dir: data_root.join("outbox"),
            token,
            thresholds: Thresholds::new(config.heartbeat_interval_ms),
            server: None,
            edge,
            edge_hung: false,
            edge_inbox: Vec::new(),
            buttons,
            owner: OwnerClient::default(),
            slots: [None, None],
            impair: [
                Impairment::new(mix_seed(seed, 1)),
                Impairment::new(mix_seed(seed, 2)),
            ],
            listeners,
            killed: BTreeSet::new(),
            next_conn: 1,
            next_gen: 1,
            transitions: Vec::new(),
            access_seen: BTreeMap::new(),
            lossy: false,
            disrupted: false,
            servo_killed: false,
        })
    }

    fn run(mut self) -> Result<RunOutcome, SimError> {
        self.start_server()?;
        for i in 0..self.scenario.events.len() {
            let at = self.scenario.events[i].at;
            self.enqueue(at, Event::Scenario(i));
        }
        while let Some(t) = self.next_time() {
            if t > self.end {
                break;
            }
            self.now = t;
            loop {
                while let Some(entry) = self.queue.first_entry() {
                    if entry.key().0 != t {
                        break;
                    }
                    let event = entry.remove();
                    self.process(event)?;
                }
                self.timers()?;
                self.check_tri_state()?;
                if !self.queue.keys().next().is_some_and(|k| k.0 == t) {
                    break;
                }
            }
        }
        self.now = self.end;
        self.finish()
    }

    fn next_time(&self) -> Option<u64> {
        let floor = self.now + 1;
        let mut t = self.queue.keys().next().map(|k| k.0);
        let mut consider = |c: u64| t = Some(t.map_or(c, |t| t.min(c)));
        if !self.edge_hung {
            consider(self.edge.next_deadline().max(floor));
        }
        if let Some(server) = &self.server {
            if let Some(d) = server.next_deadline(self.now) {
                consider(d.max(floor));
            }
        }
        t
    }

    fn enqueue(&mut self, at: u64, event: Event) {
        self.queue.insert((at, self.next_seq), event);
        self.next_seq += 1;
    }

    fn process(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Scenario(i) => self.scenario_event(i),
            Event::Probe(probe) => {
                if self.edge_hung {
                    return Ok(());
                }
                let out = self.edge.on_probe(probe, self.now);
                self.edge_send(out)
            }
            Event::Deliver {
                side,
                gen,
                dir,
                frame,
            } => {
                let Some(slot) = self.slots[side as usize].as_mut().filter(|s| s.gen == gen) else {
                    return Ok(());
                };
                let message = slot.link.receive(dir, frame)?;
                let conn = slot.conn;
                match (dir, side) {
                    (Dir::ToServer, _) => {
                        let out = match self.server.as_mut() {
                            Some(server) => server.handle(conn, message, self.now),
                            None => Vec::new(),
                        };
                        self.apply_server(out)
                    }
                    (Dir::ToClient, Side::Edge) => {
                        if self.edge_hung {
                            self.edge_inbox.push(EdgeInbound::Message(message));
                            Ok(())
                        } else {
                            self.edge_receive(message)
                        }
                    }
                    (Dir::ToClient, Side::Owner) => self.owner_receive(message),
                }
            }
        }
    }

    fn scenario_event(&mut self, i: usize) -> Result<(), SimError> {
        let now = self.now;
        match self.scenario.events[i].action.clone() {
            Action::Press(mac) => {
                let probes = self.buttons[&mac].press(now, self.scenario.seed);
                for p in probes {
                    self.enqueue(p.observed_at, Event::Probe(p));
                }
            }
            Action::Kill(target) => self.set_killed(target, true)?,
            Action::Revive(target) => self.set_killed(target, false)?,
            Action::Net(channel, setting) => {
                let side = match channel {
                    NetChannel::Edge => Side::Edge,
                    NetChannel::Owner => Side::Owner,
                };
                let imp = &mut self.impair[side as usize];
                let mut policy: ImpairPolicy = imp.policy();
                match setting {
                    NetSetting::DropRate(p) => policy.drop_rate = p,
                    NetSetting::DelayMs(d) => policy.delay_ms = d,
                }
                if policy.is_lossy() {
                    self.lossy = true;
                }
                imp.set_policy(policy)
                    .expect("scenario parser validates drop rates");
            }
            Action::Decide { ordinal, verdict } => self.owner_decide(ordinal, verdict)?,
            Action::Settings(patch) => self.owner_settings(&patch)?,
            Action::End => {}
        }
        Ok(())
    }

    fn set_killed(&mut self, target: Target, killed: bool) -> Result<(), SimError> {
        if killed {
            self.killed.insert(target);
            if !matches!(target, Target::Button | Target::Camera | Target::Buzzer) {
                self.disrupted = true;
            }
        } else {
            self.killed.remove(&target);
        }
        match target {
            Target::Button => {
                for b in self.buttons.values_mut() {
                    b.set_killed(killed);
                }
            }
            Target::Camera | Target::Buzzer | Target::Servo => {
                if target == Target::Servo && killed {
                    self.servo_killed = true;
                }
                self.edge.set_device_killed(target, killed);
            }
            Target::Edge => {
                self.edge_hung = killed;
                if !killed {
                    for inbound in std::mem::take(&mut self.edge_inbox) {
                        match inbound {
                            EdgeInbound::Message(m) => self.edge_receive(m)?,
                            EdgeInbound::Disconnected => self.edge.on_disconnected(self.now),
                        }
                    }
                }
            }
            Target::EdgeChannel => {
                if killed {
                    self.close(Side::Edge)?;
                }
            }
            Target::OwnerChannel => {
                if killed {
                    self.close(Side::Owner)?;
                } else {
                    self.connect_owner()?;
                }
            }
            Target::Server => {
                if killed {
                    self.stop_server();
                } else {
                    self.start_server()?;
                }
            }
        }
        Ok(())
    }

    fn start_server(&mut self) -> Result<(), SimError> {
        let server = Coordinator::open(
            &self.data_dir,
            &self.outbox_dir,
            self.token.clone(),
            self.thresholds,
            self.now,
        )?;
        self.server = Some(server);
        self.connect_owner()
    }

    fn stop_server(&mut self) {
        if let Some(server) = self.server.take() {
            self.transitions.extend_from_slice(server.transitions());
        }
        for side in [Side::Edge, Side::Owner] {
            if self.slots[side as usize].take().is_some() {
                self.client_lost(side);
            }
        }
    }

    fn timers(&mut self) -> Result<(), SimError> {
        let now = self.now;
        if !self.edge_hung {
            let out = self.edge.tick(now);
            self.edge_send(out)?;
            if self.edge.connect_due(now) {
                let reachable =
                    self.server.is_some() && !self.killed.contains(&Target::EdgeChannel);
                if reachable {
                    self.open_slot(Side::Edge, Listener::Edge)?;
                    let hello = self.edge.on_connected(now);
                    self.edge_send(hello)?;
                } else {
                    self.edge.on_connect_failed(now);
                }
            }
        }
        if let Some(server) = self.server.as_mut() {
            let out = server.tick(now);
            self.apply_server(out)?;
        }
        Ok(())
    }

    fn open_slot(&mut self, side: Side, listener: Listener) -> Result<(), SimError> {
        let tcp = self.listeners.as_ref().map(|l| &l[side as usize]);
        let link = Link::open(self.config.transport, tcp)?;
        let conn = self.next_conn;
        self.next_conn += 1;
        let gen = self.next_gen;
        self.next_gen += 1;
        self.slots[side as usize] = Some(Slot { link, conn, gen });
        if let Some(server) = self.server.as_mut() {
            server.connect(conn, listener, self.now);
        }
        Ok(())
    }

    fn connect_owner(&mut self) -> Result<(), SimError> {
        if self.server.is_none()
            || self.killed.contains(&Target::OwnerChannel)
            || self.slots[Side::Owner as usize].is_some()
        {
            return Ok(());
        }
        self.open_slot(Side::Owner, Listener::Owner)?;
        self.owner.seq = SeqState::default();
        let hello = self.owner.seq.stamp(Hello {
            role: Role::Owner,
            token: self.token.to_hex(),
            awaiting: Vec::new(),
        });
        self.transmit(Side::Owner, Dir::ToServer, hello)
    }

    /// Tear down a link from the network side: both ends learn about it.
    fn close(&mut self, side: Side) -> Result<(), SimError> {
        let Some(slot) = self.slots[side as usize].take() else {
            return Ok(());
        };
        if let Some(server) = self.server.as_mut() {
            let out = server.disconnect(slot.conn, self.now);
            self.apply_server(out)?;
        }
        self.client_lost(side);
        Ok(())
    }

    fn client_lost(&mut self, side: Side) {
        match side {
            Side::Edge if self.edge_hung => self.edge_inbox.push(EdgeInbound::Disconnected),
            Side::Edge => self.edge.on_disconnected(self.now),
            Side::Owner => {}
        }
    }

    fn transmit(&mut self, side: Side, dir: Dir, message: Message) -> Result<(), SimError> {
        let now = self.now;
        let Some(slot) = self.slots[side as usize].as_mut() else {
            return Ok(());
        };
        let delay_ms = match self.impair[side as usize].fate() {
            Fate::Drop => return Ok(()),
            Fate::Deliver { delay_ms } => delay_ms,
        };
        let at = slot.link.schedule(dir, now, delay_ms);
        let frame = slot.link.send(dir, &message)?;
        let gen = slot.gen;
        self.enqueue(
            at,
            Event::Deliver {
                side,
                gen,
                dir,
                frame,
            },
        );
        Ok(())
    }

    fn edge_send(&mut self, out: Vec<Message>) -> Result<(), SimError> {
        for m in out {
            self.transmit(Side::Edge, Dir::ToServer, m)?;
        }
        Ok(())
    }

    fn edge_receive(&mut self, message: Message) -> Result<(), SimError> {
        if !self.edge.accept_seq(message.seq) {
            return self.close(Side::Edge);
        }
        let out = self.edge.on_message(message, self.now);
        self.edge_send(out)
    }

    fn apply_server(&mut self, out: Vec<Output>) -> Result<(), SimError> {
        for o in out {
            match o {
                Output::Send { conn, message } => {
                    if let Some(side) = self.side_of(conn) {
                        self.transmit(side, Dir::ToClient, message)?;
                    }
                }
                Output::Close { conn } => {
                    if let Some(side) = self.side_of(conn) {
                        self.close(side)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn side_of(&self, conn: ConnId) -> Option<Side> {
        [Side::Edge, Side::Owner].into_iter().find(|s| {
            self.slots[*s as usize]
                .as_ref()
                .is_some_and(|slot| slot.conn == conn)
        })
    }

    fn owner_receive(&mut self, message: Message) -> Result<(), SimError> {
        if self.owner.seq.accept(message.seq).is_err() {
            return self.close(Side::Owner);
        }
        let now = self.now;
        let owner = &mut self.owner;
        match message.body {
            Body::HelloAck(ack) => owner.settings = ack.settings,
            Body::SettingsUpdate(s) => owner.settings = s.settings,
            Body::Notify(n) => owner.pushes.push(PushSeen {
                at: now,
                entry_id: n.entry.entry_id,
                ring: n.ring,
                replay: n.replay,
            }),
            Body::DecisionAck(ack) => {
                let id = ack.entry.entry_id;
                owner.resolve(id, format!("ok access={}", ack.entry.access_granted));
            }
            Body::Error(e) => match e.entry_id {
                Some(id) => owner.resolve(id, e.code.as_str().to_string()),
                None => owner.errors.push(format!("{}: {}", e.code, e.message)),
            },
            Body::FaultReport(_) => owner.fault_reports += 1,
            _ => {}
        }
        Ok(())
    }

    fn owner_decide(&mut self, ordinal: u64, verdict: Verdict) -> Result<(), SimError> {
        let entry_id = self.server.as_ref().map(|s| {
            let ids: Vec<u64> = s.store().entries().map(|e| e.entry_id).collect();
            let n = ordinal as usize;
            match ids.get(n - 1) {
                Some(id) => *id,
                // Not created (yet): ask anyway so the server answers no-such-entry.
                None => s.store().state().next_entry_id() + (n - 1 - ids.len()) as u64,
            }
        });
        let idx = self.owner.decisions.len();
        let mut seen = DecisionSeen {
            at: self.now,
            ordinal,
            entry_id,
            verdict,
            outcome: "no response".into(),
        };
        let up = self.slots[Side::Owner as usize].is_some();
        match entry_id.filter(|_| up) {
            None => {
                seen.outcome = "skipped owner offline".into();
                self.owner.decisions.push(seen);
            }
            Some(id) => {
                self.owner.decisions.push(seen);
                self.owner.pending.entry(id).or_default().push_back(idx);
                let m = self.owner.seq.stamp(Decision {
                    entry_id: id,
                    verdict,
                });
                self.transmit(Side::Owner, Dir::ToServer, m)?;
            }
        }
        Ok(())
    }

    fn owner_settings(&mut self, patch: &SettingsPatch) -> Result<(), SimError> {
        if self.slots[Side::Owner as usize].is_none() {
            self.owner
                .errors
                .push(format!("settings skipped at {}: owner offline", self.now));
            return Ok(());
        }
        let mut settings = self.owner.settings.clone();
        if let Some(v) = patch.service_enabled {
            settings.service_enabled = v;
        }
        if let Some(v) = patch.do_not_disturb {
            settings.do_not_disturb = v;
        }
        if let Some(v) = &patch.alert_channels {
            settings.alert_channels = v.clone();
        }
        let m = self.owner.seq.stamp(SettingsUpdate { settings });
        self.transmit(Side::Owner, Dir::ToServer, m)
    }

    fn check_tri_state(&mut self) -> Result<(), SimError> {
        let Some(server) = &self.server else {
            return Ok(());
        };
        for e in server.store().entries() {
            if e.decided_at.is_some() != e.access_granted.is_decided() {
                return Err(violation(
                    "decided-at-consistency",
                    self.now,
                    format!(
                        "entry {} has access {} but decided_at {:?}",
                        e.entry_id, e.access_granted, e.decided_at
                    ),
                ));
            }
            let seen = self.access_seen.entry(e.entry_id).or_default();
            match seen.last() {
                Some(last) if *last == e.access_granted => {}
                Some(last) if last.is_decided() => {
                    return Err(violation(
                        "tri-state",
                        self.now,
                        format!("entry {} went {} -> {}", e.entry_id, last, e.access_granted),
                    ))
                }
                Some(_) if !e.access_granted.is_decided() => {}
                _ => seen.push(e.access_granted),
            }
        }
        for id in self.access_seen.keys() {
            if server.store().entry(*id).is_none() {
                return Err(violation(
                    "crash-recovery",
                    self.now,
                    format!("entry {id} disappeared from the store"),
                ));
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutcome, SimError> {
        let now = self.now;
        let final_health = self.server.as_ref().map(|s| s.health(now));
        if let Some(server) = &self.server {
            self.transitions.extend_from_slice(server.transitions());
        }
        let (entries, history) = match &self.server {
            Some(s) => (
                s.store().entries().cloned().collect::<Vec<_>>(),
                s.store().history(0, u64::MAX, usize::MAX),
            ),
            None => {
                let store = Store::open(&self.data_dir)?;
                (
                    store.entries().cloned().collect(),
                    store.history(0, u64::MAX, usize::MAX),
                )
            }
        };
        self.check_final(&entries, &history)?;

        let outbox = crate::store::Outbox::open(&self.outbox_dir)?;
        let outbox_email = outbox.records(AlertChannel::Email)?.len();
        let outbox_text = outbox.records(AlertChannel::Text)?.len();
        let log = self.edge.log().clone();
        let edge_stats = self.edge.stats();

        let mut r = Report::default();
        r.push("seed", self.scenario.seed);
        r.push("end_ms", self.end);
        r.push("entries", entries.len());
        for e in &entries {
            r.push(
                format!("entry.{}", e.entry_id),
                format!(
                    "received_at={} access={} decided_at={} camera_fault={} image={}",
                    e.received_at,
                    e.access_granted,
                    e.decided_at.map_or("-".to_string(), |t| t.to_string()),
                    e.camera_fault,
                    e.image_url.as_deref().unwrap_or("-"),
                ),
            );
        }
        let granted = entries
            .iter()
            .filter(|e| e.access_granted == Access::Yes)
            .count();
        let denied = entries
            .iter()
            .filter(|e| e.access_granted == Access::No)
            .count();
        r.push("granted", granted);
        r.push("denied", denied);
        r.push("decisions", self.owner.decisions.len());
        for (i, d) in self.owner.decisions.iter().enumerate() {
            r.push(
                format!("decision.{}", i + 1),
                format!(
                    "at={} ordinal={} entry={} verdict={} outcome={}",
                    d.at,
                    d.ordinal,
                    d.entry_id.map_or("-".to_string(), |id| id.to_string()),
                    d.verdict.as_str(),
                    d.outcome
                ),
            );
        }
        let live: Vec<&PushSeen> = self.owner.pushes.iter().filter(|p| !p.replay).collect();
        r.push("pushes", live.len());
        r.push(
            "replays",
            self.owner.pushes.iter().filter(|p| p.replay).count(),
        );
        for (i, p) in self.owner.pushes.iter().enumerate() {
            r.push(
                format!("push.{}", i + 1),
                format!(
                    "at={} entry={} ring={} replay={}",
                    p.at, p.entry_id, p.ring, p.replay
                ),
            );
        }
        r.push("outbox.email", outbox_email);
        r.push("outbox.text", outbox_text);
        r.push("buzzer.ring", log.count(Peripheral::Buzzer, "ring press"));
        r.push(
            "camera.capture",
            log.count(Peripheral::Camera, "capture press"),
        );
        r.push(
            "camera.failed",
            log.count(Peripheral::Camera, "capture failed"),
        );
        r.push("servo.open", log.count(Peripheral::Servo, "open"));
        r.push("servo.close", log.count(Peripheral::Servo, "close"));
        r.push("edge.presses", edge_stats.presses);
        r.push("edge.uploads_sent", edge_stats.uploads_sent);
        r.push("edge.dropped_uploads", edge_stats.dropped_uploads);
        r.push("edge.queued", self.edge.queued());
        r.push("edge.ignored_probes", self.edge.ignored_probes());
        r.push("owner.fault_reports", self.owner.fault_reports);
        r.push("owner.errors", self.owner.errors.len());
        for (i, e) in self.owner.errors.iter().enumerate() {
            r.push(format!("owner.error.{}", i + 1), e);
        }
        let failures = self
            .transitions
            .iter()
            .filter(|t| t.to == HealthState::Failed)
            .count();
        r.push("faults", failures);
        for (i, t) in self.transitions.iter().enumerate() {
            r.push(
                format!("fault.{}", i + 1),
                format!(
                    "at={} component={} {}->{} detail={}",
                    t.at, t.component, t.from, t.to, t.detail
                ),
            );
        }
        match &final_health {
            Some(h) => {
                let names: Vec<&str> = h.diagnosis.iter().map(|d| d.component.as_str()).collect();
                r.push(
                    "diagnosis",
                    if names.is_empty() {
                        "none".to_string()
                    } else {
                        names.join(",")
                    },
                );
                for s in &h.statuses {
                    r.push(format!("health.{}", s.component), s.state);
                }
            }
            None => r.push("diagnosis", "server down"),
        }
        for (i, l) in log.lines().iter().enumerate() {
            r.push(
                format!("log.{}", i + 1),
                format!("{} {} {}", l.at, l.peripheral.as_str(), l.action),
            );
        }

        Ok(RunOutcome {
            report: r,
            end_ms: self.end,
            entries,
            access_history: std::mem::take(&mut self.access_seen),
            peripheral_log: log,
            pushes: std::mem::take(&mut self.owner.pushes),
            decisions: std::mem::take(&mut self.owner.decisions),
            transitions: std::mem::take(&mut self.transitions),
            final_health,
            edge_stats,
            outbox_email,
            outbox_text,
        })
    }

    fn check_final(
        &self,
        entries: &[EntryRecord],
        history: &[EntryRecord],
    ) -> Result<(), SimError> {
        let now = self.now;
        let log = self.edge.log();
        let mut opens: BTreeMap<u64, usize> = BTreeMap::new();
        for l in log.lines() {
            if l.peripheral == Peripheral::Servo {
                if let Some(id) = l.action.strip_prefix("open entry ") {
                    *opens.entry(id.parse().unwrap_or(0)).or_default() += 1;
                }
            }
        }
        let by_id: BTreeMap<u64, &EntryRecord> = entries.iter().map(|e| (e.entry_id, e)).collect();
        for (id, n) in &opens {
            if *n > 1 {
                return Err(violation(
                    "exactly-one-actuation",
                    now,
                    format!("servo opened {n} times for entry {id}"),
                ));
            }
            if by_id.get(id).map(|e| e.access_granted) != Some(Access::Yes) {
                return Err(violation(
                    "actuation-safety",
                    now,
                    format!("servo opened for entry {id} without a grant"),
                ));
            }
        }
        let awaiting: BTreeSet<u64> = self.edge.awaiting().into_iter().collect();
        for e in entries.iter().filter(|e| e.access_granted == Access::Yes) {
            let id = e.entry_id;
            let explained = opens.contains_key(&id)
                || awaiting.contains(&id)
                || self.servo_killed
                || ((self.lossy || self.disrupted) && !self.edge.knows(id));
            if !explained {
                return Err(violation(
                    "exactly-one-actuation",
                    now,
                    format!("entry {id} was granted but the door never opened"),
                ));
            }
        }
        let mut seen = BTreeSet::new();
        for h in history {
            if !seen.insert(h.entry_id) {
                return Err(violation(
                    "history-completeness",
                    now,
                    format!("entry {} listed twice", h.entry_id),
                ));
            }
        }
        for e in entries {
            if self.edge.knows(e.entry_id) && !seen.contains(&e.entry_id) {
                return Err(violation(
                    "history-completeness",
                    now,
                    format!("acknowledged entry {} missing from history", e.entry_id),
                ));
            }
        }
        Ok(())
    }
}

impl OwnerClient {
    fn resolve(&mut self, entry_id: u64, outcome: String) {
        if let Some(idx) = self
            .pending
            .get_mut(&entry_id)
            .and_then(VecDeque::pop_front)
        {
            self.decisions[idx].outcome = outcome;
        }
    }
}

fn violation(name: &'static str, at: u64, detail: String) -> SimError {
    SimError::Invariant { name, at, detail }
}

/// Deterministic per-seed deployment token.
pub fn derive_token(seed: u64) -> AuthToken {
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix_seed(seed, 0x746f6b656e + i as u64).to_le_bytes());
    }
    AuthToken::from_bytes(bytes)
}

/// Parse and run a scenario file.
pub fn run_file(path: &Path, config: &SimConfig) -> Result<RunOutcome, RunFileError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RunFileError::Read(path.to_path_buf(), e))?;
    let scenario = Scenario::parse(&text)?;
    Ok(run(&scenario, config)?)
}

#[derive(Debug, Error)]
pub enum RunFileError {
    #[error("cannot read {0}: {1}")]
    Read(PathBuf, std::io::Error),
    #[error("scenario {0}")]
    Parse(#[from] crate::device_sim::ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
}
