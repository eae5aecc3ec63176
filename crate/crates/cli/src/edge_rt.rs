//! Live edge process: one event loop owning the [`EdgeController`], the
//! simulated devices and the server connection, plus a line-based control
//! port for fault injection.
//!
//! Control port commands are the scenario verbs without a time
//! (`press <mac>`, `kill camera`, `net edge_channel drop 0.5`, ...) plus
//! `log` (peripheral log) and `status`. Each reply ends with a line `ok` or
//! `error: <reason>`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use dashbell_core::config::EdgeFileConfig;
use dashbell_core::device_sim::{
    parse_command, unix_millis, Action, ButtonProbe, ButtonSim, Fate, Impairment, NetChannel,
    NetSetting, Target,
};
use dashbell_core::edge::EdgeController;
use dashbell_core::protocol::{encode_frame, FrameDecoder, Message};

const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

struct Control {
    line: String,
    reply: oneshot::Sender<String>,
}

enum Inbound {
    Connected { gen: u64, stream: TcpStream },
    ConnectFailed,
    Message { gen: u64, message: Message },
    Lost { gen: u64 },
}

struct Conn {
    gen: u64,
    tx: mpsc::UnboundedSender<(Vec<u8>, u64)>,
    reader: JoinHandle<()>,
}

impl Drop for Conn {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

pub struct RunningEdge {
    pub control_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl RunningEdge {
    pub fn stop(self) {
        self.task.abort();
    }

    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

/// Bind the control port and start the edge loop.
pub async fn start(config: EdgeFileConfig, control_host: &str) -> std::io::Result<RunningEdge> {
    let control = TcpListener::bind((control_host, config.control_port)).await?;
    let control_addr = control.local_addr()?;
    let (ctl_tx, ctl_rx) = mpsc::unbounded_channel();
    let accept = tokio::spawn(accept_control(control, ctl_tx));
    let task = tokio::spawn(async move {
        EdgeLoop::new(config).run(ctl_rx).await;
        accept.abort();
    });
    log::info!("edge control port on {control_addr}");
    Ok(RunningEdge { control_addr, task })
}

async fn accept_control(listener: TcpListener, tx: mpsc::UnboundedSender<Control>) {
    while let Ok((stream, _)) = listener.accept().await {
        let tx = tx.clone();
        tokio::spawn(async move {
            let (rd, mut wr) = stream.into_split();
            let mut lines = BufReader::new(rd).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if line.trim().is_empty() {
                    continue;
                }
                let (reply_tx, reply_rx) = oneshot::channel();
                if tx
                    .send(Control {
                        line,
                        reply: reply_tx,
                    })
                    .is_err()
                {
                    return;
                }
                let Ok(reply) = reply_rx.await else { return };
                if wr.write_all(reply.as_bytes()).await.is_err() {
                    return;
                }
            }
        });
    }
}

struct EdgeLoop {
    edge: EdgeController,
    addr: String,
    buttons: BTreeMap<dashbell_core::device_sim::MacAddr, ButtonSim>,
    probes: BTreeMap<(u64, u64), ButtonProbe>,
    probe_seq: u64,
    conn: Option<Conn>,
    connecting: bool,
    next_gen: u64,
    hung: bool,
    held: Vec<Inbound>,
    channel_killed: bool,
    impair: Impairment,
    inbound_tx: mpsc::UnboundedSender<Inbound>,
    inbound_rx: mpsc::UnboundedReceiver<Inbound>,
}

impl EdgeLoop {
    fn new(config: EdgeFileConfig) -> EdgeLoop {
        let buttons = config
            .edge
            .buttons
            .iter()
            .map(|m| (*m, ButtonSim::new(*m)))
            .collect();
        let seed = config.edge.seed;
        let (inbound_tx, inbound_rx) = mpsc::unbounded_channel();
        EdgeLoop {
            edge: EdgeController::new(config.edge, unix_millis()),
            addr: format!("{}:{}", config.server_host, config.server_port),
            buttons,
            probes: BTreeMap::new(),
            probe_seq: 0,
            conn: None,
            connecting: false,
            next_gen: 1,
            hung: false,
            held: Vec::new(),
            channel_killed: false,
            impair: Impairment::new(seed),
            inbound_tx,
            inbound_rx,
        }
    }

    async fn run(mut self, mut ctl: mpsc::UnboundedReceiver<Control>) {
        loop {
            let wake = self.next_wake();
            let sleep = wake.saturating_sub(unix_millis()).min(60_000);
            tokio::select! {
                c = ctl.recv() => match c {
                    Some(c) => {
                        let reply = self.control(&c.line);
                        let _ = c.reply.send(reply);
                    }
                    None => return,
                },
                Some(i) = self.inbound_rx.recv() => self.inbound(i),
                _ = tokio::time::sleep(Duration::from_millis(sleep)) => {}
            }
            self.timers();
        }
    }

    fn next_wake(&self) -> u64 {
        let mut t = if self.hung {
            u64::MAX
        } else {
            self.edge.next_deadline()
        };
        if let Some(((at, _), _)) = self.probes.first_key_value() {
            t = t.min(*at);
        }
        t
    }

    fn timers(&mut self) {
        let now = unix_millis();
        while let Some(entry) = self.probes.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let probe = entry.remove();
            if !self.hung {
                let out = self.edge.on_probe(probe, now);
                self.send(out);
            }
        }
        if self.hung {
            return;
        }
        let out = self.edge.tick(now);
        self.send(out);
        if self.edge.connect_due(now) && !self.connecting && self.conn.is_none() {
            if self.channel_killed {
                self.edge.on_connect_failed(now);
            } else {
                self.spawn_connect();
            }
        }
    }

    fn spawn_connect(&mut self) {
        self.connecting = true;
        let gen = self.next_gen;
        self.next_gen += 1;
        let addr = self.addr.clone();
        let tx = self.inbound_tx.clone();
        tokio::spawn(async move {
            let r = tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(&addr)).await;
            let msg = match r {
                Ok(Ok(stream)) => Inbound::Connected { gen, stream },
                _ => Inbound::ConnectFailed,
            };
            let _ = tx.send(msg);
        });
    }

    fn inbound(&mut self, i: Inbound) {
        if self.hung {
            self.held.push(i);
            return;
        }
        let now = unix_millis();
        let current = self.conn.as_ref().map(|c| c.gen);
        match i {
            Inbound::Connected { gen, stream } => {
                self.connecting = false;
                if self.channel_killed {
                    self.edge.on_connect_failed(now);
                    return;
                }
                self.attach(gen, stream);
                let hello = self.edge.on_connected(now);
                self.send(hello);
            }
            Inbound::ConnectFailed => {
                self.connecting = false;
                self.edge.on_connect_failed(now);
            }
            Inbound::Message { gen, message } if Some(gen) == current => {
                if !self.edge.accept_seq(message.seq) {
                    self.drop_conn();
                    return;
                }
                let out = self.edge.on_message(message, now);
                self.send(out);
            }
            Inbound::Lost { gen } if Some(gen) == current => self.drop_conn(),
            Inbound::Message { .. } | Inbound::Lost { .. } => {}
        }
    }

    fn attach(&mut self, gen: u64, stream: TcpStream) {
        let _ = stream.set_nodelay(true);
        let (mut rd, mut wr) = stream.into_split();
        let (tx, mut rx) = mpsc::unbounded_channel::<(Vec<u8>, u64)>();
        tokio::spawn(async move {
            while let Some((frame, delay)) = rx.recv().await {
                if delay > 0 {
                    tokio::time::sleep(Duration::from_millis(delay)).await;
                }
                if wr.write_all(&frame).await.is_err() {
                    break;
                }
            }
            let _ = wr.shutdown().await;
        });
        let inbound = self.inbound_tx.clone();
        let reader = tokio::spawn(async move {
            let mut decoder = FrameDecoder::new();
            let mut buf = vec![0u8; 64 * 1024];
            loop {
                let n = match rd.read(&mut buf).await {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                decoder.push(&buf[..n]);
                loop {
                    match decoder.next_message() {
                        Ok(Some(message)) => {
                            let _ = inbound.send(Inbound::Message { gen, message });
                        }
                        Ok(None) => break,
                        Err(e) => {
                            log::warn!("bad frame from server: {e}");
                            let _ = inbound.send(Inbound::Lost { gen });
                            return;
                        }
                    }
                }
            }
            let _ = inbound.send(Inbound::Lost { gen });
        });
        self.conn = Some(Conn { gen, tx, reader });
    }

    fn drop_conn(&mut self) {
        if self.conn.take().is_some() {
            log::info!("edge channel lost");
            self.edge.on_disconnected(unix_millis());
        }
    }

    fn send(&mut self, out: Vec<Message>) {
        let Some(conn) = &self.conn else { return };
        for m in out {
            let delay = match self.impair.fate() {
                Fate::Drop => continue,
                Fate::Deliver { delay_ms } => delay_ms,
            };
            match encode_frame(&m) {
                Ok(frame) => {
                    let _ = conn.tx.send((frame, delay));
                }
                Err(e) => log::error!("cannot encode {}: {e}", m.kind().as_str()),
            }
        }
    }

    fn control(&mut self, line: &str) -> String {
        match line.trim() {
            "log" => return format!("{}ok\n", self.edge.log().render()),
            "status" => {
                let s = self.edge.stats();
                return format!(
                    "connected={}\nqueued={}\npresses={}\nuploads_sent={}\nretransmits={}\n\
                     dropped_uploads={}\nawaiting={:?}\nok\n",
                    self.edge.is_connected(),
                    self.edge.queued(),
                    s.presses,
                    s.uploads_sent,
                    s.retransmits,
                    s.dropped_uploads,
                    self.edge.awaiting()
                );
            }
            _ => {}
        }
        match parse_command(line).and_then(|a| self.apply(a)) {
            Ok(()) => "ok\n".into(),
            Err(e) => format!("error: {e}\n"),
        }
    }

    fn apply(&mut self, action: Action) -> Result<(), String> {
        let now = unix_millis();
        match action {
            Action::Press(mac) => {
                let Some(button) = self.buttons.get(&mac) else {
                    // Still simulate the probe so the allow-list gets exercised.
                    let probes = ButtonSim::new(mac).press(now, self.edge.config().seed);
                    self.queue_probes(probes);
                    return Ok(());
                };
                let probes = button.press(now, self.edge.config().seed);
                self.queue_probes(probes);
                Ok(())
            }
            Action::Kill(t) => self.set_killed(t, true),
            Action::Revive(t) => self.set_killed(t, false),
            Action::Net(NetChannel::Edge, setting) => {
                let mut p = self.impair.policy();
                match setting {
                    NetSetting::DropRate(r) => p.drop_rate = r,
                    NetSetting::DelayMs(d) => p.delay_ms = d,
                }
                self.impair.set_policy(p).map_err(|e| e.to_string())
            }
            Action::Net(NetChannel::Owner, _) => {
                Err("owner_channel is not reachable from the edge".into())
            }
            Action::Decide { .. } | Action::Settings(_) | Action::End => {
                Err("not an edge command; use `dashbell decide` or an owner client".into())
            }
        }
    }

    fn queue_probes(&mut self, probes: Vec<ButtonProbe>) {
        for p in probes {
            self.probes.insert((p.observed_at, self.probe_seq), p);
            self.probe_seq += 1;
        }
    }

    fn set_killed(&mut self, target: Target, killed: bool) -> Result<(), String> {
        match target {
            Target::Button => {
                for b in self.buttons.values_mut() {
                    b.set_killed(killed);
                }
            }
            Target::Camera | Target::Buzzer | Target::Servo => {
                self.edge.set_device_killed(target, killed);
            }
            Target::Edge => {
                self.hung = killed;
                if !killed {
                    for i in std::mem::take(&mut self.held) {
                        self.inbound(i);
                    }
                }
            }
            Target::EdgeChannel => {
                self.channel_killed = killed;
                if killed {
                    self.drop_conn();
                }
            }
            Target::OwnerChannel | Target::Server => {
                return Err(format!("{} is not controlled by the edge", target.as_str()));
            }
        }
        Ok(())
    }
}
