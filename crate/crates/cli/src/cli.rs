//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 runtime failure. Every
//! error is printed as one line `error[<code>]: <message>` on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dashbell_core::config::{EdgeFileConfig, ServerConfig, CONTROL_PORT, OWNER_PORT};
use dashbell_core::device_sim::{MacAddr, Scenario};
use dashbell_core::model::{EntryRecord, Verdict};
use dashbell_core::protocol::AuthToken;
use dashbell_core::sim::{self, SimConfig, SimError, Transport};

use crate::client::OwnerClient;
use crate::{edge_rt, serve};

#[derive(Debug, Parser)]
#[command(
    name = "dashbell",
    version,
    about = "Smart doorbell server, edge and tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the coordination server.
    Serve(ServeArgs),
    /// Run an edge controller with simulated devices.
    Edge(EdgeArgs),
    /// Run a scenario file end to end under a scripted clock.
    Simulate(SimulateArgs),
    /// Send a fault-injection command to a running edge.
    Inject(InjectArgs),
    /// List recorded visitor requests.
    History(HistoryArgs),
    /// Grant or deny a pending request.
    Decide(DecideArgs),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Server config file (INI, section [server]).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub edge_port: Option<u16>,
    #[arg(long)]
    pub owner_port: Option<u16>,
    #[arg(long)]
    pub bridge_port: Option<u16>,
    #[arg(long)]
    pub http_port: Option<u16>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub outbox_dir: Option<PathBuf>,
    /// Heartbeat interval the fault monitor expects, in ms.
    #[arg(long)]
    pub heartbeat_ms: Option<u64>,
    /// Deployment token (64 hex digits). Generated and printed when absent.
    #[arg(long, env = "DASHBELL_TOKEN")]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct EdgeArgs {
    /// Edge config file (INI, section [edge]).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Server edge channel address, host:port.
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long, env = "DASHBELL_TOKEN")]
    pub token: Option<String>,
    /// Allow-listed button MAC; repeatable.
    #[arg(long = "button")]
    pub buttons: Vec<MacAddr>,
    #[arg(long)]
    pub control_port: Option<u16>,
    #[arg(long)]
    pub heartbeat_ms: Option<u64>,
    #[arg(long)]
    pub debounce_ms: Option<u64>,
    #[arg(long)]
    pub servo_dwell_ms: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub scenario: PathBuf,
    /// Connect the simulated peers with in-memory links (default).
    #[arg(long, conflicts_with = "sockets")]
    pub in_process: bool,
    /// Connect the simulated peers over loopback TCP.
    #[arg(long)]
    pub sockets: bool,
    #[arg(long, default_value_t = 1000)]
    pub heartbeat_ms: u64,
    /// Keep server state here instead of a temporary directory.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    /// Edge control address.
    #[arg(long, default_value_t = format!("127.0.0.1:{CONTROL_PORT}"))]
    pub edge: String,
    /// Command, e.g. `kill camera` or `press aa:bb:cc:dd:ee:01`.
    #[arg(required = true, num_args = 1..)]
    pub command: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OwnerArgs {
    /// Server owner channel address, host:port.
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long, env = "DASHBELL_TOKEN")]
    pub token: Option<String>,
    /// Server config file; supplies host, owner port and token.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistoryArgs {
    /// Earliest receive time, ms since the epoch.
    #[arg(long, default_value_t = 0)]
    pub from: u64,
    /// Latest receive time, ms since the epoch.
    #[arg(long, default_value_t = u64::MAX)]
    pub to: u64,
    #[arg(long, default_value_t = 100)]
    pub limit: u32,
    #[command(flatten)]
    pub owner: OwnerArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum VerdictArg {
    Grant,
    Deny,
}

#[derive(Debug, Args)]
pub struct DecideArgs {
    pub entry_id: u64,
    pub verdict: VerdictArg,
    #[command(flatten)]
    pub owner: OwnerArgs,
}

/// A failure to report: exit status, short code and message.
#[derive(Debug)]
pub struct Failure {
    pub exit: u8,
    pub code: String,
    pub message: String,
}

impl Failure {
    fn usage(code: &str, message: impl Into<String>) -> Failure {
        Failure {
            exit: 1,
            code: code.into(),
            message: message.into(),
        }
    }

    fn runtime(code: &str, message: impl Into<String>) -> Failure {
        Failure {
            exit: 2,
            code: code.into(),
            message: message.into(),
        }
    }
}

/// Parse `args` and run. Output goes to stdout; errors to stderr.
pub fn main_with(args: impl IntoIterator<Item = String>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error[usage]: {first}");
            return ExitCode::from(1);
        }
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
    {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error[runtime]: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message);
            ExitCode::from(f.exit)
        }
    }
}

pub async fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Serve(a) => serve_cmd(a).await,
        Command::Edge(a) => edge_cmd(a).await,
        Command::Simulate(a) => simulate_cmd(a),
        Command::Inject(a) => inject_cmd(a).await,
        Command::History(a) => history_cmd(a).await,
        Command::Decide(a) => decide_cmd(a).await,
    }
}

fn parse_token(text: &str) -> Result<AuthToken, Failure> {
    text.parse()
        .map_err(|e| Failure::usage("bad-token", format!("{e}")))
}

async fn serve_cmd(a: ServeArgs) -> Result<(), Failure> {
    let mut c = match &a.config {
        Some(p) => {
            ServerConfig::from_file(p).map_err(|e| Failure::usage("config", e.to_string()))?
        }
        None => ServerConfig::default(),
    };
    if let Some(v) = a.host {
        c.host = v;
    }
    c.edge_port = a.edge_port.unwrap_or(c.edge_port);
    c.owner_port = a.owner_port.unwrap_or(c.owner_port);
    c.bridge_port = a.bridge_port.unwrap_or(c.bridge_port);
    c.http_port = a.http_port.unwrap_or(c.http_port);
    c.heartbeat_interval_ms = a.heartbeat_ms.unwrap_or(c.heartbeat_interval_ms);
    if let Some(v) = a.data_dir {
        c.data_dir = v;
    }
    if let Some(v) = a.outbox_dir {
        c.outbox_dir = v;
    }
    let token = match a.token.or(c.token.clone()) {
        Some(t) => parse_token(&t)?,
        None => {
            let t = AuthToken::generate();
            println!("token={t}");
            t
        }
    };
    let server = serve::start(&c, token)
        .await
        .map_err(|e| Failure::runtime("startup", e.to_string()))?;
    println!(
        "listening edge={} owner={} bridge={} http={}",
        server.edge_addr, server.owner_addr, server.bridge_addr, server.http_addr
    );
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {
            server.stop().await;
            Ok(())
        }
    }
}

async fn edge_cmd(a: EdgeArgs) -> Result<(), Failure> {
    let mut c = match &a.config {
        Some(p) => {
            EdgeFileConfig::from_file(p).map_err(|e| Failure::usage("config", e.to_string()))?
        }
        None => EdgeFileConfig::default(),
    };
    if let Some(server) = a.server {
        let (host, port) = server
            .rsplit_once(':')
            .and_then(|(h, p)| Some((h.to_string(), p.parse().ok()?)))
            .ok_or_else(|| {
                Failure::usage("usage", format!("--server `{server}` is not host:port"))
            })?;
        c.server_host = host;
        c.server_port = port;
    }
    if let Some(t) = a.token {
        c.edge.token = t;
    }
    if c.edge.token.is_empty() {
        return Err(Failure::usage(
            "bad-token",
            "no token: pass --token, DASHBELL_TOKEN or a config file",
        ));
    }
    parse_token(&c.edge.token)?;
    if !a.buttons.is_empty() {
        c.edge.buttons = a.buttons;
    }
    c.control_port = a.control_port.unwrap_or(c.control_port);
    c.edge.heartbeat_interval_ms = a.heartbeat_ms.unwrap_or(c.edge.heartbeat_interval_ms);
    c.edge.debounce_ms = a.debounce_ms.unwrap_or(c.edge.debounce_ms);
    c.edge.servo_dwell_ms = a.servo_dwell_ms.unwrap_or(c.edge.servo_dwell_ms);
    c.edge.seed = a.seed.unwrap_or(c.edge.seed);
    if c.edge.heartbeat_interval_ms == 0 || c.edge.debounce_ms == 0 {
        return Err(Failure::usage("usage", "intervals must be positive"));
    }
    let edge = edge_rt::start(c, "127.0.0.1")
        .await
        .map_err(|e| Failure::runtime("startup", e.to_string()))?;
    println!("control={}", edge.control_addr);
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {
            edge.stop();
            Ok(())
        }
    }
}

fn simulate_cmd(a: SimulateArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.scenario)
        .map_err(|e| Failure::usage("io", format!("cannot read {}: {e}", a.scenario.display())))?;
    let scenario = Scenario::parse(&text).map_err(|e| Failure::usage("scenario", e.to_string()))?;
    if a.heartbeat_ms == 0 {
        return Err(Failure::usage("usage", "--heartbeat-ms must be positive"));
    }
    let config = SimConfig {
        transport: if a.sockets {
            Transport::Sockets
        } else {
            Transport::InProcess
        },
        heartbeat_interval_ms: a.heartbeat_ms,
        data_dir: a.data_dir,
        ..SimConfig::default()
    };
    match sim::run(&scenario, &config) {
        Ok(out) => {
            print!("{}", out.report);
            Ok(())
        }
        Err(SimError::Invariant { name, at, detail }) => Err(Failure::runtime(
            "invariant",
            format!("{name} violated at {at} ms: {detail}"),
        )),
        Err(e) => Err(Failure::runtime("simulate", e.to_string())),
    }
}

async fn inject_cmd(a: InjectArgs) -> Result<(), Failure> {
    use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
    let line = a.command.join(" ");
    let stream = tokio::net::TcpStream::connect(&a.edge)
        .await
        .map_err(|e| Failure::runtime("unreachable", format!("{}: {e}", a.edge)))?;
    let (rd, mut wr) = stream.into_split();
    wr.write_all(format!("{line}\n").as_bytes())
        .await
        .map_err(|e| Failure::runtime("connection-lost", e.to_string()))?;
    let mut lines = BufReader::new(rd).lines();
    loop {
        let next = lines
            .next_line()
            .await
            .map_err(|e| Failure::runtime("connection-lost", e.to_string()))?;
        let Some(l) = next else {
            return Err(Failure::runtime(
                "connection-lost",
                "edge closed the control port",
            ));
        };
        if l == "ok" {
            return Ok(());
        }
        if let Some(msg) = l.strip_prefix("error: ") {
            return Err(Failure::runtime("rejected", msg));
        }
        println!("{l}");
    }
}

fn owner_target(a: &OwnerArgs) -> Result<(String, String), Failure> {
    let file = match &a.config {
        Some(p) => {
            Some(ServerConfig::from_file(p).map_err(|e| Failure::usage("config", e.to_string()))?)
        }
        None => None,
    };
    let server = a.server.clone().unwrap_or_else(|| match &file {
        Some(c) => format!("{}:{}", c.host, c.owner_port),
        None => format!("127.0.0.1:{OWNER_PORT}"),
    });
    let token = a
        .token
        .clone()
        .or_else(|| file.and_then(|c| c.token))
        .ok_or_else(|| {
            Failure::usage(
                "bad-token",
                "no token: pass --token, DASHBELL_TOKEN or --config",
            )
        })?;
    Ok((server, token))
}

async fn connect_owner(a: &OwnerArgs) -> Result<OwnerClient, Failure> {
    let (server, token) = owner_target(a)?;
    OwnerClient::connect(&server, &token)
        .await
        .map_err(|e| Failure::runtime(e.code(), e.to_string()))
}

async fn history_cmd(a: HistoryArgs) -> Result<(), Failure> {
    let mut client = connect_owner(&a.owner).await?;
    let entries = client
        .history(a.from, a.to, a.limit)
        .await
        .map_err(|e| Failure::runtime(e.code(), e.to_string()))?;
    print!("{}", history_table(&entries));
    Ok(())
}

/// Aligned columns: id, time, decision, camera_fault, image.
pub fn history_table(entries: &[EntryRecord]) -> String {
    let mut rows = vec![[
        "id".to_string(),
        "time".to_string(),
        "decision".to_string(),
        "camera_fault".to_string(),
        "image".to_string(),
    ]];
    for e in entries {
        rows.push([
            e.entry_id.to_string(),
            e.received_at.to_string(),
            e.access_granted.to_string(),
            e.camera_fault.to_string(),
            e.image_url.clone().unwrap_or_else(|| "-".into()),
        ]);
    }
    let mut widths = [0usize; 5];
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

async fn decide_cmd(a: DecideArgs) -> Result<(), Failure> {
    let verdict = match a.verdict {
        VerdictArg::Grant => Verdict::Granted,
        VerdictArg::Deny => Verdict::Denied,
    };
    let mut client = connect_owner(&a.owner).await?;
    let entry = client
        .decide(a.entry_id, verdict)
        .await
        .map_err(|e| Failure::runtime(e.code(), e.to_string()))?;
    println!(
        "entry_id={} access_granted={} decided_at={}",
        entry.entry_id,
        entry.access_granted,
        entry.decided_at.map_or("-".to_string(), |t| t.to_string())
    );
    Ok(())
}
