#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::time::{Duration, Instant};

use dashbell::edge_rt::{self, RunningEdge};
use dashbell::serve::{self, RunningServer};
use dashbell_core::config::{EdgeFileConfig, ServerConfig};
use dashbell_core::device_sim::MacAddr;
use dashbell_core::edge::EdgeConfig;
use dashbell_core::protocol::AuthToken;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

pub const BUTTON: &str = "aa:bb:cc:dd:ee:01";
pub const INTERVAL_MS: u64 = 200;

pub fn token() -> AuthToken {
    AuthToken::from_bytes([9; 32])
}

pub fn server_config(dir: &Path) -> ServerConfig {
    ServerConfig {
        host: "127.0.0.1".into(),
        edge_port: 0,
        owner_port: 0,
        bridge_port: 0,
        http_port: 0,
        token: None,
        data_dir: dir.join("data"),
        outbox_dir: dir.join("outbox"),
        heartbeat_interval_ms: INTERVAL_MS,
    }
}

pub async fn start_server(dir: &Path) -> RunningServer {
    serve::start(&server_config(dir), token())
        .await
        .expect("server starts")
}

pub async fn start_edge(server: SocketAddr) -> RunningEdge {
    let config = EdgeFileConfig {
        server_host: "127.0.0.1".into(),
        server_port: server.port(),
        control_port: 0,
        edge: EdgeConfig {
            token: token().to_hex(),
            buttons: vec![BUTTON.parse::<MacAddr>().unwrap()],
            heartbeat_interval_ms: INTERVAL_MS,
            servo_dwell_ms: 300,
            seed: 5,
            ..EdgeConfig::default()
        },
    };
    edge_rt::start(config, "127.0.0.1")
        .await
        .expect("edge starts")
}

/// Send one control command; returns the reply lines before the final status.
pub async fn control(addr: SocketAddr, line: &str) -> Result<Vec<String>, String> {
    let stream = TcpStream::connect(addr).await.unwrap();
    let (rd, mut wr) = stream.into_split();
    wr.write_all(format!("{line}\n").as_bytes()).await.unwrap();
    let mut lines = BufReader::new(rd).lines();
    let mut body = Vec::new();
    while let Some(l) = lines.next_line().await.unwrap() {
        if l == "ok" {
            return Ok(body);
        }
        if let Some(e) = l.strip_prefix("error: ") {
            return Err(e.to_string());
        }
        body.push(l);
    }
    Err("closed".into())
}

/// Poll `check` until it returns `Some` or the deadline passes.
pub async fn eventually<T, F, Fut>(within: Duration, mut check: F) -> Option<T>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Option<T>>,
{
    let start = Instant::now();
    while start.elapsed() < within {
        if let Some(v) = check().await {
            return Some(v);
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    None
}

pub struct HttpReply {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

/// Minimal HTTP/1.1 GET.
pub async fn http_get(addr: SocketAddr, path: &str) -> HttpReply {
    let mut s = TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .expect("header end");
    let head = String::from_utf8_lossy(&raw[..split]).to_string();
    let mut body = raw[split + 4..].to_vec();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let mut content_type = String::new();
    let mut chunked = false;
    for line in head.lines().skip(1) {
        let (k, v) = line.split_once(':').unwrap();
        match k.to_ascii_lowercase().as_str() {
            "content-type" => content_type = v.trim().to_string(),
            "transfer-encoding" => chunked = v.trim().eq_ignore_ascii_case("chunked"),
            _ => {}
        }
    }
    if chunked {
        body = dechunk(&body);
    }
    HttpReply {
        status,
        content_type,
        body,
    }
}

fn dechunk(mut raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let eol = raw.windows(2).position(|w| w == b"\r\n").unwrap();
        let size =
            usize::from_str_radix(std::str::from_utf8(&raw[..eol]).unwrap().trim(), 16).unwrap();
        raw = &raw[eol + 2..];
        if size == 0 {
            return out;
        }
        out.extend_from_slice(&raw[..size]);
        raw = &raw[size + 2..];
    }
}
