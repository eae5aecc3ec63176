//! Network front of the coordinator: framed TCP for edge and owner
//! channels, a WebSocket bridge for browser owners, and HTTP for images and
//! health.
//!
//! All connections share one [`Coordinator`] behind a mutex. Outputs are
//! routed to per-connection writer tasks while the lock is held, so every
//! connection sees messages in the order the coordinator produced them.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{self, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use dashbell_core::config::ServerConfig;
use dashbell_core::device_sim::unix_millis;
use dashbell_core::fault::Thresholds;
use dashbell_core::protocol::{decode_payload, encode_frame, AuthToken, FrameDecoder, Message};
use dashbell_core::server::{ConnId, Coordinator, Listener, Output};
use dashbell_core::store::StoreError;

const TICK: Duration = Duration::from_millis(50);

enum Outbound {
    Message(Message),
    Close,
}

struct Hub {
    coord: Mutex<Coordinator>,
    conns: Mutex<HashMap<ConnId, mpsc::UnboundedSender<Outbound>>>,
    next_conn: AtomicU64,
}

impl Hub {
    /// Register a connection and tell the coordinator about it.
    fn open(&self, listener: Listener) -> (ConnId, mpsc::UnboundedReceiver<Outbound>) {
        let conn = self.next_conn.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = mpsc::unbounded_channel();
        self.conns.lock().unwrap().insert(conn, tx);
        self.coord
            .lock()
            .unwrap()
            .connect(conn, listener, unix_millis());
        (conn, rx)
    }

    fn with<F>(&self, f: F)
    where
        F: FnOnce(&mut Coordinator, u64) -> Vec<Output>,
    {
        let mut coord = self.coord.lock().unwrap();
        let out = f(&mut coord, unix_millis());
        self.route(out);
    }

    fn route(&self, out: Vec<Output>) {
        let mut conns = self.conns.lock().unwrap();
        for o in out {
            match o {
                Output::Send { conn, message } => {
                    if let Some(tx) = conns.get(&conn) {
                        let _ = tx.send(Outbound::Message(message));
                    }
                }
                Output::Close { conn } => {
                    if let Some(tx) = conns.remove(&conn) {
                        let _ = tx.send(Outbound::Close);
                    }
                }
            }
        }
    }

    fn closed(&self, conn: ConnId) {
        self.conns.lock().unwrap().remove(&conn);
        self.with(|c, now| c.disconnect(conn, now));
    }
}

/// A running server. Dropping it does not stop it; call [`RunningServer::stop`].
pub struct RunningServer {
    pub edge_addr: SocketAddr,
    pub owner_addr: SocketAddr,
    pub bridge_addr: SocketAddr,
    pub http_addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl RunningServer {
    pub async fn stop(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.task.await;
    }

    /// Wait until the server stops on its own (it does not, short of a panic).
    pub async fn wait(self) {
        let _ = self.task.await;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot open store: {0}")]
    Store(#[from] StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
}

async fn bind(host: &str, port: u16) -> Result<TcpListener, ServeError> {
    let addr = format!("{host}:{port}");
    TcpListener::bind(&addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

/// Open the store and start all four listeners. Port 0 picks a free port.
pub async fn start(config: &ServerConfig, token: AuthToken) -> Result<RunningServer, ServeError> {
    let coord = Coordinator::open(
        &config.data_dir,
        &config.outbox_dir,
        token,
        Thresholds::new(config.heartbeat_interval_ms),
        unix_millis(),
    )?;
    let hub = Arc::new(Hub {
        coord: Mutex::new(coord),
        conns: Mutex::new(HashMap::new()),
        next_conn: AtomicU64::new(1),
    });

    let edge = bind(&config.host, config.edge_port).await?;
    let owner = bind(&config.host, config.owner_port).await?;
    let bridge = bind(&config.host, config.bridge_port).await?;
    let http = bind(&config.host, config.http_port).await?;
    let addrs = [&edge, &owner, &bridge, &http].map(|l| l.local_addr().expect("bound socket"));
    log::info!(
        "listening: edge {} owner {} bridge {} http {}",
        addrs[0],
        addrs[1],
        addrs[2],
        addrs[3]
    );

    let (stop_tx, stop_rx) = oneshot::channel();
    let tasks = vec![
        tokio::spawn(accept_framed(edge, Listener::Edge, hub.clone())),
        tokio::spawn(accept_framed(owner, Listener::Owner, hub.clone())),
        tokio::spawn(serve_axum(bridge, bridge_router(hub.clone()))),
        tokio::spawn(serve_axum(http, http_router(hub.clone()))),
        tokio::spawn(ticker(hub.clone())),
    ];
    let task = tokio::spawn(async move {
        let _ = stop_rx.await;
        for t in tasks {
            t.abort();
        }
    });
    Ok(RunningServer {
        edge_addr: addrs[0],
        owner_addr: addrs[1],
        bridge_addr: addrs[2],
        http_addr: addrs[3],
        stop: Some(stop_tx),
        task,
    })
}

async fn ticker(hub: Arc<Hub>) {
    let mut every = tokio::time::interval(TICK);
    loop {
        every.tick().await;
        hub.with(|c, now| c.tick(now));
    }
}

async fn accept_framed(listener: TcpListener, kind: Listener, hub: Arc<Hub>) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                log::debug!("{kind:?} connection from {peer}");
                tokio::spawn(framed_conn(stream, kind, hub.clone()));
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(100)).await;
            }
        }
    }
}

async fn framed_conn(stream: TcpStream, kind: Listener, hub: Arc<Hub>) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let (conn, mut rx) = hub.open(kind);
    let (done_tx, mut done_rx) = oneshot::channel::<()>();

    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outbound::Message(m) => {
                    let Ok(frame) = encode_frame(&m) else {
                        continue;
                    };
                    if wr.write_all(&frame).await.is_err() {
                        break;
                    }
                }
                Outbound::Close => break,
            }
        }
        let _ = wr.shutdown().await;
        let _ = done_tx.send(());
    });

    let mut decoder = FrameDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    'read: loop {
        let n = tokio::select! {
            r = rd.read(&mut buf) => match r {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            },
            _ = &mut done_rx => break,
        };
        decoder.push(&buf[..n]);
        loop {
            match decoder.next_message() {
                Ok(Some(m)) => hub.with(|c, now| c.handle(conn, m, now)),
                Ok(None) => break,
                Err(e) => {
                    log::debug!("conn {conn}: {e}");
                    hub.with(|c, now| c.reject_frame(conn, &e, now));
                    break 'read;
                }
            }
        }
    }
    hub.closed(conn);
    let _ = writer.await;
}

async fn serve_axum(listener: TcpListener, router: Router) {
    if let Err(e) = axum::serve(listener, router).await {
        log::error!("http server stopped: {e}");
    }
}

fn bridge_router(hub: Arc<Hub>) -> Router {
    Router::new()
        .fallback(
            |State(hub): State<Arc<Hub>>, upgrade: WebSocketUpgrade| async move {
                upgrade.on_upgrade(move |socket| bridge_conn(socket, hub))
            },
        )
        .with_state(hub)
}

async fn bridge_conn(socket: WebSocket, hub: Arc<Hub>) {
    let (mut sink, mut stream) = socket.split();
    let (conn, mut rx) = hub.open(Listener::Bridge);
    let (done_tx, mut done_rx) = oneshot::channel::<()>();

    let writer = tokio::spawn(async move {
        while let Some(out) = rx.recv().await {
            match out {
                Outbound::Message(m) => {
                    if sink
                        .send(ws::Message::Text(m.to_text().into()))
                        .await
                        .is_err()
                    {
                        break;
                    }
                }
                Outbound::Close => break,
            }
        }
        let _ = sink.send(ws::Message::Close(None)).await;
        let _ = done_tx.send(());
    });

    loop {
        let frame = tokio::select! {
            f = stream.next() => f,
            _ = &mut done_rx => break,
        };
        let payload: Vec<u8> = match frame {
            Some(Ok(ws::Message::Text(t))) => t.as_str().as_bytes().to_vec(),
            Some(Ok(ws::Message::Binary(b))) => b.to_vec(),
            Some(Ok(ws::Message::Ping(_) | ws::Message::Pong(_))) => continue,
            Some(Ok(ws::Message::Close(_))) | Some(Err(_)) | None => break,
        };
        match decode_payload(&payload) {
            Ok(m) => hub.with(|c, now| c.handle(conn, m, now)),
            Err(e) => {
                hub.with(|c, now| c.reject_frame(conn, &e, now));
                break;
            }
        }
    }
    hub.closed(conn);
    let _ = writer.await;
}

fn http_router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .fallback(get(image))
        .with_state(hub)
}

async fn healthz(State(hub): State<Arc<Hub>>) -> Response {
    let text = hub.coord.lock().unwrap().health(unix_millis()).to_string();
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
}

async fn image(State(hub): State<Arc<Hub>>, uri: Uri) -> Response {
    let resp = hub.coord.lock().unwrap().image(uri.path());
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (
        status,
        [(header::CONTENT_TYPE, resp.content_type)],
        resp.body,
    )
        .into_response()
}
