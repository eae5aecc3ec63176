//! Short-lived owner connection used by `decide` and `history`.

use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

use dashbell_core::model::{EntryRecord, OwnerSettings, Verdict};
use dashbell_core::protocol::{
    encode_frame, Body, Decision, ErrorCode, FrameDecoder, Hello, HistoryRequest, Message,
    ProtocolError, Role, SeqState, SettingsUpdate,
};

pub const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach {addr}: {source}")]
    Connect {
        addr: String,
        source: std::io::Error,
    },
    #[error("connection: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad frame from server: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("{message}")]
    Server { code: ErrorCode, message: String },
    #[error("server closed the connection")]
    Closed,
    #[error("no reply within {0:?}")]
    Timeout(Duration),
}

impl ClientError {
    /// Machine-readable code for CLI error lines.
    pub fn code(&self) -> &'static str {
        match self {
            ClientError::Connect { .. } => "unreachable",
            ClientError::Io(_) | ClientError::Closed => "connection-lost",
            ClientError::Protocol(e) => e.code().as_str(),
            ClientError::Server { code, .. } => code.as_str(),
            ClientError::Timeout(_) => "timeout",
        }
    }
}

pub struct OwnerClient {
    stream: TcpStream,
    decoder: FrameDecoder,
    seq: SeqState,
    peer_seq: SeqState,
    settings: OwnerSettings,
}

impl OwnerClient {
    /// Connect and authenticate as an owner.
    pub async fn connect(addr: &str, token: &str) -> Result<OwnerClient, ClientError> {
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|source| ClientError::Connect {
                addr: addr.to_string(),
                source,
            })?;
        stream.set_nodelay(true)?;
        let mut c = OwnerClient {
            stream,
            decoder: FrameDecoder::new(),
            seq: SeqState::default(),
            peer_seq: SeqState::default(),
            settings: OwnerSettings::default(),
        };
        c.send(Hello {
            role: Role::Owner,
            token: token.to_string(),
            awaiting: Vec::new(),
        })
        .await?;
        let settings = c
            .wait_for(|b| match b {
                Body::HelloAck(ack) => Some(ack.settings.clone()),
                _ => None,
            })
            .await?;
        c.settings = settings;
        Ok(c)
    }

    pub fn settings(&self) -> &OwnerSettings {
        &self.settings
    }

    pub async fn send(&mut self, body: impl Into<Body>) -> Result<(), ClientError> {
        let frame = encode_frame(&self.seq.stamp(body))?;
        self.stream.write_all(&frame).await?;
        Ok(())
    }

    /// Next message from the server.
    pub async fn recv(&mut self) -> Result<Message, ClientError> {
        let mut buf = [0u8; 16 * 1024];
        loop {
            if let Some(m) = self.decoder.next_message()? {
                self.peer_seq.accept(m.seq)?;
                return Ok(m);
            }
            let n = tokio::time::timeout(REPLY_TIMEOUT, self.stream.read(&mut buf))
                .await
                .map_err(|_| ClientError::Timeout(REPLY_TIMEOUT))??;
            if n == 0 {
                return Err(ClientError::Closed);
            }
            self.decoder.push(&buf[..n]);
        }
    }

    /// Read until `pick` accepts a message; an `error` reply ends the wait.
    /// Pushes and broadcasts that arrive in between are skipped.
    async fn wait_for<T>(&mut self, pick: impl Fn(&Body) -> Option<T>) -> Result<T, ClientError> {
        loop {
            let m = self.recv().await?;
            if let Body::Error(e) = &m.body {
                return Err(ClientError::Server {
                    code: e.code,
                    message: e.message.clone(),
                });
            }
            if let Some(v) = pick(&m.body) {
                return Ok(v);
            }
        }
    }

    pub async fn decide(
        &mut self,
        entry_id: u64,
        verdict: Verdict,
    ) -> Result<EntryRecord, ClientError> {
        self.send(Decision { entry_id, verdict }).await?;
        self.wait_for(|b| match b {
            Body::DecisionAck(ack) if ack.entry.entry_id == entry_id => Some(ack.entry.clone()),
            _ => None,
        })
        .await
    }

    pub async fn history(
        &mut self,
        from_ms: u64,
        to_ms: u64,
        limit: u32,
    ) -> Result<Vec<EntryRecord>, ClientError> {
        self.send(HistoryRequest {
            from_ms,
            to_ms,
            limit,
        })
        .await?;
        self.wait_for(|b| match b {
            Body::HistoryResponse(h) => Some(h.entries.clone()),
            _ => None,
        })
        .await
    }

    pub async fn update_settings(
        &mut self,
        settings: OwnerSettings,
    ) -> Result<OwnerSettings, ClientError> {
        self.send(SettingsUpdate { settings }).await?;
        let s = self
            .wait_for(|b| match b {
                Body::SettingsUpdate(s) => Some(s.settings.clone()),
                _ => None,
            })
            .await?;
        self.settings = s.clone();
        Ok(s)
    }
}
