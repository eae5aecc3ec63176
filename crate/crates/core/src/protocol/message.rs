//! Message vocabulary exchanged on framed channels.
//!
//! Every payload is a JSON object with a string `type` tag, a per-connection
//! `seq` number, and the fields of the tagged body.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::ProtocolError;
use crate::model::{EntryRecord, HealthState, OwnerSettings, SelfStatus, Verdict};

/// Role a peer declares in its `hello`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Edge,
    Owner,
    Bridge,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Edge, Role::Owner, Role::Bridge];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Edge => "edge",
            Role::Owner => "owner",
            Role::Bridge => "bridge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Machine-readable cause carried by `error` messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCode {
    AuthFailure,
    RoleViolation,
    MalformedPayload,
    UnknownMessage,
    FrameTooLarge,
    OutOfSequence,
    NotAuthenticated,
    NoSuchEntry,
    AlreadyDecided,
    StorageError,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::AuthFailure => "auth-failure",
            ErrorCode::RoleViolation => "role-violation",
            ErrorCode::MalformedPayload => "malformed-payload",
            ErrorCode::UnknownMessage => "unknown-message",
            ErrorCode::FrameTooLarge => "frame-too-large",
            ErrorCode::OutOfSequence => "out-of-sequence",
            ErrorCode::NotAuthenticated => "not-authenticated",
            ErrorCode::NoSuchEntry => "no-such-entry",
            ErrorCode::AlreadyDecided => "already-decided",
            ErrorCode::StorageError => "storage-error",
        }
    }

    /// Errors after which the server closes the connection.
    pub fn is_fatal(self) -> bool {
        !matches!(
            self,
            ErrorCode::NoSuchEntry | ErrorCode::AlreadyDecided | ErrorCode::StorageError
        )
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub role: Role,
    pub token: String,
    /// Edge only: acknowledged entries still waiting for an actuate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub awaiting: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelloAck {
    pub role: Role,
    pub settings: OwnerSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryUpload {
    pub press_id: u64,
    /// Milliseconds since the Unix epoch at which the press was detected.
    pub timestamp: u64,
    /// Base64 of a binary PGM image; absent when the camera failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default)]
    pub camera_fault: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryAck {
    pub press_id: u64,
    pub entry_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notify {
    pub entry: EntryRecord,
    /// Whether the owner asked for an audible ringer.
    pub ring: bool,
    /// Sent while replaying undecided entries at owner connect.
    #[serde(default)]
    pub replay: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub entry_id: u64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionAck {
    pub entry: EntryRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actuate {
    pub entry_id: u64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heartbeat {
    pub component: String,
    pub status: SelfStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultReport {
    pub component: String,
    pub state: HealthState,
    pub detail: String,
    pub at: u64,
}

/// Owner → server: replace settings. Server → owner: the settings now in
/// effect, sent to the requester as acknowledgment and to every other owner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettingsUpdate {
    pub settings: OwnerSettings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRequest {
    pub from_ms: u64,
    pub to_ms: u64,
    pub limit: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub entries: Vec<EntryRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<u64>,
}

macro_rules! vocabulary {
    ($($variant:ident($ty:ty) = $tag:literal),+ $(,)?) => {
        /// The `type` tag of a message.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum MessageKind { $($variant),+ }

        impl MessageKind {
            pub const ALL: &'static [MessageKind] = &[$(MessageKind::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $(MessageKind::$variant => $tag),+ }
            }
        }

        impl FromStr for MessageKind {
            type Err = ProtocolError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($tag => Ok(MessageKind::$variant),)+
                    other => Err(ProtocolError::UnknownMessage(other.to_string())),
                }
            }
        }

        #[derive(Debug, Clone, PartialEq, Eq)]
        pub enum Body { $($variant($ty)),+ }

        impl Body {
            pub fn kind(&self) -> MessageKind {
                match self { $(Body::$variant(_) => MessageKind::$variant),+ }
            }

            fn fields(&self) -> Result<Value, serde_json::Error> {
                match self { $(Body::$variant(b) => serde_json::to_value(b)),+ }
            }

            fn from_fields(kind: MessageKind, fields: Value) -> Result<Body, ProtocolError> {
                match kind { $(MessageKind::$variant => parse_fields::<$ty>(fields).map(Body::$variant)),+ }
            }
        }

        $(impl From<$ty> for Body {
            fn from(b: $ty) -> Body { Body::$variant(b) }
        })+
    };
}

vocabulary! {
    Hello(Hello) = "hello",
    HelloAck(HelloAck) = "hello_ack",
    EntryUpload(EntryUpload) = "entry_upload",
    EntryAck(EntryAck) = "entry_ack",
    Notify(Notify) = "notify",
    Decision(Decision) = "decision",
    DecisionAck(DecisionAck) = "decision_ack",
    Actuate(Actuate) = "actuate",
    Heartbeat(Heartbeat) = "heartbeat",
    FaultReport(FaultReport) = "fault_report",
    SettingsUpdate(SettingsUpdate) = "settings_update",
    HistoryRequest(HistoryRequest) = "history_request",
    HistoryResponse(HistoryResponse) = "history_response",
    Error(ErrorBody) = "error",
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Body {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Body {
        Body::Error(ErrorBody {
            code,
            message: message.into(),
            entry_id: None,
        })
    }
}

/// A tagged payload plus its per-connection sequence number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub seq: u64,
    pub body: Body,
}

impl Message {
    pub fn new(seq: u64, body: impl Into<Body>) -> Message {
        Message {
            seq,
            body: body.into(),
        }
    }

    pub fn kind(&self) -> MessageKind {
        self.body.kind()
    }

    /// Serialize to the JSON payload text carried inside a frame.
    pub fn to_text(&self) -> String {
        let mut map = match self.body.fields() {
            Ok(Value::Object(map)) => map,
            // Every body is a plain struct of JSON-representable fields.
            other => unreachable!("message body serialized to {other:?}"),
        };
        map.insert("type".into(), Value::String(self.kind().as_str().into()));
        map.insert("seq".into(), Value::from(self.seq));
        Value::Object(map).to_string()
    }

    /// Parse one payload. Errors name the offending field where possible.
    pub fn from_text(text: &str) -> Result<Message, ProtocolError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ProtocolError::malformed(".", e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(ProtocolError::malformed(".", "payload is not an object"));
        };
        let kind = match map.remove("type") {
            Some(Value::String(tag)) => tag.parse::<MessageKind>()?,
            Some(_) => return Err(ProtocolError::malformed("type", "expected a string")),
            None => return Err(ProtocolError::malformed("type", "missing field")),
        };
        let seq = take_seq(&mut map)?;
        let body = Body::from_fields(kind, Value::Object(map))?;
        Ok(Message { seq, body })
    }
}

fn take_seq(map: &mut Map<String, Value>) -> Result<u64, ProtocolError> {
    match map.remove("seq") {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| ProtocolError::malformed("seq", "expected an unsigned 64-bit integer")),
        None => Err(ProtocolError::malformed("seq", "missing field")),
    }
}

fn parse_fields<T: DeserializeOwned>(fields: Value) -> Result<T, ProtocolError> {
    serde_path_to_error::deserialize(fields).map_err(|err| {
        let path = err.path().to_string();
        let reason = err.inner().to_string();
        let field = if path == "." {
            missing_field_name(&reason).unwrap_or(path)
        } else {
            path
        };
        ProtocolError::malformed(field, reason)
    })
}

fn missing_field_name(reason: &str) -> Option<String> {
    let rest = reason.strip_prefix("missing field `")?;
    rest.split('`').next().map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Access;

    #[test]
    fn text_carries_type_and_seq() {
        let msg = Message::new(
            7,
            Decision {
                entry_id: 1,
                verdict: Verdict::Granted,
            },
        );
        assert_eq!(
            msg.to_text(),
            r#"{"entry_id":1,"seq":7,"type":"decision","verdict":"granted"}"#
        );
        assert_eq!(Message::from_text(&msg.to_text()).unwrap(), msg);
    }

    #[test]
    fn missing_role_names_field() {
        let err = Message::from_text(r#"{"type":"hello","seq":0,"token":"ab"}"#).unwrap_err();
        match err {
            ProtocolError::Malformed { field, .. } => assert_eq!(field, "role"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_names_field() {
        let err =
            Message::from_text(r#"{"type":"decision","seq":1,"entry_id":"x","verdict":"granted"}"#)
                .unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed { ref field, .. } if field == "entry_id"));
        let err =
            Message::from_text(r#"{"type":"decision","seq":1,"entry_id":2,"verdict":"maybe"}"#)
                .unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed { ref field, .. } if field == "verdict"));
    }

    #[test]
    fn unknown_type_rejected() {
        assert!(matches!(
            Message::from_text(r#"{"type":"ping"}"#),
            Err(ProtocolError::UnknownMessage(t)) if t == "ping"
        ));
    }

    #[test]
    fn missing_seq_rejected() {
        let err =
            Message::from_text(r#"{"type":"history_request","from_ms":0,"to_ms":1,"limit":1}"#)
                .unwrap_err();
        assert!(matches!(err, ProtocolError::Malformed { ref field, .. } if field == "seq"));
    }

    #[test]
    fn every_kind_tag_parses_back() {
        for kind in MessageKind::ALL {
            assert_eq!(kind.as_str().parse::<MessageKind>().unwrap(), *kind);
        }
        assert_eq!(MessageKind::ALL.len(), 14);
    }

    #[test]
    fn notify_round_trip() {
        let msg = Message::new(
            2,
            Notify {
                entry: EntryRecord {
                    entry_id: 4,
                    received_at: 1_700_000_000_000,
                    image_url: Some("/images/4.pgm".into()),
                    access_granted: Access::Null,
                    decided_at: None,
                    camera_fault: false,
                },
                ring: true,
                replay: false,
            },
        );
        assert_eq!(Message::from_text(&msg.to_text()).unwrap(), msg);
    }
}
