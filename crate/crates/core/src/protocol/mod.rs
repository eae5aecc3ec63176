//! Wire format shared by the edge, the coordinator, owner clients and the
//! WebSocket bridge.
//!
//! A frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. The JSON object carries a `type` tag (see [`MessageKind`])
//! and a per-connection `seq` number. The bridge carries the same JSON text,
//! one message per WebSocket text frame, without the length prefix.

pub mod auth;
pub mod frame;
pub mod message;

use thiserror::Error;

pub use auth::{authenticate, check_permitted, permits, AuthToken};
pub use frame::MAX_FRAME_LEN;
pub use message::{
    Actuate, Body, Decision, DecisionAck, EntryAck, EntryUpload, ErrorBody, ErrorCode, FaultReport,
    Heartbeat, Hello, HelloAck, HistoryRequest, HistoryResponse, Message, MessageKind, Notify,
    Role, SettingsUpdate,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("frame of {len} bytes exceeds the 16 MiB cap")]
    FrameTooLarge { len: u64 },
    #[error("zero-length frame")]
    EmptyFrame,
    #[error("payload is not valid UTF-8")]
    InvalidUtf8,
    #[error("malformed payload at `{field}`: {reason}")]
    Malformed { field: String, reason: String },
    #[error("unknown message type `{0}`")]
    UnknownMessage(String),
    #[error("authentication failed")]
    AuthFailure,
    #[error("role {role} may not send {kind}")]
    RoleViolation { role: Role, kind: MessageKind },
    #[error("sequence number {got} does not follow {last}")]
    OutOfSequence { last: u64, got: u64 },
}

impl ProtocolError {
    pub fn malformed(field: impl Into<String>, reason: impl Into<String>) -> ProtocolError {
        ProtocolError::Malformed {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::FrameTooLarge { .. } => ErrorCode::FrameTooLarge,
            ProtocolError::EmptyFrame
            | ProtocolError::InvalidUtf8
            | ProtocolError::Malformed { .. } => ErrorCode::MalformedPayload,
            ProtocolError::UnknownMessage(_) => ErrorCode::UnknownMessage,
            ProtocolError::AuthFailure => ErrorCode::AuthFailure,
            ProtocolError::RoleViolation { .. } => ErrorCode::RoleViolation,
            ProtocolError::OutOfSequence { .. } => ErrorCode::OutOfSequence,
        }
    }

    /// The in-band error message sent before closing the connection.
    pub fn to_body(&self) -> Body {
        Body::error(self.code(), self.to_string())
    }
}

/// Encode one message as a length-prefixed frame.
pub fn encode_frame(message: &Message) -> Result<Vec<u8>, ProtocolError> {
    frame::encode_payload(message.to_text().as_bytes())
}

/// Parse a frame payload (or a bridge text frame) into a message.
pub fn decode_payload(payload: &[u8]) -> Result<Message, ProtocolError> {
    if payload.is_empty() {
        return Err(ProtocolError::EmptyFrame);
    }
    let text = std::str::from_utf8(payload).map_err(|_| ProtocolError::InvalidUtf8)?;
    Message::from_text(text)
}

#[derive(Debug, PartialEq, Eq)]
pub enum Decoded {
    NeedMore,
    Message { message: Message, consumed: usize },
}

/// Decode the first frame of `buf`. Partial input consumes nothing.
pub fn decode_frame(buf: &[u8]) -> Result<Decoded, ProtocolError> {
    match frame::split_frame(buf)? {
        frame::Split::NeedMore => Ok(Decoded::NeedMore),
        frame::Split::Frame { payload, consumed } => Ok(Decoded::Message {
            message: decode_payload(payload)?,
            consumed,
        }),
    }
}

/// Per-connection receive buffer.
///
/// After an error the decoder is poisoned: the byte stream can no longer be
/// trusted to be frame-aligned, so the connection must be closed.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameDecoder {
    pub fn new() -> FrameDecoder {
        FrameDecoder::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        if self.poisoned {
            return Ok(None);
        }
        match decode_frame(&self.buf) {
            Ok(Decoded::NeedMore) => Ok(None),
            Ok(Decoded::Message { message, consumed }) => {
                self.buf.drain(..consumed);
                Ok(Some(message))
            }
            Err(e) => {
                self.poisoned = true;
                Err(e)
            }
        }
    }
}

/// Outgoing sequence counter and incoming order check for one connection.
#[derive(Debug, Default, Clone)]
pub struct SeqState {
    next_out: u64,
    last_in: Option<u64>,
}

impl SeqState {
    pub fn stamp(&mut self, body: impl Into<Body>) -> Message {
        let seq = self.next_out;
        self.next_out += 1;
        Message::new(seq, body)
    }

    /// Accept an incoming sequence number; it must strictly increase.
    pub fn accept(&mut self, seq: u64) -> Result<(), ProtocolError> {
        match self.last_in {
            Some(last) if seq <= last => Err(ProtocolError::OutOfSequence { last, got: seq }),
            _ => {
                self.last_in = Some(seq);
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Verdict;

    fn two_messages() -> (Message, Message) {
        (
            Message::new(
                0,
                Hello {
                    role: Role::Owner,
                    token: "ab".repeat(32),
                    awaiting: vec![],
                },
            ),
            Message::new(
                1,
                Decision {
                    entry_id: 9,
                    verdict: Verdict::Denied,
                },
            ),
        )
    }

    #[test]
    fn three_bytes_need_more() {
        let (a, _) = two_messages();
        let bytes = encode_frame(&a).unwrap();
        assert_eq!(decode_frame(&bytes[..3]).unwrap(), Decoded::NeedMore);
    }

    #[test]
    fn huge_length_rejected() {
        assert_eq!(
            decode_frame(&[0xFF, 0xFF, 0xFF, 0xFF, b'{']),
            Err(ProtocolError::FrameTooLarge { len: 0xFFFF_FFFF })
        );
    }

    #[test]
    fn concatenated_frames_fed_bytewise() {
        let (a, b) = two_messages();
        let mut stream = encode_frame(&a).unwrap();
        stream.extend(encode_frame(&b).unwrap());
        let mut dec = FrameDecoder::new();
        let mut out = vec![];
        for byte in &stream {
            dec.push(std::slice::from_ref(byte));
            while let Some(m) = dec.next_message().unwrap() {
                out.push(m);
            }
        }
        assert_eq!(out, vec![a, b]);
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn invalid_utf8_is_malformed() {
        let bytes = frame::encode_payload(&[0xC3, 0x28]).unwrap();
        let err = decode_frame(&bytes).unwrap_err();
        assert_eq!(err, ProtocolError::InvalidUtf8);
        assert_eq!(err.code(), ErrorCode::MalformedPayload);
    }

    #[test]
    fn decoder_poisons_after_error() {
        let mut dec = FrameDecoder::new();
        dec.push(&[0, 0, 0, 2, b'x', b'y']);
        assert!(dec.next_message().is_err());
        let (a, _) = two_messages();
        dec.push(&encode_frame(&a).unwrap());
        assert_eq!(dec.next_message().unwrap(), None);
    }

    #[test]
    fn sequence_must_increase() {
        let mut seq = SeqState::default();
        assert!(seq.accept(0).is_ok());
        assert!(seq.accept(5).is_ok());
        assert_eq!(
            seq.accept(5),
            Err(ProtocolError::OutOfSequence { last: 5, got: 5 })
        );
        let first = seq.stamp(Body::error(ErrorCode::AuthFailure, "x"));
        let second = seq.stamp(Body::error(ErrorCode::AuthFailure, "y"));
        assert_eq!((first.seq, second.seq), (0, 1));
    }
}
