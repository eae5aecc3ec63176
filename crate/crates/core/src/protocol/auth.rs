use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use super::message::{Body, Message, MessageKind, Role};
use super::ProtocolError;

/// Shared deployment secret: 32 bytes, written as 64 lowercase hex digits.
#[derive(Clone, PartialEq, Eq)]
pub struct AuthToken([u8; 32]);

impl AuthToken {
    pub fn from_bytes(bytes: [u8; 32]) -> AuthToken {
        AuthToken(bytes)
    }

    pub fn generate() -> AuthToken {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        AuthToken(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Compare against presented token text without an early exit on the
    /// first differing byte.
    pub fn matches(&self, presented: &str) -> bool {
        let Ok(other) = presented.parse::<AuthToken>() else {
            return false;
        };
        self.0
            .iter()
            .zip(other.0.iter())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
    }
}

impl FromStr for AuthToken {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let well_formed = s.len() == 64
            && s.bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !well_formed {
            return Err(ProtocolError::malformed(
                "token",
                "expected 64 lowercase hex characters",
            ));
        }
        let mut bytes = [0u8; 32];
        hex::decode_to_slice(s, &mut bytes)
            .map_err(|e| ProtocolError::malformed("token", e.to_string()))?;
        Ok(AuthToken(bytes))
    }
}

impl fmt::Display for AuthToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for AuthToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AuthToken(..)")
    }
}

/// Check a `hello` against the deployment token and return the declared role.
pub fn authenticate(hello: &Message, expected: &AuthToken) -> Result<Role, ProtocolError> {
    let Body::Hello(hello) = &hello.body else {
        return Err(ProtocolError::malformed(
            "type",
            format!("expected hello, got {}", hello.kind()),
        ));
    };
    if !expected.matches(&hello.token) {
        return Err(ProtocolError::AuthFailure);
    }
    Ok(hello.role)
}

/// Messages a peer of each role may send to the server after `hello`.
///
/// Rows are message kinds; columns are edge, owner, bridge.
const PERMISSIONS: &[(MessageKind, [bool; 3])] = &[
    (MessageKind::Hello, [false, false, false]),
    (MessageKind::HelloAck, [false, false, false]),
    (MessageKind::EntryUpload, [true, false, false]),
    (MessageKind::EntryAck, [false, false, false]),
    (MessageKind::Notify, [false, false, false]),
    (MessageKind::Decision, [false, true, true]),
    (MessageKind::DecisionAck, [false, false, false]),
    (MessageKind::Actuate, [false, false, false]),
    (MessageKind::Heartbeat, [true, false, false]),
    (MessageKind::FaultReport, [false, false, false]),
    (MessageKind::SettingsUpdate, [false, true, true]),
    (MessageKind::HistoryRequest, [false, true, true]),
    (MessageKind::HistoryResponse, [false, false, false]),
    (MessageKind::Error, [false, false, false]),
];

pub fn permits(role: Role, kind: MessageKind) -> bool {
    let column = match role {
        Role::Edge => 0,
        Role::Owner => 1,
        Role::Bridge => 2,
    };
    PERMISSIONS
        .iter()
        .find(|(k, _)| *k == kind)
        .is_some_and(|(_, row)| row[column])
}

pub fn check_permitted(role: Role, kind: MessageKind) -> Result<(), ProtocolError> {
    if permits(role, kind) {
        Ok(())
    } else {
        Err(ProtocolError::RoleViolation { role, kind })
    }
}
