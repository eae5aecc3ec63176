//! Domain records shared by the wire protocol, the store and the coordinator.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

/// Tri-state "access granted" column of an entry.
///
/// Starts as `Null` and moves at most once, to `Yes` or `No`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    #[default]
    Null,
    Yes,
    No,
}

impl Access {
    pub fn is_decided(self) -> bool {
        self != Access::Null
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Access::Null => "null",
            Access::Yes => "yes",
            Access::No => "no",
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Owner verdict on an entry request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Granted,
    Denied,
}

impl Verdict {
    pub fn access(self) -> Access {
        match self {
            Verdict::Granted => Access::Yes,
            Verdict::Denied => Access::No,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Granted => "granted",
            Verdict::Denied => "denied",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One visitor request as persisted by the coordinator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryRecord {
    pub entry_id: u64,
    pub received_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
    pub access_granted: Access,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<u64>,
    pub camera_fault: bool,
}

/// Owner alert channels. `Ringer` is the live push to connected owner clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertChannel {
    Email,
    Text,
    Ringer,
}

impl AlertChannel {
    pub fn as_str(self) -> &'static str {
        match self {
            AlertChannel::Email => "email",
            AlertChannel::Text => "text",
            AlertChannel::Ringer => "ringer",
        }
    }
}

impl std::str::FromStr for AlertChannel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "email" => Ok(AlertChannel::Email),
            "text" => Ok(AlertChannel::Text),
            "ringer" => Ok(AlertChannel::Ringer),
            other => Err(format!("unknown alert channel `{other}`")),
        }
    }
}

/// Self-reported status carried by a heartbeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelfStatus {
    Ok,
    Failed,
}

/// Liveness of a monitored component.
///
/// `Unreachable` only appears in diagnoses: the component sits behind a
/// failed link and its own state cannot be known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HealthState {
    Ok,
    Suspected,
    Failed,
    Unreachable,
}

impl HealthState {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthState::Ok => "ok",
            HealthState::Suspected => "suspected",
            HealthState::Failed => "failed",
            HealthState::Unreachable => "unreachable",
        }
    }
}

impl fmt::Display for HealthState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OwnerSettings {
    pub service_enabled: bool,
    pub do_not_disturb: bool,
    #[serde(deserialize_with = "unique_channels")]
    pub alert_channels: BTreeSet<AlertChannel>,
}

impl Default for OwnerSettings {
    fn default() -> Self {
        OwnerSettings {
            service_enabled: true,
            do_not_disturb: false,
            alert_channels: BTreeSet::from([AlertChannel::Ringer]),
        }
    }
}

impl OwnerSettings {
    /// Whether a live push may be emitted right now.
    pub fn allows_push(&self) -> bool {
        self.service_enabled && !self.do_not_disturb
    }
}

/// A channel list with repeats is rejected rather than silently collapsed.
fn unique_channels<'de, D>(de: D) -> Result<BTreeSet<AlertChannel>, D::Error>
where
    D: Deserializer<'de>,
{
    let list = Vec::<AlertChannel>::deserialize(de)?;
    let mut set = BTreeSet::new();
    for ch in list {
        if !set.insert(ch) {
            return Err(serde::de::Error::custom(format!(
                "duplicate alert channel `{}`",
                ch.as_str()
            )));
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings_ring_only() {
        let s = OwnerSettings::default();
        assert!(s.allows_push());
        assert_eq!(s.alert_channels.len(), 1);
    }

    #[test]
    fn duplicate_channels_rejected() {
        let raw =
            r#"{"service_enabled":true,"do_not_disturb":false,"alert_channels":["email","email"]}"#;
        assert!(serde_json::from_str::<OwnerSettings>(raw).is_err());
        let raw = r#"{"service_enabled":true,"do_not_disturb":false,"alert_channels":["fax"]}"#;
        assert!(serde_json::from_str::<OwnerSettings>(raw).is_err());
    }

    #[test]
    fn entry_record_omits_absent_fields() {
        let rec = EntryRecord {
            entry_id: 3,
            received_at: 10,
            image_url: None,
            access_granted: Access::Null,
            decided_at: None,
            camera_fault: true,
        };
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            text,
            r#"{"entry_id":3,"received_at":10,"access_granted":"null","camera_fault":true}"#
        );
    }
}
