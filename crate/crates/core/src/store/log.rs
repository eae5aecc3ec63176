//! Record framing and replay for `entries.log` and `settings.log`.
//!
//! ```text
//! [u32 BE: body length][body: JSON object][u32 BE: CRC-32 (IEEE) of body]
//! ```
//!
//! The length prefix is the wire frame header, so the same limits apply:
//! bodies are non-empty and at most 16 MiB.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::model::{Access, EntryRecord, OwnerSettings, Verdict};
use crate::protocol::frame::{self, HEADER_LEN, MAX_FRAME_LEN};

pub const CRC_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogBody {
    EntryCreated {
        entry_id: u64,
        received_at: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        image_url: Option<String>,
        camera_fault: bool,
        /// Edge-side identity of the press, used to recognize re-sent uploads.
        press_id: u64,
        pressed_at: u64,
    },
    EntryDecided {
        entry_id: u64,
        verdict: Verdict,
        decided_at: u64,
    },
    SettingsChanged {
        settings: OwnerSettings,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub written_at: u64,
    #[serde(flatten)]
    pub body: LogBody,
}

impl LogRecord {
    pub fn encode(&self) -> Vec<u8> {
        let body = serde_json::to_vec(self).expect("log records serialize");
        let mut out = frame::encode_payload(&body).expect("log record within frame cap");
        out.extend_from_slice(&crc32fast::hash(&body).to_be_bytes());
        out
    }
}

/// Replayed contents of the store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StoreState {
    pub entries: BTreeMap<u64, EntryRecord>,
    /// `(press_id, pressed_at)` → entry id.
    pub origins: HashMap<(u64, u64), u64>,
    pub settings: OwnerSettings,
}

impl StoreState {
    pub fn next_entry_id(&self) -> u64 {
        self.entries.keys().next_back().map_or(1, |id| id + 1)
    }

    pub fn entry_for_origin(&self, press_id: u64, pressed_at: u64) -> Option<&EntryRecord> {
        self.origins
            .get(&(press_id, pressed_at))
            .and_then(|id| self.entries.get(id))
    }

    /// Apply one record. `Err` carries a recovery warning; the state is
    /// unchanged in that case.
    pub fn apply(&mut self, record: &LogRecord) -> Result<(), String> {
        match &record.body {
            LogBody::EntryCreated {
                entry_id,
                received_at,
                image_url,
                camera_fault,
                press_id,
                pressed_at,
            } => {
                if self.entries.contains_key(entry_id) {
                    return Err(format!("entry {entry_id} created twice; keeping the first"));
                }
                self.entries.insert(
                    *entry_id,
                    EntryRecord {
                        entry_id: *entry_id,
                        received_at: *received_at,
                        image_url: image_url.clone(),
                        access_granted: Access::Null,
                        decided_at: None,
                        camera_fault: *camera_fault,
                    },
                );
                self.origins.insert((*press_id, *pressed_at), *entry_id);
                Ok(())
            }
            LogBody::EntryDecided {
                entry_id,
                verdict,
                decided_at,
            } => {
                let Some(entry) = self.entries.get_mut(entry_id) else {
                    return Err(format!("decision for unknown entry {entry_id} skipped"));
                };
                if entry.access_granted.is_decided() {
                    return Err(format!(
                        "second decision for entry {entry_id} ignored; keeping the first"
                    ));
                }
                entry.access_granted = verdict.access();
                entry.decided_at = Some(*decided_at);
                Ok(())
            }
            LogBody::SettingsChanged { settings } => {
                self.settings = settings.clone();
                Ok(())
            }
        }
    }

    /// Entries received in `[from_ms, to_ms]`, newest first, at most `limit`.
    pub fn history(&self, from_ms: u64, to_ms: u64, limit: usize) -> Vec<EntryRecord> {
        let mut hits: Vec<&EntryRecord> = self
            .entries
            .values()
            .filter(|e| (from_ms..=to_ms).contains(&e.received_at))
            .collect();
        hits.sort_by(|a, b| {
            b.received_at
                .cmp(&a.received_at)
                .then(b.entry_id.cmp(&a.entry_id))
        });
        hits.into_iter().take(limit).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stop {
    /// The final record is incomplete or fails its checksum; it is dropped.
    TornTail { offset: usize },
    /// A damaged record with more bytes after it. Replay stops here.
    Corrupt { offset: usize, reason: String },
}

#[derive(Debug, Clone, Default)]
pub struct Recovery {
    pub state: StoreState,
    pub records: usize,
    /// Length of the prefix made of complete, valid records.
    pub valid_len: usize,
    pub warnings: Vec<String>,
    pub stop: Option<Stop>,
}

/// Rebuild state from log bytes. Pure: the same bytes give the same result.
pub fn replay(bytes: &[u8]) -> Recovery {
    replay_into(StoreState::default(), bytes)
}

/// Continue replay on top of `state` (used to layer `settings.log` over
/// `entries.log`).
pub fn replay_into(state: StoreState, bytes: &[u8]) -> Recovery {
    let mut rec = Recovery {
        state,
        ..Recovery::default()
    };
    let mut offset = 0;
    while offset < bytes.len() {
        let rest = &bytes[offset..];
        if rest.len() < HEADER_LEN {
            rec.stop = Some(Stop::TornTail { offset });
            break;
        }
        let len = u32::from_be_bytes([rest[0], rest[1], rest[2], rest[3]]) as usize;
        if len == 0 || len > MAX_FRAME_LEN {
            rec.stop = Some(Stop::Corrupt {
                offset,
                reason: format!("invalid record length {len}"),
            });
            break;
        }
        let total = HEADER_LEN + len + CRC_LEN;
        if rest.len() < total {
            rec.stop = Some(Stop::TornTail { offset });
            break;
        }
        let body = &rest[HEADER_LEN..HEADER_LEN + len];
        let stored = u32::from_be_bytes(rest[HEADER_LEN + len..total].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            rec.stop = Some(if rest.len() == total {
                Stop::TornTail { offset }
            } else {
                Stop::Corrupt {
                    offset,
                    reason: "checksum mismatch".into(),
                }
            });
            break;
        }
        let record: LogRecord = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => {
                rec.stop = Some(Stop::Corrupt {
                    offset,
                    reason: format!("undecodable record: {e}"),
                });
                break;
            }
        };
        if let Err(w) = rec.state.apply(&record) {
            rec.warnings.push(format!("offset {offset}: {w}"));
        }
        rec.records += 1;
        offset += total;
        rec.valid_len = offset;
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    fn created(id: u64, at: u64) -> LogRecord {
        LogRecord {
            written_at: at,
            body: LogBody::EntryCreated {
                entry_id: id,
                received_at: at,
                image_url: Some(format!("/images/{id}.pgm")),
                camera_fault: false,
                press_id: id,
                pressed_at: at,
            },
        }
    }

    fn decided(id: u64, verdict: Verdict, at: u64) -> LogRecord {
        LogRecord {
            written_at: at,
            body: LogBody::EntryDecided {
                entry_id: id,
                verdict,
                decided_at: at,
            },
        }
    }

    fn settings(dnd: bool) -> LogRecord {
        LogRecord {
            written_at: 0,
            body: LogBody::SettingsChanged {
                settings: OwnerSettings {
                    do_not_disturb: dnd,
                    ..OwnerSettings::default()
                },
            },
        }
    }

    fn log(records: &[LogRecord]) -> Vec<u8> {
        records.iter().flat_map(LogRecord::encode).collect()
    }

    #[test]
    fn record_layout() {
        let rec = settings(true);
        let bytes = rec.encode();
        let body = serde_json::to_vec(&rec).unwrap();
        assert_eq!(&bytes[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&bytes[4..4 + body.len()], &body[..]);
        assert_eq!(
            &bytes[4 + body.len()..],
            &crc32fast::hash(&body).to_be_bytes()
        );
    }

    #[test]
    fn empty_log_gives_defaults() {
        let r = replay(&[]);
        assert!(r.state.entries.is_empty());
        assert_eq!(r.state.settings, OwnerSettings::default());
        assert_eq!(r.stop, None);
    }

    #[test]
    fn created_then_decided() {
        let r = replay(&log(&[created(1, 10), decided(1, Verdict::Granted, 20)]));
        let e = &r.state.entries[&1];
        assert_eq!(e.access_granted, Access::Yes);
        assert_eq!(e.decided_at, Some(20));
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn last_settings_win() {
        let r = replay(&log(&[settings(true), settings(false)]));
        assert!(!r.state.settings.do_not_disturb);
    }

    #[test]
    fn decision_before_creation_skipped() {
        let r = replay(&log(&[decided(1, Verdict::Granted, 5), created(1, 10)]));
        assert_eq!(r.state.entries[&1].access_granted, Access::Null);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("unknown entry 1"));
    }

    #[test]
    fn duplicate_decision_keeps_first() {
        let r = replay(&log(&[
            created(1, 10),
            decided(1, Verdict::Denied, 20),
            decided(1, Verdict::Granted, 30),
        ]));
        assert_eq!(r.state.entries[&1].access_granted, Access::No);
        assert_eq!(r.state.entries[&1].decided_at, Some(20));
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn interior_corruption_reports_offset() {
        let first = created(1, 10).encode();
        let mut bytes = first.clone();
        let mut second = created(2, 20).encode();
        second[6] ^= 0xFF;
        bytes.extend(&second);
        bytes.extend(created(3, 30).encode());
        let r = replay(&bytes);
        assert_eq!(r.records, 1);
        assert_eq!(r.valid_len, first.len());
        assert!(matches!(r.stop, Some(Stop::Corrupt { offset, .. }) if offset == first.len()));
    }

    #[test]
    fn damaged_last_record_is_torn() {
        let mut bytes = log(&[created(1, 10), created(2, 20)]);
        let n = bytes.len();
        bytes[n - 1] ^= 0x01;
        let r = replay(&bytes);
        assert_eq!(r.records, 1);
        assert!(matches!(r.stop, Some(Stop::TornTail { .. })));
    }

    #[test]
    fn history_orders_newest_first() {
        let r = replay(&log(&[created(1, 10), created(2, 20), created(3, 30)]));
        let ids: Vec<u64> = r
            .state
            .history(0, u64::MAX, 2)
            .iter()
            .map(|e| e.entry_id)
            .collect();
        assert_eq!(ids, vec![3, 2]);
        assert!(r.state.history(11, 19, 10).is_empty());
        assert!(StoreState::default().history(0, u64::MAX, 5).is_empty());
    }
}
