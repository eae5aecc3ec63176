//! Generators and reference models shared by the property tests and the
//! acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dashbell_core::device_sim::{ButtonProbe, MacAddr};
use dashbell_core::model::{
    Access, AlertChannel, EntryRecord, HealthState, OwnerSettings, SelfStatus, Verdict,
};
use dashbell_core::protocol::{
    Actuate, Body, Decision, DecisionAck, EntryAck, EntryUpload, ErrorBody, ErrorCode, FaultReport,
    Heartbeat, Hello, HelloAck, HistoryRequest, HistoryResponse, Message, Notify, Role,
    SettingsUpdate,
};
use proptest::prelude::*;

pub fn mac(last: u8) -> MacAddr {
    MacAddr([0xaa, 0xbb, 0xcc, 0xdd, 0xee, last])
}

// ---- messages ----

fn text() -> impl Strategy<Value = String> {
    prop_oneof!["[a-z0-9 _.:-]{0,24}", any::<String>(), Just(String::new()),]
}

fn role() -> impl Strategy<Value = Role> {
    prop_oneof![Just(Role::Edge), Just(Role::Owner), Just(Role::Bridge)]
}

fn verdict() -> impl Strategy<Value = Verdict> {
    prop_oneof![Just(Verdict::Granted), Just(Verdict::Denied)]
}

fn settings() -> impl Strategy<Value = OwnerSettings> {
    (
        any::<bool>(),
        any::<bool>(),
        proptest::collection::btree_set(
            prop_oneof![
                Just(AlertChannel::Email),
                Just(AlertChannel::Text),
                Just(AlertChannel::Ringer)
            ],
            0..=3,
        ),
    )
        .prop_map(
            |(service_enabled, do_not_disturb, alert_channels)| OwnerSettings {
                service_enabled,
                do_not_disturb,
                alert_channels,
            },
        )
}

pub fn entry_record() -> impl Strategy<Value = EntryRecord> {
    (
        any::<u64>(),
        any::<u64>(),
        any::<bool>(),
        prop_oneof![Just(Access::Null), Just(Access::Yes), Just(Access::No)],
        any::<u64>(),
    )
        .prop_map(
            |(entry_id, received_at, camera_fault, access, decided)| EntryRecord {
                entry_id,
                received_at,
                image_url: (!camera_fault).then(|| format!("/images/{entry_id}.pgm")),
                access_granted: access,
                decided_at: access.is_decided().then_some(decided),
                camera_fault,
            },
        )
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    proptest::sample::select(vec![
        ErrorCode::AuthFailure,
        ErrorCode::RoleViolation,
        ErrorCode::MalformedPayload,
        ErrorCode::UnknownMessage,
        ErrorCode::FrameTooLarge,
        ErrorCode::OutOfSequence,
        ErrorCode::NotAuthenticated,
        ErrorCode::NoSuchEntry,
        ErrorCode::AlreadyDecided,
        ErrorCode::StorageError,
    ])
}

fn health() -> impl Strategy<Value = HealthState> {
    proptest::sample::select(vec![
        HealthState::Ok,
        HealthState::Suspected,
        HealthState::Failed,
        HealthState::Unreachable,
    ])
}

pub fn body() -> impl Strategy<Value = Body> {
    prop_oneof![
        (
            role(),
            "[0-9a-f]{64}",
            proptest::collection::vec(any::<u64>(), 0..4)
        )
            .prop_map(|(role, token, awaiting)| Body::from(Hello {
                role,
                token,
                awaiting
            })),
        (role(), settings()).prop_map(|(role, settings)| Body::from(HelloAck { role, settings })),
        (
            any::<u64>(),
            any::<u64>(),
            proptest::option::of("[A-Za-z0-9+/]{0,40}"),
            any::<bool>()
        )
            .prop_map(|(press_id, timestamp, image, camera_fault)| Body::from(
                EntryUpload {
                    press_id,
                    timestamp,
                    image,
                    camera_fault
                }
            )),
        (any::<u64>(), any::<u64>())
            .prop_map(|(press_id, entry_id)| Body::from(EntryAck { press_id, entry_id })),
        (entry_record(), any::<bool>(), any::<bool>()).prop_map(
            |(entry, ring, replay)| Body::from(Notify {
                entry,
                ring,
                replay
            })
        ),
        (any::<u64>(), verdict())
            .prop_map(|(entry_id, verdict)| Body::from(Decision { entry_id, verdict })),
        entry_record().prop_map(|entry| Body::from(DecisionAck { entry })),
        (any::<u64>(), verdict())
            .prop_map(|(entry_id, verdict)| Body::from(Actuate { entry_id, verdict })),
        (
            text(),
            prop_oneof![Just(SelfStatus::Ok), Just(SelfStatus::Failed)],
            proptest::option::of(text())
        )
            .prop_map(|(component, status, detail)| Body::from(Heartbeat {
                component,
                status,
                detail
            })),
        (text(), health(), text(), any::<u64>()).prop_map(|(component, state, detail, at)| {
            Body::from(FaultReport {
                component,
                state,
                detail,
                at,
            })
        }),
        settings().prop_map(|settings| Body::from(SettingsUpdate { settings })),
        (any::<u64>(), any::<u64>(), any::<u32>()).prop_map(|(from_ms, to_ms, limit)| {
            Body::from(HistoryRequest {
                from_ms,
                to_ms,
                limit,
            })
        }),
        proptest::collection::vec(entry_record(), 0..4)
            .prop_map(|entries| Body::from(HistoryResponse { entries })),
        (error_code(), text(), proptest::option::of(any::<u64>())).prop_map(
            |(code, message, entry_id)| Body::from(ErrorBody {
                code,
                message,
                entry_id
            })
        ),
    ]
}

pub fn message() -> impl Strategy<Value = Message> {
    (any::<u64>(), body()).prop_map(|(seq, body)| Message::new(seq, body))
}

// ---- debounce ----

/// Random probe schedule: several MACs (one of them not allow-listed), each
/// with non-decreasing times, merged into one time-ordered stream.
pub fn probe_schedule() -> impl Strategy<Value = (Vec<ButtonProbe>, u64)> {
    (
        proptest::collection::vec((1u8..=4, 0u64..12_000), 0..60),
        1u64..8_000,
    )
        .prop_map(|(raw, window)| {
            let mut t = 0;
            let probes = raw
                .into_iter()
                .map(|(m, gap)| {
                    t += gap;
                    ButtonProbe {
                        source_mac: mac(m),
                        observed_at: t,
                    }
                })
                .collect();
            (probes, window)
        })
}

/// Brute force: split each MAC's probes wherever the gap reaches the window,
/// then number the groups in the order their first probes appear.
pub fn debounce_oracle(
    probes: &[ButtonProbe],
    window: u64,
    allow: &[MacAddr],
) -> Vec<(u64, MacAddr, u64)> {
    let allow: BTreeSet<MacAddr> = allow.iter().copied().collect();
    let mut by_mac: BTreeMap<MacAddr, Vec<(usize, u64)>> = BTreeMap::new();
    for (i, p) in probes.iter().enumerate() {
        if allow.contains(&p.source_mac) {
            by_mac
                .entry(p.source_mac)
                .or_default()
                .push((i, p.observed_at));
        }
    }
    let mut starts = Vec::new();
    for (m, list) in by_mac {
        for (k, (i, t)) in list.iter().enumerate() {
            if k == 0 || t - list[k - 1].1 >= window {
                starts.push((*i, m, *t));
            }
        }
    }
    starts.sort();
    starts
        .into_iter()
        .enumerate()
        .map(|(n, (_, m, t))| (n as u64 + 1, m, t))
        .collect()
}

// ---- store ----

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Create {
        press_id: u64,
        at: u64,
    },
    Decide {
        entry_id: u64,
        verdict: Verdict,
        at: u64,
    },
}

/// Fifty operations, each appending exactly one record: 30 creations and 20
/// first-time decisions.
pub fn fifty_ops() -> Vec<Op> {
    let mut ops = Vec::new();
    let mut next_decide = 1;
    for i in 1..=30u64 {
        ops.push(Op::Create {
            press_id: i,
            at: i * 1000,
        });
        if i % 3 != 0 && next_decide <= 20 {
            let verdict = if next_decide % 2 == 0 {
                Verdict::Denied
            } else {
                Verdict::Granted
            };
            ops.push(Op::Decide {
                entry_id: next_decide,
                verdict,
                at: i * 1000 + 500,
            });
            next_decide += 1;
        }
    }
    assert_eq!(ops.len(), 50);
    ops
}

/// Reference model: entry id -> (received_at, access, decided_at) after the
/// first `n` operations.
pub fn model_after(ops: &[Op], n: usize) -> BTreeMap<u64, (u64, Access, Option<u64>)> {
    let mut m = BTreeMap::new();
    let mut next = 1;
    for op in &ops[..n] {
        match *op {
            Op::Create { at, .. } => {
                m.insert(next, (at, Access::Null, None));
                next += 1;
            }
            Op::Decide {
                entry_id,
                verdict,
                at,
            } => {
                let e = m.get_mut(&entry_id).expect("decided entries exist");
                e.1 = match verdict {
                    Verdict::Granted => Access::Yes,
                    Verdict::Denied => Access::No,
                };
                e.2 = Some(at);
            }
        }
    }
    m
}

/// Record end offsets read straight from the documented layout:
/// u32 BE body length, body, u32 CRC.
pub fn record_ends(bytes: &[u8]) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut at = 0;
    while at < bytes.len() {
        let len = u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        at += 4 + len + 4;
        ends.push(at);
    }
    assert_eq!(at, bytes.len());
    ends
}
