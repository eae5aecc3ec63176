//! Scenario scripts: one event per line.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed 7                                  optional, before the first event
//! <ms> press <mac>
//! <ms> kill <component>
//! <ms> revive <component>
//! <ms> net <edge_channel|owner_channel> drop <rate 0..1>
//! <ms> net <edge_channel|owner_channel> delay <ms>
//! <ms> decide <entry-ordinal> grant|deny
//! <ms> settings [service=on|off] [dnd=on|off] [alerts=email,text,ringer|none]
//! <ms> end
//! ```
//!
//! Components: `button camera buzzer servo edge edge_channel owner_channel
//! server`. Event times strictly increase, `kill` and `revive` alternate per
//! component starting with `kill`, and `end` (if present) is the last line.
//!
//! The live edge control port accepts the same verbs without the leading
//! time, parsed by [`parse_command`].

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::devices::MacAddr;
use crate::model::{AlertChannel, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Button,
    Camera,
    Buzzer,
    Servo,
    Edge,
    EdgeChannel,
    OwnerChannel,
    Server,
}

impl Target {
    pub const ALL: [Target; 8] = [
        Target::Button,
        Target::Camera,
        Target::Buzzer,
        Target::Servo,
        Target::Edge,
        Target::EdgeChannel,
        Target::OwnerChannel,
        Target::Server,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Button => "button",
            Target::Camera => "camera",
            Target::Buzzer => "buzzer",
            Target::Servo => "servo",
            Target::Edge => "edge",
            Target::EdgeChannel => "edge_channel",
            Target::OwnerChannel => "owner_channel",
            Target::Server => "server",
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Target::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown component `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetChannel {
    Edge,
    Owner,
}

impl NetChannel {
    pub fn as_str(self) -> &'static str {
        match self {
            NetChannel::Edge => "edge_channel",
            NetChannel::Owner => "owner_channel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetSetting {
    DropRate(f64),
    DelayMs(u64),
}

/// Partial settings change issued by the scripted owner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SettingsPatch {
    pub service_enabled: Option<bool>,
    pub do_not_disturb: Option<bool>,
    pub alert_channels: Option<BTreeSet<AlertChannel>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Press(MacAddr),
    Kill(Target),
    Revive(Target),
    Net(NetChannel, NetSetting),
    Decide { ordinal: u64, verdict: Verdict },
    Settings(SettingsPatch),
    End,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEvent {
    pub at: u64,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub seed: u64,
    pub events: Vec<ScenarioEvent>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut scenario = Scenario::default();
        let mut killed: HashSet<Target> = HashSet::new();
        let mut seen_event = false;
        let mut ended = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ScenarioError { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = content.split_whitespace().collect();
            if tokens[0] == "seed" {
                if seen_event {
                    return Err(err("seed must precede all events".into()));
                }
                let [_, value] = tokens[..] else {
                    return Err(err("expected `seed <u64>`".into()));
                };
                scenario.seed = value
                    .parse()
                    .map_err(|_| err(format!("invalid seed `{value}`")))?;
                continue;
            }
            if ended {
                return Err(err("no events may follow `end`".into()));
            }
            let at: u64 = tokens[0]
                .parse()
                .map_err(|_| err(format!("expected a time in ms, got `{}`", tokens[0])))?;
            if let Some(prev) = scenario.events.last() {
                if at <= prev.at {
                    return Err(err(format!(
                        "event time {at} does not follow previous time {}",
                        prev.at
                    )));
                }
            }
            let action = parse_action(&tokens[1..]).map_err(err)?;
            match action {
                Action::Kill(t) if !killed.insert(t) => {
                    return Err(err(format!("{} is already killed", t.as_str())));
                }
                Action::Revive(t) if !killed.remove(&t) => {
                    return Err(err(format!("{} is not killed", t.as_str())));
                }
                Action::End => ended = true,
                _ => {}
            }
            seen_event = true;
            scenario.events.push(ScenarioEvent { at, action });
        }
        Ok(scenario)
    }

    /// Explicit end time, if the script has an `end` line.
    pub fn end_at(&self) -> Option<u64> {
        self.events
            .iter()
            .find(|e| e.action == Action::End)
            .map(|e| e.at)
    }

    pub fn last_at(&self) -> u64 {
        self.events.last().map_or(0, |e| e.at)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("seed {}\n", self.seed);
        for e in &self.events {
            out.push_str(&format!("{} {}\n", e.at, e.action));
        }
        out
    }
}

/// Parse a verb line without a leading time (live control port).
pub fn parse_command(line: &str) -> Result<Action, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    parse_action(&tokens)
}

fn parse_action(tokens: &[&str]) -> Result<Action, String> {
    let (verb, args) = tokens
        .split_first()
        .ok_or_else(|| "missing verb".to_string())?;
    match (*verb, args) {
        ("press", [mac]) => Ok(Action::Press(mac.parse().map_err(|e| format!("{e}"))?)),
        ("kill", [target]) => Ok(Action::Kill(target.parse()?)),
        ("revive", [target]) => Ok(Action::Revive(target.parse()?)),
        ("net", [channel, setting, value]) => {
            let channel = match *channel {
                "edge_channel" => NetChannel::Edge,
                "owner_channel" => NetChannel::Owner,
                other => return Err(format!("unknown channel `{other}`")),
            };
            let setting = match *setting {
                "drop" => {
                    let rate: f64 = value
                        .parse()
                        .map_err(|_| format!("invalid drop rate `{value}`"))?;
                    if !(0.0..=1.0).contains(&rate) {
                        return Err(format!("drop rate {rate} is outside [0, 1]"));
                    }
                    NetSetting::DropRate(rate)
                }
                "delay" => NetSetting::DelayMs(
                    value
                        .parse()
                        .map_err(|_| format!("invalid delay `{value}`"))?,
                ),
                other => return Err(format!("unknown net setting `{other}`")),
            };
            Ok(Action::Net(channel, setting))
        }
        ("decide", [ordinal, verdict]) => {
            let ordinal: u64 = ordinal
                .parse()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| format!("invalid entry ordinal `{ordinal}`"))?;
            let verdict = match *verdict {
                "grant" => Verdict::Granted,
                "deny" => Verdict::Denied,
                other => return Err(format!("expected grant or deny, got `{other}`")),
            };
            Ok(Action::Decide { ordinal, verdict })
        }
        ("settings", pairs) if !pairs.is_empty() => {
            let mut patch = SettingsPatch::default();
            for pair in pairs {
                let (key, value) = pair
                    .split_once('=')
                    .ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
                match key {
                    "service" => patch.service_enabled = Some(on_off(value)?),
                    "dnd" => patch.do_not_disturb = Some(on_off(value)?),
                    "alerts" => {
                        let mut set = BTreeSet::new();
                        if value != "none" {
                            for name in value.split(',') {
                                if !set.insert(name.parse::<AlertChannel>()?) {
                                    return Err(format!("duplicate alert channel `{name}`"));
                                }
                            }
                        }
                        patch.alert_channels = Some(set);
                    }
                    other => return Err(format!("unknown setting `{other}`")),
                }
            }
            Ok(Action::Settings(patch))
        }
        ("end", []) => Ok(Action::End),
        ("press" | "kill" | "revive" | "net" | "decide" | "settings" | "end", _) => {
            Err(format!("wrong arguments for `{verb}`"))
        }
        (other, _) => Err(format!("unknown verb `{other}`")),
    }
}

fn on_off(value: &str) -> Result<bool, String> {
    match value {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected on or off, got `{other}`")),
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Press(mac) => write!(f, "press {mac}"),
            Action::Kill(t) => write!(f, "kill {}", t.as_str()),
            Action::Revive(t) => write!(f, "revive {}", t.as_str()),
            Action::Net(ch, NetSetting::DropRate(p)) => write!(f, "net {} drop {p}", ch.as_str()),
            Action::Net(ch, NetSetting::DelayMs(d)) => write!(f, "net {} delay {d}", ch.as_str()),
            Action::Decide { ordinal, verdict } => {
                let word = match verdict {
                    Verdict::Granted => "grant",
                    Verdict::Denied => "deny",
                };
                write!(f, "decide {ordinal} {word}")
            }
            Action::Settings(patch) => {
                f.write_str("settings")?;
                let word = |b: bool| if b { "on" } else { "off" };
                if let Some(v) = patch.service_enabled {
                    write!(f, " service={}", word(v))?;
                }
                if let Some(v) = patch.do_not_disturb {
                    write!(f, " dnd={}", word(v))?;
                }
                if let Some(set) = &patch.alert_channels {
                    let names: Vec<&str> = set.iter().map(|c| c.as_str()).collect();
                    let list = if names.is_empty() {
                        "none".to_string()
                    } else {
                        names.join(",")
                    };
                    write!(f, " alerts={list}")?;
                }
                Ok(())
            }
            Action::End => f.write_str("end"),
        }
    }
}
