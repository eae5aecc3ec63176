use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::image::SimImage;
use super::mix_seed;

/// Hardware address written `aa:bb:cc:dd:ee:ff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub fn as_u64(self) -> u64 {
        self.0.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d, e, g] = self.0;
        write!(f, "{a:02x}:{b:02x}:{c:02x}:{d:02x}:{e:02x}:{g:02x}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address `{0}`")]
pub struct MacParseError(pub String);

impl FromStr for MacAddr {
    type Err = MacParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for slot in out.iter_mut() {
            let part = parts.next().ok_or_else(|| MacParseError(s.into()))?;
            if part.len() != 2 {
                return Err(MacParseError(s.into()));
            }
            *slot = u8::from_str_radix(part, 16).map_err(|_| MacParseError(s.into()))?;
        }
        if parts.next().is_some() {
            return Err(MacParseError(s.into()));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// One network announcement from a button, as seen by the edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ButtonProbe {
    pub source_mac: MacAddr,
    pub observed_at: u64,
}

pub const MIN_PROBES: u32 = 2;
pub const MAX_PROBES: u32 = 5;
pub const MIN_PROBE_GAP_MS: u64 = 300;
pub const MAX_PROBE_GAP_MS: u64 = 900;

/// A dash button. Each press announces itself with a short burst of probes.
#[derive(Debug, Clone)]
pub struct ButtonSim {
    pub mac: MacAddr,
    killed: bool,
}

impl ButtonSim {
    pub fn new(mac: MacAddr) -> ButtonSim {
        ButtonSim { mac, killed: false }
    }

    pub fn set_killed(&mut self, killed: bool) {
        self.killed = killed;
    }

    pub fn is_killed(&self) -> bool {
        self.killed
    }

    /// Probes emitted by a press at `at`. A killed button stays silent.
    pub fn press(&self, at: u64, seed: u64) -> Vec<ButtonProbe> {
        if self.killed {
            return Vec::new();
        }
        probe_burst(self.mac, at, seed)
    }
}

/// Burst size in `[2, 5]` and gaps in `[300, 900]` ms, drawn from a stream
/// keyed by `(seed, mac, at)`.
pub fn probe_burst(mac: MacAddr, at: u64, seed: u64) -> Vec<ButtonProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, mac.as_u64()), at));
    let count = rng.random_range(MIN_PROBES..=MAX_PROBES);
    let mut t = at;
    (0..count)
        .map(|i| {
            if i > 0 {
                t += rng.random_range(MIN_PROBE_GAP_MS..=MAX_PROBE_GAP_MS);
            }
            ButtonProbe {
                source_mac: mac,
                observed_at: t,
            }
        })
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("camera capture failed: device not responding")]
    CaptureFailure,
    #[error("{0} is not responding")]
    Unresponsive(&'static str),
}

#[derive(Debug, Clone, Default)]
pub struct CameraSim {
    killed: bool,
}

impl CameraSim {
    pub fn set_killed(&mut self, killed: bool) {
        self.killed = killed;
    }

    pub fn is_killed(&self) -> bool {
        self.killed
    }

    pub fn capture(&self, press_id: u64, seed: u64) -> Result<SimImage, DeviceError> {
        if self.killed {
            return Err(DeviceError::CaptureFailure);
        }
        Ok(SimImage::render(press_id, seed))
    }
}

/// Buzzer and servo share the same shape: a named actuator that can be killed.
#[derive(Debug, Clone)]
pub struct ActuatorSim {
    name: &'static str,
    killed: bool,
}

impl ActuatorSim {
    pub fn buzzer() -> ActuatorSim {
        ActuatorSim {
            name: "buzzer",
            killed: false,
        }
    }

    pub fn servo() -> ActuatorSim {
        ActuatorSim {
            name: "servo",
            killed: false,
        }
    }

    pub fn set_killed(&mut self, killed: bool) {
        self.killed = killed;
    }

    pub fn is_killed(&self) -> bool {
        self.killed
    }

    pub fn actuate(&self) -> Result<(), DeviceError> {
        if self.killed {
            Err(DeviceError::Unresponsive(self.name))
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac() -> MacAddr {
        "aa:bb:cc:dd:ee:01".parse().unwrap()
    }

    #[test]
    fn mac_round_trip() {
        assert_eq!(mac().to_string(), "aa:bb:cc:dd:ee:01");
        assert!("aa:bb:cc:dd:ee".parse::<MacAddr>().is_err());
        assert!("aa:bb:cc:dd:ee:01:02".parse::<MacAddr>().is_err());
        assert!("aa:bb:cc:dd:ee:zz".parse::<MacAddr>().is_err());
        assert!("aaa:b:cc:dd:ee:01".parse::<MacAddr>().is_err());
    }

    #[test]
    fn burst_shape() {
        for seed in 0..200 {
            let probes = ButtonSim::new(mac()).press(1000, seed);
            assert!((2..=5).contains(&probes.len()));
            assert_eq!(probes[0].observed_at, 1000);
            for w in probes.windows(2) {
                let gap = w[1].observed_at - w[0].observed_at;
                assert!((300..=900).contains(&gap));
            }
        }
    }

    #[test]
    fn killed_button_is_silent() {
        let mut b = ButtonSim::new(mac());
        b.set_killed(true);
        assert!(b.press(0, 1).is_empty());
        b.set_killed(false);
        assert!(!b.press(0, 1).is_empty());
    }

    #[test]
    fn presses_a_minute_apart_stay_separate() {
        let b = ButtonSim::new(mac());
        let first = b.press(0, 1);
        let second = b.press(60_000, 1);
        let gap = second[0].observed_at - first.last().unwrap().observed_at;
        assert!(gap >= 5_000);
    }

    #[test]
    fn killed_camera_fails() {
        let mut cam = CameraSim::default();
        assert!(cam.capture(1, 7).is_ok());
        cam.set_killed(true);
        assert_eq!(cam.capture(1, 7), Err(DeviceError::CaptureFailure));
    }
}
