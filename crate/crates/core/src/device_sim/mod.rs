//! Deterministic stand-ins for the button, camera, buzzer and servo, plus
//! the clock, channel impairment and scenario scripts that drive them.

pub mod clock;
pub mod devices;
pub mod image;
pub mod impair;
pub mod scenario;

pub use clock::{unix_millis, ClockMode, SimClock};
pub use devices::{
    probe_burst, ActuatorSim, ButtonProbe, ButtonSim, CameraSim, DeviceError, MacAddr,
};
pub use image::{PgmError, SimImage};
pub use impair::{Fate, ImpairPolicy, Impairment, InvalidPolicy};
pub use scenario::{
    parse_command, Action, NetChannel, NetSetting, Scenario, ScenarioError, ScenarioEvent,
    SettingsPatch, Target,
};

/// Derive an independent stream seed from a base seed and a key.
pub fn mix_seed(seed: u64, key: u64) -> u64 {
    image::splitmix64(seed ^ image::splitmix64(key))
}
