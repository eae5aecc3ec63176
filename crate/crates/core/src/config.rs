//! INI config files for `serve` and `edge`.
//!
//! ```ini
//! [server]
//! host = 127.0.0.1
//! edge_port = 7001
//! owner_port = 7002
//! bridge_port = 7003
//! http_port = 7080
//! token = <64 hex digits>
//! data_dir = ./data
//! outbox_dir = ./outbox
//! heartbeat_interval_ms = 1000
//!
//! [edge]
//! server_host = 127.0.0.1
//! server_port = 7001
//! token = <64 hex digits>
//! buttons = aa:bb:cc:dd:ee:01, aa:bb:cc:dd:ee:02
//! debounce_ms = 5000
//! heartbeat_interval_ms = 1000
//! queue_capacity = 32
//! servo_dwell_ms = 5000
//! control_port = 7010
//! ```
//!
//! Every key is optional. Unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use thiserror::Error;

use crate::device_sim::MacAddr;
use crate::edge::EdgeConfig;

pub const EDGE_PORT: u16 = 7001;
pub const OWNER_PORT: u16 = 7002;
pub const BRIDGE_PORT: u16 = 7003;
pub const HTTP_PORT: u16 = 7080;
pub const CONTROL_PORT: u16 = 7010;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("[{section}] {key}: {message}")]
    Value {
        section: &'static str,
        key: String,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerConfig {
    pub host: String,
    pub edge_port: u16,
    pub owner_port: u16,
    pub bridge_port: u16,
    pub http_port: u16,
    pub token: Option<String>,
    pub data_dir: PathBuf,
    pub outbox_dir: PathBuf,
    pub heartbeat_interval_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            host: "127.0.0.1".into(),
            edge_port: EDGE_PORT,
            owner_port: OWNER_PORT,
            bridge_port: BRIDGE_PORT,
            http_port: HTTP_PORT,
            token: None,
            data_dir: PathBuf::from("data"),
            outbox_dir: PathBuf::from("outbox"),
            heartbeat_interval_ms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeFileConfig {
    pub server_host: String,
    pub server_port: u16,
    pub control_port: u16,
    pub edge: EdgeConfig,
}

impl Default for EdgeFileConfig {
    fn default() -> Self {
        EdgeFileConfig {
            server_host: "127.0.0.1".into(),
            server_port: EDGE_PORT,
            control_port: CONTROL_PORT,
            edge: EdgeConfig::default(),
        }
    }
}

fn load(path: &Path) -> Result<Ini, ConfigError> {
    Ini::load_from_file(path).map_err(|e| ConfigError::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn parse<T: FromStr>(section: &'static str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| ConfigError::Value {
            section,
            key: key.to_string(),
            message: e.to_string(),
        })
}

fn unknown(section: &'static str, key: &str) -> ConfigError {
    ConfigError::Value {
        section,
        key: key.to_string(),
        message: "unknown key".into(),
    }
}

fn positive(section: &'static str, key: &str, v: u64) -> Result<u64, ConfigError> {
    if v == 0 {
        return Err(ConfigError::Value {
            section,
            key: key.to_string(),
            message: "must be positive".into(),
        });
    }
    Ok(v)
}

impl ServerConfig {
    pub fn from_file(path: &Path) -> Result<ServerConfig, ConfigError> {
        ServerConfig::from_ini(&load(path)?)
    }

    pub fn parse_str(text: &str) -> Result<ServerConfig, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Load {
            path: PathBuf::from("<text>"),
            message: e.to_string(),
        })?;
        ServerConfig::from_ini(&ini)
    }

    fn from_ini(ini: &Ini) -> Result<ServerConfig, ConfigError> {
        const S: &str = "server";
        let mut c = ServerConfig::default();
        let Some(props) = ini.section(Some(S)) else {
            return Ok(c);
        };
        for (k, v) in props.iter() {
            match k {
                "host" => c.host = v.trim().to_string(),
                "edge_port" => c.edge_port = parse(S, k, v)?,
                "owner_port" => c.owner_port = parse(S, k, v)?,
                "bridge_port" => c.bridge_port = parse(S, k, v)?,
                "http_port" => c.http_port = parse(S, k, v)?,
                "token" => c.token = Some(v.trim().to_string()),
                "data_dir" => c.data_dir = PathBuf::from(v.trim()),
                "outbox_dir" => c.outbox_dir = PathBuf::from(v.trim()),
                "heartbeat_interval_ms" => {
                    c.heartbeat_interval_ms = positive(S, k, parse(S, k, v)?)?
                }
                _ => return Err(unknown(S, k)),
            }
        }
        Ok(c)
    }
}

impl EdgeFileConfig {
    pub fn from_file(path: &Path) -> Result<EdgeFileConfig, ConfigError> {
        EdgeFileConfig::from_ini(&load(path)?)
    }

    pub fn parse_str(text: &str) -> Result<EdgeFileConfig, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Load {
            path: PathBuf::from("<text>"),
            message: e.to_string(),
        })?;
        EdgeFileConfig::from_ini(&ini)
    }

    fn from_ini(ini: &Ini) -> Result<EdgeFileConfig, ConfigError> {
        const S: &str = "edge";
        let mut c = EdgeFileConfig::default();
        let Some(props) = ini.section(Some(S)) else {
            return Ok(c);
        };
        for (k, v) in props.iter() {
            let e = &mut c.edge;
            match k {
                "server_host" => c.server_host = v.trim().to_string(),
                "server_port" => c.server_port = parse(S, k, v)?,
                "control_port" => c.control_port = parse(S, k, v)?,
                "token" => e.token = v.trim().to_string(),
                "buttons" => {
                    e.buttons = v
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|m| parse::<MacAddr>(S, k, m))
                        .collect::<Result<_, _>>()?
                }
                "debounce_ms" => e.debounce_ms = positive(S, k, parse(S, k, v)?)?,
                "heartbeat_interval_ms" => {
                    e.heartbeat_interval_ms = positive(S, k, parse(S, k, v)?)?
                }
                "queue_capacity" => e.queue_capacity = positive(S, k, parse(S, k, v)?)? as usize,
                "servo_dwell_ms" => e.servo_dwell_ms = parse(S, k, v)?,
                "ack_timeout_ms" => e.ack_timeout_ms = positive(S, k, parse(S, k, v)?)?,
                "seed" => e.seed = parse(S, k, v)?,
                _ => return Err(unknown(S, k)),
            }
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_gives_defaults() {
        assert_eq!(
            ServerConfig::parse_str("").unwrap(),
            ServerConfig::default()
        );
        assert_eq!(
            EdgeFileConfig::parse_str("").unwrap(),
            EdgeFileConfig::default()
        );
    }

    #[test]
    fn server_keys() {
        let c =
            ServerConfig::parse_str("[server]\nedge_port = 9001\ndata_dir = /tmp/d\ntoken = ab\n")
                .unwrap();
        assert_eq!(c.edge_port, 9001);
        assert_eq!(c.owner_port, OWNER_PORT);
        assert_eq!(c.data_dir, PathBuf::from("/tmp/d"));
        assert_eq!(c.token.as_deref(), Some("ab"));
    }

    #[test]
    fn edge_buttons_and_windows() {
        let c = EdgeFileConfig::parse_str(
            "[edge]\nbuttons = aa:bb:cc:dd:ee:01, aa:bb:cc:dd:ee:02\ndebounce_ms = 3000\n",
        )
        .unwrap();
        assert_eq!(c.edge.buttons.len(), 2);
        assert_eq!(c.edge.debounce_ms, 3000);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ServerConfig::parse_str("[server]\nedge_port = x\n").is_err());
        assert!(ServerConfig::parse_str("[server]\nport = 1\n").is_err());
        assert!(EdgeFileConfig::parse_str("[edge]\ndebounce_ms = 0\n").is_err());
        assert!(EdgeFileConfig::parse_str("[edge]\nbuttons = zz\n").is_err());
    }
}
