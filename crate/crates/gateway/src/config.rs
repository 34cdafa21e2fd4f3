//! Gateway configuration file plus environment overrides.
//!
//! ```toml
//! log_level = "info"
//! ui_dir = "dashboard/dist"   # optional, served under /ui/
//!
//! [ingest]
//! listen = "0.0.0.0:7070"
//!
//! [http]
//! listen = "0.0.0.0:8080"
//!
//! [store]
//! dir = "./breathwatch-store"
//!
//! [alerts]
//! raise_after = 3
//! clear_after = 5
//!
//! [clock]
//! mode = "arrival"            # or "paced" with cadence_ms = 2000
//! ```
//!
//! `PORT` overrides the HTTP port, `STORE_DIR` the store directory and
//! `LOG_LEVEL` the log filter.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use breathwatch_core::rules::HysteresisConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Stamping;

pub const DEFAULT_INGEST_PORT: u16 = 7070;
pub const DEFAULT_HTTP_PORT: u16 = 8080;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("environment variable {name}={value:?} is invalid")]
    Env { name: &'static str, value: String },
    #[error("alerts.raise_after and alerts.clear_after must be at least 1")]
    Hysteresis,
    #[error("clock.cadence_ms must be positive")]
    Cadence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub log_level: String,
    pub ui_dir: Option<PathBuf>,
    pub ingest: ListenSection,
    pub http: ListenSection,
    pub store: StoreSection,
    pub alerts: HysteresisConfig,
    pub clock: Stamping,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListenSection {
    pub listen: SocketAddr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreSection {
    pub dir: PathBuf,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            log_level: "info".into(),
            ui_dir: None,
            ingest: ListenSection {
                listen: SocketAddr::from(([0, 0, 0, 0], DEFAULT_INGEST_PORT)),
            },
            http: ListenSection {
                listen: SocketAddr::from(([0, 0, 0, 0], DEFAULT_HTTP_PORT)),
            },
            store: StoreSection {
                dir: PathBuf::from("breathwatch-store"),
            },
            alerts: HysteresisConfig::default(),
            clock: Stamping::Arrival,
        }
    }
}

impl GatewayConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<GatewayConfig, ConfigError> {
        let config: GatewayConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<GatewayConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        GatewayConfig::parse(&text, path)
    }

    /// Applies `PORT`, `STORE_DIR` and `LOG_LEVEL` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(port) = lookup("PORT") {
            let p: u16 = port.parse().map_err(|_| ConfigError::Env {
                name: "PORT",
                value: port.clone(),
            })?;
            self.http.listen.set_port(p);
        }
        if let Some(dir) = lookup("STORE_DIR") {
            self.store.dir = PathBuf::from(dir);
        }
        if let Some(level) = lookup("LOG_LEVEL") {
            self.log_level = level;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.alerts.validate().map_err(|_| ConfigError::Hysteresis)?;
        if let Stamping::Paced { cadence_ms } = self.clock {
            if cadence_ms <= 0 {
                return Err(ConfigError::Cadence);
            }
        }
        Ok(())
    }
}
