use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::env::EnvLimits;
use crate::ingest::model::DeviceRegistration;
use crate::ingest::service::IngestConfig;
use crate::traffic_light::TrafficLightPolicy;

pub const ENV_PORT: &str = "GLYPHOTRACE_PORT";
pub const ENV_DATA_DIR: &str = "GLYPHOTRACE_DATA_DIR";
pub const ENV_CONFIG: &str = "GLYPHOTRACE_CONFIG";
pub const DEFAULT_PORT: u16 = 8080;

/// Service settings file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub env_limits: EnvLimits,
    pub default_policy: TrafficLightPolicy,
    pub devices: Vec<DeviceRegistration>,
    #[cfg(feature = "mqtt")]
    pub mqtt: Option<crate::netlink::mqtt::MqttSettings>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("data"),
            env_limits: EnvLimits::default(),
            default_policy: TrafficLightPolicy::handheld(),
            devices: Vec::new(),
            #[cfg(feature = "mqtt")]
            mqtt: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Config file from `GLYPHOTRACE_CONFIG` if set, then port and data
    /// directory overrides from the environment.
    pub fn from_env() -> anyhow::Result<Self> {
        let mut cfg = match std::env::var_os(ENV_CONFIG) {
            Some(p) => Self::load(Path::new(&p))?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(p) = get(ENV_PORT) {
            self.port = p
                .parse()
                .map_err(|_| anyhow::anyhow!("{ENV_PORT}={p:?} is not a port"))?;
        }
        if let Some(d) = get(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(d);
        }
        Ok(())
    }

    pub fn ingest_config(&self) -> IngestConfig {
        IngestConfig {
            env_limits: self.env_limits,
            default_policy: self.default_policy.clone(),
            devices: self.devices.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides() {
        let mut cfg: ServiceConfig = serde_json::from_str(r#"{"port": 9000}"#).unwrap();
        assert_eq!(cfg.port, 9000);
        cfg.apply_env(|k| match k {
            ENV_PORT => Some("7001".into()),
            ENV_DATA_DIR => Some("/tmp/x".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.port, 7001);
        assert_eq!(cfg.data_dir, PathBuf::from("/tmp/x"));
        assert!(cfg.apply_env(|_| Some("nope".into())).is_err());
    }
}
