use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationModel;
use crate::device::env::EnvLimits;
use crate::record::{GeoPoint, LinkKind};
use crate::spectrum;
use crate::traffic_light::TrafficLightPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkConfig {
    Broker {
        ssid: String,
        secret: String,
        endpoint: String,
    },
    Lorawan {
        device_eui: String,
        app_key: String,
    },
}

impl LinkConfig {
    pub fn kind(&self) -> LinkKind {
        match self {
            LinkConfig::Broker { .. } => LinkKind::Broker,
            LinkConfig::Lorawan { .. } => LinkKind::Lorawan,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let is_hex =
            |s: &str, len: usize| s.len() == len && s.chars().all(|c| c.is_ascii_hexdigit());
        match self {
            LinkConfig::Broker { ssid, endpoint, .. } => {
                if ssid.trim().is_empty() {
                    return Err(ConfigError::Invalid("ssid is empty".into()));
                }
                if endpoint.trim().is_empty() {
                    return Err(ConfigError::Invalid("broker endpoint is empty".into()));
                }
            }
            LinkConfig::Lorawan {
                device_eui,
                app_key,
            } => {
                if !is_hex(device_eui, 16) {
                    return Err(ConfigError::Invalid(format!(
                        "device_eui must be 16 hex digits, got {device_eui:?}"
                    )));
                }
                if !is_hex(app_key, 32) {
                    return Err(ConfigError::Invalid("app_key must be 32 hex digits".into()));
                }
            }
        }
        Ok(())
    }
}

fn default_battery() -> f64 {
    100.0
}

/// Persistent device settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub serial: String,
    pub link: LinkConfig,
    pub default_channel: u16,
    pub policy: TrafficLightPolicy,
    pub model: CalibrationModel,
    #[serde(default)]
    pub location: Option<GeoPoint>,
    #[serde(default)]
    pub env_limits: EnvLimits,
    #[serde(default = "default_battery")]
    pub battery_pct: f64,
}

impl DeviceConfig {
    pub fn new(serial: impl Into<String>, link: LinkConfig) -> Self {
        DeviceConfig {
            serial: serial.into(),
            link,
            default_channel: spectrum::DEFAULT_CHANNEL_NM,
            policy: TrafficLightPolicy::handheld(),
            model: CalibrationModel::handheld(),
            location: None,
            env_limits: EnvLimits::default(),
            battery_pct: 100.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.serial.trim().is_empty() {
            return Err(ConfigError::Invalid("serial is empty".into()));
        }
        self.link.validate()?;
        if !spectrum::is_supported(self.default_channel) {
            return Err(ConfigError::Invalid(format!(
                "unsupported channel {}",
                self.default_channel
            )));
        }
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model.channel_nm != self.default_channel {
            return Err(ConfigError::Invalid(format!(
                "model reads {} nm but default channel is {} nm",
                self.model.channel_nm, self.default_channel
            )));
        }
        if !(0.0..=100.0).contains(&self.battery_pct) {
            return Err(ConfigError::Invalid("battery_pct outside 0..=100".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let cfg: DeviceConfig = serde_json::from_slice(&fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes to a sibling temp file and renames over `path`.
    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn lorawan() -> LinkConfig {
        LinkConfig::Lorawan {
            device_eui: "70B3D57ED0000001".into(),
            app_key: "00112233445566778899AABBCCDDEEFF".into(),
        }
    }

    #[test]
    fn validation() {
        assert!(DeviceConfig::new("SG-1", lorawan()).validate().is_ok());
        assert!(DeviceConfig::new("", lorawan()).validate().is_err());
        let bad = LinkConfig::Lorawan {
            device_eui: "xyz".into(),
            app_key: "00".into(),
        };
        assert!(DeviceConfig::new("SG-1", bad).validate().is_err());
        let mut cfg = DeviceConfig::new("SG-1", lorawan());
        cfg.default_channel = 585;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("device.json");
        let cfg = DeviceConfig::new(
            "SG-1",
            LinkConfig::Broker {
                ssid: "field".into(),
                secret: "pw".into(),
                endpoint: "mqtts://broker:8883".into(),
            },
        );
        cfg.save(&path).unwrap();
        assert_eq!(DeviceConfig::load(&path).unwrap(), cfg);
    }
}
