use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netlink::TelemetryEnvelope;
use crate::record::{LinkKind, TestRecord};
use crate::traffic_light::{TrafficLight, TrafficLightPolicy};

pub const DEFAULT_PAGE_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmSeverity {
    Advisory,
    Critical,
}

impl AlarmSeverity {
    /// Warning raises an advisory, Positive a critical alarm.
    pub fn for_color(color: TrafficLight) -> Option<Self> {
        match color {
            TrafficLight::Negative => None,
            TrafficLight::Warning => Some(AlarmSeverity::Advisory),
            TrafficLight::Positive => Some(AlarmSeverity::Critical),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub alarm_id: u64,
    pub record_id: String,
    pub device_serial: String,
    pub test_id: u64,
    pub severity: AlarmSeverity,
    pub created_at: i64,
    pub acknowledged: bool,
}

/// A command sent to a device, waiting for the record it should produce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub correlation_id: String,
    pub device_serial: String,
    pub link: LinkKind,
    pub method: String,
    pub at: i64,
}

/// A device known to the platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRegistration {
    pub serial: String,
    pub link: LinkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_eui: Option<String>,
    pub policy: TrafficLightPolicy,
}

impl DeviceRegistration {
    pub fn broker(serial: impl Into<String>, policy: TrafficLightPolicy) -> Self {
        DeviceRegistration {
            serial: serial.into(),
            link: LinkKind::Broker,
            device_eui: None,
            policy,
        }
    }

    pub fn lorawan(
        serial: impl Into<String>,
        device_eui: impl Into<String>,
        policy: TrafficLightPolicy,
    ) -> Self {
        DeviceRegistration {
            serial: serial.into(),
            link: LinkKind::Lorawan,
            device_eui: Some(device_eui.into()),
            policy,
        }
    }
}

/// One line of the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum LogEntry {
    Device(DeviceRegistration),
    /// A stored record and the alarm it raised, written as one line so the
    /// two can never be separated by a crash.
    Record {
        record: TestRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alarm: Option<Alarm>,
    },
    AlarmAck {
        alarm_id: u64,
        at: i64,
    },
    Dispatch(Dispatch),
    /// Telemetry that could not become a record, kept for audit.
    Rejected {
        envelope: TelemetryEnvelope,
        reason: String,
        at: i64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryFilter {
    #[serde(default)]
    pub device: Option<String>,
    /// Inclusive lower bound, Unix ms.
    #[serde(default)]
    pub from: Option<i64>,
    /// Inclusive upper bound, Unix ms.
    #[serde(default)]
    pub to: Option<i64>,
    #[serde(default)]
    pub color: Option<TrafficLight>,
    #[serde(default)]
    pub region: Option<String>,
}

impl QueryFilter {
    pub fn matches(&self, r: &TestRecord) -> bool {
        self.device.as_ref().is_none_or(|d| *d == r.device_serial)
            && self.from.is_none_or(|f| r.timestamp >= f)
            && self.to.is_none_or(|t| r.timestamp <= t)
            && self.color.is_none_or(|c| c == r.color)
            && self
                .region
                .as_ref()
                .is_none_or(|reg| r.region() == Some(reg.as_str()))
    }
}

/// Position after the last record of a page: `(timestamp, serial, test_id)`
/// of that record. Written as `timestamp:test_id:serial`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cursor {
    pub timestamp: i64,
    pub device_serial: String,
    pub test_id: u64,
}

impl Cursor {
    pub fn of(r: &TestRecord) -> Self {
        Cursor {
            timestamp: r.timestamp,
            device_serial: r.device_serial.clone(),
            test_id: r.test_id,
        }
    }
}

impl fmt::Display for Cursor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}",
            self.timestamp, self.test_id, self.device_serial
        )
    }
}

impl FromStr for Cursor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ':');
        let bad = || format!("malformed cursor {s:?}");
        let timestamp = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let test_id = parts.next().and_then(|p| p.parse().ok()).ok_or_else(bad)?;
        let device_serial = parts.next().filter(|p| !p.is_empty()).ok_or_else(bad)?;
        Ok(Cursor {
            timestamp,
            device_serial: device_serial.to_string(),
            test_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page {
    pub records: Vec<TestRecord>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    /// Always lists all three results, zero included.
    pub by_color: BTreeMap<String, usize>,
    /// Records without a region count under `"unknown"`.
    pub by_region: BTreeMap<String, usize>,
    pub by_device: BTreeMap<String, usize>,
}

pub const UNKNOWN_REGION: &str = "unknown";

impl Default for Stats {
    fn default() -> Self {
        Stats {
            total: 0,
            by_color: TrafficLight::ALL
                .iter()
                .map(|c| (c.as_str().to_string(), 0))
                .collect(),
            by_region: BTreeMap::new(),
            by_device: BTreeMap::new(),
        }
    }
}

impl Stats {
    pub fn add(&mut self, r: &TestRecord) {
        self.total += 1;
        *self
            .by_color
            .entry(r.color.as_str().to_string())
            .or_default() += 1;
        *self
            .by_region
            .entry(r.region().unwrap_or(UNKNOWN_REGION).to_string())
            .or_default() += 1;
        *self.by_device.entry(r.device_serial.clone()).or_default() += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceSummary {
    #[serde(flatten)]
    pub registration: DeviceRegistration,
    pub record_count: usize,
    pub last_seen: Option<i64>,
    pub last_color: Option<TrafficLight>,
    pub pending_dispatches: usize,
}
