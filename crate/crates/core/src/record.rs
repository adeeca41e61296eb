//! Test records and the request/context data that travels with them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::spectrum::{ChannelReadings, Precision};
use crate::traffic_light::TrafficLight;

/// Ambient conditions at measurement time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvReading {
    pub temperature_c: f64,
    pub humidity_pct: f64,
    /// Accelerometer (x, y, z) in G; level and upright is (0, 0, 1).
    pub accel: [f64; 3],
}

impl EnvReading {
    pub fn new(temperature_c: f64, humidity_pct: f64, accel: [f64; 3]) -> Self {
        EnvReading {
            temperature_c,
            humidity_pct: humidity_pct.clamp(0.0, 100.0),
            accel,
        }
    }

    /// Bench conditions used when building the calibration curve.
    pub fn bench() -> Self {
        EnvReading::new(20.0, 55.0, [0.0, 0.0, 1.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaterSource {
    River,
    Lake,
    CityWater,
    Well,
    Other,
}

impl WaterSource {
    pub fn as_str(self) -> &'static str {
        match self {
            WaterSource::River => "river",
            WaterSource::Lake => "lake",
            WaterSource::CityWater => "city_water",
            WaterSource::Well => "well",
            WaterSource::Other => "other",
        }
    }
}

impl FromStr for WaterSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s
            .trim()
            .to_ascii_lowercase()
            .replace([' ', '-'], "_")
            .as_str()
        {
            "river" => Ok(WaterSource::River),
            "lake" => Ok(WaterSource::Lake),
            "city_water" => Ok(WaterSource::CityWater),
            "well" => Ok(WaterSource::Well),
            "other" => Ok(WaterSource::Other),
            other => Err(format!("unknown water source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reagent {
    pub name: String,
    pub aliquot_mg: f64,
}

impl Reagent {
    pub fn new(name: impl Into<String>, aliquot_mg: f64) -> Self {
        Reagent {
            name: name.into(),
            aliquot_mg,
        }
    }
}

/// Encodes reagents as `name:mg;name:mg` for flat telemetry maps.
pub fn format_reagents(reagents: &[Reagent]) -> String {
    reagents
        .iter()
        .map(|r| format!("{}:{}", r.name, r.aliquot_mg))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_reagents(s: &str) -> Option<Vec<Reagent>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(';')
        .map(|part| {
            let (name, mg) = part.rsplit_once(':')?;
            Some(Reagent::new(name, mg.parse().ok()?))
        })
        .collect()
}

/// Operator-entered parameters of a colorimetric test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRequest {
    pub sample_id: String,
    pub source: WaterSource,
    pub agrochemical: String,
    pub reagents: Vec<Reagent>,
    #[serde(default)]
    pub country: String,
    #[serde(default)]
    pub region: String,
    #[serde(default)]
    pub city: String,
    #[serde(default)]
    pub requested_by: String,
}

impl TestRequest {
    /// The standard ninhydrin / sodium molybdate kit, 100 mg each.
    pub fn standard_reagents() -> Vec<Reagent> {
        vec![
            Reagent::new("ninhydrin", 100.0),
            Reagent::new("sodium molybdate dihydrate", 100.0),
        ]
    }

    pub fn glyphosate(sample_id: impl Into<String>, source: WaterSource) -> Self {
        TestRequest {
            sample_id: sample_id.into(),
            source,
            agrochemical: "glyphosate".into(),
            reagents: Self::standard_reagents(),
            country: String::new(),
            region: String::new(),
            city: String::new(),
            requested_by: String::new(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.sample_id.trim().is_empty()
            && !self.reagents.is_empty()
            && self.reagents.iter().all(|r| r.aliquot_mg > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Broker,
    Lorawan,
}

impl LinkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::Broker => "broker",
            LinkKind::Lorawan => "lorawan",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "broker" => Ok(LinkKind::Broker),
            "lorawan" => Ok(LinkKind::Lorawan),
            other => Err(format!("unknown link kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

/// One complete analysis with its traceability metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_id: u64,
    pub device_serial: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    pub link_kind: LinkKind,
    #[serde(default)]
    pub request: Option<TestRequest>,
    pub spectrum: ChannelReadings,
    #[serde(default)]
    pub precision: Precision,
    /// At least one channel was clamped to the analog range in transit.
    #[serde(default)]
    pub saturated: bool,
    pub env: EnvReading,
    pub predicted_value: f64,
    pub color: TrafficLight,
    #[serde(default)]
    pub gps: Option<GeoPoint>,
    #[serde(default)]
    pub diagnostic: bool,
    #[serde(default)]
    pub env_violation: bool,
    /// The device-reported colour disagreed with the platform's classification.
    #[serde(default)]
    pub color_mismatch: bool,
    #[serde(default = "one")]
    pub policy_version: u32,
    #[serde(default)]
    pub correlation_id: Option<String>,
}

fn one() -> u32 {
    1
}

impl TestRecord {
    /// Platform-wide identifier `serial:test_id`.
    pub fn record_id(&self) -> String {
        format!("{}:{}", self.device_serial, self.test_id)
    }

    pub fn region(&self) -> Option<&str> {
        self.request
            .as_ref()
            .map(|r| r.region.as_str())
            .filter(|r| !r.is_empty())
    }
}
