//! Three-band traffic-light classification of predicted values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Classification outcome. Ordered `Negative < Warning < Positive`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrafficLight {
    Negative,
    Warning,
    Positive,
}

impl TrafficLight {
    pub const ALL: [TrafficLight; 3] = [
        TrafficLight::Negative,
        TrafficLight::Warning,
        TrafficLight::Positive,
    ];

    /// Wire code used by the uplink layout.
    pub fn code(self) -> u8 {
        match self {
            TrafficLight::Negative => 0,
            TrafficLight::Warning => 1,
            TrafficLight::Positive => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TrafficLight::Negative),
            1 => Some(TrafficLight::Warning),
            2 => Some(TrafficLight::Positive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrafficLight::Negative => "Negative",
            TrafficLight::Warning => "Warning",
            TrafficLight::Positive => "Positive",
        }
    }

    /// Lamp colour shown to operators.
    pub fn lamp(self) -> &'static str {
        match self {
            TrafficLight::Negative => "green",
            TrafficLight::Warning => "yellow",
            TrafficLight::Positive => "red",
        }
    }
}

impl fmt::Display for TrafficLight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown traffic light result {0:?}")]
pub struct ParseTrafficLightError(pub String);

impl FromStr for TrafficLight {
    type Err = ParseTrafficLightError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "green" => Ok(TrafficLight::Negative),
            "warning" | "yellow" => Ok(TrafficLight::Warning),
            "positive" | "red" => Ok(TrafficLight::Positive),
            _ => Err(ParseTrafficLightError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("negative bound {negative_upper} must be below positive bound {positive_lower}")]
    BoundsOutOfOrder {
        negative_upper: f64,
        positive_lower: f64,
    },
    #[error("policy bounds must be finite")]
    NonFinite,
}

/// Band edges as published with integer values: the last Negative value and
/// the first Positive value. Boundaries fall on the midpoints of the one-unit
/// gaps, so `classify` is total on the reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy")]
pub struct TrafficLightPolicy {
    pub instrument: String,
    pub negative_upper: f64,
    pub positive_lower: f64,
    #[serde(default = "default_version")]
    pub version: u32,
}

fn default_version() -> u32 {
    1
}

#[derive(Deserialize)]
struct RawPolicy {
    instrument: String,
    negative_upper: f64,
    positive_lower: f64,
    #[serde(default = "default_version")]
    version: u32,
}

impl TryFrom<RawPolicy> for TrafficLightPolicy {
    type Error = PolicyError;

    fn try_from(raw: RawPolicy) -> Result<Self, Self::Error> {
        TrafficLightPolicy::new(raw.instrument, raw.negative_upper, raw.positive_lower)
            .map(|p| p.with_version(raw.version))
    }
}

impl TrafficLightPolicy {
    pub fn new(
        instrument: impl Into<String>,
        negative_upper: f64,
        positive_lower: f64,
    ) -> Result<Self, PolicyError> {
        if !negative_upper.is_finite() || !positive_lower.is_finite() {
            return Err(PolicyError::NonFinite);
        }
        if negative_upper >= positive_lower {
            return Err(PolicyError::BoundsOutOfOrder {
                negative_upper,
                positive_lower,
            });
        }
        Ok(TrafficLightPolicy {
            instrument: instrument.into(),
            negative_upper,
            positive_lower,
            version: 1,
        })
    }

    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    /// Handheld sensor bands: Negative ≤ −62, Warning −61..537, Positive ≥ 538.
    pub fn handheld() -> Self {
        TrafficLightPolicy {
            instrument: crate::calibration::HANDHELD.to_string(),
            negative_upper: -62.0,
            positive_lower: 538.0,
            version: 1,
        }
    }

    /// Laboratory spectrometer bands: Negative ≤ −57, Warning −56..585, Positive ≥ 586.
    pub fn lab() -> Self {
        TrafficLightPolicy {
            instrument: crate::calibration::LAB.to_string(),
            negative_upper: -57.0,
            positive_lower: 586.0,
            version: 1,
        }
    }

    pub fn negative_edge(&self) -> f64 {
        self.negative_upper + 0.5
    }

    pub fn positive_edge(&self) -> f64 {
        self.positive_lower - 0.5
    }

    pub fn classify(&self, value: f64) -> TrafficLight {
        classify(self, value)
    }
}

/// Negative strictly below `negative_upper + 0.5`, Positive at or above
/// `positive_lower − 0.5`, Warning in between. NaN falls into Warning.
pub fn classify(policy: &TrafficLightPolicy, value: f64) -> TrafficLight {
    if value >= policy.positive_edge() {
        TrafficLight::Positive
    } else if value < policy.negative_edge() {
        TrafficLight::Negative
    } else {
        TrafficLight::Warning
    }
}
