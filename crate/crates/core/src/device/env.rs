//! Ambient-condition gate applied before a measurement and again on ingest.

use serde::{Deserialize, Serialize};

use crate::record::EnvReading;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvLimits {
    pub temperature_c: (f64, f64),
    pub humidity_pct: (f64, f64),
    pub max_tilt_deg: f64,
}

impl Default for EnvLimits {
    fn default() -> Self {
        EnvLimits {
            temperature_c: (20.0, 24.0),
            humidity_pct: (40.0, 70.0),
            max_tilt_deg: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum EnvViolation {
    TemperatureOutOfRange {
        value: f64,
    },
    HumidityOutOfRange {
        value: f64,
    },
    /// `tilt_deg` is NaN when the accelerometer reads a zero vector.
    NotLevel {
        tilt_deg: f64,
    },
}

/// Angle in degrees between the acceleration vector and +z.
pub fn tilt_deg(accel: [f64; 3]) -> f64 {
    let norm = (accel[0] * accel[0] + accel[1] * accel[1] + accel[2] * accel[2]).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return f64::NAN;
    }
    (accel[2] / norm).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn env_gate(env: &EnvReading, limits: &EnvLimits) -> Result<(), Vec<EnvViolation>> {
    let mut violations = Vec::new();
    let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    if !within(env.temperature_c, limits.temperature_c) {
        violations.push(EnvViolation::TemperatureOutOfRange {
            value: env.temperature_c,
        });
    }
    if !within(env.humidity_pct, limits.humidity_pct) {
        violations.push(EnvViolation::HumidityOutOfRange {
            value: env.humidity_pct,
        });
    }
    let tilt = tilt_deg(env.accel);
    if tilt.is_nan() || tilt > limits.max_tilt_deg {
        violations.push(EnvViolation::NotLevel { tilt_deg: tilt });
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
