//! Test-result uplink layout over LPP records.
//!
//! | LPP channel | kind             | content                                  |
//! |-------------|------------------|------------------------------------------|
//! | 1..=17      | AnalogInput      | reflectance per wavelength, ascending    |
//! | 20          | Temperature      | ambient °C                               |
//! | 21          | RelativeHumidity | ambient % RH                             |
//! | 22          | Accelerometer    | tilt vector, G                           |
//! | 23          | Gps              | location (omitted when unknown)          |
//! | 29          | DigitalInput     | 1 if any reflectance was clamped         |
//! | 30          | DigitalInput     | colour: 0 Negative, 1 Warning, 2 Positive|
//! | 31          | AnalogInput      | predicted value, whole units ÷ 100       |
//! | 32          | AnalogInput      | predicted value remainder                |
//! | 33          | AnalogInput      | test sequence number (raw counts, mod 2^15) |
//!
//! Reflectance above the analog ceiling (327.67) is clamped and flagged on
//! channel 29. The predicted value is split as `whole = round(v)`, sent as
//! `whole / 100`, plus `v − whole` in the remainder channel; the receiver
//! recombines them to within 0.005.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpp::{self, LppError, LppKind, LppRecord, LppValue};
use crate::record::{GeoPoint, TestRecord};
use crate::spectrum::{self, ChannelReadings, WAVELENGTHS};
use crate::traffic_light::TrafficLight;

pub const PAYLOAD_BUDGET: usize = 148;
/// Largest region payload the link accepts.
pub const LINK_MAX_PAYLOAD: usize = 242;
pub const LINK_MIN_PAYLOAD: usize = 11;

pub const CH_TEMPERATURE: u8 = 20;
pub const CH_HUMIDITY: u8 = 21;
pub const CH_ACCEL: u8 = 22;
pub const CH_GPS: u8 = 23;
pub const CH_SATURATED: u8 = 29;
pub const CH_COLOR: u8 = 30;
pub const CH_VALUE_WHOLE: u8 = 31;
pub const CH_VALUE_REMAINDER: u8 = 32;
pub const CH_SEQUENCE: u8 = 33;

pub const ANALOG_MAX: f64 = 327.67;
/// The predicted value must fit in a 16-bit count of whole units.
pub const VALUE_LIMIT: f64 = 32767.0;
pub const SEQUENCE_MODULUS: u64 = 1 << 15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UplinkError {
    #[error("payload of {actual} bytes exceeds the {PAYLOAD_BUDGET}-byte budget")]
    PayloadBudgetExceeded { actual: usize },
    #[error(transparent)]
    Lpp(#[from] LppError),
    #[error("predicted value {0} outside the transmittable range")]
    ValueOutOfRange(f64),
    #[error("unexpected {kind:?} record on channel {channel}")]
    UnexpectedRecord { channel: u8, kind: LppKind },
    #[error("invalid colour code {0}")]
    InvalidColor(u8),
    #[error("predicted value split across channels 31/32 is incomplete")]
    IncompleteValue,
}

/// Spectral LPP channel for a wavelength.
pub fn spectral_channel(nm: u16) -> Option<u8> {
    spectrum::channel_index(nm).map(|i| i as u8 + 1)
}

fn wavelength_for(channel: u8) -> Option<u16> {
    WAVELENGTHS.get((channel as usize).checked_sub(1)?).copied()
}

/// Builds the record list for a test result.
pub fn test_uplink_records(record: &TestRecord) -> Result<Vec<LppRecord>, UplinkError> {
    let v = record.predicted_value;
    if !v.is_finite() || v.abs() > VALUE_LIMIT {
        return Err(UplinkError::ValueOutOfRange(v));
    }
    let mut out = Vec::with_capacity(32);
    let mut saturated = record.saturated;
    for (nm, r) in record.spectrum.iter() {
        let clamped = r.min(ANALOG_MAX);
        saturated |= clamped < r;
        out.push(LppRecord::analog(
            spectral_channel(nm).expect("readings only hold supported channels"),
            clamped,
        ));
    }
    let env = &record.env;
    out.push(LppRecord::temperature(CH_TEMPERATURE, env.temperature_c));
    out.push(LppRecord::humidity(CH_HUMIDITY, env.humidity_pct));
    out.push(LppRecord::accelerometer(
        CH_ACCEL,
        env.accel[0],
        env.accel[1],
        env.accel[2],
    ));
    if let Some(g) = record.gps {
        out.push(LppRecord::gps(CH_GPS, g.lat, g.lon, g.alt));
    }
    out.push(LppRecord::digital(CH_SATURATED, saturated as u8));
    out.push(LppRecord::digital(CH_COLOR, record.color.code()));
    let whole = v.round();
    out.push(LppRecord::analog(CH_VALUE_WHOLE, whole / 100.0));
    out.push(LppRecord::analog(CH_VALUE_REMAINDER, v - whole));
    let seq = (record.test_id % SEQUENCE_MODULUS) as f64;
    out.push(LppRecord::analog(CH_SEQUENCE, seq / 100.0));
    Ok(out)
}

pub fn encode_test_uplink(record: &TestRecord) -> Result<Vec<u8>, UplinkError> {
    let bytes = lpp::encode(&test_uplink_records(record)?)?;
    if bytes.len() > PAYLOAD_BUDGET {
        return Err(UplinkError::PayloadBudgetExceeded {
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

/// The fields of a [`TestRecord`] that survive the uplink.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UplinkReport {
    pub spectrum: ChannelReadings,
    pub saturated: Option<bool>,
    pub temperature_c: Option<f64>,
    pub humidity_pct: Option<f64>,
    pub accel: Option<[f64; 3]>,
    pub gps: Option<GeoPoint>,
    pub color: Option<TrafficLight>,
    pub predicted_value: Option<f64>,
    /// Test sequence number modulo 2^15.
    pub test_id: Option<u64>,
}

pub fn decode_test_uplink(bytes: &[u8]) -> Result<UplinkReport, UplinkError> {
    report_from_records(&lpp::decode(bytes)?)
}

pub fn report_from_records(records: &[LppRecord]) -> Result<UplinkReport, UplinkError> {
    let mut report = UplinkReport::default();
    let mut whole = None;
    let mut remainder = None;
    for rec in records {
        let unexpected = UplinkError::UnexpectedRecord {
            channel: rec.channel,
            kind: rec.kind(),
        };
        match (rec.channel, rec.value) {
            (c, LppValue::AnalogInput { value }) if wavelength_for(c).is_some() => {
                let nm = wavelength_for(c).expect("checked");
                report.spectrum.insert(nm, value).map_err(|_| unexpected)?;
            }
            (CH_TEMPERATURE, LppValue::Temperature { celsius }) => {
                report.temperature_c = Some(celsius)
            }
            (CH_HUMIDITY, LppValue::RelativeHumidity { percent }) => {
                report.humidity_pct = Some(percent)
            }
            (CH_ACCEL, LppValue::Accelerometer { x, y, z }) => report.accel = Some([x, y, z]),
            (CH_GPS, LppValue::Gps { lat, lon, alt }) => {
                report.gps = Some(GeoPoint { lat, lon, alt })
            }
            (CH_SATURATED, LppValue::DigitalInput { value }) => report.saturated = Some(value != 0),
            (CH_COLOR, LppValue::DigitalInput { value }) => {
                report.color =
                    Some(TrafficLight::from_code(value).ok_or(UplinkError::InvalidColor(value))?)
            }
            (CH_VALUE_WHOLE, LppValue::AnalogInput { value }) => whole = Some(value),
            (CH_VALUE_REMAINDER, LppValue::AnalogInput { value }) => remainder = Some(value),
            (CH_SEQUENCE, LppValue::AnalogInput { value }) => {
                let raw = (value * 100.0).round();
                if raw < 0.0 {
                    return Err(unexpected);
                }
                report.test_id = Some(raw as u64);
            }
            _ => return Err(unexpected),
        }
    }
    report.predicted_value = match (whole, remainder) {
        (Some(w), Some(r)) => {
            let whole_units = (w * 100.0).round();
            Some((whole_units * 100.0 + (r * 100.0).round()) / 100.0)
        }
        (None, None) => None,
        _ => return Err(UplinkError::IncompleteValue),
    };
    Ok(report)
}
