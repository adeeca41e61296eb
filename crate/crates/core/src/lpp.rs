//! Cayenne LPP record codec.
//!
//! Each record is `channel id (1 B) | type code (1 B) | payload`, payload
//! big-endian:
//!
//! | kind              | code | size | encoding                          |
//! |-------------------|------|------|-----------------------------------|
//! | DigitalInput      | 0x00 | 1    | u8                                |
//! | AnalogInput       | 0x02 | 2    | i16, 0.01 per count               |
//! | Temperature       | 0x67 | 2    | i16, 0.1 °C per count             |
//! | RelativeHumidity  | 0x68 | 1    | u8, 0.5 % per count               |
//! | Accelerometer     | 0x71 | 6    | 3 × i16, 0.001 G per count        |
//! | Gps               | 0x88 | 9    | 3 × i24: lat, lon 0.0001°; alt 0.01 m |

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LppKind {
    DigitalInput,
    AnalogInput,
    Temperature,
    RelativeHumidity,
    Accelerometer,
    Gps,
}

impl LppKind {
    pub fn type_code(self) -> u8 {
        match self {
            LppKind::DigitalInput => 0x00,
            LppKind::AnalogInput => 0x02,
            LppKind::Temperature => 0x67,
            LppKind::RelativeHumidity => 0x68,
            LppKind::Accelerometer => 0x71,
            LppKind::Gps => 0x88,
        }
    }

    pub fn from_type_code(code: u8) -> Option<Self> {
        Some(match code {
            0x00 => LppKind::DigitalInput,
            0x02 => LppKind::AnalogInput,
            0x67 => LppKind::Temperature,
            0x68 => LppKind::RelativeHumidity,
            0x71 => LppKind::Accelerometer,
            0x88 => LppKind::Gps,
            _ => return None,
        })
    }

    /// Payload size in bytes, excluding the two header bytes.
    pub fn data_size(self) -> usize {
        match self {
            LppKind::DigitalInput | LppKind::RelativeHumidity => 1,
            LppKind::AnalogInput | LppKind::Temperature => 2,
            LppKind::Accelerometer => 6,
            LppKind::Gps => 9,
        }
    }

    pub fn encoded_size(self) -> usize {
        2 + self.data_size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LppValue {
    DigitalInput { value: u8 },
    AnalogInput { value: f64 },
    Temperature { celsius: f64 },
    RelativeHumidity { percent: f64 },
    Accelerometer { x: f64, y: f64, z: f64 },
    Gps { lat: f64, lon: f64, alt: f64 },
}

impl LppValue {
    pub fn kind(&self) -> LppKind {
        match self {
            LppValue::DigitalInput { .. } => LppKind::DigitalInput,
            LppValue::AnalogInput { .. } => LppKind::AnalogInput,
            LppValue::Temperature { .. } => LppKind::Temperature,
            LppValue::RelativeHumidity { .. } => LppKind::RelativeHumidity,
            LppValue::Accelerometer { .. } => LppKind::Accelerometer,
            LppValue::Gps { .. } => LppKind::Gps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LppRecord {
    pub channel: u8,
    #[serde(flatten)]
    pub value: LppValue,
}

impl LppRecord {
    pub fn new(channel: u8, value: LppValue) -> Self {
        LppRecord { channel, value }
    }

    pub fn digital(channel: u8, value: u8) -> Self {
        Self::new(channel, LppValue::DigitalInput { value })
    }

    pub fn analog(channel: u8, value: f64) -> Self {
        Self::new(channel, LppValue::AnalogInput { value })
    }

    pub fn temperature(channel: u8, celsius: f64) -> Self {
        Self::new(channel, LppValue::Temperature { celsius })
    }

    pub fn humidity(channel: u8, percent: f64) -> Self {
        Self::new(channel, LppValue::RelativeHumidity { percent })
    }

    pub fn accelerometer(channel: u8, x: f64, y: f64, z: f64) -> Self {
        Self::new(channel, LppValue::Accelerometer { x, y, z })
    }

    pub fn gps(channel: u8, lat: f64, lon: f64, alt: f64) -> Self {
        Self::new(channel, LppValue::Gps { lat, lon, alt })
    }

    pub fn kind(&self) -> LppKind {
        self.value.kind()
    }

    /// The value this record decodes to after a round trip.
    pub fn quantized(&self) -> Result<LppRecord, LppError> {
        let mut buf = Vec::with_capacity(self.kind().encoded_size());
        encode_record(self, &mut buf)?;
        let (rec, _) = decode_record(&buf, 0)?;
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LppError {
    #[error("value out of range for {kind:?} on channel {channel}: {value}")]
    ValueOutOfRange {
        channel: u8,
        kind: LppKind,
        value: f64,
    },
    #[error("frame truncated in record starting at offset {offset}")]
    TruncatedFrame { offset: usize },
    #[error("unknown type code 0x{code:02X} at offset {offset}")]
    UnknownTypeCode { offset: usize, code: u8 },
}

/// An encoded record list with its byte length.
#[derive(Debug, Clone, PartialEq)]
pub struct LppFrame {
    pub records: Vec<LppRecord>,
    pub encoded_len: usize,
}

impl LppFrame {
    pub fn new(records: Vec<LppRecord>) -> Self {
        let encoded_len = records.iter().map(|r| r.kind().encoded_size()).sum();
        LppFrame {
            records,
            encoded_len,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, LppError> {
        encode(&self.records)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, LppError> {
        decode(bytes).map(LppFrame::new)
    }
}

pub fn encode(records: &[LppRecord]) -> Result<Vec<u8>, LppError> {
    let mut out = Vec::with_capacity(records.iter().map(|r| r.kind().encoded_size()).sum());
    for r in records {
        encode_record(r, &mut out)?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Vec<LppRecord>, LppError> {
    let mut records = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let (rec, next) = decode_record(bytes, offset)?;
        records.push(rec);
        offset = next;
    }
    Ok(records)
}

fn scaled(value: f64, step_inv: f64, min: i64, max: i64) -> Option<i64> {
    if !value.is_finite() {
        return None;
    }
    let raw = (value * step_inv).round();
    if raw < min as f64 || raw > max as f64 {
        return None;
    }
    Some(raw as i64)
}

const I24_MIN: i64 = -(1 << 23);
const I24_MAX: i64 = (1 << 23) - 1;

fn encode_record(r: &LppRecord, out: &mut Vec<u8>) -> Result<(), LppError> {
    let oor = |value: f64| LppError::ValueOutOfRange {
        channel: r.channel,
        kind: r.kind(),
        value,
    };
    let i16_of = |v: f64, inv: f64| {
        scaled(v, inv, i16::MIN as i64, i16::MAX as i64)
            .map(|raw| raw as i16)
            .ok_or(oor(v))
    };
    out.push(r.channel);
    out.push(r.kind().type_code());
    match r.value {
        LppValue::DigitalInput { value } => out.push(value),
        LppValue::AnalogInput { value } => out.extend(i16_of(value, 100.0)?.to_be_bytes()),
        LppValue::Temperature { celsius } => out.extend(i16_of(celsius, 10.0)?.to_be_bytes()),
        LppValue::RelativeHumidity { percent } => {
            let raw = scaled(percent, 2.0, 0, u8::MAX as i64).ok_or(oor(percent))?;
            out.push(raw as u8);
        }
        LppValue::Accelerometer { x, y, z } => {
            for v in [x, y, z] {
                out.extend(i16_of(v, 1000.0)?.to_be_bytes());
            }
        }
        LppValue::Gps { lat, lon, alt } => {
            for (v, inv) in [(lat, 10_000.0), (lon, 10_000.0), (alt, 100.0)] {
                let raw = scaled(v, inv, I24_MIN, I24_MAX).ok_or(oor(v))? as i32;
                out.extend(&raw.to_be_bytes()[1..]);
            }
        }
    }
    Ok(())
}

fn decode_record(bytes: &[u8], offset: usize) -> Result<(LppRecord, usize), LppError> {
    let truncated = LppError::TruncatedFrame { offset };
    let header = bytes.get(offset..offset + 2).ok_or(truncated.clone())?;
    let (channel, code) = (header[0], header[1]);
    let kind = LppKind::from_type_code(code).ok_or(LppError::UnknownTypeCode {
        offset: offset + 1,
        code,
    })?;
    let start = offset + 2;
    let end = start + kind.data_size();
    let data = bytes.get(start..end).ok_or(truncated)?;
    let i16_at = |i: usize| i16::from_be_bytes([data[i], data[i + 1]]) as f64;
    let i24_at = |i: usize| {
        let sign = if data[i] & 0x80 != 0 { 0xFF } else { 0x00 };
        i32::from_be_bytes([sign, data[i], data[i + 1], data[i + 2]]) as f64
    };
    let value = match kind {
        LppKind::DigitalInput => LppValue::DigitalInput { value: data[0] },
        LppKind::AnalogInput => LppValue::AnalogInput {
            value: i16_at(0) / 100.0,
        },
        LppKind::Temperature => LppValue::Temperature {
            celsius: i16_at(0) / 10.0,
        },
        LppKind::RelativeHumidity => LppValue::RelativeHumidity {
            percent: data[0] as f64 / 2.0,
        },
        LppKind::Accelerometer => LppValue::Accelerometer {
            x: i16_at(0) / 1000.0,
            y: i16_at(2) / 1000.0,
            z: i16_at(4) / 1000.0,
        },
        LppKind::Gps => LppValue::Gps {
            lat: i24_at(0) / 10_000.0,
            lon: i24_at(3) / 10_000.0,
            alt: i24_at(6) / 100.0,
        },
    };
    Ok((LppRecord { channel, value }, end))
}
