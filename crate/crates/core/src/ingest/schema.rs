//! Reading telemetry envelopes back into record fields.

use std::str::FromStr;

use crate::netlink::converter::{exact_key, spectral_key, EXACT_SUFFIX};
use crate::netlink::{TelemetryEnvelope, TelemetryValue};
use crate::record::{parse_reagents, EnvReading, GeoPoint, TestRequest, WaterSource};
use crate::spectrum::{ChannelReadings, Precision, WAVELENGTHS};
use crate::traffic_light::TrafficLight;
use crate::uplink::SEQUENCE_MODULUS;

/// Record fields carried by one envelope, before the platform applies its
/// own classification.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub test_id: TestIdField,
    pub spectrum: ChannelReadings,
    pub precision: Precision,
    pub saturated: bool,
    pub env: EnvReading,
    pub value: f64,
    pub reported_color: Option<TrafficLight>,
    pub gps: Option<GeoPoint>,
    pub diagnostic: bool,
    pub correlation_id: Option<String>,
    pub request: Option<TestRequest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestIdField {
    Full(u64),
    /// Only the low 15 bits survived the uplink.
    Wrapped(u64),
}

impl TestIdField {
    /// The full id congruent to a wrapped one that lies closest to the
    /// device's last known id.
    pub fn resolve(self, last_known: Option<u64>) -> u64 {
        match self {
            TestIdField::Full(id) => id,
            TestIdField::Wrapped(low) => {
                let Some(last) = last_known else {
                    return low;
                };
                let base = last - last % SEQUENCE_MODULUS;
                [
                    base.checked_sub(SEQUENCE_MODULUS),
                    Some(base),
                    base.checked_add(SEQUENCE_MODULUS),
                ]
                .into_iter()
                .flatten()
                .map(|b| b + low)
                .min_by_key(|c| c.abs_diff(last))
                .expect("base candidate exists")
            }
        }
    }
}

fn number(env: &TelemetryEnvelope, key: &str) -> Result<Option<(f64, bool)>, String> {
    for (k, exact) in [(exact_key(key), true), (key.to_string(), false)] {
        match env.get(&k) {
            None => continue,
            Some(TelemetryValue::Number(n)) if n.is_finite() => return Ok(Some((*n, exact))),
            Some(other) => return Err(format!("{k} must be a finite number, got {other:?}")),
        }
    }
    Ok(None)
}

fn required(env: &TelemetryEnvelope, key: &str) -> Result<f64, String> {
    number(env, key)?
        .map(|(v, _)| v)
        .ok_or_else(|| format!("missing {key}"))
}

fn text<'a>(env: &'a TelemetryEnvelope, key: &str) -> Result<Option<&'a str>, String> {
    match env.get(key) {
        None => Ok(None),
        Some(TelemetryValue::Text(s)) => Ok(Some(s)),
        Some(other) => Err(format!("{key} must be text, got {other:?}")),
    }
}

fn flag(env: &TelemetryEnvelope, key: &str) -> Result<bool, String> {
    match env.get(key) {
        None => Ok(false),
        Some(TelemetryValue::Flag(b)) => Ok(*b),
        Some(other) => Err(format!("{key} must be a flag, got {other:?}")),
    }
}

/// Extracts record fields. Numbers are taken from their `_exact` twin when
/// present. Errors describe the first schema problem found.
pub fn parse_telemetry(env: &TelemetryEnvelope) -> Result<Telemetry, String> {
    if flag(env, "decode_error")? {
        let why = text(env, "error")?.unwrap_or("unknown");
        return Err(format!("uplink could not be decoded: {why}"));
    }
    let (raw_id, id_exact) = number(env, "test_id")?.ok_or("missing test_id")?;
    if raw_id < 0.0 || raw_id.fract() != 0.0 {
        return Err(format!(
            "test_id must be a non-negative integer, got {raw_id}"
        ));
    }
    let test_id = if id_exact {
        TestIdField::Full(raw_id as u64)
    } else {
        TestIdField::Wrapped(raw_id as u64 % SEQUENCE_MODULUS)
    };

    let mut spectrum = ChannelReadings::new();
    for nm in WAVELENGTHS {
        if let Some((v, _)) = number(env, &spectral_key(nm))? {
            spectrum.insert(nm, v).map_err(|e| e.to_string())?;
        }
    }
    let precision = if env.values.keys().any(|k| k.ends_with(EXACT_SUFFIX)) {
        Precision::Exact
    } else {
        Precision::Quantized
    };

    let env_reading = EnvReading::new(
        required(env, "temperature")?,
        required(env, "humidity")?,
        [
            required(env, "accel_x")?,
            required(env, "accel_y")?,
            required(env, "accel_z")?,
        ],
    );

    let reported_color = text(env, "result")?
        .map(TrafficLight::from_str)
        .transpose()
        .map_err(|e| e.to_string())?;

    let gps = match (number(env, "lat")?, number(env, "lon")?) {
        (Some((lat, _)), Some((lon, _))) => Some(GeoPoint {
            lat,
            lon,
            alt: number(env, "alt")?.map_or(0.0, |(a, _)| a),
        }),
        (None, None) => None,
        _ => return Err("lat and lon must come together".into()),
    };

    let request = match text(env, "sample_id")? {
        None => None,
        Some(sample_id) => {
            let source = match text(env, "source")? {
                Some(s) => WaterSource::from_str(s)?,
                None => WaterSource::Other,
            };
            let reagents = match text(env, "reagents")? {
                Some(s) => parse_reagents(s).ok_or_else(|| format!("malformed reagents {s:?}"))?,
                None => Vec::new(),
            };
            let field = |k: &str| text(env, k).map(|v| v.unwrap_or_default().to_string());
            Some(TestRequest {
                sample_id: sample_id.to_string(),
                source,
                agrochemical: field("agrochemical")?,
                reagents,
                country: field("country")?,
                region: field("region")?,
                city: field("city")?,
                requested_by: field("requested_by")?,
            })
        }
    };

    Ok(Telemetry {
        test_id,
        spectrum,
        precision,
        saturated: flag(env, "saturated")?,
        env: env_reading,
        value: required(env, "value")?,
        reported_color,
        gps,
        diagnostic: flag(env, "diagnostic")?,
        correlation_id: text(env, "correlation_id")?.map(str::to_string),
        request,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> TelemetryEnvelope {
        let mut e = TelemetryEnvelope::new("SG-1", 10);
        for (k, v) in [
            ("test_id", 3.0),
            ("value", 50.46),
            ("temperature", 22.0),
            ("humidity", 55.0),
            ("accel_x", 0.0),
            ("accel_y", 0.0),
            ("accel_z", 1.0),
            ("r560", 169.0),
        ] {
            e.insert(k, v);
        }
        e
    }

    #[test]
    fn quantized_envelope() {
        let t = parse_telemetry(&base()).unwrap();
        assert_eq!(t.test_id, TestIdField::Wrapped(3));
        assert_eq!(t.precision, Precision::Quantized);
        assert_eq!(t.spectrum.len(), 1);
        assert!(t.request.is_none());
    }

    #[test]
    fn exact_twins_win() {
        let mut e = base();
        e.insert("value_exact", 50.4576);
        e.insert("test_id_exact", 40_000.0);
        let t = parse_telemetry(&e).unwrap();
        assert_eq!(t.value, 50.4576);
        assert_eq!(t.test_id, TestIdField::Full(40_000));
        assert_eq!(t.precision, Precision::Exact);
    }

    #[test]
    fn schema_errors() {
        let mut e = base();
        e.values.remove("temperature");
        assert!(parse_telemetry(&e).unwrap_err().contains("temperature"));
        let mut e = base();
        e.insert("value", "high");
        assert!(parse_telemetry(&e).is_err());
        let mut e = base();
        e.insert("result", "purple");
        assert!(parse_telemetry(&e).is_err());
        let mut e = base();
        e.insert("lat", 1.0);
        assert!(parse_telemetry(&e).is_err());
    }

    #[test]
    fn wrapped_ids_resolve_near_last() {
        let m = SEQUENCE_MODULUS;
        assert_eq!(TestIdField::Wrapped(5).resolve(None), 5);
        assert_eq!(TestIdField::Wrapped(5).resolve(Some(4)), 5);
        assert_eq!(TestIdField::Wrapped(2).resolve(Some(m - 3)), m + 2);
        assert_eq!(TestIdField::Wrapped(m - 1).resolve(Some(m + 1)), m - 1);
        assert_eq!(TestIdField::Full(9).resolve(Some(1_000_000)), 9);
    }
}
