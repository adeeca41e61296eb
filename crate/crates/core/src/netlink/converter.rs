//! Uplink converter: binary LPP payloads and device records to flat JSON
//! telemetry.
//!
//! Field names: `r410`..`r940`, `temperature`, `humidity`,
//! `accel_x`/`accel_y`/`accel_z`, `lat`/`lon`/`alt`, `saturated`, `result`,
//! `value`, `test_id`. Envelopes built from a full record on the broker path
//! carry the same fields at uplink precision plus an `<field>_exact` twin for
//! every number, and the operator-entered request fields.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lpp::LppRecord;
use crate::netlink::envelope::TelemetryEnvelope;
use crate::netlink::gateway::UplinkFrame;
use crate::record::{format_reagents, LinkKind, TestRecord};
use crate::uplink::{self, UplinkError, UplinkReport};

pub const EXACT_SUFFIX: &str = "_exact";

pub fn spectral_key(nm: u16) -> String {
    format!("r{nm}")
}

pub fn exact_key(key: &str) -> String {
    format!("{key}{EXACT_SUFFIX}")
}

/// A payload the uplink converter could not decode. The frame is kept so
/// it can be audited later.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("cannot decode uplink from {}: {error}", frame.device_eui)]
pub struct DecodeFailure {
    pub frame: UplinkFrame,
    pub error: String,
}

impl DecodeFailure {
    /// Error-flagged envelope for the platform's audit trail.
    pub fn envelope(&self) -> TelemetryEnvelope {
        let mut env = TelemetryEnvelope::new(&self.frame.device_eui, self.frame.received_at);
        env.link = Some(LinkKind::Lorawan);
        env.insert("decode_error", true);
        env.insert("error", self.error.clone());
        env.insert("fport", f64::from(self.frame.fport));
        env.insert("counter", f64::from(self.frame.counter));
        env
    }
}

/// One value per decoded layout field; absent fields stay absent.
pub fn report_envelope(device: &str, ts: i64, report: &UplinkReport) -> TelemetryEnvelope {
    let mut env = TelemetryEnvelope::new(device, ts);
    for (nm, v) in report.spectrum.iter() {
        env.insert(spectral_key(nm), v);
    }
    if let Some(t) = report.temperature_c {
        env.insert("temperature", t);
    }
    if let Some(h) = report.humidity_pct {
        env.insert("humidity", h);
    }
    if let Some([x, y, z]) = report.accel {
        env.insert("accel_x", x);
        env.insert("accel_y", y);
        env.insert("accel_z", z);
    }
    if let Some(g) = report.gps {
        env.insert("lat", g.lat);
        env.insert("lon", g.lon);
        env.insert("alt", g.alt);
    }
    if let Some(s) = report.saturated {
        env.insert("saturated", s);
    }
    if let Some(c) = report.color {
        env.insert("result", c.as_str());
    }
    if let Some(v) = report.predicted_value {
        env.insert("value", v);
    }
    if let Some(id) = report.test_id {
        env.insert("test_id", id as f64);
    }
    env
}

/// Decodes a LoRaWAN uplink. The device id is the frame's EUI.
pub fn converter_uplink(frame: &UplinkFrame) -> Result<TelemetryEnvelope, DecodeFailure> {
    let fail = |e: UplinkError| DecodeFailure {
        frame: frame.clone(),
        error: e.to_string(),
    };
    let report = uplink::decode_test_uplink(&frame.payload).map_err(fail)?;
    let mut env = report_envelope(&frame.device_eui, frame.received_at, &report);
    if env.values.is_empty() {
        return Err(DecodeFailure {
            frame: frame.clone(),
            error: "empty payload".into(),
        });
    }
    env.link = Some(LinkKind::Lorawan);
    Ok(env)
}

/// Broker-path telemetry for a finished record, keyed by device serial.
pub fn broker_envelope(record: &TestRecord) -> Result<TelemetryEnvelope, UplinkError> {
    let records = uplink::test_uplink_records(record)?
        .iter()
        .map(LppRecord::quantized)
        .collect::<Result<Vec<_>, _>>()?;
    let quantized = uplink::report_from_records(&records)?;
    let mut env = report_envelope(&record.device_serial, record.timestamp, &quantized);
    env.link = Some(LinkKind::Broker);

    for (nm, v) in record.spectrum.iter() {
        env.insert(exact_key(&spectral_key(nm)), v);
    }
    let [x, y, z] = record.env.accel;
    let exact = [
        ("temperature", record.env.temperature_c),
        ("humidity", record.env.humidity_pct),
        ("accel_x", x),
        ("accel_y", y),
        ("accel_z", z),
        ("value", record.predicted_value),
        ("test_id", record.test_id as f64),
    ];
    for (k, v) in exact {
        env.insert(exact_key(k), v);
    }
    if let Some(g) = record.gps {
        env.insert(exact_key("lat"), g.lat);
        env.insert(exact_key("lon"), g.lon);
        env.insert(exact_key("alt"), g.alt);
    }
    env.insert("diagnostic", record.diagnostic);
    env.insert("policy_version", f64::from(record.policy_version));
    if let Some(id) = &record.correlation_id {
        env.insert("correlation_id", id.clone());
    }
    if let Some(req) = &record.request {
        env.insert("sample_id", req.sample_id.clone());
        env.insert("source", req.source.as_str());
        env.insert("agrochemical", req.agrochemical.clone());
        env.insert("reagents", format_reagents(&req.reagents));
        env.insert("country", req.country.clone());
        env.insert("region", req.region.clone());
        env.insert("city", req.city.clone());
        env.insert("requested_by", req.requested_by.clone());
    }
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpp;
    use crate::record::{EnvReading, GeoPoint, TestRequest, WaterSource};
    use crate::spectrum::{Precision, Spectrum};
    use crate::traffic_light::TrafficLight;

    fn record() -> TestRecord {
        let spectrum = Spectrum::zeros().with_channel(560, 285.0).unwrap();
        let mut request = TestRequest::glyphosate("W-11", WaterSource::River);
        request.region = "Pampa".into();
        TestRecord {
            test_id: 11,
            device_serial: "SG-1".into(),
            timestamp: 1_700_000_000_000,
            link_kind: LinkKind::Broker,
            request: Some(request),
            spectrum: (&spectrum).into(),
            precision: Precision::Exact,
            saturated: false,
            env: EnvReading::new(22.04, 55.3, [0.0, 0.0, 1.0]),
            predicted_value: 989.9226,
            color: TrafficLight::Positive,
            gps: Some(GeoPoint {
                lat: -34.60372,
                lon: -58.38159,
                alt: 25.0,
            }),
            diagnostic: false,
            env_violation: false,
            color_mismatch: false,
            policy_version: 1,
            correlation_id: None,
        }
    }

    fn frame(payload: Vec<u8>) -> UplinkFrame {
        UplinkFrame {
            device_eui: "70B3D57ED0000001".into(),
            fport: 2,
            payload,
            counter: 1,
            received_at: 5,
        }
    }

    #[test]
    fn positive_row_envelope() {
        let bytes = uplink::encode_test_uplink(&record()).unwrap();
        let env = converter_uplink(&frame(bytes)).unwrap();
        assert_eq!(env.device, "70B3D57ED0000001");
        assert_eq!(env.ts, 5);
        assert_eq!(env.text("result"), Some("Positive"));
        assert_eq!(env.number("r560"), Some(285.0));
        assert_eq!(env.number("value"), Some(989.92));
        assert_eq!(env.link, Some(LinkKind::Lorawan));
    }

    #[test]
    fn color_only_frame_has_one_value() {
        let bytes = lpp::encode(&[LppRecord::digital(uplink::CH_COLOR, 1)]).unwrap();
        let env = converter_uplink(&frame(bytes)).unwrap();
        assert_eq!(env.values.len(), 1);
        assert_eq!(env.text("result"), Some("Warning"));
    }

    #[test]
    fn garbage_is_a_decode_failure() {
        let err = converter_uplink(&frame(vec![0x05, 0xEE, 0x01])).unwrap_err();
        assert_eq!(err.frame.payload, vec![0x05, 0xEE, 0x01]);
        let env = err.envelope();
        assert_eq!(env.flag("decode_error"), Some(true));
        assert!(converter_uplink(&frame(vec![])).is_err());
    }

    #[test]
    fn broker_and_lorawan_agree_on_shared_fields() {
        let rec = record();
        let broker = broker_envelope(&rec).unwrap();
        let lora = converter_uplink(&frame(uplink::encode_test_uplink(&rec).unwrap())).unwrap();
        for (k, v) in &lora.values {
            assert_eq!(broker.get(k), Some(v), "field {k}");
        }
        assert_eq!(broker.number("value_exact"), Some(989.9226));
        assert_eq!(broker.number("lat_exact"), Some(-34.60372));
        assert_eq!(broker.text("region"), Some("Pampa"));
        assert_eq!(broker.device, "SG-1");
    }
}
