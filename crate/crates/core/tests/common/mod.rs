//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use glyphotrace::lpp::{LppRecord, LppValue};
use glyphotrace::record::{EnvReading, GeoPoint, LinkKind, TestRecord, TestRequest, WaterSource};
use glyphotrace::spectrum::{ChannelReadings, Precision, WAVELENGTHS};
use glyphotrace::traffic_light::TrafficLight;
use rand::Rng;

pub const SERIALS: [&str; 5] = ["SG-0001", "SG-0002", "SG-0003", "SG-0004", "SG-0005"];
pub const REGIONS: [&str; 3] = ["Buenos Aires", "Cordoba", "Santa Fe"];
pub const T0: i64 = 1_700_000_000_000;

/// Band edges as midpoints between the integer limits, written out by hand.
pub fn oracle_color(value: f64, negative_upper: f64, positive_lower: f64) -> TrafficLight {
    if value < negative_upper + 0.5 {
        TrafficLight::Negative
    } else if value >= positive_lower - 0.5 {
        TrafficLight::Positive
    } else {
        TrafficLight::Warning
    }
}

fn q(v: f64, step_inv: f64) -> f64 {
    (v * step_inv).round() / step_inv
}

/// Expected decoded value of an LPP record, from the type table alone.
pub fn oracle_quantize(r: &LppRecord) -> LppRecord {
    let value = match r.value {
        LppValue::DigitalInput { value } => LppValue::DigitalInput { value },
        LppValue::AnalogInput { value } => LppValue::AnalogInput {
            value: q(value, 100.0),
        },
        LppValue::Temperature { celsius } => LppValue::Temperature {
            celsius: q(celsius, 10.0),
        },
        LppValue::RelativeHumidity { percent } => LppValue::RelativeHumidity {
            percent: q(percent, 2.0),
        },
        LppValue::Accelerometer { x, y, z } => LppValue::Accelerometer {
            x: q(x, 1000.0),
            y: q(y, 1000.0),
            z: q(z, 1000.0),
        },
        LppValue::Gps { lat, lon, alt } => LppValue::Gps {
            lat: q(lat, 10_000.0),
            lon: q(lon, 10_000.0),
            alt: q(alt, 100.0),
        },
    };
    LppRecord {
        channel: r.channel,
        value,
    }
}

/// Random in-range LPP record.
pub fn random_lpp_record(rng: &mut impl Rng) -> LppRecord {
    let channel = rng.random::<u8>();
    let value = match rng.random_range(0..6) {
        0 => LppValue::DigitalInput {
            value: rng.random(),
        },
        1 => LppValue::AnalogInput {
            value: rng.random_range(-327.68..=327.67),
        },
        2 => LppValue::Temperature {
            celsius: rng.random_range(-3276.8..=3276.7),
        },
        3 => LppValue::RelativeHumidity {
            percent: rng.random_range(0.0..=127.5),
        },
        4 => LppValue::Accelerometer {
            x: rng.random_range(-32.768..=32.767),
            y: rng.random_range(-32.768..=32.767),
            z: rng.random_range(-32.768..=32.767),
        },
        _ => LppValue::Gps {
            lat: rng.random_range(-90.0..=90.0),
            lon: rng.random_range(-180.0..=180.0),
            alt: rng.random_range(-1000.0..=9000.0),
        },
    };
    LppRecord { channel, value }
}

pub fn request(region: &str) -> TestRequest {
    let mut r = TestRequest::glyphosate("W-1", WaterSource::River);
    r.country = "Argentina".into();
    r.region = region.into();
    r.city = "La Plata".into();
    r.requested_by = "field".into();
    r
}

/// A record that fits the uplink: spectrum on the analog grid, value within
/// ±32767, optional GPS.
pub fn random_record(rng: &mut impl Rng, test_id: u64) -> TestRecord {
    let mut spectrum = ChannelReadings::new();
    for nm in WAVELENGTHS {
        spectrum.insert(nm, rng.random_range(0.0..=327.67)).unwrap();
    }
    let value: f64 = rng.random_range(-2000.0..=3000.0);
    let serial = SERIALS[rng.random_range(0..SERIALS.len())];
    let region = if rng.random_bool(0.8) {
        Some(REGIONS[rng.random_range(0..REGIONS.len())])
    } else {
        None
    };
    TestRecord {
        test_id,
        device_serial: serial.into(),
        timestamp: T0 + rng.random_range(0..10_000_000),
        link_kind: LinkKind::Broker,
        request: Some(request(region.unwrap_or(""))),
        spectrum,
        precision: Precision::Exact,
        saturated: false,
        env: EnvReading::new(
            rng.random_range(18.0..26.0),
            rng.random_range(35.0..75.0),
            [
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                1.0,
            ],
        ),
        predicted_value: value,
        color: oracle_color(value, -62.0, 538.0),
        gps: rng.random_bool(0.5).then(|| GeoPoint {
            lat: rng.random_range(-55.0..-22.0),
            lon: rng.random_range(-73.0..-53.0),
            alt: rng.random_range(0.0..3000.0),
        }),
        diagnostic: false,
        env_violation: false,
        color_mismatch: false,
        policy_version: 1,
        correlation_id: None,
    }
}

/// Filter used by the brute-force oracle, matched field by field here rather
/// than through the library's filter.
#[derive(Debug, Clone, Default)]
pub struct OracleFilter {
    pub device: Option<String>,
    pub from: Option<i64>,
    pub to: Option<i64>,
    pub color: Option<TrafficLight>,
    pub region: Option<String>,
}

impl OracleFilter {
    pub fn random(rng: &mut impl Rng) -> Self {
        let mut f = OracleFilter::default();
        if rng.random_bool(0.5) {
            f.device = Some(SERIALS[rng.random_range(0..SERIALS.len())].into());
        }
        if rng.random_bool(0.5) {
            f.from = Some(T0 + rng.random_range(0..8_000_000));
        }
        if rng.random_bool(0.5) {
            f.to = Some(f.from.unwrap_or(T0) + rng.random_range(0..6_000_000));
        }
        if rng.random_bool(0.4) {
            f.color = Some(TrafficLight::ALL[rng.random_range(0..3)]);
        }
        if rng.random_bool(0.3) {
            f.region = Some(REGIONS[rng.random_range(0..REGIONS.len())].into());
        }
        f
    }

    pub fn keep(&self, r: &TestRecord) -> bool {
        if let Some(d) = &self.device {
            if &r.device_serial != d {
                return false;
            }
        }
        if let Some(f) = self.from {
            if r.timestamp < f {
                return false;
            }
        }
        if let Some(t) = self.to {
            if r.timestamp > t {
                return false;
            }
        }
        if let Some(c) = self.color {
            if r.color != c {
                return false;
            }
        }
        if let Some(reg) = &self.region {
            let have = r.request.as_ref().map(|q| q.region.as_str()).unwrap_or("");
            if have != reg {
                return false;
            }
        }
        true
    }

    pub fn to_query(&self) -> glyphotrace::ingest::QueryFilter {
        glyphotrace::ingest::QueryFilter {
            device: self.device.clone(),
            from: self.from,
            to: self.to,
            color: self.color,
            region: self.region.clone(),
        }
    }
}

/// Newest first by (timestamp, serial, test_id), by sorting.
pub fn oracle_scan<'a>(records: &'a [TestRecord], f: &OracleFilter) -> Vec<&'a TestRecord> {
    let mut out: Vec<&TestRecord> = records.iter().filter(|r| f.keep(r)).collect();
    out.sort_by(|a, b| {
        (b.timestamp, &b.device_serial, b.test_id).cmp(&(a.timestamp, &a.device_serial, a.test_id))
    });
    out
}

/// Plain-sum least squares: returns (slope, intercept, r).
pub fn oracle_ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    let det = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy * sxx - sx * sxy) / det;
    let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
    (slope, intercept, r)
}
