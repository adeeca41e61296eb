//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are pinned here, not in the library.

mod common;

use std::time::{Duration, Instant};

use glyphotrace::calibration::{fit_ols, CalibrationModel};
use glyphotrace::device::env::tilt_deg;
use glyphotrace::device::{
    Device, DeviceCommand, DeviceConfig, EnvLimits, LinkConfig, Mode, Phase, SensorModel, SimTime,
};
use glyphotrace::ingest::{IngestConfig, Ingestor, JsonlStore, LogEntry, Store};
use glyphotrace::lpp;
use glyphotrace::netlink::{Gateway, LinkError, LinkProfile, UplinkFrame};
use glyphotrace::record::{EnvReading, LinkKind, TestRecord, TestRequest, WaterSource};
use glyphotrace::reference::{calibration_samples, validation_rows};
use glyphotrace::sim::{Scenario, SimReport, Simulation};
use glyphotrace::traffic_light::{TrafficLight, TrafficLightPolicy};
use glyphotrace::uplink::{encode_test_uplink, PAYLOAD_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const SLOPE: f64 = 8.0988;
const INTERCEPT: f64 = -1318.2455;
const SLOPE_TOL: f64 = 0.0005;
const INTERCEPT_TOL: f64 = 0.05;
const HANDHELD_VALUE_TOL: f64 = 0.05;
const LAB_VALUE_TOL: f64 = 0.01;
const LINK_MAX: usize = 242;
const PIPELINE_MS: u64 = 615_000;

const MC_RUNS: u64 = 1000;
const MC_SEED_BASE: u64 = 0x5EED_0001;
const MC_NOISE: f64 = 0.12;
/// Frozen before the emulator existed; see the analytic/numeric oracle in
/// the project notes.
const MC_ORACLE_POSITIVE_AT_1000: f64 = 0.9716;
const MC_ORACLE_NEGATIVE_AT_0: f64 = 0.6242;
const MC_TOL: f64 = 0.02;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn calibration() -> Outcome {
    let samples = calibration_samples();
    check(samples.len() == 12, || format!("{} rows", samples.len()))?;
    let m = fit_ols(&samples, 560, "handheld").map_err(|e| e.to_string())?;
    let xs: Vec<f64> = samples
        .iter()
        .map(|s| s.spectrum.get(560).unwrap())
        .collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.concentration_mg_l).collect();
    let (slope, intercept, _) = oracle_ols(&xs, &ys);
    check(
        (m.slope - slope).abs() < 1e-9 && (m.intercept - intercept).abs() < 1e-7,
        || {
            format!(
                "library {}/{} vs oracle {slope}/{intercept}",
                m.slope, m.intercept
            )
        },
    )?;
    check((m.slope - SLOPE).abs() <= SLOPE_TOL, || {
        format!("slope {}", m.slope)
    })?;
    check((m.intercept - INTERCEPT).abs() <= INTERCEPT_TOL, || {
        format!("intercept {}", m.intercept)
    })?;
    Ok(format!("slope {:.6} intercept {:.4}", m.slope, m.intercept))
}

fn validation_table() -> Outcome {
    let rows = validation_rows();
    check(rows.len() == 15, || format!("{} rows", rows.len()))?;
    let instruments = [
        (
            CalibrationModel::handheld(),
            TrafficLightPolicy::handheld(),
            HANDHELD_VALUE_TOL,
            (-62.0, 538.0),
        ),
        (
            CalibrationModel::lab(),
            TrafficLightPolicy::lab(),
            LAB_VALUE_TOL,
            (-57.0, 586.0),
        ),
    ];
    let mut colors = 0;
    let mut worst = 0.0f64;
    for (model, policy, tol, (neg, pos)) in &instruments {
        for r in &rows {
            let (x, printed) = if model.instrument == "handheld" {
                (r.handheld_r560, r.handheld_value)
            } else {
                (r.lab_r560, r.lab_value)
            };
            let v = model.predict_at(x);
            let by_hand = model.intercept + model.slope * x;
            check(v == by_hand, || {
                format!("{} predict_at disagrees", r.sample_id)
            })?;
            let d = (v - printed).abs();
            worst = worst.max(d / tol);
            check(d <= *tol, || {
                format!(
                    "{} {}: {v} vs printed {printed}",
                    model.instrument, r.sample_id
                )
            })?;
            let c = policy.classify(v);
            check(c == oracle_color(v, *neg, *pos), || {
                format!(
                    "{} {}: policy and oracle disagree",
                    model.instrument, r.sample_id
                )
            })?;
            check(c == r.result, || {
                format!(
                    "{} {}: {c} vs printed {}",
                    model.instrument, r.sample_id, r.result
                )
            })?;
            colors += 1;
        }
    }
    check(colors == 30, || format!("{colors} colors"))?;
    Ok(format!(
        "30/30 colors, worst value error {:.0}% of tolerance",
        worst * 100.0
    ))
}

fn codec() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    for i in 0..1000 {
        let n = rng.random_range(1..=20);
        let records: Vec<_> = (0..n).map(|_| random_lpp_record(&mut rng)).collect();
        let bytes = lpp::encode(&records).map_err(|e| format!("frame {i}: {e}"))?;
        let decoded = lpp::decode(&bytes).map_err(|e| format!("frame {i}: {e}"))?;
        let expected: Vec<_> = records.iter().map(oracle_quantize).collect();
        check(decoded == expected, || {
            format!("frame {i} differs after round trip")
        })?;
    }
    let mut largest = 0;
    for i in 0..1000 {
        let r = random_record(&mut rng, i);
        let bytes = encode_test_uplink(&r).map_err(|e| format!("record {i}: {e}"))?;
        largest = largest.max(bytes.len());
    }
    check(largest <= PAYLOAD_BUDGET, || {
        format!("uplink of {largest} bytes")
    })?;
    let mut gw = Gateway::new(LinkProfile::default(), 1).map_err(|e| e.to_string())?;
    let frame = |n: usize, counter: u32| UplinkFrame {
        device_eui: "70B3D57ED0000001".into(),
        fport: 2,
        payload: vec![0; n],
        counter,
        received_at: 0,
    };
    check(gw.forward(frame(LINK_MAX, 1)).is_ok(), || {
        "242-byte frame refused".into()
    })?;
    check(
        matches!(
            gw.forward(frame(LINK_MAX + 1, 2)),
            Err(LinkError::PayloadTooLarge { size: 243, .. })
        ),
        || "243-byte frame accepted".into(),
    )?;
    Ok(format!(
        "1000 frames exact, largest uplink {largest} B, 243 B refused"
    ))
}

fn run_single(link: LinkKind) -> Result<SimReport, String> {
    Simulation::new(Scenario::single_test(link, 600.0, 0.0, 42))
        .map(Simulation::run)
        .map_err(|e| e.to_string())
}

fn q(v: f64, inv: f64) -> f64 {
    (v * inv).round() / inv
}

/// Fields both links carry, at the resolution of the narrower one.
fn shared(r: &TestRecord) -> String {
    let spectrum: Vec<f64> = r.spectrum.iter().map(|(_, v)| q(v, 100.0)).collect();
    let gps = r
        .gps
        .map(|g| (q(g.lat, 1e4), q(g.lon, 1e4), q(g.alt, 100.0)));
    format!(
        "{} {} {} {:?} {:.2} {:?} {} {} {:?} {:?}",
        r.device_serial,
        r.test_id,
        r.timestamp,
        r.color,
        r.predicted_value,
        spectrum,
        q(r.env.temperature_c, 10.0),
        q(r.env.humidity_pct, 2.0),
        r.env.accel.map(|a| q(a, 1000.0)),
        gps
    )
}

fn pipeline() -> Outcome {
    let lw = run_single(LinkKind::Lorawan)?;
    check(lw.records.len() == 1, || {
        format!("{} records", lw.records.len())
    })?;
    let r = &lw.records[0];
    check(r.color == TrafficLight::Positive, || {
        format!("color {}", r.color)
    })?;
    check(r.link_kind == LinkKind::Lorawan, || "link kind".into())?;
    check(
        r.device_serial == "SG-0001" && r.test_id == 1 && r.gps.is_some() && r.timestamp > 0,
        || format!("traceability incomplete: {r:?}"),
    )?;
    let elapsed = lw.test_durations_ms().get("SG-0001:1").copied();
    check(elapsed == Some(PIPELINE_MS), || {
        format!("elapsed {elapsed:?}")
    })?;
    let critical = lw
        .alarms
        .iter()
        .filter(|a| a.severity == glyphotrace::ingest::AlarmSeverity::Critical)
        .count();
    check(lw.alarms.len() == 1 && critical == 1, || {
        format!("alarms {:?}", lw.alarms)
    })?;

    let br = run_single(LinkKind::Broker)?;
    check(br.records.len() == 1, || {
        format!("broker: {} records", br.records.len())
    })?;
    let b = &br.records[0];
    check(
        b.request
            .as_ref()
            .is_some_and(|q| q.region == "Buenos Aires"),
        || "broker record lost its request".into(),
    )?;
    check(shared(r) == shared(b), || {
        format!("lorawan {}\nbroker  {}", shared(r), shared(b))
    })?;
    Ok(format!(
        "Positive at {} ms, 1 critical alarm, paths agree",
        PIPELINE_MS
    ))
}

fn oracle_gate(env: &EnvReading) -> bool {
    (20.0..=24.0).contains(&env.temperature_c)
        && (40.0..=70.0).contains(&env.humidity_pct)
        && tilt_deg(env.accel) <= 10.0
}

fn random_env(rng: &mut ChaCha8Rng) -> EnvReading {
    let edge = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| match rng.random_range(0..6) {
        0 => lo,
        1 => hi,
        2 => lo - 0.001,
        3 => hi + 0.001,
        _ => rng.random_range(lo - 3.0..hi + 3.0),
    };
    let t = edge(rng, 20.0, 24.0);
    let h = edge(rng, 40.0, 70.0);
    let tilt = if rng.random_bool(0.8) {
        0.0
    } else {
        rng.random_range(0.0..0.4)
    };
    EnvReading::new(t, h, [tilt, 0.0, 1.0])
}

fn state_machine() -> Outcome {
    let limits = EnvLimits::default();
    check(
        limits.temperature_c == (20.0, 24.0) && limits.humidity_pct == (40.0, 70.0),
        || format!("limits {limits:?}"),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x57A7E);
    let link = LinkConfig::Lorawan {
        device_eui: "70B3D57ED0000001".into(),
        app_key: "00000000000000000000000000000000".into(),
    };
    let sensor = SensorModel::reference(0.05, 9).map_err(|e| e.to_string())?;
    let mut dev = Device::new(DeviceConfig::new("SG-0001", link), &sensor, T0);
    let mut now = 0u64;
    let mut ambient = dev.ambient();
    let mut gated_flight = false;
    let (mut starts, mut measured) = (0, 0);
    for step in 0..10_000 {
        let before = dev.phase().clone();
        let mut env_used = None;
        match rng.random_range(0..9) {
            0 | 1 => {
                now += rng.random_range(0..400_000);
                let _ = dev.tick(SimTime(now));
            }
            2 => {
                let _ = dev.load_sample(rng.random_range(0.0..1500.0));
            }
            3 => {
                ambient = random_env(&mut rng);
                dev.set_ambient(ambient);
            }
            4 => {
                let env = random_env(&mut rng);
                env_used = Some(env);
                let _ = dev.start_test(TestRequest::glyphosate("S", WaterSource::Well), env);
            }
            5 => {
                env_used = Some(ambient);
                let _ = dev.handle_command(DeviceCommand::ManualTestTrigger {
                    correlation_id: None,
                    request: None,
                });
            }
            6 => {
                let _ = dev.complete_transmission(rng.random_bool(0.8));
            }
            7 => {
                let mode = if rng.random_bool(0.2) {
                    Mode::Manual
                } else {
                    Mode::Auto
                };
                let _ = dev.set_mode(mode);
            }
            _ => {
                let policy = TrafficLightPolicy::handheld().with_version(rng.random_range(1..5));
                let _ = dev.handle_command(DeviceCommand::SetPolicy(policy));
            }
        }
        let after = dev.phase().clone();
        if after.name() != before.name() {
            // A tick may run several transitions; walk the chain.
            let chain: &[&str] = match (before.name(), after.name()) {
                ("preprocessing", "transmitting") => &["measuring"],
                _ => &[],
            };
            let mut prev = before.clone();
            for mid in chain {
                let mid_phase = match *mid {
                    "measuring" => Phase::Measuring {
                        started_at: SimTime(0),
                    },
                    _ => unreachable!(),
                };
                check(prev.may_transition_to(&mid_phase), || {
                    format!("step {step}: {} -> {mid}", prev.name())
                })?;
                prev = mid_phase;
            }
            check(prev.may_transition_to(&after), || {
                format!("step {step}: {} -> {}", prev.name(), after.name())
            })?;
            if matches!(after, Phase::Preprocessing { .. }) {
                let env =
                    env_used.ok_or_else(|| format!("step {step}: started without a start"))?;
                check(oracle_gate(&env), || {
                    format!("step {step}: started with env {env:?}")
                })?;
                gated_flight = true;
                starts += 1;
            }
            if matches!(after, Phase::Measuring { .. } | Phase::Transmitting)
                && !matches!(before, Phase::Measuring { .. })
            {
                check(gated_flight, || {
                    format!("step {step}: measured without a gated start")
                })?;
                gated_flight = false;
                measured += 1;
            }
        }
    }
    check(starts > 50 && measured > 50, || {
        format!("only {starts} starts, {measured} measured")
    })?;
    Ok(format!(
        "10000 steps, {starts} gated starts, {measured} measurements"
    ))
}

fn mc_rate(concentration: f64, want: TrafficLight) -> Result<f64, String> {
    let link = LinkConfig::Broker {
        ssid: "lab".into(),
        secret: "x".into(),
        endpoint: "mqtt://localhost".into(),
    };
    let mut hits = 0u64;
    for i in 0..MC_RUNS {
        let sensor =
            SensorModel::reference(MC_NOISE, MC_SEED_BASE + i).map_err(|e| e.to_string())?;
        let mut dev = Device::new(DeviceConfig::new("SG-MC", link.clone()), &sensor, T0);
        dev.load_sample(concentration).map_err(|e| e.to_string())?;
        let env = EnvReading::new(22.0, 55.0, [0.0, 0.0, 1.0]);
        dev.start_test(TestRequest::glyphosate("MC", WaterSource::Lake), env)
            .map_err(|e| e.to_string())?;
        dev.tick(SimTime(PIPELINE_MS)).map_err(|e| e.to_string())?;
        let color = dev.outbound().map(|r| r.color).ok_or("no result")?;
        hits += u64::from(color == want);
    }
    Ok(hits as f64 / MC_RUNS as f64)
}

fn noise() -> Outcome {
    let pos = mc_rate(1000.0, TrafficLight::Positive)?;
    let neg = mc_rate(0.0, TrafficLight::Negative)?;
    check((pos - MC_ORACLE_POSITIVE_AT_1000).abs() <= MC_TOL, || {
        format!("P(Positive | 1000) = {pos} vs oracle {MC_ORACLE_POSITIVE_AT_1000}")
    })?;
    check((neg - MC_ORACLE_NEGATIVE_AT_0).abs() <= MC_TOL, || {
        format!("P(Negative | 0) = {neg} vs oracle {MC_ORACLE_NEGATIVE_AT_0}")
    })?;
    Ok(format!(
        "P(Positive|1000)={pos:.3} (oracle {MC_ORACLE_POSITIVE_AT_1000}), P(Negative|0)={neg:.3} (oracle {MC_ORACLE_NEGATIVE_AT_0})"
    ))
}

fn durability() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let open = || -> Result<Ingestor, String> {
        let store = JsonlStore::open_dir(dir.path()).map_err(|e| e.to_string())?;
        Ingestor::open(Box::new(store), IngestConfig::default()).map_err(|e| e.to_string())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xD0AB1E);
    let mut acked = Vec::new();
    {
        let ing = open()?;
        for i in 0..500u64 {
            let r = random_record(&mut rng, i + 1);
            let out = ing
                .ingest_record(&r)
                .map_err(|e| format!("ingest {i}: {e}"))?;
            acked.push(out.record);
        }
        // Dropped without any shutdown step.
    }
    // A crash mid-append leaves a partial line behind.
    {
        use std::io::Write;
        let path = dir.path().join(glyphotrace::ingest::store::LOG_FILE);
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| e.to_string())?;
        f.write_all(br#"{"entry":"record","record":{"test_id":99"#)
            .map_err(|e| e.to_string())?;
    }
    let ing = open()?;
    let stored = ing.all_records();
    for a in &acked {
        let got = ing.record(&a.record_id());
        check(got.as_ref() == Some(a), || {
            format!("{} lost or changed: {got:?} vs {a:?}", a.record_id())
        })?;
    }
    check(stored.len() == acked.len(), || {
        format!("{} stored vs {} acked", stored.len(), acked.len())
    })?;
    let replayed = JsonlStore::open_dir(dir.path())
        .and_then(|mut s| s.load())
        .map_err(|e| e.to_string())?;
    let records = replayed
        .iter()
        .filter(|e| matches!(e, LogEntry::Record { .. }))
        .count();
    check(records == 500, || {
        format!("{records} record entries after restart")
    })?;

    for i in 0..50 {
        let f = OracleFilter::random(&mut rng);
        let expected = oracle_scan(&stored, &f);
        let stats = ing.stats(&f.to_query()).map_err(|e| e.to_string())?;
        check(stats.total == expected.len(), || {
            format!(
                "filter {i} {f:?}: stats {} vs scan {}",
                stats.total,
                expected.len()
            )
        })?;
        for c in TrafficLight::ALL {
            let n = expected.iter().filter(|r| r.color == c).count();
            check(stats.by_color.get(c.as_str()) == Some(&n), || {
                format!("filter {i}: {c} count")
            })?;
        }
        let mut got = Vec::new();
        let mut cursor = None;
        loop {
            let page = ing
                .query(
                    &f.to_query(),
                    cursor.as_ref(),
                    Some(rng.random_range(1..60)),
                )
                .map_err(|e| e.to_string())?;
            got.extend(page.records);
            match page.next_cursor {
                Some(c) => cursor = Some(c.parse().map_err(|e: String| e)?),
                None => break,
            }
        }
        check(
            got.len() == expected.len() && got.iter().zip(&expected).all(|(a, b)| a == *b),
            || {
                format!(
                    "filter {i} {f:?}: query returned {} vs scan {}",
                    got.len(),
                    expected.len()
                )
            },
        )?;
    }
    Ok("500/500 acknowledged records after restart, 50 filters match the scan".into())
}

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        (
            "calibration reproduction",
            Some(Duration::from_secs(1)),
            calibration,
        ),
        (
            "validation table reproduction",
            Some(Duration::from_secs(1)),
            validation_table,
        ),
        (
            "codec round trip and size limits",
            Some(Duration::from_secs(5)),
            codec,
        ),
        (
            "end-to-end pipeline",
            Some(Duration::from_secs(5)),
            pipeline,
        ),
        ("state machine and env gate", None, state_machine),
        ("noise robustness", None, noise),
        ("ingest durability and query oracle", None, durability),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match (outcome, budget) {
            (Ok(_), Some(b)) if took > b => Err(format!("took {took:?}, budget {b:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({} ms)", took.as_millis()),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} ({} ms)", took.as_millis());
            }
        }
    }
    println!("{} of 7 criteria passed", 7 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
