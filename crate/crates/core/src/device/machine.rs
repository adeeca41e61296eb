//! Firmware state machine: `Idle → Preprocessing → Measuring → Transmitting
//! → Idle`, plus `any → Fault`.
//!
//! Time is supplied by the caller through [`Device::tick`]; the device never
//! reads a wall clock.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::config::{DeviceConfig, LinkConfig};
use crate::device::env::{env_gate, EnvViolation};
use crate::device::sensor::{SensorError, SensorModel, SpectrumSimulator};
use crate::record::{EnvReading, TestRecord, TestRequest, WaterSource};
use crate::spectrum::{Precision, Spectrum};
use crate::traffic_light::{TrafficLight, TrafficLightPolicy};

/// Reagent reaction time before the optical read.
pub const PREPROCESS_MS: u64 = 600_000;
/// Sensor integration and response time.
pub const MEASURE_MS: u64 = 15_000;
/// Active time per 1 % of battery: 100 % lasts 24 h of continuous use.
pub const ACTIVE_MS_PER_BATTERY_PCT: u64 = 864_000;
pub const BATTERY_LOW_PCT: f64 = 10.0;
/// Test id reserved for self-test diagnostics.
pub const DIAGNOSTIC_TEST_ID: u64 = 0;

/// Simulated milliseconds since the device was powered on.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1000)
    }

    pub fn as_ms(self) -> u64 {
        self.0
    }

    pub fn plus_ms(self, ms: u64) -> Self {
        SimTime(self.0 + ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultReason {
    PowerLoss,
    Sensor(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Preprocessing { started_at: SimTime },
    Measuring { started_at: SimTime },
    Transmitting,
    Fault { reason: FaultReason },
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Preprocessing { .. } => "preprocessing",
            Phase::Measuring { .. } => "measuring",
            Phase::Transmitting => "transmitting",
            Phase::Fault { .. } => "fault",
        }
    }

    fn is_active(&self) -> bool {
        matches!(
            self,
            Phase::Preprocessing { .. } | Phase::Measuring { .. } | Phase::Transmitting
        )
    }

    /// The permitted transition relation.
    pub fn may_transition_to(&self, next: &Phase) -> bool {
        use Phase::*;
        if matches!(next, Fault { .. }) {
            return true;
        }
        matches!(
            (self, next),
            (Idle, Preprocessing { .. })
                | (Preprocessing { .. }, Measuring { .. })
                | (Measuring { .. }, Transmitting)
                | (Transmitting, Idle)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Bench readout for building calibration curves; never transmits.
    Manual,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    #[serde(flatten)]
    pub phase: Phase,
    pub mode: Mode,
    pub battery_pct: f64,
    pub clock: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

/// Device-side notification; stands in for the display, buzzer and phone
/// app messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceEvent {
    pub at_ms: u64,
    pub serial: String,
    pub severity: Severity,
    #[serde(flatten)]
    pub kind: EventKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    TestAccepted {
        test_id: u64,
    },
    TestRejected {
        reason: StartError,
    },
    PreprocessingComplete {
        test_id: u64,
    },
    ResultReady {
        record: Box<TestRecord>,
    },
    Delivered {
        test_id: u64,
    },
    DeliveryFailed {
        test_id: u64,
    },
    ConfigChanged {
        field: String,
    },
    ModeChanged {
        mode: Mode,
    },
    ManualReading {
        spectrum: Spectrum,
    },
    SelfTest {
        pipeline_ok: bool,
        link_reachable: bool,
    },
    BatteryLow {
        battery_pct: f64,
    },
    Fault {
        reason: FaultReason,
    },
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum StartError {
    #[error("a test is already in flight")]
    Busy,
    #[error("device is not in auto mode")]
    WrongMode,
    #[error("device is in fault state")]
    Faulted,
    #[error("no water sample loaded")]
    NoSample,
    #[error("test request is incomplete")]
    InvalidRequest,
    #[error("environment out of range: {violations:?}")]
    EnvRejected { violations: Vec<EnvViolation> },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("clock went backwards: {now:?} < {clock:?}")]
    ClockWentBackwards { now: SimTime, clock: SimTime },
    #[error("operation not allowed in phase {0}")]
    WrongPhase(&'static str),
    #[error("device is not in {0:?} mode")]
    WrongMode(Mode),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("no water sample loaded")]
    NoSample,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceCommand {
    /// Remote start. Without a request the device fills in a generic one.
    ManualTestTrigger {
        correlation_id: Option<String>,
        request: Option<TestRequest>,
    },
    SetLink(LinkConfig),
    SetPolicy(TrafficLightPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ack", rename_all = "snake_case")]
pub enum CommandAck {
    TestAccepted { test_id: u64 },
    ConfigUpdated,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("a test is already in flight")]
    Busy,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Start(StartError),
    #[error("could not persist config: {0}")]
    Persist(String),
}

/// Reports whether the configured uplink can currently reach the platform.
pub trait LinkProbe {
    fn reachable(&self, link: &LinkConfig) -> bool;
}

impl LinkProbe for bool {
    fn reachable(&self, _link: &LinkConfig) -> bool {
        *self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub predicted_value: f64,
    pub color: TrafficLight,
    pub expected_color: TrafficLight,
    pub pipeline_ok: bool,
    pub link_reachable: bool,
    pub record: TestRecord,
}

#[derive(Debug, Clone)]
struct InFlight {
    test_id: u64,
    request: TestRequest,
    env: EnvReading,
    correlation_id: Option<String>,
}

/// One emulated instrument.
#[derive(Debug, Clone)]
pub struct Device {
    config: DeviceConfig,
    config_path: Option<PathBuf>,
    state: DeviceState,
    sensor: SpectrumSimulator,
    ambient: EnvReading,
    sample_mg_l: Option<f64>,
    in_flight: Option<InFlight>,
    outbound: Option<TestRecord>,
    next_test_id: u64,
    epoch_ms: i64,
    active_ms: u64,
    low_battery_reported: bool,
    events: Vec<DeviceEvent>,
}

impl Device {
    /// `epoch_ms` is the Unix time corresponding to `SimTime(0)`.
    pub fn new(config: DeviceConfig, sensor: &SensorModel, epoch_ms: i64) -> Self {
        Device {
            state: DeviceState {
                phase: Phase::Idle,
                mode: Mode::Auto,
                battery_pct: config.battery_pct,
                clock: SimTime(0),
            },
            config,
            config_path: None,
            sensor: sensor.simulator(),
            ambient: EnvReading::bench(),
            sample_mg_l: None,
            in_flight: None,
            outbound: None,
            next_test_id: 1,
            epoch_ms,
            active_ms: 0,
            low_battery_reported: false,
            events: Vec::new(),
        }
    }

    /// Persist config changes from commands to `path`.
    pub fn with_config_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.config_path = Some(path.into());
        self
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn serial(&self) -> &str {
        &self.config.serial
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn phase(&self) -> &Phase {
        &self.state.phase
    }

    pub fn ambient(&self) -> EnvReading {
        self.ambient
    }

    pub fn events(&self) -> &[DeviceEvent] {
        &self.events
    }

    pub fn epoch_ms(&self) -> i64 {
        self.epoch_ms
    }

    /// Unix milliseconds of the device clock.
    pub fn wall_time_ms(&self) -> i64 {
        self.epoch_ms + self.state.clock.0 as i64
    }

    /// Event log as JSON lines.
    pub fn event_log_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    pub fn set_ambient(&mut self, env: EnvReading) {
        self.ambient = env;
    }

    /// Places a water sample of the given concentration in the cuvette.
    pub fn load_sample(&mut self, concentration_mg_l: f64) -> Result<(), DeviceError> {
        if !matches!(self.state.phase, Phase::Idle | Phase::Fault { .. }) {
            return Err(DeviceError::WrongPhase(self.state.phase.name()));
        }
        if !concentration_mg_l.is_finite() || concentration_mg_l < 0.0 {
            return Err(SensorError::NegativeConcentration(concentration_mg_l).into());
        }
        self.sample_mg_l = Some(concentration_mg_l);
        Ok(())
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<(), DeviceError> {
        if self.state.phase != Phase::Idle {
            return Err(DeviceError::WrongPhase(self.state.phase.name()));
        }
        if self.state.mode != mode {
            self.state.mode = mode;
            self.emit(
                Severity::Info,
                EventKind::ModeChanged { mode },
                format!("mode {mode:?}"),
            );
        }
        Ok(())
    }

    pub fn start_test(&mut self, request: TestRequest, env: EnvReading) -> Result<u64, StartError> {
        self.start_test_with(request, env, None)
    }

    fn start_test_with(
        &mut self,
        request: TestRequest,
        env: EnvReading,
        correlation_id: Option<String>,
    ) -> Result<u64, StartError> {
        let refused = match &self.state.phase {
            Phase::Fault { .. } => Some(StartError::Faulted),
            Phase::Idle => None,
            _ => Some(StartError::Busy),
        };
        let refused = refused
            .or_else(|| (self.state.mode != Mode::Auto).then_some(StartError::WrongMode))
            .or_else(|| (!request.is_valid()).then_some(StartError::InvalidRequest))
            .or_else(|| self.sample_mg_l.is_none().then_some(StartError::NoSample))
            .or_else(|| {
                env_gate(&env, &self.config.env_limits)
                    .err()
                    .map(|violations| StartError::EnvRejected { violations })
            });
        if let Some(reason) = refused {
            let text = format!("test rejected: {reason}");
            self.emit(
                Severity::Warning,
                EventKind::TestRejected {
                    reason: reason.clone(),
                },
                text,
            );
            return Err(reason);
        }
        let test_id = self.next_test_id;
        self.next_test_id += 1;
        self.in_flight = Some(InFlight {
            test_id,
            request,
            env,
            correlation_id,
        });
        self.set_phase(Phase::Preprocessing {
            started_at: self.state.clock,
        });
        self.emit(
            Severity::Info,
            EventKind::TestAccepted { test_id },
            format!("test {test_id} started, reacting"),
        );
        Ok(test_id)
    }

    /// Advances the clock to `now`, running any phase transitions that fall
    /// due. Transitions happen at their exact due time regardless of how
    /// coarsely the caller ticks.
    pub fn tick(&mut self, now: SimTime) -> Result<Vec<DeviceEvent>, DeviceError> {
        if now < self.state.clock {
            return Err(DeviceError::ClockWentBackwards {
                now,
                clock: self.state.clock,
            });
        }
        let first_new = self.events.len();
        loop {
            match self.state.phase.clone() {
                Phase::Preprocessing { started_at } if now >= started_at.plus_ms(PREPROCESS_MS) => {
                    let due = started_at.plus_ms(PREPROCESS_MS);
                    if !self.advance_clock(due) {
                        break;
                    }
                    let test_id = self.in_flight.as_ref().map(|f| f.test_id).unwrap_or(0);
                    self.set_phase(Phase::Measuring { started_at: due });
                    self.emit(
                        Severity::Info,
                        EventKind::PreprocessingComplete { test_id },
                        format!("test {test_id} reading sensor"),
                    );
                }
                Phase::Measuring { started_at } if now >= started_at.plus_ms(MEASURE_MS) => {
                    let due = started_at.plus_ms(MEASURE_MS);
                    if !self.advance_clock(due) {
                        break;
                    }
                    self.finish_measurement()?;
                }
                _ => break,
            }
        }
        if !matches!(self.state.phase, Phase::Fault { .. }) {
            self.advance_clock(now);
        } else {
            self.state.clock = now;
        }
        Ok(self.events[first_new..].to_vec())
    }

    fn finish_measurement(&mut self) -> Result<(), DeviceError> {
        let flight = self
            .in_flight
            .take()
            .expect("measuring implies a test in flight");
        let concentration = self.sample_mg_l.ok_or(DeviceError::NoSample)?;
        let spectrum = match self.sensor.simulate_spectrum(concentration) {
            Ok(s) => s,
            Err(e) => {
                self.fault(FaultReason::Sensor(e.to_string()));
                return Err(e.into());
            }
        };
        let predicted_value = self
            .config
            .model
            .predict(&spectrum)
            .expect("full spectrum covers the model channel");
        let color = self.config.policy.classify(predicted_value);
        let record = TestRecord {
            test_id: flight.test_id,
            device_serial: self.config.serial.clone(),
            timestamp: self.wall_time_ms(),
            link_kind: self.config.link.kind(),
            request: Some(flight.request),
            spectrum: (&spectrum).into(),
            precision: Precision::Exact,
            saturated: false,
            env: flight.env,
            predicted_value,
            color,
            gps: self.config.location,
            diagnostic: false,
            env_violation: false,
            color_mismatch: false,
            policy_version: self.config.policy.version,
            correlation_id: flight.correlation_id,
        };
        let severity = match color {
            TrafficLight::Positive => Severity::Critical,
            TrafficLight::Warning => Severity::Warning,
            TrafficLight::Negative => Severity::Info,
        };
        let text = format!(
            "test {} result {} ({}) value {:.4}",
            record.test_id,
            color,
            color.lamp(),
            predicted_value
        );
        self.outbound = Some(record.clone());
        self.set_phase(Phase::Transmitting);
        self.emit(
            severity,
            EventKind::ResultReady {
                record: Box::new(record),
            },
            text,
        );
        Ok(())
    }

    /// The finished record awaiting transmission.
    pub fn outbound(&self) -> Option<&TestRecord> {
        self.outbound.as_ref()
    }

    /// Called by the link layer once the outbound record has been handed off
    /// (or definitively failed). Returns the device to Idle.
    pub fn complete_transmission(&mut self, delivered: bool) -> Result<DeviceEvent, DeviceError> {
        if self.state.phase != Phase::Transmitting {
            return Err(DeviceError::WrongPhase(self.state.phase.name()));
        }
        let test_id = self.outbound.take().map(|r| r.test_id).unwrap_or(0);
        self.set_phase(Phase::Idle);
        let (severity, kind, text) = if delivered {
            (
                Severity::Info,
                EventKind::Delivered { test_id },
                format!("test {test_id} sent to platform"),
            )
        } else {
            (
                Severity::Warning,
                EventKind::DeliveryFailed { test_id },
                format!("test {test_id} could not be sent"),
            )
        };
        self.emit(severity, kind, text);
        Ok(self.events.last().cloned().expect("just emitted"))
    }

    pub fn handle_command(&mut self, cmd: DeviceCommand) -> Result<CommandAck, CommandError> {
        match cmd {
            DeviceCommand::ManualTestTrigger {
                correlation_id,
                request,
            } => {
                let n = self.next_test_id;
                let request = request.unwrap_or_else(|| {
                    let mut r = TestRequest::glyphosate(format!("remote-{n}"), WaterSource::Other);
                    r.requested_by = "platform".into();
                    r
                });
                self.start_test_with(request, self.ambient, correlation_id)
                    .map(|test_id| CommandAck::TestAccepted { test_id })
                    .map_err(|e| match e {
                        StartError::Busy => CommandError::Busy,
                        other => CommandError::Start(other),
                    })
            }
            DeviceCommand::SetLink(link) => {
                link.validate()
                    .map_err(|e| CommandError::InvalidConfig(e.to_string()))?;
                self.update_config("link", |cfg| cfg.link = link)
            }
            DeviceCommand::SetPolicy(policy) => {
                if policy.negative_upper >= policy.positive_lower {
                    return Err(CommandError::InvalidConfig(
                        "policy bounds out of order".into(),
                    ));
                }
                self.update_config("policy", |cfg| cfg.policy = policy)
            }
        }
    }

    fn update_config(
        &mut self,
        field: &str,
        change: impl FnOnce(&mut DeviceConfig),
    ) -> Result<CommandAck, CommandError> {
        if !matches!(self.state.phase, Phase::Idle | Phase::Fault { .. }) {
            return Err(CommandError::Busy);
        }
        let mut next = self.config.clone();
        change(&mut next);
        next.validate()
            .map_err(|e| CommandError::InvalidConfig(e.to_string()))?;
        if let Some(path) = &self.config_path {
            next.save(path)
                .map_err(|e| CommandError::Persist(e.to_string()))?;
        }
        self.config = next;
        self.emit(
            Severity::Info,
            EventKind::ConfigChanged {
                field: field.to_string(),
            },
            format!("{field} updated"),
        );
        Ok(CommandAck::ConfigUpdated)
    }

    /// Bench readout in manual mode. Nothing is sent to the platform.
    pub fn manual_read(&mut self) -> Result<Spectrum, DeviceError> {
        if self.state.mode != Mode::Manual {
            return Err(DeviceError::WrongMode(Mode::Manual));
        }
        if self.state.phase != Phase::Idle {
            return Err(DeviceError::WrongPhase(self.state.phase.name()));
        }
        let concentration = self.sample_mg_l.ok_or(DeviceError::NoSample)?;
        let spectrum = self.sensor.simulate_spectrum(concentration)?;
        self.emit(
            Severity::Info,
            EventKind::ManualReading {
                spectrum: spectrum.clone(),
            },
            "manual reading taken".into(),
        );
        Ok(spectrum)
    }

    /// Runs a fixed reference spectrum through prediction and
    /// classification and checks link reachability. The returned record is
    /// flagged as diagnostic.
    pub fn self_test(&mut self, probe: &dyn LinkProbe) -> Result<DiagnosticReport, DeviceError> {
        if let Phase::Fault { .. } = self.state.phase {
            return Err(DeviceError::WrongPhase("fault"));
        }
        let spectrum = self_test_spectrum();
        let predicted_value = self
            .config
            .model
            .predict(&spectrum)
            .expect("full spectrum covers the model channel");
        let color = self.config.policy.classify(predicted_value);
        let expected_color = TrafficLight::Positive;
        let link_reachable = probe.reachable(&self.config.link);
        let pipeline_ok = color == expected_color;
        let mut request = TestRequest::glyphosate("self-test", WaterSource::Other);
        request.requested_by = "self-test".into();
        let record = TestRecord {
            test_id: DIAGNOSTIC_TEST_ID,
            device_serial: self.config.serial.clone(),
            timestamp: self.wall_time_ms(),
            link_kind: self.config.link.kind(),
            request: Some(request),
            spectrum: (&spectrum).into(),
            precision: Precision::Exact,
            saturated: false,
            env: self.ambient,
            predicted_value,
            color,
            gps: self.config.location,
            diagnostic: true,
            env_violation: false,
            color_mismatch: false,
            policy_version: self.config.policy.version,
            correlation_id: None,
        };
        let severity = if pipeline_ok && link_reachable {
            Severity::Info
        } else {
            Severity::Warning
        };
        self.emit(
            severity,
            EventKind::SelfTest {
                pipeline_ok,
                link_reachable,
            },
            format!("self-test pipeline_ok={pipeline_ok} link_reachable={link_reachable}"),
        );
        Ok(DiagnosticReport {
            predicted_value,
            color,
            expected_color,
            pipeline_ok,
            link_reachable,
            record,
        })
    }

    fn set_phase(&mut self, next: Phase) {
        debug_assert!(
            self.state.phase.may_transition_to(&next),
            "illegal transition {:?} -> {:?}",
            self.state.phase,
            next
        );
        self.state.phase = next;
    }

    /// Moves the clock forward, draining the battery for active time.
    /// Returns false if the device faulted on the way.
    fn advance_clock(&mut self, to: SimTime) -> bool {
        let elapsed = to.0.saturating_sub(self.state.clock.0);
        self.state.clock = to;
        if !self.state.phase.is_active() || elapsed == 0 {
            return true;
        }
        self.active_ms += elapsed;
        let drained = self.active_ms as f64 / ACTIVE_MS_PER_BATTERY_PCT as f64;
        self.state.battery_pct = (self.config.battery_pct - drained).max(0.0);
        if self.state.battery_pct <= BATTERY_LOW_PCT && !self.low_battery_reported {
            self.low_battery_reported = true;
            let pct = self.state.battery_pct;
            self.emit(
                Severity::Warning,
                EventKind::BatteryLow { battery_pct: pct },
                format!("battery low ({pct:.1} %)"),
            );
        }
        if self.state.battery_pct <= 0.0 {
            self.fault(FaultReason::PowerLoss);
            return false;
        }
        true
    }

    fn fault(&mut self, reason: FaultReason) {
        self.in_flight = None;
        self.outbound = None;
        self.set_phase(Phase::Fault {
            reason: reason.clone(),
        });
        self.emit(
            Severity::Critical,
            EventKind::Fault {
                reason: reason.clone(),
            },
            format!("fault: {reason:?}"),
        );
    }

    fn emit(&mut self, severity: Severity, kind: EventKind, text: String) {
        self.events.push(DeviceEvent {
            at_ms: self.state.clock.0,
            serial: self.config.serial.clone(),
            severity,
            kind,
            text,
        });
    }
}

/// Reference spectrum used by the self-test: the 1000 mg/l calibration
/// reading, which the shipped model classifies Positive.
pub fn self_test_spectrum() -> Spectrum {
    crate::reference::calibration_samples()
        .into_iter()
        .find(|s| s.concentration_mg_l == 1000.0)
        .map(|s| s.spectrum)
        .expect("bundled data has a 1000 mg/l reading")
}
