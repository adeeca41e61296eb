//! Deterministic fleet simulation: emulated devices, both transport paths
//! and the ingest service, driven by a JSON scenario on a simulated clock.
//!
//! Each step runs, in order: due schedule actions, command delivery
//! (broker RPC topics and queued LoRaWAN downlinks), device ticks, outbound
//! transmission, and ingestion of broker telemetry. Downlinks are handed to
//! the device on the next step rather than after its next uplink.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::device::{
    Device, DeviceCommand, DeviceConfig, DeviceEvent, EventKind, LinkConfig, SensorModel, SimTime,
};
use crate::ingest::Alarm;
use crate::ingest::{
    DeviceRegistration, IngestConfig, IngestError, Ingestor, MemoryStore, NetlinkRouter,
    QueryFilter, Stats, Store,
};
use crate::netlink::bus::{rpc_request_topic, rpc_response_topic, telemetry_topic, Subscription};
use crate::netlink::{
    broker_envelope, Bus, DownlinkCommand, Forwarded, Gateway, LinkProfile, RpcRequest,
    RpcResponse, TelemetryEnvelope, Transport, UplinkFrame,
};
use crate::record::{EnvReading, GeoPoint, LinkKind, TestRecord, TestRequest, WaterSource};
use crate::traffic_light::TrafficLightPolicy;
use crate::uplink;

pub const DEFAULT_EPOCH_MS: i64 = 1_700_000_000_000;
pub const UPLINK_PORT: u8 = 2;

fn default_epoch() -> i64 {
    DEFAULT_EPOCH_MS
}

fn default_step() -> u64 {
    1_000
}

fn default_app_key() -> String {
    "00000000000000000000000000000000".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub serial: String,
    pub link: LinkKind,
    /// Required for LoRaWAN devices.
    #[serde(default)]
    pub device_eui: Option<String>,
    #[serde(default = "default_app_key")]
    pub app_key: String,
    #[serde(default)]
    pub location: Option<GeoPoint>,
    #[serde(default)]
    pub policy: Option<TrafficLightPolicy>,
    #[serde(default)]
    pub ambient: Option<EnvReading>,
    #[serde(default)]
    pub battery_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    LoadSample {
        concentration_mg_l: f64,
    },
    SetAmbient {
        env: EnvReading,
    },
    /// Operator starts a test at the device.
    StartTest {
        #[serde(default)]
        request: Option<TestRequest>,
    },
    /// Platform triggers a test over the device's link.
    ManualTest {
        #[serde(default)]
        request: Option<TestRequest>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledAction {
    pub at_s: u64,
    pub device: String,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_epoch")]
    pub epoch_ms: i64,
    /// Relative sensor noise σ.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_step")]
    pub step_ms: u64,
    pub duration_s: u64,
    #[serde(default)]
    pub link_profile: LinkProfile,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub schedule: Vec<ScheduledAction>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Storage(#[from] crate::ingest::StoreError),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.step_ms == 0 {
            return bad("step_ms must be positive".into());
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 1)", self.noise));
        }
        self.link_profile
            .validate()
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for d in &self.devices {
            if !seen.insert(d.serial.as_str()) {
                return bad(format!("duplicate device {}", d.serial));
            }
            if d.link == LinkKind::Lorawan && d.device_eui.is_none() {
                return bad(format!("{} needs a device_eui", d.serial));
            }
        }
        for a in &self.schedule {
            if !seen.contains(a.device.as_str()) {
                return bad(format!("schedule names unknown device {}", a.device));
            }
        }
        Ok(())
    }

    /// One device, one sample, one test at t = 0.
    pub fn single_test(link: LinkKind, concentration_mg_l: f64, noise: f64, seed: u64) -> Self {
        let device_eui = (link == LinkKind::Lorawan).then(|| "70B3D57ED0000001".to_string());
        let mut request = TestRequest::glyphosate("S-1", WaterSource::River);
        request.country = "Argentina".into();
        request.region = "Buenos Aires".into();
        request.city = "La Plata".into();
        request.requested_by = "field-operator".into();
        Scenario {
            seed,
            epoch_ms: DEFAULT_EPOCH_MS,
            noise,
            step_ms: default_step(),
            duration_s: 700,
            link_profile: LinkProfile::default(),
            devices: vec![DeviceSpec {
                serial: "SG-0001".into(),
                link,
                device_eui,
                app_key: default_app_key(),
                location: Some(GeoPoint {
                    lat: -34.9215,
                    lon: -57.9545,
                    alt: 20.0,
                }),
                policy: None,
                ambient: None,
                battery_pct: None,
            }],
            schedule: vec![
                ScheduledAction {
                    at_s: 0,
                    device: "SG-0001".into(),
                    action: Action::LoadSample { concentration_mg_l },
                },
                ScheduledAction {
                    at_s: 0,
                    device: "SG-0001".into(),
                    action: Action::StartTest {
                        request: Some(request),
                    },
                },
            ],
        }
    }
}

/// One line of the simulation event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SimEvent {
    Device(DeviceEvent),
    Gateway {
        at_ms: u64,
        outcome: Forwarded,
    },
    Platform {
        at_ms: u64,
        serial: String,
        message: String,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub events: Vec<SimEvent>,
    pub records: Vec<TestRecord>,
    pub alarms: Vec<Alarm>,
    pub stats: Stats,
    pub end_ms: u64,
}

impl SimReport {
    pub fn events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }

    /// Simulated time from acceptance to result for each test, keyed by
    /// `serial:test_id`.
    pub fn test_durations_ms(&self) -> BTreeMap<String, u64> {
        let mut started = BTreeMap::new();
        let mut out = BTreeMap::new();
        for e in &self.events {
            if let SimEvent::Device(ev) = e {
                match &ev.kind {
                    EventKind::TestAccepted { test_id } => {
                        started.insert(format!("{}:{}", ev.serial, test_id), ev.at_ms);
                    }
                    EventKind::ResultReady { record } => {
                        let key = record.record_id();
                        if let Some(t0) = started.get(&key) {
                            out.insert(key, ev.at_ms - t0);
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }
}

struct SimDevice {
    device: Device,
    link: LinkKind,
    eui: Option<String>,
    rpc: Option<Subscription>,
    counter: u32,
    seen_events: usize,
}

pub struct Simulation {
    scenario: Scenario,
    bus: Bus,
    gateway: Arc<Mutex<Gateway>>,
    ingestor: Arc<Ingestor>,
    clock: Arc<AtomicI64>,
    telemetry: Subscription,
    devices: Vec<SimDevice>,
    events: Vec<SimEvent>,
    now: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        Self::with_store(scenario, Box::new(MemoryStore::new()))
    }

    pub fn with_store(scenario: Scenario, store: Box<dyn Store>) -> Result<Self, SimError> {
        scenario.validate()?;
        let bus = Bus::new();
        let gateway = Gateway::new(scenario.link_profile.clone(), scenario.seed)
            .map_err(|e| SimError::Invalid(e.to_string()))?;
        let gateway = Arc::new(Mutex::new(gateway));
        let clock = Arc::new(AtomicI64::new(scenario.epoch_ms));
        let registrations = scenario
            .devices
            .iter()
            .map(|d| DeviceRegistration {
                serial: d.serial.clone(),
                link: d.link,
                device_eui: d.device_eui.clone(),
                policy: d
                    .policy
                    .clone()
                    .unwrap_or_else(TrafficLightPolicy::handheld),
            })
            .collect();
        let config = IngestConfig {
            devices: registrations,
            ..IngestConfig::default()
        };
        let tick = Arc::clone(&clock);
        let ingestor =
            Ingestor::open(store, config)?.with_clock(move || tick.load(Ordering::SeqCst));
        let ingestor = Arc::new(ingestor);
        let transport: Arc<dyn Transport> = Arc::new(bus.clone());
        ingestor.set_router(Arc::new(NetlinkRouter::new(
            transport,
            Arc::clone(&gateway),
        )));
        let telemetry = bus
            .subscribe(crate::ingest::TELEMETRY_FILTER)
            .expect("static filter is valid");

        let mut devices = Vec::new();
        for (i, ds) in scenario.devices.iter().enumerate() {
            let link = match ds.link {
                LinkKind::Broker => LinkConfig::Broker {
                    ssid: "field".into(),
                    secret: String::new(),
                    endpoint: "inproc".into(),
                },
                LinkKind::Lorawan => LinkConfig::Lorawan {
                    device_eui: ds.device_eui.clone().unwrap_or_default(),
                    app_key: ds.app_key.clone(),
                },
            };
            let mut cfg = DeviceConfig::new(&ds.serial, link);
            cfg.location = ds.location;
            if let Some(p) = &ds.policy {
                cfg.policy = p.clone();
            }
            if let Some(b) = ds.battery_pct {
                cfg.battery_pct = b;
            }
            cfg.validate()
                .map_err(|e| SimError::Invalid(format!("{}: {e}", ds.serial)))?;
            let sensor =
                SensorModel::reference(scenario.noise, scenario.seed.wrapping_add(i as u64 + 1))
                    .map_err(|e| SimError::Invalid(e.to_string()))?;
            let mut device = Device::new(cfg, &sensor, scenario.epoch_ms);
            if let Some(env) = ds.ambient {
                device.set_ambient(env);
            }
            let rpc = (ds.link == LinkKind::Broker)
                .then(|| bus.subscribe(&rpc_request_topic(&ds.serial)))
                .transpose()
                .expect("serial topics are valid");
            devices.push(SimDevice {
                device,
                link: ds.link,
                eui: ds.device_eui.clone(),
                rpc,
                counter: 0,
                seen_events: 0,
            });
        }
        Ok(Simulation {
            scenario,
            bus,
            gateway,
            ingestor,
            clock,
            telemetry,
            devices,
            events: Vec::new(),
            now: 0,
        })
    }

    pub fn ingestor(&self) -> &Arc<Ingestor> {
        &self.ingestor
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    fn platform(&mut self, serial: &str, message: String) {
        self.events.push(SimEvent::Platform {
            at_ms: self.now,
            serial: serial.to_string(),
            message,
        });
    }

    fn device_index(&self, serial: &str) -> usize {
        self.devices
            .iter()
            .position(|d| d.device.serial() == serial)
            .expect("scenario validated device names")
    }

    fn run_action(&mut self, a: &ScheduledAction) {
        let i = self.device_index(&a.device);
        let serial = a.device.clone();
        match &a.action {
            Action::LoadSample { concentration_mg_l } => {
                if let Err(e) = self.devices[i].device.load_sample(*concentration_mg_l) {
                    self.platform(&serial, format!("load_sample failed: {e}"));
                }
            }
            Action::SetAmbient { env } => self.devices[i].device.set_ambient(*env),
            Action::StartTest { request } => {
                let d = &mut self.devices[i].device;
                let request = request.clone().unwrap_or_else(|| {
                    TestRequest::glyphosate(format!("{serial}-local"), WaterSource::Other)
                });
                let env = d.ambient();
                // Refusals are already in the device event log.
                let _ = d.start_test(request, env);
            }
            Action::ManualTest { request } => {
                match self.ingestor.trigger_manual_test(&serial, request.clone()) {
                    Ok(d) => self.platform(
                        &serial,
                        format!("dispatched {} ({})", d.correlation_id, d.method),
                    ),
                    Err(e) => self.platform(&serial, format!("dispatch failed: {e}")),
                }
            }
        }
    }

    fn deliver_commands(&mut self, i: usize) {
        let serial = self.devices[i].device.serial().to_string();
        match self.devices[i].link {
            LinkKind::Broker => {
                let msgs = self.devices[i]
                    .rpc
                    .as_ref()
                    .map(Subscription::drain)
                    .unwrap_or_default();
                for msg in msgs {
                    let response = match serde_json::from_slice::<RpcRequest>(&msg.payload) {
                        Ok(req) => self.apply_rpc(i, &req),
                        Err(e) => RpcResponse::Error {
                            id: None,
                            message: format!("bad request: {e}"),
                        },
                    };
                    let body = serde_json::to_vec(&response).expect("response serializes");
                    let _ = self.bus.publish(&rpc_response_topic(&serial), &body);
                }
            }
            LinkKind::Lorawan => {
                let eui = self.devices[i].eui.clone().unwrap_or_default();
                loop {
                    let frame = self
                        .gateway
                        .lock()
                        .expect("gateway lock")
                        .pop_downlink(&eui);
                    let Some(frame) = frame else { break };
                    let instrument = self.devices[i].device.config().policy.instrument.clone();
                    let result = DownlinkCommand::parse(&frame.payload)
                        .and_then(|c| c.into_device_command(&instrument, None));
                    match result {
                        Ok(cmd) => {
                            if let Err(e) = self.devices[i].device.handle_command(cmd) {
                                self.platform(&serial, format!("downlink refused: {e}"));
                            }
                        }
                        Err(e) => self.platform(&serial, format!("bad downlink: {e}")),
                    }
                }
            }
        }
    }

    fn apply_rpc(&mut self, i: usize, req: &RpcRequest) -> RpcResponse {
        let d = &mut self.devices[i].device;
        let cmd = match req.method.as_str() {
            "manualTest" => {
                let request = req
                    .params
                    .get("request")
                    .cloned()
                    .map(serde_json::from_value::<TestRequest>)
                    .transpose();
                match request {
                    Ok(request) => Ok(DeviceCommand::ManualTestTrigger {
                        correlation_id: req.id.clone(),
                        request,
                    }),
                    Err(e) => Err(e.to_string()),
                }
            }
            _ => DownlinkCommand::from_rpc(req)
                .and_then(|c| c.into_device_command(&d.config().policy.instrument, req.id.clone()))
                .map_err(|e| e.to_string()),
        };
        match cmd.and_then(|c| d.handle_command(c).map_err(|e| e.to_string())) {
            Ok(ack) => RpcResponse::Ok {
                id: req.id.clone(),
                result: serde_json::to_value(ack).unwrap_or(Value::Null),
            },
            Err(message) => RpcResponse::Error {
                id: req.id.clone(),
                message,
            },
        }
    }

    fn transmit(&mut self, i: usize) {
        let Some(record) = self.devices[i].device.outbound().cloned() else {
            return;
        };
        let serial = record.device_serial.clone();
        let delivered = match self.devices[i].link {
            LinkKind::Broker => match broker_envelope(&record) {
                Ok(env) => {
                    let body = serde_json::to_vec(&env).expect("envelope serializes");
                    self.bus.publish(&telemetry_topic(&serial), &body).is_ok()
                }
                Err(e) => {
                    self.platform(&serial, format!("cannot encode record: {e}"));
                    false
                }
            },
            LinkKind::Lorawan => match uplink::encode_test_uplink(&record) {
                Ok(payload) => {
                    self.devices[i].counter += 1;
                    let frame = UplinkFrame {
                        device_eui: self.devices[i].eui.clone().unwrap_or_default(),
                        fport: UPLINK_PORT,
                        payload,
                        counter: self.devices[i].counter,
                        received_at: self.devices[i].device.wall_time_ms(),
                    };
                    let outcome = self.gateway.lock().expect("gateway lock").forward(frame);
                    match outcome {
                        Ok(outcome) => {
                            self.events.push(SimEvent::Gateway {
                                at_ms: self.now,
                                outcome: outcome.clone(),
                            });
                            match outcome {
                                Forwarded::Delivered { frame } => {
                                    self.ingest_logged(&serial, |ing| ing.ingest_uplink(&frame));
                                    true
                                }
                                _ => false,
                            }
                        }
                        Err(e) => {
                            self.platform(&serial, format!("uplink refused: {e}"));
                            false
                        }
                    }
                }
                Err(e) => {
                    self.platform(&serial, format!("cannot encode uplink: {e}"));
                    false
                }
            },
        };
        let _ = self.devices[i].device.complete_transmission(delivered);
    }

    fn ingest_logged(
        &mut self,
        serial: &str,
        f: impl FnOnce(&Ingestor) -> Result<crate::ingest::IngestOutcome, IngestError>,
    ) {
        let msg = match f(&self.ingestor) {
            Ok(o) if o.stored => format!("stored {} as {}", o.record.record_id(), o.record.color),
            Ok(o) if o.duplicate => format!("duplicate {}", o.record.record_id()),
            Ok(o) => format!("diagnostic {} not stored", o.record.record_id()),
            Err(e) => format!("ingest failed: {e}"),
        };
        self.platform(serial, msg);
    }

    fn ingest_broker_telemetry(&mut self) {
        for msg in self.telemetry.drain() {
            let serial = crate::netlink::bus::topic_serial(&msg.topic)
                .unwrap_or_default()
                .to_string();
            match serde_json::from_slice::<TelemetryEnvelope>(&msg.payload) {
                Ok(env) => self.ingest_logged(&serial, |ing| ing.ingest(&env)),
                Err(e) => self.platform(&serial, format!("bad telemetry: {e}")),
            }
        }
    }

    fn collect_device_events(&mut self, i: usize) {
        let d = &mut self.devices[i];
        let new: Vec<DeviceEvent> = d.device.events()[d.seen_events..].to_vec();
        d.seen_events = d.device.events().len();
        self.events.extend(new.into_iter().map(SimEvent::Device));
    }

    fn step(&mut self, now: u64, actions: &[ScheduledAction]) {
        self.now = now;
        self.clock
            .store(self.scenario.epoch_ms + now as i64, Ordering::SeqCst);
        for i in 0..self.devices.len() {
            let _ = self.devices[i].device.tick(SimTime(now));
        }
        for a in actions {
            self.run_action(a);
        }
        for i in 0..self.devices.len() {
            self.deliver_commands(i);
            self.transmit(i);
            self.collect_device_events(i);
        }
        self.ingest_broker_telemetry();
    }

    /// Runs the scenario to `duration_s` and reports the outcome.
    pub fn run(mut self) -> SimReport {
        let mut schedule = self.scenario.schedule.clone();
        schedule.sort_by_key(|a| a.at_s);
        let end = self.scenario.duration_s * 1_000;
        let step = self.scenario.step_ms;
        let mut next = 0usize;
        let mut now = 0u64;
        loop {
            let due_end = schedule[next..]
                .iter()
                .position(|a| a.at_s * 1_000 > now)
                .map_or(schedule.len(), |p| next + p);
            let due = schedule[next..due_end].to_vec();
            next = due_end;
            self.step(now, &due);
            if now >= end {
                break;
            }
            now = (now + step).min(end);
        }
        SimReport {
            events: self.events,
            records: self.ingestor.all_records(),
            alarms: self.ingestor.alarms(),
            stats: self
                .ingestor
                .stats(&QueryFilter::default())
                .expect("unbounded filter"),
            end_ms: now,
        }
    }
}
