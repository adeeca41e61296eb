use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;
use thiserror::Error;

use crate::device::env::{env_gate, EnvLimits};
use crate::ingest::model::{
    Alarm, AlarmSeverity, Cursor, DeviceRegistration, DeviceSummary, Dispatch, LogEntry, Page,
    QueryFilter, Stats, DEFAULT_PAGE_SIZE,
};
use crate::ingest::router::CommandRouter;
use crate::ingest::schema::parse_telemetry;
use crate::ingest::store::{Store, StoreError};
use crate::netlink::{
    broker_envelope, converter_uplink, RpcRequest, TelemetryEnvelope, UplinkFrame,
};
use crate::record::{LinkKind, TestRecord, TestRequest};
use crate::spectrum::{Precision, WAVELENGTHS};
use crate::traffic_light::{TrafficLight, TrafficLightPolicy};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("link unavailable: {0}")]
    LinkUnavailable(String),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("time range start {from} is after end {to}")]
    InvalidRange { from: i64, to: i64 },
}

#[derive(Debug, Error)]
pub enum AlarmError {
    #[error("no alarm {0}")]
    NotFound(u64),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Error)]
pub enum RegisterError {
    #[error("device EUI {eui} already belongs to {owner}")]
    EuiTaken { eui: String, owner: String },
    #[error("invalid registration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Storage(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestOutcome {
    pub record: TestRecord,
    /// False for re-deliveries and for diagnostic runs.
    pub stored: bool,
    pub duplicate: bool,
    pub alarm: Option<Alarm>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumPoint {
    pub nm: u16,
    pub value: Option<f64>,
}

/// Every supported channel in wavelength order, `None` where the record has
/// no reading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumSeries {
    pub record_id: String,
    pub precision: Precision,
    pub points: Vec<SpectrumPoint>,
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub env_limits: EnvLimits,
    /// Applied to broker devices that report before being registered.
    pub default_policy: TrafficLightPolicy,
    pub devices: Vec<DeviceRegistration>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            env_limits: EnvLimits::default(),
            default_policy: TrafficLightPolicy::handheld(),
            devices: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
struct DeviceInfo {
    registration: DeviceRegistration,
    record_count: usize,
    last_seen: Option<i64>,
    last_color: Option<TrafficLight>,
    last_test_id: Option<u64>,
}

#[derive(Debug, Default)]
struct State {
    records: Vec<TestRecord>,
    by_key: HashMap<(String, u64), usize>,
    time_index: BTreeMap<Cursor, usize>,
    alarms: Vec<Alarm>,
    devices: BTreeMap<String, DeviceInfo>,
    eui_index: HashMap<String, String>,
    dispatches: Vec<Dispatch>,
    matched: HashSet<String>,
    rejected: usize,
}

impl State {
    fn apply(&mut self, entry: LogEntry) {
        match entry {
            LogEntry::Device(reg) => {
                if let Some(old) = self.devices.get(&reg.serial) {
                    if let Some(eui) = &old.registration.device_eui {
                        self.eui_index.remove(eui);
                    }
                }
                if let Some(eui) = &reg.device_eui {
                    self.eui_index.insert(eui.clone(), reg.serial.clone());
                }
                self.devices
                    .entry(reg.serial.clone())
                    .and_modify(|d| d.registration = reg.clone())
                    .or_insert(DeviceInfo {
                        registration: reg,
                        record_count: 0,
                        last_seen: None,
                        last_color: None,
                        last_test_id: None,
                    });
            }
            LogEntry::Record { record, alarm } => {
                let idx = self.records.len();
                self.by_key
                    .insert((record.device_serial.clone(), record.test_id), idx);
                self.time_index.insert(Cursor::of(&record), idx);
                if let Some(id) = &record.correlation_id {
                    self.matched.insert(id.clone());
                }
                if let Some(d) = self.devices.get_mut(&record.device_serial) {
                    d.record_count += 1;
                    if d.last_seen.is_none_or(|t| record.timestamp >= t) {
                        d.last_seen = Some(record.timestamp);
                        d.last_color = Some(record.color);
                    }
                    d.last_test_id = Some(
                        d.last_test_id
                            .map_or(record.test_id, |t| t.max(record.test_id)),
                    );
                }
                self.records.push(record);
                if let Some(a) = alarm {
                    self.alarms.push(a);
                }
            }
            LogEntry::AlarmAck { alarm_id, .. } => {
                if let Some(a) = self.alarms.iter_mut().find(|a| a.alarm_id == alarm_id) {
                    a.acknowledged = true;
                }
            }
            LogEntry::Dispatch(d) => self.dispatches.push(d),
            LogEntry::Rejected { .. } => self.rejected += 1,
        }
    }

    fn lookup(&self, record_id: &str) -> Option<&TestRecord> {
        let (serial, id) = record_id.rsplit_once(':')?;
        let idx = self.by_key.get(&(serial.to_string(), id.parse().ok()?))?;
        Some(&self.records[*idx])
    }

    fn pending_for<'a>(&'a self, serial: &'a str) -> impl Iterator<Item = &'a Dispatch> + 'a {
        self.dispatches
            .iter()
            .filter(move |d| d.device_serial == serial && !self.matched.contains(&d.correlation_id))
    }
}

type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

fn wall_clock_ms() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as i64)
}

/// The platform core. All methods take `&self`; readers share a lock while
/// one writer at a time appends to the log.
pub struct Ingestor {
    state: RwLock<State>,
    store: Mutex<Box<dyn Store>>,
    router: RwLock<Option<Arc<dyn CommandRouter>>>,
    config: IngestConfig,
    clock: Clock,
}

impl Ingestor {
    /// Replays the store, then registers configured devices that are new or
    /// changed.
    pub fn open(store: Box<dyn Store>, config: IngestConfig) -> Result<Self, StoreError> {
        let mut store = store;
        let mut state = State::default();
        let entries = store.load()?;
        tracing::info!(entries = entries.len(), "replaying log");
        for e in entries {
            state.apply(e);
        }
        let ingestor = Ingestor {
            state: RwLock::new(state),
            store: Mutex::new(store),
            router: RwLock::new(None),
            config,
            clock: Arc::new(wall_clock_ms),
        };
        for reg in ingestor.config.devices.clone() {
            ingestor.register_device(reg).map_err(|e| match e {
                RegisterError::Storage(s) => s,
                other => StoreError::Other(other.to_string()),
            })?;
        }
        Ok(ingestor)
    }

    pub fn with_clock(mut self, clock: impl Fn() -> i64 + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    pub fn set_router(&self, router: Arc<dyn CommandRouter>) {
        *self.router.write().expect("router lock") = Some(router);
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().expect("state lock")
    }

    fn commit(&self, store: &mut dyn Store, entries: Vec<LogEntry>) -> Result<(), StoreError> {
        for e in entries {
            store.append(&e)?;
            self.state.write().expect("state lock").apply(e);
        }
        Ok(())
    }

    pub fn register_device(&self, reg: DeviceRegistration) -> Result<(), RegisterError> {
        if reg.serial.trim().is_empty() {
            return Err(RegisterError::Invalid("serial is empty".into()));
        }
        match (reg.link, &reg.device_eui) {
            (LinkKind::Lorawan, None) => {
                return Err(RegisterError::Invalid(
                    "LoRaWAN device needs a device_eui".into(),
                ))
            }
            (_, Some(eui)) if eui.is_empty() => {
                return Err(RegisterError::Invalid("device_eui is empty".into()))
            }
            _ => {}
        }
        let mut store = self.store.lock().expect("store lock");
        {
            let st = self.read();
            if let Some(eui) = &reg.device_eui {
                if let Some(owner) = st.eui_index.get(eui).filter(|o| **o != reg.serial) {
                    return Err(RegisterError::EuiTaken {
                        eui: eui.clone(),
                        owner: owner.clone(),
                    });
                }
            }
            if st
                .devices
                .get(&reg.serial)
                .is_some_and(|d| d.registration == reg)
            {
                return Ok(());
            }
        }
        self.commit(store.as_mut(), vec![LogEntry::Device(reg)])?;
        Ok(())
    }

    /// Stores the record an envelope describes. Re-delivery of a stored
    /// `(serial, test_id)` returns the stored record unchanged. The colour
    /// is recomputed from the device's registered policy; a different
    /// device-reported colour sets `color_mismatch`.
    pub fn ingest(&self, env: &TelemetryEnvelope) -> Result<IngestOutcome, IngestError> {
        let mut store = self.store.lock().expect("store lock");
        let now = (self.clock)();
        let planned = self.plan(env, now);
        match planned {
            Ok((entries, outcome)) => {
                self.commit(store.as_mut(), entries)?;
                Ok(outcome)
            }
            Err(err @ (IngestError::SchemaViolation(_) | IngestError::UnknownDevice(_))) => {
                tracing::warn!(device = %env.device, error = %err, "telemetry rejected");
                let entry = LogEntry::Rejected {
                    envelope: env.clone(),
                    reason: err.to_string(),
                    at: now,
                };
                self.commit(store.as_mut(), vec![entry])?;
                Err(err)
            }
            Err(other) => Err(other),
        }
    }

    fn plan(
        &self,
        env: &TelemetryEnvelope,
        now: i64,
    ) -> Result<(Vec<LogEntry>, IngestOutcome), IngestError> {
        let st = self.read();
        let link = env.link.unwrap_or(LinkKind::Broker);
        let mut entries = Vec::new();
        let device = match link {
            LinkKind::Lorawan => st
                .eui_index
                .get(&env.device)
                .and_then(|s| st.devices.get(s))
                .or_else(|| st.devices.get(&env.device))
                .map(|d| d.registration.clone())
                .ok_or_else(|| IngestError::UnknownDevice(env.device.clone()))?,
            LinkKind::Broker => match st.devices.get(&env.device) {
                Some(d) => d.registration.clone(),
                None if !env.device.trim().is_empty() => {
                    let reg =
                        DeviceRegistration::broker(&env.device, self.config.default_policy.clone());
                    entries.push(LogEntry::Device(reg.clone()));
                    reg
                }
                None => return Err(IngestError::SchemaViolation("missing device id".into())),
            },
        };
        let t = parse_telemetry(env).map_err(IngestError::SchemaViolation)?;
        let last = st.devices.get(&device.serial).and_then(|d| d.last_test_id);
        let test_id = t.test_id.resolve(last);

        if let Some(&idx) = st.by_key.get(&(device.serial.clone(), test_id)) {
            let outcome = IngestOutcome {
                record: st.records[idx].clone(),
                stored: false,
                duplicate: true,
                alarm: None,
            };
            return Ok((Vec::new(), outcome));
        }

        let color = device.policy.classify(t.value);
        let correlation_id = t.correlation_id.clone().or_else(|| {
            (link == LinkKind::Lorawan && !t.diagnostic)
                .then(|| {
                    st.pending_for(&device.serial)
                        .next()
                        .map(|d| d.correlation_id.clone())
                })
                .flatten()
        });
        let record = TestRecord {
            test_id,
            device_serial: device.serial.clone(),
            timestamp: env.ts,
            link_kind: link,
            request: t.request,
            spectrum: t.spectrum,
            precision: t.precision,
            saturated: t.saturated,
            env: t.env,
            predicted_value: t.value,
            color,
            gps: t.gps,
            diagnostic: t.diagnostic,
            env_violation: env_gate(&t.env, &self.config.env_limits).is_err(),
            color_mismatch: t.reported_color.is_some_and(|c| c != color),
            policy_version: device.policy.version,
            correlation_id,
        };
        if record.diagnostic {
            let outcome = IngestOutcome {
                record,
                stored: false,
                duplicate: false,
                alarm: None,
            };
            return Ok((entries, outcome));
        }
        let alarm = AlarmSeverity::for_color(color).map(|severity| Alarm {
            alarm_id: st.alarms.len() as u64 + 1,
            record_id: record.record_id(),
            device_serial: record.device_serial.clone(),
            test_id,
            severity,
            created_at: now,
            acknowledged: false,
        });
        entries.push(LogEntry::Record {
            record: record.clone(),
            alarm: alarm.clone(),
        });
        let outcome = IngestOutcome {
            record,
            stored: true,
            duplicate: false,
            alarm,
        };
        Ok((entries, outcome))
    }

    /// Broker-path ingestion of a device record.
    pub fn ingest_record(&self, record: &TestRecord) -> Result<IngestOutcome, IngestError> {
        let env =
            broker_envelope(record).map_err(|e| IngestError::SchemaViolation(e.to_string()))?;
        self.ingest(&env)
    }

    /// LoRaWAN-path ingestion of a delivered uplink frame.
    pub fn ingest_uplink(&self, frame: &UplinkFrame) -> Result<IngestOutcome, IngestError> {
        match converter_uplink(frame) {
            Ok(env) => self.ingest(&env),
            Err(failure) => {
                let env = failure.envelope();
                self.ingest(&env)
            }
        }
    }

    /// Sends a manual-test command over the device's registered link and
    /// records the dispatch under a fresh correlation id.
    pub fn trigger_manual_test(
        &self,
        serial: &str,
        request: Option<TestRequest>,
    ) -> Result<Dispatch, DispatchError> {
        let mut store = self.store.lock().expect("store lock");
        let (device, correlation_id) = {
            let st = self.read();
            let device = st
                .devices
                .get(serial)
                .map(|d| d.registration.clone())
                .ok_or_else(|| DispatchError::UnknownDevice(serial.to_string()))?;
            (device, format!("corr-{}", st.dispatches.len() + 1))
        };
        let router = self
            .router
            .read()
            .expect("router lock")
            .clone()
            .ok_or_else(|| DispatchError::LinkUnavailable("no command router attached".into()))?;
        let params = match (&request, device.link) {
            (Some(r), LinkKind::Broker) => serde_json::json!({ "request": r }),
            _ => serde_json::Value::Null,
        };
        let req = RpcRequest {
            method: "manualTest".into(),
            params,
            id: Some(correlation_id.clone()),
        };
        router
            .route(&device, &req)
            .map_err(|e| DispatchError::LinkUnavailable(e.0))?;
        let dispatch = Dispatch {
            correlation_id,
            device_serial: device.serial,
            link: device.link,
            method: req.method,
            at: (self.clock)(),
        };
        self.commit(store.as_mut(), vec![LogEntry::Dispatch(dispatch.clone())])?;
        Ok(dispatch)
    }

    pub fn ack_alarm(&self, alarm_id: u64) -> Result<Alarm, AlarmError> {
        let mut store = self.store.lock().expect("store lock");
        let alarm = self
            .read()
            .alarms
            .iter()
            .find(|a| a.alarm_id == alarm_id)
            .cloned()
            .ok_or(AlarmError::NotFound(alarm_id))?;
        if alarm.acknowledged {
            return Ok(alarm);
        }
        let at = (self.clock)();
        self.commit(store.as_mut(), vec![LogEntry::AlarmAck { alarm_id, at }])?;
        Ok(Alarm {
            acknowledged: true,
            ..alarm
        })
    }

    fn check_range(filter: &QueryFilter) -> Result<(), QueryError> {
        match (filter.from, filter.to) {
            (Some(from), Some(to)) if from > to => Err(QueryError::InvalidRange { from, to }),
            _ => Ok(()),
        }
    }

    /// Newest first. `after` continues from a previous page's cursor.
    pub fn query(
        &self,
        filter: &QueryFilter,
        after: Option<&Cursor>,
        limit: Option<usize>,
    ) -> Result<Page, QueryError> {
        Self::check_range(filter)?;
        let limit = limit.unwrap_or(DEFAULT_PAGE_SIZE).max(1);
        let st = self.read();
        let iter: Box<dyn Iterator<Item = (&Cursor, &usize)>> = match after {
            Some(c) => Box::new(st.time_index.range(..c.clone()).rev()),
            None => Box::new(st.time_index.iter().rev()),
        };
        let mut records = Vec::new();
        let mut more = false;
        for (_, &idx) in iter {
            let r = &st.records[idx];
            if !filter.matches(r) {
                continue;
            }
            if records.len() == limit {
                more = true;
                break;
            }
            records.push(r.clone());
        }
        let next_cursor = more
            .then(|| records.last().map(|r| Cursor::of(r).to_string()))
            .flatten();
        Ok(Page {
            records,
            next_cursor,
        })
    }

    pub fn stats(&self, filter: &QueryFilter) -> Result<Stats, QueryError> {
        Self::check_range(filter)?;
        let mut stats = Stats::default();
        for r in self.read().records.iter().filter(|r| filter.matches(r)) {
            stats.add(r);
        }
        Ok(stats)
    }

    pub fn record(&self, record_id: &str) -> Option<TestRecord> {
        self.read().lookup(record_id).cloned()
    }

    pub fn spectrum_series(&self, record_id: &str) -> Option<SpectrumSeries> {
        let st = self.read();
        let r = st.lookup(record_id)?;
        let readings: BTreeMap<u16, f64> = r.spectrum.iter().collect();
        Some(SpectrumSeries {
            record_id: r.record_id(),
            precision: r.precision,
            points: WAVELENGTHS
                .iter()
                .map(|&nm| SpectrumPoint {
                    nm,
                    value: readings.get(&nm).copied(),
                })
                .collect(),
        })
    }

    pub fn records_len(&self) -> usize {
        self.read().records.len()
    }

    /// All stored records in arrival order.
    pub fn all_records(&self) -> Vec<TestRecord> {
        self.read().records.clone()
    }

    pub fn alarms(&self) -> Vec<Alarm> {
        self.read().alarms.clone()
    }

    pub fn dispatches(&self) -> Vec<Dispatch> {
        self.read().dispatches.clone()
    }

    pub fn rejected_count(&self) -> usize {
        self.read().rejected
    }

    pub fn devices(&self) -> Vec<DeviceSummary> {
        let st = self.read();
        st.devices
            .values()
            .map(|d| DeviceSummary {
                registration: d.registration.clone(),
                record_count: d.record_count,
                last_seen: d.last_seen,
                last_color: d.last_color,
                pending_dispatches: st.pending_for(&d.registration.serial).count(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::store::MemoryStore;
    use crate::record::EnvReading;
    use crate::spectrum::Spectrum;

    fn ingestor() -> Ingestor {
        Ingestor::open(Box::new(MemoryStore::new()), IngestConfig::default())
            .unwrap()
            .with_clock(|| 42)
    }

    fn record(test_id: u64, value: f64) -> TestRecord {
        TestRecord {
            test_id,
            device_serial: "SG-1".into(),
            timestamp: 1_000 + test_id as i64,
            link_kind: LinkKind::Broker,
            request: None,
            spectrum: (&Spectrum::zeros()).into(),
            precision: Precision::Exact,
            saturated: false,
            env: EnvReading::bench(),
            predicted_value: value,
            color: TrafficLight::Negative,
            gps: None,
            diagnostic: false,
            env_violation: false,
            color_mismatch: false,
            policy_version: 1,
            correlation_id: None,
        }
    }

    #[test]
    fn warning_raises_advisory_and_flags_mismatch() {
        let ing = ingestor();
        let out = ing.ingest_record(&record(6, 50.4576)).unwrap();
        assert!(out.stored);
        assert_eq!(out.record.color, TrafficLight::Warning);
        assert!(out.record.color_mismatch);
        assert_eq!(out.alarm.unwrap().severity, AlarmSeverity::Advisory);
        assert_eq!(out.record.predicted_value, 50.4576);
    }

    #[test]
    fn idempotent_on_serial_and_test_id() {
        let ing = ingestor();
        ing.ingest_record(&record(1, 900.0)).unwrap();
        let again = ing.ingest_record(&record(1, 900.0)).unwrap();
        assert!(again.duplicate);
        assert_eq!(ing.records_len(), 1);
        assert_eq!(ing.alarms().len(), 1);
    }

    #[test]
    fn env_violation_flagged() {
        let ing = ingestor();
        let mut r = record(2, 0.0);
        r.env = EnvReading::new(30.0, 55.0, [0.0, 0.0, 1.0]);
        assert!(ing.ingest_record(&r).unwrap().record.env_violation);
    }

    #[test]
    fn diagnostics_are_not_stored() {
        let ing = ingestor();
        let mut r = record(0, 990.0);
        r.diagnostic = true;
        let out = ing.ingest_record(&r).unwrap();
        assert!(!out.stored);
        assert_eq!(ing.records_len(), 0);
    }

    #[test]
    fn rejected_and_unknown() {
        let ing = ingestor();
        let env = TelemetryEnvelope::new("SG-1", 0);
        assert!(matches!(
            ing.ingest(&env),
            Err(IngestError::SchemaViolation(_))
        ));
        let mut env = TelemetryEnvelope::new("AABB", 0);
        env.link = Some(LinkKind::Lorawan);
        assert!(matches!(
            ing.ingest(&env),
            Err(IngestError::UnknownDevice(_))
        ));
        assert_eq!(ing.rejected_count(), 2);
    }

    #[test]
    fn invalid_range() {
        let ing = ingestor();
        let f = QueryFilter {
            from: Some(5),
            to: Some(4),
            ..QueryFilter::default()
        };
        assert!(ing.query(&f, None, None).is_err());
        assert!(ing.stats(&f).is_err());
    }

    #[test]
    fn alarm_ack() {
        let ing = ingestor();
        let a = ing.ingest_record(&record(3, 900.0)).unwrap().alarm.unwrap();
        assert!(ing.ack_alarm(a.alarm_id).unwrap().acknowledged);
        assert!(ing.alarms()[0].acknowledged);
        assert!(matches!(ing.ack_alarm(99), Err(AlarmError::NotFound(99))));
    }

    #[test]
    fn dispatch_without_router() {
        let ing = ingestor();
        ing.ingest_record(&record(1, 0.0)).unwrap();
        assert!(matches!(
            ing.trigger_manual_test("SG-1", None),
            Err(DispatchError::LinkUnavailable(_))
        ));
    }
}
