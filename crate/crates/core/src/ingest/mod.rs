//! Platform core: telemetry ingestion, persistence, alarms, queries and
//! command dispatch.

pub mod config;
pub mod http;
pub mod model;
pub mod router;
pub mod schema;
pub mod service;
pub mod store;

use std::sync::Arc;
use std::thread::{self, JoinHandle};

pub use model::{
    Alarm, AlarmSeverity, Cursor, DeviceRegistration, DeviceSummary, Dispatch, LogEntry, Page,
    QueryFilter, Stats,
};
pub use router::{CommandRouter, NetlinkRouter, RouteError};
pub use service::{
    AlarmError, DispatchError, IngestConfig, IngestError, IngestOutcome, Ingestor, QueryError,
    SpectrumSeries,
};
pub use store::{JsonlStore, MemoryStore, Store, StoreError};

use crate::netlink::bus::{Transport, TransportError};
use crate::netlink::TelemetryEnvelope;

pub const TELEMETRY_FILTER: &str = "v1/devices/+/telemetry";

/// Subscribes to broker telemetry and ingests each envelope on a background
/// thread. The thread ends when the transport drops the subscription.
pub fn spawn_telemetry_bridge(
    transport: &dyn Transport,
    ingestor: Arc<Ingestor>,
) -> Result<JoinHandle<()>, TransportError> {
    let sub = transport.subscribe(TELEMETRY_FILTER)?;
    Ok(thread::spawn(move || {
        for msg in sub {
            match serde_json::from_slice::<TelemetryEnvelope>(&msg.payload) {
                Ok(env) => {
                    if let Err(e) = ingestor.ingest(&env) {
                        tracing::warn!(topic = %msg.topic, error = %e, "telemetry not ingested");
                    }
                }
                Err(e) => {
                    tracing::warn!(topic = %msg.topic, error = %e, "telemetry is not an envelope")
                }
            }
        }
    }))
}
