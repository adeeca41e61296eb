//! Publish/subscribe transport for the broker path.
//!
//! [`Bus`] is the in-process implementation used by tests and the fleet
//! simulator. Topic filters follow MQTT rules: `+` matches one level, a
//! trailing `#` matches any remainder.

use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

pub const TOPIC_PREFIX: &str = "v1/devices";

pub fn telemetry_topic(serial: &str) -> String {
    format!("{TOPIC_PREFIX}/{serial}/telemetry")
}

pub fn rpc_request_topic(serial: &str) -> String {
    format!("{TOPIC_PREFIX}/{serial}/rpc/request")
}

pub fn rpc_response_topic(serial: &str) -> String {
    format!("{TOPIC_PREFIX}/{serial}/rpc/response")
}

/// Serial embedded in a `v1/devices/{serial}/...` topic.
pub fn topic_serial(topic: &str) -> Option<&str> {
    let rest = topic.strip_prefix(TOPIC_PREFIX)?.strip_prefix('/')?;
    let (serial, tail) = rest.split_once('/')?;
    (!serial.is_empty() && !tail.is_empty()).then_some(serial)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid topic filter {0:?}")]
    InvalidFilter(String),
    #[error("transport closed")]
    Closed,
    #[error("transport: {0}")]
    Other(String),
}

fn valid_topic(topic: &str) -> bool {
    !topic.is_empty() && !topic.contains(['+', '#'])
}

fn valid_filter(filter: &str) -> bool {
    if filter.is_empty() {
        return false;
    }
    let levels: Vec<&str> = filter.split('/').collect();
    levels.iter().enumerate().all(|(i, l)| match *l {
        "#" => i == levels.len() - 1,
        "+" => true,
        other => !other.contains(['+', '#']),
    })
}

pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
}

/// Receiving end of a subscription. Messages arrive in publish order.
pub struct Subscription {
    rx: Receiver<Message>,
}

impl Subscription {
    pub fn new(rx: Receiver<Message>) -> Self {
        Subscription { rx }
    }

    pub fn try_recv(&self) -> Option<Message> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Message, TransportError> {
        self.rx.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Other("timed out".into()),
            RecvTimeoutError::Disconnected => TransportError::Closed,
        })
    }

    /// Everything queued right now.
    pub fn drain(&self) -> Vec<Message> {
        self.rx.try_iter().collect()
    }
}

impl Iterator for Subscription {
    type Item = Message;

    fn next(&mut self) -> Option<Message> {
        self.rx.recv().ok()
    }
}

/// A broker connection: the in-process [`Bus`] or, with the `mqtt`
/// feature, an MQTT 3.1.1 client.
pub trait Transport: Send + Sync {
    /// Returns the number of local subscribers reached, where known.
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<usize, TransportError>;
    fn subscribe(&self, filter: &str) -> Result<Subscription, TransportError>;
}

struct Subscriber {
    filter: String,
    tx: Sender<Message>,
}

/// In-process broker. Cloning shares the same subscriber table.
#[derive(Clone, Default)]
pub struct Bus {
    subscribers: Arc<Mutex<Vec<Subscriber>>>,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().expect("bus lock").len()
    }
}

impl Transport for Bus {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<usize, TransportError> {
        if !valid_topic(topic) {
            return Err(TransportError::InvalidTopic(topic.to_string()));
        }
        // Sending under the lock keeps one global publish order, so every
        // subscriber sees each topic in FIFO order.
        let mut subs = self.subscribers.lock().expect("bus lock");
        let mut delivered = 0;
        subs.retain(|s| {
            if !topic_matches(&s.filter, topic) {
                return true;
            }
            let msg = Message {
                topic: topic.to_string(),
                payload: payload.to_vec(),
            };
            match s.tx.send(msg) {
                Ok(()) => {
                    delivered += 1;
                    true
                }
                Err(_) => false,
            }
        });
        Ok(delivered)
    }

    fn subscribe(&self, filter: &str) -> Result<Subscription, TransportError> {
        if !valid_filter(filter) {
            return Err(TransportError::InvalidFilter(filter.to_string()));
        }
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().expect("bus lock").push(Subscriber {
            filter: filter.to_string(),
            tx,
        });
        Ok(Subscription::new(rx))
    }
}
