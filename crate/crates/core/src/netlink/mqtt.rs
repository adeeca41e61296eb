//! MQTT 3.1.1 transport for deployments with an external broker.

use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::Duration;

use rumqttc::{Client, Event, MqttOptions, Packet, QoS};
use serde::{Deserialize, Serialize};

use crate::netlink::bus::{topic_matches, Message, Subscription, Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqttSettings {
    pub host: String,
    pub port: u16,
    pub client_id: String,
    #[serde(default)]
    pub tls: bool,
    #[serde(default)]
    pub username: Option<String>,
    #[serde(default)]
    pub password: Option<String>,
}

type Routes = Arc<Mutex<Vec<(String, mpsc::Sender<Message>)>>>;

pub struct MqttTransport {
    client: Client,
    routes: Routes,
}

impl MqttTransport {
    /// Starts the network loop on a background thread. Connection errors
    /// are logged and retried by the loop.
    pub fn connect(settings: &MqttSettings) -> Self {
        let mut opts = MqttOptions::new(&settings.client_id, &settings.host, settings.port);
        opts.set_keep_alive(Duration::from_secs(30));
        if let (Some(u), Some(p)) = (&settings.username, &settings.password) {
            opts.set_credentials(u, p);
        }
        if settings.tls {
            opts.set_transport(rumqttc::Transport::tls_with_default_config());
        }
        let (client, mut connection) = Client::new(opts, 64);
        let routes: Routes = Arc::default();
        let loop_routes = Arc::clone(&routes);
        thread::spawn(move || {
            for event in connection.iter() {
                match event {
                    Ok(Event::Incoming(Packet::Publish(p))) => {
                        let mut routes = loop_routes.lock().expect("route lock");
                        routes.retain(|(filter, tx)| {
                            !topic_matches(filter, &p.topic)
                                || tx
                                    .send(Message {
                                        topic: p.topic.clone(),
                                        payload: p.payload.to_vec(),
                                    })
                                    .is_ok()
                        });
                    }
                    Ok(_) => {}
                    Err(e) => {
                        tracing::warn!(error = %e, "mqtt connection error");
                        thread::sleep(Duration::from_secs(1));
                    }
                }
            }
        });
        MqttTransport { client, routes }
    }
}

impl Transport for MqttTransport {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<usize, TransportError> {
        self.client
            .publish(topic, QoS::AtLeastOnce, false, payload.to_vec())
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(0)
    }

    fn subscribe(&self, filter: &str) -> Result<Subscription, TransportError> {
        self.client
            .subscribe(filter, QoS::AtLeastOnce)
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let (tx, rx) = mpsc::channel();
        self.routes
            .lock()
            .expect("route lock")
            .push((filter.to_string(), tx));
        Ok(Subscription::new(rx))
    }
}
