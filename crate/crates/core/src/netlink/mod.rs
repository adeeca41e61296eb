//! Simulated dual-path transport.
//!
//! LoRaWAN path: device record → LPP payload → [`gateway::Gateway`] →
//! [`converter::converter_uplink`] → platform. Broker path: device record →
//! [`converter::broker_envelope`] → telemetry topic on a [`bus::Transport`].
//! Commands travel back as RPC requests on the broker path or as
//! [`downlink`] frames queued at the gateway.

pub mod bus;
pub mod converter;
pub mod downlink;
pub mod envelope;
pub mod gateway;
#[cfg(feature = "mqtt")]
pub mod mqtt;

pub use bus::{
    rpc_request_topic, rpc_response_topic, telemetry_topic, Bus, Message, Subscription, Transport,
    TransportError,
};
pub use converter::{broker_envelope, converter_uplink, DecodeFailure};
pub use downlink::{converter_downlink, DownlinkCommand, DownlinkError, RpcRequest, RpcResponse};
pub use envelope::{TelemetryEnvelope, TelemetryValue};
pub use gateway::{DownlinkFrame, Forwarded, Gateway, LinkError, LinkProfile, UplinkFrame};
