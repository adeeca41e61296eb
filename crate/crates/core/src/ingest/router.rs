use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::ingest::model::DeviceRegistration;
use crate::netlink::bus::{rpc_request_topic, Transport};
use crate::netlink::{converter_downlink, Gateway, RpcRequest};
use crate::record::LinkKind;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct RouteError(pub String);

/// Delivers platform commands to a device over its registered link.
pub trait CommandRouter: Send + Sync {
    fn route(&self, device: &DeviceRegistration, req: &RpcRequest) -> Result<(), RouteError>;
}

/// Broker devices get the request on their RPC topic; LoRaWAN devices get a
/// downlink frame queued at the gateway.
pub struct NetlinkRouter {
    transport: Arc<dyn Transport>,
    gateway: Arc<Mutex<Gateway>>,
}

impl NetlinkRouter {
    pub fn new(transport: Arc<dyn Transport>, gateway: Arc<Mutex<Gateway>>) -> Self {
        NetlinkRouter { transport, gateway }
    }
}

impl CommandRouter for NetlinkRouter {
    fn route(&self, device: &DeviceRegistration, req: &RpcRequest) -> Result<(), RouteError> {
        match device.link {
            LinkKind::Broker => {
                let body = serde_json::to_vec(req).map_err(|e| RouteError(e.to_string()))?;
                self.transport
                    .publish(&rpc_request_topic(&device.serial), &body)
                    .map_err(|e| RouteError(e.to_string()))?;
            }
            LinkKind::Lorawan => {
                let eui = device
                    .device_eui
                    .as_deref()
                    .ok_or_else(|| RouteError(format!("{} has no device EUI", device.serial)))?;
                let frame = converter_downlink(eui, req).map_err(|e| RouteError(e.to_string()))?;
                self.gateway
                    .lock()
                    .expect("gateway lock")
                    .queue_downlink(frame);
            }
        }
        Ok(())
    }
}
