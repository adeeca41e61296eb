//! Local control channel: newline-delimited JSON requests and responses,
//! standing in for the phone app's short-range link.
//!
//! Requests look like `{"cmd":"startTest","request":{...},"env":{...}}`.
//! Responses are `{"ok":true,"data":...}` or
//! `{"ok":false,"error":{"code":"busy","message":"..."}}`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::device::config::LinkConfig;
use crate::device::machine::{
    CommandError, Device, DeviceCommand, DeviceError, LinkProbe, Mode, StartError,
};
use crate::record::{EnvReading, TestRequest};
use crate::traffic_light::TrafficLightPolicy;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "camelCase")]
pub enum ControlRequest {
    Status,
    StartTest {
        request: TestRequest,
        #[serde(default)]
        env: Option<EnvReading>,
    },
    ManualTest {
        #[serde(default)]
        correlation_id: Option<String>,
        #[serde(default)]
        request: Option<TestRequest>,
    },
    SetLink {
        link: LinkConfig,
    },
    SetPolicy {
        policy: TrafficLightPolicy,
    },
    SetMode {
        mode: Mode,
    },
    LoadSample {
        concentration_mg_l: f64,
    },
    SetAmbient {
        env: EnvReading,
    },
    ManualRead,
    SelfTest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlError {
    pub code: &'static str,
    pub message: String,
}

impl ControlError {
    fn new(code: &'static str, message: impl ToString) -> Self {
        ControlError {
            code,
            message: message.to_string(),
        }
    }
}

fn start_error(e: StartError) -> ControlError {
    let code = match &e {
        StartError::Busy => "busy",
        StartError::WrongMode => "wrong_mode",
        StartError::Faulted => "fault",
        StartError::NoSample => "no_sample",
        StartError::InvalidRequest => "invalid_request",
        StartError::EnvRejected { .. } => "env_rejected",
    };
    ControlError::new(code, e)
}

fn command_error(e: CommandError) -> ControlError {
    match e {
        CommandError::Busy => ControlError::new("busy", "a test is already in flight"),
        CommandError::InvalidConfig(m) => ControlError::new("invalid_config", m),
        CommandError::Persist(m) => ControlError::new("persist_failed", m),
        CommandError::Start(s) => start_error(s),
    }
}

fn device_error(e: DeviceError) -> ControlError {
    let code = match &e {
        DeviceError::WrongMode(_) => "wrong_mode",
        DeviceError::WrongPhase(_) => "busy",
        DeviceError::NoSample => "no_sample",
        _ => "device_error",
    };
    ControlError::new(code, e)
}

/// Serves one device over the line protocol and forwards device events as
/// push lines.
pub struct ControlChannel<'a> {
    probe: &'a dyn LinkProbe,
    cursor: usize,
}

impl<'a> ControlChannel<'a> {
    pub fn new(probe: &'a dyn LinkProbe) -> Self {
        ControlChannel { probe, cursor: 0 }
    }

    pub fn handle(&self, device: &mut Device, req: ControlRequest) -> Result<Value, ControlError> {
        match req {
            ControlRequest::Status => Ok(json!({
                "serial": device.serial(),
                "state": device.state(),
                "link": device.config().link.kind(),
            })),
            ControlRequest::StartTest { request, env } => {
                let env = env.unwrap_or_else(|| device.ambient());
                device
                    .start_test(request, env)
                    .map(|test_id| json!({ "test_id": test_id }))
                    .map_err(start_error)
            }
            ControlRequest::ManualTest {
                correlation_id,
                request,
            } => device
                .handle_command(DeviceCommand::ManualTestTrigger {
                    correlation_id,
                    request,
                })
                .map(|ack| serde_json::to_value(ack).expect("ack serializes"))
                .map_err(command_error),
            ControlRequest::SetLink { link } => device
                .handle_command(DeviceCommand::SetLink(link))
                .map(|ack| serde_json::to_value(ack).expect("ack serializes"))
                .map_err(command_error),
            ControlRequest::SetPolicy { policy } => device
                .handle_command(DeviceCommand::SetPolicy(policy))
                .map(|ack| serde_json::to_value(ack).expect("ack serializes"))
                .map_err(command_error),
            ControlRequest::SetMode { mode } => device
                .set_mode(mode)
                .map(|_| json!({ "mode": mode }))
                .map_err(device_error),
            ControlRequest::LoadSample { concentration_mg_l } => device
                .load_sample(concentration_mg_l)
                .map(|_| json!({ "loaded": concentration_mg_l }))
                .map_err(device_error),
            ControlRequest::SetAmbient { env } => {
                device.set_ambient(env);
                Ok(json!({ "env": env }))
            }
            ControlRequest::ManualRead => device
                .manual_read()
                .map(|s| json!({ "spectrum": s }))
                .map_err(device_error),
            ControlRequest::SelfTest => device
                .self_test(self.probe)
                .map(|r| serde_json::to_value(r).expect("report serializes"))
                .map_err(device_error),
        }
    }

    /// Handles one request line and returns one response line (no newline).
    pub fn handle_line(&self, device: &mut Device, line: &str) -> String {
        let result = serde_json::from_str::<ControlRequest>(line)
            .map_err(|e| ControlError::new("bad_request", e))
            .and_then(|req| self.handle(device, req));
        let v = match result {
            Ok(data) => json!({ "ok": true, "data": data }),
            Err(err) => json!({ "ok": false, "error": err }),
        };
        v.to_string()
    }

    /// Device events emitted since the last poll, as push lines.
    pub fn poll_events(&mut self, device: &Device) -> Vec<String> {
        let events = &device.events()[self.cursor.min(device.events().len())..];
        self.cursor = device.events().len();
        events
            .iter()
            .map(|e| json!({ "push": e }).to_string())
            .collect()
    }
}
