//! Downlink converter and the matching device-side parser.
//!
//! Command format: one opcode byte followed by optional big-endian
//! arguments, sent on fport 10.
//!
//! | opcode | method       | arguments                                             |
//! |--------|--------------|-------------------------------------------------------|
//! | `0x01` | `manualTest` | none                                                  |
//! | `0x02` | `setPolicy`  | `negative_upper`, `positive_lower`, `version`; each i32 ×100 |

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::device::DeviceCommand;
use crate::netlink::gateway::{DownlinkFrame, LinkError};
use crate::traffic_light::TrafficLightPolicy;

pub const COMMAND_PORT: u8 = 10;
pub const OP_MANUAL_TEST: u8 = 0x01;
pub const OP_SET_POLICY: u8 = 0x02;

/// Platform command as carried on the RPC request topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcRequest {
    pub method: String,
    #[serde(default)]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl RpcRequest {
    pub fn manual_test(id: Option<String>) -> Self {
        RpcRequest {
            method: "manualTest".into(),
            params: Value::Null,
            id,
        }
    }

    pub fn set_policy(policy: &TrafficLightPolicy) -> Self {
        RpcRequest {
            method: "setPolicy".into(),
            params: serde_json::json!({
                "negative_upper": policy.negative_upper,
                "positive_lower": policy.positive_lower,
                "version": policy.version,
            }),
            id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RpcResponse {
    Ok { id: Option<String>, result: Value },
    Error { id: Option<String>, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DownlinkError {
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("bad params for {method}: {message}")]
    BadParams { method: String, message: String },
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("opcode 0x{opcode:02x} expects {expected} bytes, got {actual}")]
    BadLength {
        opcode: u8,
        expected: usize,
        actual: usize,
    },
    #[error("empty downlink")]
    Empty,
    #[error(transparent)]
    Link(#[from] LinkError),
}

/// A decoded downlink, before the device applies it.
#[derive(Debug, Clone, PartialEq)]
pub enum DownlinkCommand {
    ManualTest,
    SetPolicy {
        negative_upper: f64,
        positive_lower: f64,
        version: u32,
    },
}

impl DownlinkCommand {
    pub fn from_rpc(req: &RpcRequest) -> Result<Self, DownlinkError> {
        match req.method.as_str() {
            "manualTest" => Ok(DownlinkCommand::ManualTest),
            "setPolicy" => {
                let bad = |message: &str| DownlinkError::BadParams {
                    method: req.method.clone(),
                    message: message.into(),
                };
                let num = |k: &str| {
                    req.params
                        .get(k)
                        .and_then(Value::as_f64)
                        .ok_or_else(|| bad(&format!("missing number {k}")))
                };
                let version = match req.params.get("version") {
                    None => 1,
                    Some(v) => v
                        .as_u64()
                        .and_then(|v| u32::try_from(v).ok())
                        .ok_or_else(|| bad("version must be a non-negative integer"))?,
                };
                let cmd = DownlinkCommand::SetPolicy {
                    negative_upper: num("negative_upper")?,
                    positive_lower: num("positive_lower")?,
                    version,
                };
                cmd.encode().map_err(|e| bad(&e.to_string()))?;
                Ok(cmd)
            }
            other => Err(DownlinkError::UnknownCommand(other.to_string())),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, DownlinkError> {
        match *self {
            DownlinkCommand::ManualTest => Ok(vec![OP_MANUAL_TEST]),
            DownlinkCommand::SetPolicy {
                negative_upper,
                positive_lower,
                version,
            } => {
                let mut out = vec![OP_SET_POLICY];
                for v in [negative_upper, positive_lower, f64::from(version)] {
                    let scaled = (v * 100.0).round();
                    if !scaled.is_finite()
                        || scaled < f64::from(i32::MIN)
                        || scaled > f64::from(i32::MAX)
                    {
                        return Err(DownlinkError::BadParams {
                            method: "setPolicy".into(),
                            message: format!("{v} does not fit a ×100 i32"),
                        });
                    }
                    out.extend_from_slice(&(scaled as i32).to_be_bytes());
                }
                Ok(out)
            }
        }
    }

    /// Device-side parser for the command bytes.
    pub fn parse(bytes: &[u8]) -> Result<Self, DownlinkError> {
        let (&op, args) = bytes.split_first().ok_or(DownlinkError::Empty)?;
        let expect = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(DownlinkError::BadLength {
                    opcode: op,
                    expected: n + 1,
                    actual: bytes.len(),
                })
            }
        };
        match op {
            OP_MANUAL_TEST => {
                expect(0)?;
                Ok(DownlinkCommand::ManualTest)
            }
            OP_SET_POLICY => {
                expect(12)?;
                let word = |i: usize| {
                    let b: [u8; 4] = args[i * 4..i * 4 + 4].try_into().expect("4 bytes");
                    f64::from(i32::from_be_bytes(b)) / 100.0
                };
                let version = word(2);
                if version < 0.0 || version.fract() != 0.0 {
                    return Err(DownlinkError::BadParams {
                        method: "setPolicy".into(),
                        message: format!("version {version} is not a whole number"),
                    });
                }
                Ok(DownlinkCommand::SetPolicy {
                    negative_upper: word(0),
                    positive_lower: word(1),
                    version: version as u32,
                })
            }
            other => Err(DownlinkError::UnknownOpcode(other)),
        }
    }

    /// The device command this downlink asks for. Policy updates keep the
    /// device's instrument name.
    pub fn into_device_command(
        self,
        instrument: &str,
        correlation_id: Option<String>,
    ) -> Result<DeviceCommand, DownlinkError> {
        match self {
            DownlinkCommand::ManualTest => Ok(DeviceCommand::ManualTestTrigger {
                correlation_id,
                request: None,
            }),
            DownlinkCommand::SetPolicy {
                negative_upper,
                positive_lower,
                version,
            } => TrafficLightPolicy::new(instrument, negative_upper, positive_lower)
                .map(|p| DeviceCommand::SetPolicy(p.with_version(version)))
                .map_err(|e| DownlinkError::BadParams {
                    method: "setPolicy".into(),
                    message: e.to_string(),
                }),
        }
    }
}

/// Platform command to a LoRaWAN downlink frame.
pub fn converter_downlink(
    device_eui: &str,
    req: &RpcRequest,
) -> Result<DownlinkFrame, DownlinkError> {
    let payload = DownlinkCommand::from_rpc(req)?.encode()?;
    Ok(DownlinkFrame::new(device_eui, COMMAND_PORT, payload)?)
}
