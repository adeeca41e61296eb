//! Software stand-in for the field instrument.

pub mod config;
pub mod control;
pub mod env;
pub mod machine;
pub mod sensor;

pub use config::{DeviceConfig, LinkConfig};
pub use control::{ControlChannel, ControlRequest};
pub use env::{env_gate, EnvLimits, EnvViolation};
pub use machine::{
    CommandAck, CommandError, Device, DeviceCommand, DeviceError, DeviceEvent, DeviceState,
    EventKind, FaultReason, LinkProbe, Mode, Phase, Severity, SimTime, StartError,
};
pub use sensor::{simulate_spectrum, SensorModel, SpectrumSimulator};
