//! Field screening of glyphosate in water with a low-cost VIS-NIR sensor.
//!
//! The crate covers the whole chain: single-channel calibration and
//! traffic-light classification ([`calibration`], [`traffic_light`]), the
//! compact LPP uplink format ([`lpp`], [`uplink`]), an emulated instrument
//! ([`device`]), a simulated dual-path transport ([`netlink`]) and the
//! platform's ingestion service ([`ingest`]).

pub mod calibration;
pub mod cli;
pub mod csvio;
pub mod device;
pub mod ingest;
pub mod lpp;
pub mod netlink;
pub mod record;
pub mod reference;
pub mod replay;
pub mod sim;
pub mod spectrum;
pub mod traffic_light;
pub mod uplink;

pub use calibration::{
    fit_ols, predict, rank_channels, CalibrationModel, CalibrationSample, ChannelRanking,
};
pub use record::{EnvReading, LinkKind, TestRecord, TestRequest};
pub use spectrum::{ChannelReadings, Spectrum, WAVELENGTHS};
pub use traffic_light::{classify, TrafficLight, TrafficLightPolicy};
