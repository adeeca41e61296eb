//! LoRaWAN-style gateway with injectable loss and delay.
//!
//! Join procedures, MIC checks and duty-cycle accounting are not modelled;
//! the gateway and network server collapse into one component that
//! forwards uplinks, deduplicates by frame counter and queues downlinks.

use std::collections::{HashMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uplink::LINK_MAX_PAYLOAD;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("payload of {size} bytes exceeds the {max}-byte limit")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("invalid link profile: {0}")]
    InvalidProfile(String),
    #[error("fport {0} outside 1..=223")]
    InvalidPort(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UplinkFrame {
    pub device_eui: String,
    pub fport: u8,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub counter: u32,
    /// Unix milliseconds at the gateway.
    pub received_at: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownlinkFrame {
    pub device_eui: String,
    pub fport: u8,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
}

impl DownlinkFrame {
    pub fn new(
        device_eui: impl Into<String>,
        fport: u8,
        payload: Vec<u8>,
    ) -> Result<Self, LinkError> {
        if payload.len() > LINK_MAX_PAYLOAD {
            return Err(LinkError::PayloadTooLarge {
                size: payload.len(),
                max: LINK_MAX_PAYLOAD,
            });
        }
        if !(1..=223).contains(&fport) {
            return Err(LinkError::InvalidPort(fport));
        }
        Ok(DownlinkFrame {
            device_eui: device_eui.into(),
            fport,
            payload,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub loss_probability: f64,
    /// Inclusive delay range in simulated milliseconds.
    pub delay_ms: (u64, u64),
    pub max_payload: usize,
}

impl Default for LinkProfile {
    fn default() -> Self {
        LinkProfile {
            loss_probability: 0.0,
            delay_ms: (0, 0),
            max_payload: LINK_MAX_PAYLOAD,
        }
    }
}

impl LinkProfile {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(LinkError::InvalidProfile(format!(
                "loss_probability {} outside [0, 1]",
                self.loss_probability
            )));
        }
        if self.delay_ms.0 > self.delay_ms.1 {
            return Err(LinkError::InvalidProfile("delay range inverted".into()));
        }
        if self.max_payload == 0 || self.max_payload > LINK_MAX_PAYLOAD {
            return Err(LinkError::InvalidProfile(format!(
                "max_payload must be in 1..={LINK_MAX_PAYLOAD}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Forwarded {
    /// `frame.received_at` carries the arrival time including delay.
    Delivered {
        frame: UplinkFrame,
    },
    Dropped {
        device_eui: String,
        counter: u32,
    },
    /// Counter not above the last delivered one; discarded.
    Duplicate {
        device_eui: String,
        counter: u32,
    },
}

pub struct Gateway {
    profile: LinkProfile,
    rng: ChaCha8Rng,
    last_counter: HashMap<String, u32>,
    downlinks: HashMap<String, VecDeque<DownlinkFrame>>,
    log: Vec<Forwarded>,
}

impl Gateway {
    pub fn new(profile: LinkProfile, seed: u64) -> Result<Self, LinkError> {
        profile.validate()?;
        Ok(Gateway {
            profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_counter: HashMap::new(),
            downlinks: HashMap::new(),
            log: Vec::new(),
        })
    }

    pub fn profile(&self) -> &LinkProfile {
        &self.profile
    }

    /// Every forwarding outcome so far, including drops and duplicates.
    pub fn log(&self) -> &[Forwarded] {
        &self.log
    }

    /// Applies the link profile to one uplink. Oversized payloads are refused
    /// before transmission; loss and delay are drawn from the seeded
    /// generator for every transmitted frame.
    pub fn forward(&mut self, mut frame: UplinkFrame) -> Result<Forwarded, LinkError> {
        if frame.payload.len() > self.profile.max_payload {
            return Err(LinkError::PayloadTooLarge {
                size: frame.payload.len(),
                max: self.profile.max_payload,
            });
        }
        if !(1..=223).contains(&frame.fport) {
            return Err(LinkError::InvalidPort(frame.fport));
        }
        let lost = self.rng.random::<f64>() < self.profile.loss_probability;
        let (lo, hi) = self.profile.delay_ms;
        let delay = self.rng.random_range(lo..=hi);
        let outcome = if lost {
            Forwarded::Dropped {
                device_eui: frame.device_eui,
                counter: frame.counter,
            }
        } else {
            let last = self.last_counter.get(&frame.device_eui).copied();
            if last.is_some_and(|l| frame.counter <= l) {
                tracing::debug!(eui = %frame.device_eui, counter = frame.counter, "duplicate uplink discarded");
                Forwarded::Duplicate {
                    device_eui: frame.device_eui,
                    counter: frame.counter,
                }
            } else {
                self.last_counter
                    .insert(frame.device_eui.clone(), frame.counter);
                frame.received_at += delay as i64;
                Forwarded::Delivered { frame }
            }
        };
        self.log.push(outcome.clone());
        Ok(outcome)
    }

    pub fn queue_downlink(&mut self, frame: DownlinkFrame) {
        self.downlinks
            .entry(frame.device_eui.clone())
            .or_default()
            .push_back(frame);
    }

    /// Next queued downlink for a device, oldest first.
    pub fn pop_downlink(&mut self, device_eui: &str) -> Option<DownlinkFrame> {
        self.downlinks.get_mut(device_eui)?.pop_front()
    }

    pub fn pending_downlinks(&self, device_eui: &str) -> usize {
        self.downlinks.get(device_eui).map_or(0, VecDeque::len)
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        let hex: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
        s.serialize_str(&hex)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.len() % 2 != 0 {
            return Err(serde::de::Error::custom("odd-length hex"));
        }
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(counter: u32, len: usize) -> UplinkFrame {
        UplinkFrame {
            device_eui: "70B3D57ED0000001".into(),
            fport: 2,
            payload: vec![0; len],
            counter,
            received_at: 1_000,
        }
    }

    fn delivered(outcomes: &[Forwarded]) -> Vec<u32> {
        outcomes
            .iter()
            .filter_map(|o| match o {
                Forwarded::Delivered { frame } => Some(frame.counter),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn lossless_delivers_everything_in_order() {
        let mut gw = Gateway::new(LinkProfile::default(), 1).unwrap();
        let out: Vec<_> = (1..=50)
            .map(|c| gw.forward(frame(c, 20)).unwrap())
            .collect();
        assert_eq!(delivered(&out), (1..=50).collect::<Vec<_>>());
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let profile = LinkProfile {
            loss_probability: 1.0,
            ..LinkProfile::default()
        };
        let mut gw = Gateway::new(profile, 1).unwrap();
        let out: Vec<_> = (1..=50)
            .map(|c| gw.forward(frame(c, 20)).unwrap())
            .collect();
        assert!(delivered(&out).is_empty());
    }

    #[test]
    fn oversized_payload_rejected() {
        let mut gw = Gateway::new(LinkProfile::default(), 1).unwrap();
        assert_eq!(
            gw.forward(frame(1, 243)),
            Err(LinkError::PayloadTooLarge {
                size: 243,
                max: 242
            })
        );
        assert!(gw.forward(frame(1, 242)).is_ok());
        assert!(gw.log().len() == 1);
    }

    #[test]
    fn duplicates_discarded() {
        let mut gw = Gateway::new(LinkProfile::default(), 1).unwrap();
        gw.forward(frame(5, 20)).unwrap();
        assert!(matches!(
            gw.forward(frame(5, 20)).unwrap(),
            Forwarded::Duplicate { counter: 5, .. }
        ));
        assert!(matches!(
            gw.forward(frame(4, 20)).unwrap(),
            Forwarded::Duplicate { .. }
        ));
        assert!(matches!(
            gw.forward(frame(6, 20)).unwrap(),
            Forwarded::Delivered { .. }
        ));
    }

    #[test]
    fn seeded_loss_is_reproducible() {
        let profile = LinkProfile {
            loss_probability: 0.4,
            delay_ms: (10, 500),
            ..LinkProfile::default()
        };
        let run = |seed| {
            let mut gw = Gateway::new(profile.clone(), seed).unwrap();
            (1..=200)
                .map(|c| gw.forward(frame(c, 20)).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
        for o in run(9) {
            if let Forwarded::Delivered { frame } = o {
                assert!((1_010..=1_500).contains(&frame.received_at));
            }
        }
    }

    #[test]
    fn profile_validation() {
        let bad = LinkProfile {
            loss_probability: 1.5,
            ..LinkProfile::default()
        };
        assert!(Gateway::new(bad, 0).is_err());
        assert!(DownlinkFrame::new("e", 10, vec![0; 243]).is_err());
        assert!(DownlinkFrame::new("e", 0, vec![1]).is_err());
    }

    #[test]
    fn downlink_queue_is_fifo() {
        let mut gw = Gateway::new(LinkProfile::default(), 1).unwrap();
        gw.queue_downlink(DownlinkFrame::new("a", 10, vec![1]).unwrap());
        gw.queue_downlink(DownlinkFrame::new("a", 10, vec![2]).unwrap());
        assert_eq!(gw.pending_downlinks("a"), 2);
        assert_eq!(gw.pop_downlink("a").unwrap().payload, vec![1]);
        assert_eq!(gw.pop_downlink("a").unwrap().payload, vec![2]);
        assert!(gw.pop_downlink("a").is_none());
    }
}
