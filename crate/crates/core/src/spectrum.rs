//! Spectral readings from the 17-channel VIS-NIR sensor.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channel centre wavelengths in nm, ascending.
pub const WAVELENGTHS: [u16; 17] = [
    410, 435, 460, 485, 510, 535, 560, 585, 610, 645, 705, 730, 760, 810, 860, 900, 940,
];

pub const CHANNEL_COUNT: usize = WAVELENGTHS.len();

/// The channel the shipped calibration reads.
pub const DEFAULT_CHANNEL_NM: u16 = 560;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("unsupported channel {0} nm")]
    UnsupportedChannel(u16),
    #[error("reflectance at {nm} nm must be finite and non-negative, got {value}")]
    InvalidReflectance { nm: u16, value: f64 },
    #[error("spectrum needs all {CHANNEL_COUNT} channels, missing {0} nm")]
    MissingChannel(u16),
}

/// Index of `nm` in [`WAVELENGTHS`].
pub fn channel_index(nm: u16) -> Option<usize> {
    WAVELENGTHS.binary_search(&nm).ok()
}

pub fn is_supported(nm: u16) -> bool {
    channel_index(nm).is_some()
}

/// Anything that can report a reflectance (µW/cm²) for a wavelength.
pub trait Reflectance {
    fn reflectance(&self, nm: u16) -> Option<f64>;
}

/// A complete reading: one non-negative reflectance per supported channel.
#[derive(Clone, PartialEq)]
pub struct Spectrum {
    values: [f64; CHANNEL_COUNT],
}

impl Spectrum {
    pub fn from_values(values: [f64; CHANNEL_COUNT]) -> Result<Self, SpectrumError> {
        for (nm, v) in WAVELENGTHS.iter().zip(values.iter()) {
            check_value(*nm, *v)?;
        }
        Ok(Spectrum { values })
    }

    pub fn zeros() -> Self {
        Spectrum {
            values: [0.0; CHANNEL_COUNT],
        }
    }

    pub fn values(&self) -> &[f64; CHANNEL_COUNT] {
        &self.values
    }

    pub fn get(&self, nm: u16) -> Option<f64> {
        channel_index(nm).map(|i| self.values[i])
    }

    /// Returns a copy with one channel replaced.
    pub fn with_channel(&self, nm: u16, value: f64) -> Result<Self, SpectrumError> {
        let idx = channel_index(nm).ok_or(SpectrumError::UnsupportedChannel(nm))?;
        check_value(nm, value)?;
        let mut values = self.values;
        values[idx] = value;
        Ok(Spectrum { values })
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, f64)> + '_ {
        WAVELENGTHS.iter().copied().zip(self.values.iter().copied())
    }
}

impl Reflectance for Spectrum {
    fn reflectance(&self, nm: u16) -> Option<f64> {
        self.get(nm)
    }
}

impl fmt::Debug for Spectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

impl TryFrom<BTreeMap<u16, f64>> for Spectrum {
    type Error = SpectrumError;

    fn try_from(map: BTreeMap<u16, f64>) -> Result<Self, Self::Error> {
        if let Some(nm) = map.keys().find(|nm| !is_supported(**nm)) {
            return Err(SpectrumError::UnsupportedChannel(*nm));
        }
        let mut values = [0.0; CHANNEL_COUNT];
        for (i, nm) in WAVELENGTHS.iter().enumerate() {
            values[i] = *map.get(nm).ok_or(SpectrumError::MissingChannel(*nm))?;
        }
        Spectrum::from_values(values)
    }
}

impl From<&Spectrum> for BTreeMap<u16, f64> {
    fn from(s: &Spectrum) -> Self {
        s.iter().collect()
    }
}

impl Serialize for Spectrum {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        BTreeMap::<u16, f64>::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Spectrum {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = deserialize_channel_map(deserializer)?;
        Spectrum::try_from(map).map_err(serde::de::Error::custom)
    }
}

/// Wavelength map key. JSON object keys are strings, and buffered formats
/// (internally tagged enums, untagged) do not coerce them to integers, so
/// both forms are accepted.
#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct NmKey(u16);

impl<'de> Deserialize<'de> for NmKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = NmKey;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a wavelength in nm")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<NmKey, E> {
                u16::try_from(v).map(NmKey).map_err(E::custom)
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<NmKey, E> {
                v.parse().map(NmKey).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(V)
    }
}

fn deserialize_channel_map<'de, D: serde::Deserializer<'de>>(
    deserializer: D,
) -> Result<BTreeMap<u16, f64>, D::Error> {
    let raw = BTreeMap::<NmKey, f64>::deserialize(deserializer)?;
    Ok(raw.into_iter().map(|(k, v)| (k.0, v)).collect())
}

/// How faithfully a stored spectrum reflects the sensor output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Exact,
    /// Quantized to the 0.01 LPP analog step, possibly clamped.
    Quantized,
}

/// A possibly incomplete set of channel readings, e.g. what survives a
/// constrained uplink or a CSV with only some columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct ChannelReadings(BTreeMap<u16, f64>);

impl<'de> Deserialize<'de> for ChannelReadings {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mut out = ChannelReadings::new();
        for (nm, v) in deserialize_channel_map(deserializer)? {
            out.insert(nm, v).map_err(serde::de::Error::custom)?;
        }
        Ok(out)
    }
}

impl ChannelReadings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, nm: u16, value: f64) -> Result<(), SpectrumError> {
        if !is_supported(nm) {
            return Err(SpectrumError::UnsupportedChannel(nm));
        }
        check_value(nm, value)?;
        self.0.insert(nm, value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.0.len() == CHANNEL_COUNT
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn to_spectrum(&self) -> Result<Spectrum, SpectrumError> {
        Spectrum::try_from(self.0.clone())
    }
}

impl Reflectance for ChannelReadings {
    fn reflectance(&self, nm: u16) -> Option<f64> {
        self.0.get(&nm).copied()
    }
}

impl From<&Spectrum> for ChannelReadings {
    fn from(s: &Spectrum) -> Self {
        ChannelReadings(s.into())
    }
}

impl Reflectance for BTreeMap<u16, f64> {
    fn reflectance(&self, nm: u16) -> Option<f64> {
        self.get(&nm).copied()
    }
}

fn check_value(nm: u16, value: f64) -> Result<(), SpectrumError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(SpectrumError::InvalidReflectance { nm, value })
    }
}
