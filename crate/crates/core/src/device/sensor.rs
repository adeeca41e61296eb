//! Synthetic multispectral sensor built on the calibration readings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationSample;
use crate::spectrum::{Spectrum, CHANNEL_COUNT};

/// Relative 1-σ error of the sensor's calibrated channels.
pub const DATASHEET_NOISE_REL: f64 = 0.12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("concentration must be finite and non-negative, got {0}")]
    NegativeConcentration(f64),
    #[error("noise must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("sensor model needs at least two distinct anchor concentrations")]
    TooFewAnchors,
}

/// Concentration → spectrum anchors plus a noise level and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    anchors: Vec<(f64, [f64; CHANNEL_COUNT])>,
    noise_rel: f64,
    seed: u64,
}

impl SensorModel {
    /// Builds anchors from calibration samples; replicate readings at the same
    /// concentration are averaged channel-wise.
    pub fn from_samples(
        samples: &[CalibrationSample],
        noise_rel: f64,
        seed: u64,
    ) -> Result<Self, SensorError> {
        if !noise_rel.is_finite() || noise_rel < 0.0 {
            return Err(SensorError::InvalidNoise(noise_rel));
        }
        let mut sorted: Vec<&CalibrationSample> = samples.iter().collect();
        sorted.sort_by(|a, b| a.concentration_mg_l.total_cmp(&b.concentration_mg_l));
        let mut anchors: Vec<(f64, [f64; CHANNEL_COUNT], usize)> = Vec::new();
        for s in sorted {
            match anchors.last_mut() {
                Some((c, sum, n)) if *c == s.concentration_mg_l => {
                    for (acc, v) in sum.iter_mut().zip(s.spectrum.values()) {
                        *acc += v;
                    }
                    *n += 1;
                }
                _ => anchors.push((s.concentration_mg_l, *s.spectrum.values(), 1)),
            }
        }
        if anchors.len() < 2 {
            return Err(SensorError::TooFewAnchors);
        }
        let anchors = anchors
            .into_iter()
            .map(|(c, sum, n)| (c, sum.map(|v| v / n as f64)))
            .collect();
        Ok(SensorModel {
            anchors,
            noise_rel,
            seed,
        })
    }

    /// The bundled calibration readings as anchors.
    pub fn reference(noise_rel: f64, seed: u64) -> Result<Self, SensorError> {
        Self::from_samples(&crate::reference::calibration_samples(), noise_rel, seed)
    }

    pub fn noise_rel(&self) -> f64 {
        self.noise_rel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn anchor_concentrations(&self) -> impl Iterator<Item = f64> + '_ {
        self.anchors.iter().map(|(c, _)| *c)
    }

    /// Noise-free spectrum: per-channel linear interpolation between the
    /// bracketing anchors, extrapolating the last segment beyond the top
    /// anchor and clamping at zero.
    pub fn expected_spectrum(&self, concentration: f64) -> Result<Spectrum, SensorError> {
        if !concentration.is_finite() || concentration < 0.0 {
            return Err(SensorError::NegativeConcentration(concentration));
        }
        let seg = self
            .anchors
            .windows(2)
            .position(|w| concentration <= w[1].0)
            .unwrap_or(self.anchors.len() - 2);
        let (c0, lo) = &self.anchors[seg];
        let (c1, hi) = &self.anchors[seg + 1];
        let t = (concentration - c0) / (c1 - c0);
        let mut values = [0.0; CHANNEL_COUNT];
        for (i, v) in values.iter_mut().enumerate() {
            *v = (lo[i] + t * (hi[i] - lo[i])).max(0.0);
        }
        Ok(Spectrum::from_values(values).expect("interpolated values are non-negative"))
    }

    pub fn simulator(&self) -> SpectrumSimulator {
        SpectrumSimulator {
            model: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(self.seed),
        }
    }
}

/// A seeded sensor instance. Successive reads draw fresh noise.
#[derive(Debug, Clone)]
pub struct SpectrumSimulator {
    model: SensorModel,
    rng: ChaCha8Rng,
}

impl SpectrumSimulator {
    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    /// Expected spectrum with independent multiplicative noise
    /// `(1 + N(0, noise_rel))` per channel, clamped at zero.
    pub fn simulate_spectrum(&mut self, concentration: f64) -> Result<Spectrum, SensorError> {
        let base = self.model.expected_spectrum(concentration)?;
        if self.model.noise_rel == 0.0 {
            return Ok(base);
        }
        let normal = Normal::new(0.0, self.model.noise_rel).expect("validated noise");
        let mut values = *base.values();
        for v in values.iter_mut() {
            *v = (*v * (1.0 + normal.sample(&mut self.rng))).max(0.0);
        }
        Ok(Spectrum::from_values(values).expect("clamped values are non-negative"))
    }
}

/// One-shot helper: `SensorModel` → seeded simulator → one reading.
pub fn simulate_spectrum(model: &SensorModel, concentration: f64) -> Result<Spectrum, SensorError> {
    model.simulator().simulate_spectrum(concentration)
}
