//! Single-channel least-squares calibration and channel ranking.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectrum::{self, Reflectance, Spectrum};

/// Instrument label for the low-cost handheld sensor.
pub const HANDHELD: &str = "handheld";
/// Instrument label for the benchtop laboratory spectrometer.
pub const LAB: &str = "lab";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("all reflectance values at {0} nm are equal")]
    DegenerateX(u16),
    #[error("unsupported channel {0} nm")]
    UnsupportedChannel(u16),
    #[error("reading has no value for {0} nm")]
    MissingChannel(u16),
    #[error("channel {0} nm has zero variance")]
    ZeroVariance(u16),
    #[error("all concentrations are equal")]
    ConstantConcentration,
    #[error("no candidate channels given")]
    NoCandidates,
    #[error("concentration must be finite and non-negative, got {0}")]
    InvalidConcentration(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub sample_id: String,
    pub concentration_mg_l: f64,
    pub spectrum: Spectrum,
}

impl CalibrationSample {
    pub fn new(
        sample_id: impl Into<String>,
        concentration_mg_l: f64,
        spectrum: Spectrum,
    ) -> Result<Self, CalibrationError> {
        if !concentration_mg_l.is_finite() || concentration_mg_l < 0.0 {
            return Err(CalibrationError::InvalidConcentration(concentration_mg_l));
        }
        Ok(CalibrationSample {
            sample_id: sample_id.into(),
            concentration_mg_l,
            spectrum,
        })
    }
}

/// `value = intercept + slope × reflectance(channel_nm)`.
///
/// `r_squared` is `None` for models shipped as published constants, whose
/// training data is not available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub instrument: String,
    pub channel_nm: u16,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: Option<f64>,
    pub n_samples: usize,
}

impl CalibrationModel {
    /// Handheld sensor constants at 560 nm.
    pub fn handheld() -> Self {
        CalibrationModel {
            instrument: HANDHELD.to_string(),
            channel_nm: 560,
            slope: 8.0988,
            intercept: -1318.2455,
            r_squared: None,
            n_samples: 12,
        }
    }

    /// Laboratory spectrometer constants at 560 nm.
    pub fn lab() -> Self {
        CalibrationModel {
            instrument: LAB.to_string(),
            channel_nm: 560,
            slope: 6.1200,
            intercept: -791.9610,
            r_squared: None,
            n_samples: 12,
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        if !spectrum::is_supported(self.channel_nm) {
            return Err(CalibrationError::UnsupportedChannel(self.channel_nm));
        }
        if self.n_samples < 2 {
            return Err(CalibrationError::TooFewSamples {
                needed: 2,
                got: self.n_samples,
            });
        }
        Ok(())
    }

    pub fn predict<R: Reflectance + ?Sized>(&self, reading: &R) -> Result<f64, CalibrationError> {
        predict(self, reading)
    }

    pub fn predict_at(&self, reflectance: f64) -> f64 {
        self.intercept + self.slope * reflectance
    }
}

/// Ordinary least squares of concentration on the reflectance at `channel`.
pub fn fit_ols(
    samples: &[CalibrationSample],
    channel: u16,
    instrument: &str,
) -> Result<CalibrationModel, CalibrationError> {
    let idx =
        spectrum::channel_index(channel).ok_or(CalibrationError::UnsupportedChannel(channel))?;
    if samples.len() < 2 {
        return Err(CalibrationError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.spectrum.values()[idx]).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.concentration_mg_l).collect();
    let line = fit_line(&xs, &ys).ok_or(CalibrationError::DegenerateX(channel))?;
    Ok(CalibrationModel {
        instrument: instrument.to_string(),
        channel_nm: channel,
        slope: line.slope,
        intercept: line.intercept,
        r_squared: Some(line.r_squared),
        n_samples: samples.len(),
    })
}

pub(crate) struct Line {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Two-pass centred OLS. `None` when all `xs` are equal.
pub(crate) fn fit_line(xs: &[f64], ys: &[f64]) -> Option<Line> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        // y constant: the horizontal line fits exactly
        1.0
    } else {
        ((sxy * sxy) / (sxx * syy)).clamp(0.0, 1.0)
    };
    Some(Line {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

pub fn predict<R: Reflectance + ?Sized>(
    model: &CalibrationModel,
    reading: &R,
) -> Result<f64, CalibrationError> {
    let x = reading
        .reflectance(model.channel_nm)
        .ok_or(CalibrationError::MissingChannel(model.channel_nm))?;
    Ok(model.predict_at(x))
}

/// Candidate channels ordered by |Pearson r| against concentration,
/// strongest first, ties to the lower wavelength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    pub entries: Vec<ChannelScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel_nm: u16,
    pub r: f64,
}

impl ChannelRanking {
    pub fn best(&self) -> Option<ChannelScore> {
        self.entries.first().copied()
    }

    pub fn score(&self, channel_nm: u16) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.channel_nm == channel_nm)
            .map(|e| e.r)
    }
}

pub fn rank_channels(
    samples: &[CalibrationSample],
    candidates: &[u16],
) -> Result<ChannelRanking, CalibrationError> {
    if samples.len() < 3 {
        return Err(CalibrationError::TooFewSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    if candidates.is_empty() {
        return Err(CalibrationError::NoCandidates);
    }
    let mut wanted: Vec<u16> = Vec::with_capacity(candidates.len());
    for &c in candidates {
        if !spectrum::is_supported(c) {
            return Err(CalibrationError::UnsupportedChannel(c));
        }
        if !wanted.contains(&c) {
            wanted.push(c);
        }
    }
    let ys: Vec<f64> = samples.iter().map(|s| s.concentration_mg_l).collect();
    let mut entries = Vec::with_capacity(wanted.len());
    for nm in wanted {
        let xs: Vec<f64> = samples
            .iter()
            .map(|s| s.spectrum.get(nm).expect("supported channel"))
            .collect();
        let r = pearson(&xs, &ys).map_err(|which| match which {
            Constant::X => CalibrationError::ZeroVariance(nm),
            Constant::Y => CalibrationError::ConstantConcentration,
        })?;
        entries.push(ChannelScore { channel_nm: nm, r });
    }
    entries.sort_by(|a, b| {
        b.r.abs()
            .total_cmp(&a.r.abs())
            .then(a.channel_nm.cmp(&b.channel_nm))
    });
    Ok(ChannelRanking { entries })
}

enum Constant {
    X,
    Y,
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, Constant> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Constant::X);
    }
    if syy == 0.0 {
        return Err(Constant::Y);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::CHANNEL_COUNT;

    fn sample(conc: f64, x560: f64) -> CalibrationSample {
        let spectrum = Spectrum::from_values([1.0; CHANNEL_COUNT])
            .unwrap()
            .with_channel(560, x560)
            .unwrap();
        CalibrationSample::new("s", conc, spectrum).unwrap()
    }

    #[test]
    fn exact_line_through_two_points() {
        let m = fit_ols(&[sample(0.0, 0.0), sample(1.0, 1.0)], 560, "t").unwrap();
        assert!((m.slope - 1.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
        assert_eq!(m.r_squared, Some(1.0));
        assert_eq!(m.n_samples, 2);
    }

    #[test]
    fn error_paths() {
        assert_eq!(
            fit_ols(&[sample(1.0, 2.0)], 560, "t"),
            Err(CalibrationError::TooFewSamples { needed: 2, got: 1 })
        );
        assert_eq!(
            fit_ols(&[sample(1.0, 2.0), sample(3.0, 2.0)], 560, "t"),
            Err(CalibrationError::DegenerateX(560))
        );
        assert_eq!(
            fit_ols(&[sample(1.0, 2.0), sample(3.0, 4.0)], 680, "t"),
            Err(CalibrationError::UnsupportedChannel(680))
        );
        assert!(CalibrationSample::new("s", -1.0, Spectrum::zeros()).is_err());
    }

    #[test]
    fn predict_reference_rows() {
        let mut r = crate::spectrum::ChannelReadings::new();
        r.insert(560, 90.0).unwrap();
        assert!((CalibrationModel::handheld().predict(&r).unwrap() - -589.3504).abs() < 0.05);
        r.insert(560, 409.0).unwrap();
        assert!((CalibrationModel::lab().predict(&r).unwrap() - 1711.118).abs() < 0.01);
        r.insert(560, 0.0).unwrap();
        assert_eq!(
            CalibrationModel::handheld().predict(&r).unwrap(),
            CalibrationModel::handheld().intercept
        );
        let empty = crate::spectrum::ChannelReadings::new();
        assert_eq!(
            CalibrationModel::handheld().predict(&empty),
            Err(CalibrationError::MissingChannel(560))
        );
    }

    #[test]
    fn ranking_prefers_strong_anticorrelation_over_noise() {
        let samples: Vec<_> = [
            (0.0, 3.0),
            (10.0, 1.0),
            (20.0, 4.0),
            (30.0, 1.0),
            (40.0, 5.0),
        ]
        .iter()
        .map(|(c, noise)| {
            let s = Spectrum::from_values([1.0; CHANNEL_COUNT])
                .unwrap()
                .with_channel(560, *c)
                .unwrap()
                .with_channel(585, 100.0 - 2.0 * c)
                .unwrap()
                .with_channel(610, *noise)
                .unwrap();
            CalibrationSample::new("s", *c, s).unwrap()
        })
        .collect();
        let ranking = rank_channels(&samples, &[610, 585, 560]).unwrap();
        assert_eq!(ranking.entries.len(), 3);
        assert_eq!(ranking.entries[0].channel_nm, 560);
        assert!((ranking.entries[0].r - 1.0).abs() < 1e-12);
        assert_eq!(ranking.entries[1].channel_nm, 585);
        assert!((ranking.entries[1].r + 1.0).abs() < 1e-12);
        assert_eq!(ranking.entries[2].channel_nm, 610);
    }

    #[test]
    fn ranking_errors() {
        let s = vec![sample(0.0, 1.0), sample(1.0, 2.0), sample(2.0, 3.0)];
        assert_eq!(
            rank_channels(&s[..2], &[560]),
            Err(CalibrationError::TooFewSamples { needed: 3, got: 2 })
        );
        assert_eq!(rank_channels(&s, &[]), Err(CalibrationError::NoCandidates));
        assert_eq!(
            rank_channels(&s, &[585]),
            Err(CalibrationError::ZeroVariance(585))
        );
    }
}
