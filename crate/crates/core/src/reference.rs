//! Bundled reference datasets: the 12 calibration readings and the 15
//! validation samples with their published values for both instruments.

use serde::Deserialize;

use crate::calibration::CalibrationSample;
use crate::csvio;
use crate::traffic_light::TrafficLight;

pub const CALIBRATION_CSV: &str = include_str!("../data/calibration.csv");
pub const VALIDATION_CSV: &str = include_str!("../data/validation.csv");
pub const VALIDATION_HANDHELD_CSV: &str = include_str!("../data/validation_handheld.csv");
pub const VALIDATION_LAB_CSV: &str = include_str!("../data/validation_lab.csv");

/// Traffic-light results printed alongside the calibration readings.
pub const CALIBRATION_RESULTS: [TrafficLight; 12] = [
    TrafficLight::Negative,
    TrafficLight::Negative,
    TrafficLight::Negative,
    TrafficLight::Negative,
    TrafficLight::Warning,
    TrafficLight::Warning,
    TrafficLight::Warning,
    TrafficLight::Warning,
    TrafficLight::Positive,
    TrafficLight::Positive,
    TrafficLight::Positive,
    TrafficLight::Positive,
];

pub fn calibration_samples() -> Vec<CalibrationSample> {
    csvio::read_samples_csv(CALIBRATION_CSV.as_bytes()).expect("bundled calibration data parses")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ValidationRow {
    pub sample_id: String,
    pub concentration_mg_l: f64,
    pub handheld_r560: f64,
    pub handheld_value: f64,
    pub lab_r560: f64,
    pub lab_value: f64,
    pub result: TrafficLight,
}

pub fn validation_rows() -> Vec<ValidationRow> {
    csv::Reader::from_reader(VALIDATION_CSV.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .expect("bundled validation data parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_data_shapes() {
        let samples = calibration_samples();
        assert_eq!(samples.len(), 12);
        assert_eq!(samples[11].sample_id, "S12");
        assert_eq!(samples[11].spectrum.get(560), Some(375.0));
        assert_eq!(samples[5].concentration_mg_l, 31.2);
        let rows = validation_rows();
        assert_eq!(rows.len(), 15);
        assert_eq!(rows[10].sample_id, "TS-11");
        assert_eq!(rows[10].result, TrafficLight::Positive);
    }
}
