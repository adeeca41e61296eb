//! Recomputes the published calibration constants and validation results
//! from the bundled data, cell by cell.

use serde::Serialize;

use crate::calibration::{fit_ols, CalibrationModel, HANDHELD, LAB};
use crate::csvio::{ReportModel, ReportRow};
use crate::reference::{calibration_samples, validation_rows, CALIBRATION_RESULTS};
use crate::spectrum::DEFAULT_CHANNEL_NM;
use crate::traffic_light::TrafficLightPolicy;

pub const SLOPE_TOLERANCE: f64 = 0.0005;
pub const INTERCEPT_TOLERANCE: f64 = 0.05;
pub const HANDHELD_VALUE_TOLERANCE: f64 = 0.05;
pub const LAB_VALUE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantCheck {
    pub name: &'static str,
    pub computed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl ConstantCheck {
    fn new(name: &'static str, computed: f64, expected: f64, tolerance: f64) -> Self {
        ConstantCheck {
            name,
            computed,
            expected,
            tolerance,
            pass: (computed - expected).abs() <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub fitted: CalibrationModel,
    pub constants: Vec<ConstantCheck>,
    /// The calibration samples classified by the fitted model.
    pub calibration_rows: Vec<ReportRow>,
    pub models: Vec<ReportModel>,
    /// Validation samples for both instruments, handheld first.
    pub validation_rows: Vec<ReportRow>,
}

impl ReplayReport {
    pub fn all_pass(&self) -> bool {
        self.constants.iter().all(|c| c.pass)
            && self
                .calibration_rows
                .iter()
                .chain(&self.validation_rows)
                .all(|r| r.pass == Some(true))
    }

    pub fn failures(&self) -> usize {
        self.constants.iter().filter(|c| !c.pass).count()
            + self
                .calibration_rows
                .iter()
                .chain(&self.validation_rows)
                .filter(|r| r.pass != Some(true))
                .count()
    }
}

fn row(
    sample_id: &str,
    model: &CalibrationModel,
    policy: &TrafficLightPolicy,
    reflectance: f64,
    expected_value: Option<f64>,
    expected_result: crate::traffic_light::TrafficLight,
    tolerance: f64,
) -> ReportRow {
    let value = model.predict_at(reflectance);
    let result = policy.classify(value);
    let value_ok = expected_value.is_none_or(|e| (value - e).abs() <= tolerance);
    ReportRow {
        sample_id: sample_id.to_string(),
        instrument: model.instrument.clone(),
        reflectance,
        value,
        result,
        expected_value,
        expected_result: Some(expected_result),
        pass: Some(value_ok && result == expected_result),
    }
}

pub fn replay() -> ReplayReport {
    let samples = calibration_samples();
    let fitted = fit_ols(&samples, DEFAULT_CHANNEL_NM, HANDHELD).expect("bundled data fits");
    let published = CalibrationModel::handheld();
    let constants = vec![
        ConstantCheck::new("slope", fitted.slope, published.slope, SLOPE_TOLERANCE),
        ConstantCheck::new(
            "intercept",
            fitted.intercept,
            published.intercept,
            INTERCEPT_TOLERANCE,
        ),
    ];

    let handheld_policy = TrafficLightPolicy::handheld();
    let calibration_rows = samples
        .iter()
        .zip(CALIBRATION_RESULTS)
        .map(|(s, expected)| {
            let x = s.spectrum.get(DEFAULT_CHANNEL_NM).expect("560 nm present");
            row(
                &s.sample_id,
                &fitted,
                &handheld_policy,
                x,
                None,
                expected,
                0.0,
            )
        })
        .collect();

    let lab = CalibrationModel::lab();
    let lab_policy = TrafficLightPolicy::lab();
    debug_assert_eq!(lab.instrument, LAB);
    let table = validation_rows();
    let mut rows = Vec::with_capacity(table.len() * 2);
    for r in &table {
        rows.push(row(
            &r.sample_id,
            &published,
            &handheld_policy,
            r.handheld_r560,
            Some(r.handheld_value),
            r.result,
            HANDHELD_VALUE_TOLERANCE,
        ));
    }
    for r in &table {
        rows.push(row(
            &r.sample_id,
            &lab,
            &lab_policy,
            r.lab_r560,
            Some(r.lab_value),
            r.result,
            LAB_VALUE_TOLERANCE,
        ));
    }

    ReplayReport {
        fitted,
        constants,
        calibration_rows,
        models: vec![
            ReportModel {
                model: published,
                policy: handheld_policy,
            },
            ReportModel {
                model: lab,
                policy: lab_policy,
            },
        ],
        validation_rows: rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn everything_reproduces() {
        let r = replay();
        assert_eq!(r.validation_rows.len(), 30);
        assert_eq!(r.calibration_rows.len(), 12);
        assert!(r.all_pass(), "{} failures", r.failures());
    }
}
