//! CSV ingestion of spectral readings and the JSON calibration report.
//!
//! Sample files use the header
//! `sample_id,concentration_mg_l,r410,r435,...,r940` with one reflectance
//! column per supported channel in ascending wavelength order, UTF-8, `.` as
//! the decimal separator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationModel, CalibrationSample};
use crate::spectrum::{self, ChannelReadings, Spectrum, CHANNEL_COUNT, WAVELENGTHS};
use crate::traffic_light::{TrafficLight, TrafficLightPolicy};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

pub fn sample_header() -> Vec<String> {
    let mut h = vec!["sample_id".to_string(), "concentration_mg_l".to_string()];
    h.extend(WAVELENGTHS.iter().map(|nm| format!("r{nm}")));
    h
}

/// Parses a full-schema sample file.
pub fn read_samples_csv(bytes: &[u8]) -> Result<Vec<CalibrationSample>, CsvError> {
    let rows = read_readings_csv(bytes)?;
    let expected = sample_header();
    if let Some(first) = rows.header.as_ref() {
        if *first != expected {
            return Err(CsvError::SchemaMismatch(format!(
                "expected header {}, got {}",
                expected.join(","),
                first.join(",")
            )));
        }
    }
    rows.rows
        .into_iter()
        .map(|row| {
            let concentration = row.concentration_mg_l.expect("column present per header");
            let spectrum = row.readings.to_spectrum().map_err(|e| CsvError::Parse {
                line: row.line,
                column: 3,
                message: e.to_string(),
            })?;
            CalibrationSample::new(row.sample_id, concentration, spectrum).map_err(|e| {
                CsvError::Parse {
                    line: row.line,
                    column: 2,
                    message: e.to_string(),
                }
            })
        })
        .collect()
}

pub fn write_samples_csv(samples: &[CalibrationSample]) -> String {
    let mut out = sample_header().join(",");
    out.push('\n');
    for s in samples {
        let _ = write!(out, "{},{}", s.sample_id, s.concentration_mg_l);
        for v in s.spectrum.values() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// One row of a readings file, where only some channels may be present.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadingRow {
    pub line: u64,
    pub sample_id: String,
    pub concentration_mg_l: Option<f64>,
    pub readings: ChannelReadings,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReadingTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<ReadingRow>,
}

/// Parses a readings file: `sample_id`, an optional `concentration_mg_l`,
/// then any ascending subset of `r<nm>` columns.
pub fn read_readings_csv(bytes: &[u8]) -> Result<ReadingTable, CsvError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| CsvError::SchemaMismatch(format!("input is not UTF-8: {e}")))?;
    if text.trim().is_empty() {
        return Ok(ReadingTable::default());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let layout = parse_header(&header)?;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let sample_id = record.get(0).unwrap_or_default().trim().to_string();
        if sample_id.is_empty() {
            return Err(CsvError::Parse {
                line,
                column: 1,
                message: "empty sample_id".into(),
            });
        }
        let mut concentration = None;
        let mut readings = ChannelReadings::new();
        for (col, field) in record.iter().enumerate().skip(1) {
            let value = parse_number(field, line, col + 1)?;
            match layout[col] {
                Column::Concentration => {
                    if value < 0.0 {
                        return Err(CsvError::Parse {
                            line,
                            column: col + 1,
                            message: format!("negative concentration {value}"),
                        });
                    }
                    concentration = Some(value);
                }
                Column::Channel(nm) => readings.insert(nm, value).map_err(|e| CsvError::Parse {
                    line,
                    column: col + 1,
                    message: e.to_string(),
                })?,
                Column::SampleId => unreachable!("only first column"),
            }
        }
        rows.push(ReadingRow {
            line,
            sample_id,
            concentration_mg_l: concentration,
            readings,
        });
    }
    Ok(ReadingTable {
        header: Some(header),
        rows,
    })
}

#[derive(Clone, Copy)]
enum Column {
    SampleId,
    Concentration,
    Channel(u16),
}

fn parse_header(header: &[String]) -> Result<Vec<Column>, CsvError> {
    if header.first().map(String::as_str) != Some("sample_id") {
        return Err(CsvError::SchemaMismatch(
            "first column must be sample_id".into(),
        ));
    }
    let mut cols = vec![Column::SampleId];
    let mut last_nm = 0u16;
    for (i, name) in header.iter().enumerate().skip(1) {
        if name == "concentration_mg_l" && i == 1 {
            cols.push(Column::Concentration);
            continue;
        }
        let nm = name
            .strip_prefix('r')
            .and_then(|n| n.parse::<u16>().ok())
            .filter(|nm| spectrum::is_supported(*nm))
            .ok_or_else(|| CsvError::SchemaMismatch(format!("unexpected column {name:?}")))?;
        if nm <= last_nm {
            return Err(CsvError::SchemaMismatch(format!(
                "channel columns must ascend, {name} follows r{last_nm}"
            )));
        }
        last_nm = nm;
        cols.push(Column::Channel(nm));
    }
    Ok(cols)
}

fn parse_number(field: &str, line: u64, column: usize) -> Result<f64, CsvError> {
    let value: f64 = field.trim().parse().map_err(|_| CsvError::Parse {
        line,
        column,
        message: format!("not a number: {field:?}"),
    })?;
    if !value.is_finite() {
        return Err(CsvError::Parse {
            line,
            column,
            message: format!("not finite: {field:?}"),
        });
    }
    Ok(value)
}

fn csv_error(e: &csv::Error) -> CsvError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            expected_len, len, ..
        } => CsvError::Parse {
            line,
            column: (*len).min(*expected_len) as usize + 1,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        _ => CsvError::Parse {
            line,
            column: 0,
            message: e.to_string(),
        },
    }
}

/// A calibration report: models and their per-row predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub models: Vec<ReportModel>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub model: CalibrationModel,
    pub policy: TrafficLightPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample_id: String,
    pub instrument: String,
    pub reflectance: f64,
    pub value: f64,
    pub result: TrafficLight,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub expected_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub expected_result: Option<TrafficLight>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pass: Option<bool>,
}

pub fn write_report(models: &[ReportModel], rows: &[ReportRow]) -> String {
    let report = Report {
        models: models.to_vec(),
        rows: rows.to_vec(),
    };
    serde_json::to_string_pretty(&report).expect("report serializes")
}

/// Builds a spectrum for tests and fixtures from a row of exactly
/// [`CHANNEL_COUNT`] values.
pub fn spectrum_from_slice(values: &[f64]) -> Option<Spectrum> {
    let arr: [f64; CHANNEL_COUNT] = values.try_into().ok()?;
    Spectrum::from_values(arr).ok()
}
