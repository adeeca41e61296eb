//! Command-line front end. `run` is the whole program minus process exit,
//! so tests can drive it with captured output.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::calibration::{fit_ols, rank_channels, CalibrationModel, ChannelRanking, HANDHELD};
use crate::csvio::{read_readings_csv, read_samples_csv, write_report, ReportModel, ReportRow};
use crate::ingest::config::ServiceConfig;
use crate::ingest::{Alarm, Ingestor, JsonlStore, MemoryStore, NetlinkRouter, Stats, Store};
use crate::netlink::{Bus, Gateway, LinkProfile, Transport};
use crate::record::TestRecord;
use crate::replay::{replay, ReplayReport};
use crate::sim::{Scenario, Simulation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "glyphotrace", version, about = "Glyphosate screening toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a single-channel calibration line from a sample CSV.
    Calibrate {
        csv: PathBuf,
        #[arg(long, default_value_t = 560)]
        channel: u16,
        /// Channels to rank by |r|, comma separated.
        #[arg(long, value_delimiter = ',')]
        candidates: Vec<u16>,
        #[arg(long, default_value = HANDHELD)]
        instrument: String,
        #[arg(long)]
        json: bool,
    },
    /// Predict value and traffic-light color for each row of a readings CSV.
    Classify {
        csv: PathBuf,
        /// Model file: `{"model": {...}, "policy": {...}}`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Recompute the bundled calibration and validation tables.
    Replay {
        #[arg(long)]
        json: bool,
    },
    /// Run a fleet scenario on simulated time.
    Simulate {
        scenario: PathBuf,
        /// Write the event log here as JSON lines.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Persist the platform log here instead of in memory.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run the ingestion service with its HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: std::net::IpAddr,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

type CliResult = Result<i32, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first) and runs the command. Results go to
/// `out`, diagnostics to stderr. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = e.print();
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Calibrate {
            csv,
            channel,
            candidates,
            instrument,
            json,
        } => calibrate(&csv, channel, &candidates, &instrument, json, out),
        Command::Classify { csv, model, json } => classify(&csv, &model, json, out),
        Command::Replay { json } => replay_tables(json, out),
        Command::Simulate {
            scenario,
            events,
            data_dir,
            json,
        } => simulate(&scenario, events.as_deref(), data_dir.as_deref(), json, out),
        Command::Serve {
            port,
            data_dir,
            config,
            bind,
        } => serve(port, data_dir, config, bind),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(runtime)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes") + "\n"
}

/// Coefficients are shown cut, not rounded, to four decimals, the way
/// published calibration constants are usually quoted.
fn truncate4(x: f64) -> f64 {
    (x * 1e4).trunc() / 1e4
}

#[derive(Serialize)]
struct CalibrateOutput {
    model: CalibrationModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    ranking: Option<ChannelRanking>,
}

fn calibrate(
    csv: &Path,
    channel: u16,
    candidates: &[u16],
    instrument: &str,
    json: bool,
    out: &mut dyn Write,
) -> CliResult {
    let samples = read_samples_csv(&read_file(csv)?).map_err(usage)?;
    let model = fit_ols(&samples, channel, instrument).map_err(usage)?;
    let ranking = if candidates.is_empty() {
        None
    } else {
        Some(rank_channels(&samples, candidates).map_err(usage)?)
    };
    let text = if json {
        to_json(&CalibrateOutput { model, ranking })
    } else {
        let mut s = String::new();
        let _ = writeln!(s, "instrument  {}", model.instrument);
        let _ = writeln!(s, "channel     {} nm", model.channel_nm);
        let _ = writeln!(s, "slope       {:.4}", truncate4(model.slope));
        let _ = writeln!(s, "intercept   {:.4}", truncate4(model.intercept));
        if let Some(r2) = model.r_squared {
            let _ = writeln!(s, "r_squared   {r2:.4}");
        }
        let _ = writeln!(s, "samples     {}", model.n_samples);
        if let Some(ranking) = ranking {
            let _ = writeln!(s, "\nchannel  r        |r|");
            for e in &ranking.entries {
                let _ = writeln!(s, "{:<7}  {:<7.4}  {:.4}", e.channel_nm, e.r, e.r.abs());
            }
        }
        s
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn classify(csv: &Path, model_path: &Path, json: bool, out: &mut dyn Write) -> CliResult {
    let file: ReportModel = serde_json::from_slice(&read_file(model_path)?)
        .map_err(|e| usage(format!("{}: {e}", model_path.display())))?;
    file.model.validate().map_err(usage)?;
    let table = read_readings_csv(&read_file(csv)?).map_err(usage)?;
    let mut rows = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let value = file
            .model
            .predict(&row.readings)
            .map_err(|e| usage(format!("line {}: {e}", row.line)))?;
        let reflectance = row
            .readings
            .iter()
            .find(|(nm, _)| *nm == file.model.channel_nm)
            .map(|(_, v)| v)
            .expect("predict succeeded");
        rows.push(ReportRow {
            sample_id: row.sample_id.clone(),
            instrument: file.model.instrument.clone(),
            reflectance,
            value,
            result: file.policy.classify(value),
            expected_value: None,
            expected_result: None,
            pass: None,
        });
    }
    let text = if json {
        write_report(std::slice::from_ref(&file), &rows) + "\n"
    } else {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12}  {:>10}  {:>12}  result",
            "sample_id",
            format!("r{}", file.model.channel_nm),
            "value"
        );
        for r in &rows {
            let _ = writeln!(
                s,
                "{:<12}  {:>10.4}  {:>12.4}  {}",
                r.sample_id,
                r.reflectance,
                r.value,
                r.result.as_str()
            );
        }
        s
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn pass_mark(pass: Option<bool>) -> &'static str {
    if pass == Some(true) {
        "pass"
    } else {
        "FAIL"
    }
}

fn replay_text(report: &ReplayReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "calibration (handheld, {} nm, n={})",
        report.fitted.channel_nm, report.fitted.n_samples
    );
    for c in &report.constants {
        let _ = writeln!(
            s,
            "  {:<10} computed {:>12.4}  expected {:>12.4}  tol {:<7}  {}",
            c.name,
            c.computed,
            c.expected,
            c.tolerance,
            pass_mark(Some(c.pass))
        );
    }
    let _ = writeln!(s, "\ncalibration samples");
    for r in &report.calibration_rows {
        let _ = writeln!(
            s,
            "  {:<6} r560 {:>6.1}  value {:>10.4}  {:<8} expected {:<8} {}",
            r.sample_id,
            r.reflectance,
            r.value,
            r.result.as_str(),
            r.expected_result.map_or("-", |c| c.as_str()),
            pass_mark(r.pass)
        );
    }
    for model in &report.models {
        let m = &model.model;
        let _ = writeln!(
            s,
            "\nvalidation ({}, value = {:.4} x r{} {:+.4}; bands {} / {})",
            m.instrument,
            m.slope,
            m.channel_nm,
            m.intercept,
            model.policy.negative_upper,
            model.policy.positive_lower
        );
        for r in report
            .validation_rows
            .iter()
            .filter(|r| r.instrument == m.instrument)
        {
            let _ = writeln!(
                s,
                "  {:<6} r560 {:>6.1}  value {:>10.4} expected {:>10.4}  {:<8} expected {:<8} {}",
                r.sample_id,
                r.reflectance,
                r.value,
                r.expected_value.unwrap_or(f64::NAN),
                r.result.as_str(),
                r.expected_result.map_or("-", |c| c.as_str()),
                pass_mark(r.pass)
            );
        }
    }
    let _ = writeln!(
        s,
        "\n{}",
        if report.all_pass() {
            "all cells reproduced".to_string()
        } else {
            format!("{} cells differ", report.failures())
        }
    );
    s
}

#[derive(Serialize)]
struct ReplayOutput<'a> {
    #[serde(flatten)]
    report: &'a ReplayReport,
    all_pass: bool,
}

fn replay_tables(json: bool, out: &mut dyn Write) -> CliResult {
    let report = replay();
    let text = if json {
        to_json(&ReplayOutput {
            report: &report,
            all_pass: report.all_pass(),
        })
    } else {
        replay_text(&report)
    };
    emit(out, &text)?;
    Ok(if report.all_pass() {
        EXIT_OK
    } else {
        EXIT_FAILURE
    })
}

#[derive(Serialize)]
struct SimulateOutput {
    end_ms: u64,
    events: usize,
    stats: Stats,
    records: Vec<TestRecord>,
    alarms: Vec<Alarm>,
}

fn simulate(
    path: &Path,
    events: Option<&Path>,
    data_dir: Option<&Path>,
    json: bool,
    out: &mut dyn Write,
) -> CliResult {
    let text = String::from_utf8(read_file(path)?).map_err(usage)?;
    let scenario = Scenario::from_json(&text).map_err(usage)?;
    let store: Box<dyn Store> = match data_dir {
        Some(dir) => Box::new(JsonlStore::open_dir(dir).map_err(runtime)?),
        None => Box::new(MemoryStore::new()),
    };
    let report = Simulation::with_store(scenario, store)
        .map_err(runtime)?
        .run();
    if let Some(p) = events {
        std::fs::write(p, report.events_jsonl())
            .map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    let summary = SimulateOutput {
        end_ms: report.end_ms,
        events: report.events.len(),
        stats: report.stats,
        records: report.records,
        alarms: report.alarms,
    };
    let text = if json {
        to_json(&summary)
    } else {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "simulated {} ms, {} events",
            summary.end_ms, summary.events
        );
        let _ = writeln!(
            s,
            "records {}  alarms {}",
            summary.stats.total,
            summary.alarms.len()
        );
        for (color, n) in &summary.stats.by_color {
            let _ = writeln!(s, "  {color:<8} {n}");
        }
        for r in &summary.records {
            let _ = writeln!(
                s,
                "{:<16} {:<8} {:>10.2}  {:<8} {}",
                r.record_id(),
                r.link_kind.as_str(),
                r.predicted_value,
                r.color.as_str(),
                r.timestamp
            );
        }
        s
    };
    emit(out, &text)?;
    Ok(EXIT_OK)
}

fn serve(
    port: Option<u16>,
    data_dir: Option<PathBuf>,
    config: Option<PathBuf>,
    bind: std::net::IpAddr,
) -> CliResult {
    let mut cfg = match config {
        Some(p) => ServiceConfig::load(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => ServiceConfig::from_env().map_err(usage)?,
    };
    if let Some(p) = port {
        cfg.port = p;
    }
    if let Some(d) = data_dir {
        cfg.data_dir = d;
    }
    let store = JsonlStore::open_dir(&cfg.data_dir).map_err(runtime)?;
    let ingestor = Arc::new(Ingestor::open(Box::new(store), cfg.ingest_config()).map_err(runtime)?);
    let transport: Arc<dyn Transport> = transport(&cfg);
    let gateway = Gateway::new(LinkProfile::default(), 0).expect("default profile is valid");
    ingestor.set_router(Arc::new(NetlinkRouter::new(
        Arc::clone(&transport),
        Arc::new(Mutex::new(gateway)),
    )));
    crate::ingest::spawn_telemetry_bridge(transport.as_ref(), Arc::clone(&ingestor))
        .map_err(runtime)?;

    let addr = SocketAddr::new(bind, cfg.port);
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(crate::ingest::http::serve(ingestor, addr, async {
        let _ = tokio::signal::ctrl_c().await;
    }))
    .map_err(|e| runtime(format!("{addr}: {e}")))?;
    Ok(EXIT_OK)
}

#[cfg(not(feature = "mqtt"))]
fn transport(_cfg: &ServiceConfig) -> Arc<dyn Transport> {
    Arc::new(Bus::new())
}

#[cfg(feature = "mqtt")]
fn transport(cfg: &ServiceConfig) -> Arc<dyn Transport> {
    match &cfg.mqtt {
        Some(settings) => Arc::new(crate::netlink::mqtt::MqttTransport::connect(settings)),
        None => Arc::new(Bus::new()),
    }
}
