//! C ABI over the glyphotrace calibration, classification and uplink codecs.
//!
//! Every fallible function returns a [`GtStatus`]. On failure a message is
//! kept per thread and can be read with [`gt_last_error_message`]. Models are
//! opaque handles released with [`gt_model_free`]; strings returned by the
//! library are released with [`gt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use glyphotrace::calibration::{fit_ols, CalibrationError, CalibrationModel, CalibrationSample};
use glyphotrace::netlink::DownlinkCommand;
use glyphotrace::spectrum::Spectrum;
use glyphotrace::traffic_light::{TrafficLight, TrafficLightPolicy};
use glyphotrace::uplink::{decode_test_uplink, encode_test_uplink};
use glyphotrace::TestRecord;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    TooFewSamples = 3,
    UnsupportedChannel = 4,
    DegenerateData = 5,
    DecodeError = 6,
    EncodeError = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GtColor {
    Negative = 0,
    Warning = 1,
    Positive = 2,
}

impl From<TrafficLight> for GtColor {
    fn from(t: TrafficLight) -> Self {
        match t {
            TrafficLight::Negative => GtColor::Negative,
            TrafficLight::Warning => GtColor::Warning,
            TrafficLight::Positive => GtColor::Positive,
        }
    }
}

/// Opaque calibration model.
pub struct GtModel {
    inner: CalibrationModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GtStatus, String);

fn fail(status: GtStatus, msg: impl std::fmt::Display) -> Failure {
    Failure(status, msg.to_string())
}

impl From<CalibrationError> for Failure {
    fn from(e: CalibrationError) -> Self {
        let status = match e {
            CalibrationError::TooFewSamples { .. } => GtStatus::TooFewSamples,
            CalibrationError::UnsupportedChannel(_) | CalibrationError::MissingChannel(_) => {
                GtStatus::UnsupportedChannel
            }
            CalibrationError::DegenerateX(_)
            | CalibrationError::ZeroVariance(_)
            | CalibrationError::ConstantConcentration => GtStatus::DegenerateData,
            CalibrationError::NoCandidates | CalibrationError::InvalidConcentration(_) => {
                GtStatus::InvalidArgument
            }
        };
        fail(status, e)
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GtStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(GtStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn write_bytes(
    bytes: &[u8],
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> Result<(), Failure> {
    non_null(written, "written")?;
    *written = bytes.len();
    if bytes.len() > cap {
        return Err(fail(
            GtStatus::BufferTooSmall,
            format!("need {} bytes, buffer holds {cap}", bytes.len()),
        ));
    }
    non_null(buf, "buf")?;
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    Ok(())
}

unsafe fn put_model(out: *mut *mut GtModel, model: CalibrationModel) -> Result<(), Failure> {
    non_null(out, "out")?;
    *out = Box::into_raw(Box::new(GtModel { inner: model }));
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn gt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Handheld sensor model (560 nm).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_model_handheld(out: *mut *mut GtModel) -> GtStatus {
    guard(|| put_model(out, CalibrationModel::handheld()))
}

/// Laboratory spectrometer model (560 nm).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_model_lab(out: *mut *mut GtModel) -> GtStatus {
    guard(|| put_model(out, CalibrationModel::lab()))
}

/// Model from known coefficients.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_model_new(
    channel_nm: u16,
    slope: f64,
    intercept: f64,
    out: *mut *mut GtModel,
) -> GtStatus {
    guard(|| {
        if !slope.is_finite() || !intercept.is_finite() {
            return Err(fail(
                GtStatus::InvalidArgument,
                "coefficients must be finite",
            ));
        }
        let model = CalibrationModel {
            instrument: "custom".into(),
            channel_nm,
            slope,
            intercept,
            r_squared: None,
            n_samples: 2,
        };
        model.validate()?;
        put_model(out, model)
    })
}

/// Least-squares fit of `concentrations` on `reflectance` at `channel_nm`.
///
/// # Safety
/// Both arrays must hold `n` values; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_model_fit(
    concentrations: *const f64,
    reflectance: *const f64,
    n: usize,
    channel_nm: u16,
    out: *mut *mut GtModel,
) -> GtStatus {
    guard(|| {
        let (ys, xs): (&[f64], &[f64]) = if n == 0 {
            (&[], &[])
        } else {
            non_null(concentrations, "concentrations")?;
            non_null(reflectance, "reflectance")?;
            (
                std::slice::from_raw_parts(concentrations, n),
                std::slice::from_raw_parts(reflectance, n),
            )
        };
        if !glyphotrace::spectrum::is_supported(channel_nm) {
            return Err(CalibrationError::UnsupportedChannel(channel_nm).into());
        }
        let mut samples = Vec::with_capacity(n);
        for (i, (&y, &x)) in ys.iter().zip(xs).enumerate() {
            let spectrum = Spectrum::zeros()
                .with_channel(channel_nm, x)
                .map_err(|e| fail(GtStatus::InvalidArgument, format!("sample {i}: {e}")))?;
            samples.push(CalibrationSample::new(format!("{i}"), y, spectrum)?);
        }
        put_model(out, fit_ols(&samples, channel_nm, "custom")?)
    })
}

/// # Safety
/// `model` must come from this library; each out pointer may be NULL.
/// `r_squared` receives NaN for models built from published constants.
#[no_mangle]
pub unsafe extern "C" fn gt_model_coefficients(
    model: *const GtModel,
    channel_nm: *mut u16,
    slope: *mut f64,
    intercept: *mut f64,
    r_squared: *mut f64,
) -> GtStatus {
    guard(|| {
        non_null(model, "model")?;
        let m = &(*model).inner;
        if !channel_nm.is_null() {
            *channel_nm = m.channel_nm;
        }
        if !slope.is_null() {
            *slope = m.slope;
        }
        if !intercept.is_null() {
            *intercept = m.intercept;
        }
        if !r_squared.is_null() {
            *r_squared = m.r_squared.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_model_predict(
    model: *const GtModel,
    reflectance: f64,
    out: *mut f64,
) -> GtStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        if !reflectance.is_finite() {
            return Err(fail(
                GtStatus::InvalidArgument,
                "reflectance must be finite",
            ));
        }
        *out = (*model).inner.predict_at(reflectance);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn gt_model_free(model: *mut GtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Traffic-light color of `value` for the given band edges.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_classify(
    value: f64,
    negative_upper: f64,
    positive_lower: f64,
    out: *mut GtColor,
) -> GtStatus {
    guard(|| {
        non_null(out, "out")?;
        if value.is_nan() {
            return Err(fail(GtStatus::InvalidArgument, "value is NaN"));
        }
        let policy = TrafficLightPolicy::new("custom", negative_upper, positive_lower)
            .map_err(|e| fail(GtStatus::InvalidArgument, e))?;
        *out = policy.classify(value).into();
        Ok(())
    })
}

/// Decodes a test uplink into a JSON object written to `*out_json`.
///
/// # Safety
/// `bytes` must hold `len` bytes; `out_json` must be valid for writes. The
/// string is released with [`gt_string_free`].
#[no_mangle]
pub unsafe extern "C" fn gt_uplink_decode_json(
    bytes: *const u8,
    len: usize,
    out_json: *mut *mut c_char,
) -> GtStatus {
    guard(|| {
        non_null(out_json, "out_json")?;
        let data: &[u8] = if len == 0 {
            &[]
        } else {
            non_null(bytes, "bytes")?;
            std::slice::from_raw_parts(bytes, len)
        };
        let report = decode_test_uplink(data).map_err(|e| fail(GtStatus::DecodeError, e))?;
        let json = serde_json::to_string(&report).expect("report serializes");
        *out_json = CString::new(json).expect("json has no nul").into_raw();
        Ok(())
    })
}

/// Encodes a test record given as JSON into an uplink payload. On
/// `BufferTooSmall`, `*written` holds the size needed.
///
/// # Safety
/// `record_json` must be NUL-terminated; `buf` must hold `cap` bytes;
/// `written` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gt_uplink_encode_json(
    record_json: *const c_char,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> GtStatus {
    guard(|| {
        non_null(record_json, "record_json")?;
        let text = CStr::from_ptr(record_json)
            .to_str()
            .map_err(|e| fail(GtStatus::InvalidArgument, e))?;
        let record: TestRecord =
            serde_json::from_str(text).map_err(|e| fail(GtStatus::InvalidArgument, e))?;
        let bytes = encode_test_uplink(&record).map_err(|e| fail(GtStatus::EncodeError, e))?;
        write_bytes(&bytes, buf, cap, written)
    })
}

/// Downlink payload that triggers a test.
///
/// # Safety
/// As for [`gt_uplink_encode_json`].
#[no_mangle]
pub unsafe extern "C" fn gt_downlink_encode_manual_test(
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> GtStatus {
    guard(|| {
        let bytes = DownlinkCommand::ManualTest
            .encode()
            .map_err(|e| fail(GtStatus::EncodeError, e))?;
        write_bytes(&bytes, buf, cap, written)
    })
}

/// Downlink payload that replaces the device's band edges.
///
/// # Safety
/// As for [`gt_uplink_encode_json`].
#[no_mangle]
pub unsafe extern "C" fn gt_downlink_encode_set_policy(
    negative_upper: f64,
    positive_lower: f64,
    version: u32,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> GtStatus {
    guard(|| {
        let bytes = DownlinkCommand::SetPolicy {
            negative_upper,
            positive_lower,
            version,
        }
        .encode()
        .map_err(|e| fail(GtStatus::EncodeError, e))?;
        write_bytes(&bytes, buf, cap, written)
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn gt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
