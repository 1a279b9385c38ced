//! C ABI over the `immersion` library.
//!
//! Every fallible function returns an [`ImmStatus`]; on failure a message is
//! stored per thread and can be read with [`imm_last_error_message`]. Models
//! are opaque [`ImmModel`] handles released with [`imm_model_free`]; strings
//! returned through `char **` out-parameters are released with
//! [`imm_string_free`]. Structured inputs and outputs (model specs, class
//! descriptions, reports) travel as JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use immersion::bounds::{dudley_bound, theorem2_details, ClassSpec, DudleyOptions};
use immersion::model::{Dataset, ReconstructionMap};
use immersion::train::{fit, ModelSpec, TrainConfig};
use immersion::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Json = 4,
    DimensionMismatch = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque handle to a fitted or deserialized reconstruction map.
pub struct ImmModel {
    inner: ReconstructionMap,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(ImmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::DimensionMismatch { .. } => ImmStatus::DimensionMismatch,
            Error::Json(_) => ImmStatus::Json,
            e if e.is_numeric() => ImmStatus::Numeric,
            _ => ImmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(ImmStatus::Json, e.to_string())
    }
}

fn fail<T>(status: ImmStatus, msg: &str) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `body`, converting errors and panics into a status code.
fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> ImmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_error();
            ImmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside immersion");
            ImmStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return fail(ImmStatus::NullPointer, &format!("`{what}` is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(ImmStatus::InvalidUtf8, format!("`{what}` is not valid UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(ImmStatus::NullPointer, &format!("`{what}` is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_ref<'a>(m: *const ImmModel) -> Result<&'a ReconstructionMap, Failure> {
    m.as_ref()
        .map(|m| &m.inner)
        .ok_or(Failure(ImmStatus::NullPointer, "model handle is null".into()))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return fail(ImmStatus::NullPointer, &format!("`{what}` is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(ImmStatus::InvalidArgument, "string contains NUL".into()))?;
    write_out(out, c.into_raw(), "out")
}

/// Row-major `n × d` points as a dataset.
unsafe fn read_points(points: *const f64, n: usize, d: usize) -> Result<Dataset, Failure> {
    if n == 0 || d == 0 {
        return fail(ImmStatus::InvalidArgument, "need n >= 1 and d >= 1");
    }
    let len = n
        .checked_mul(d)
        .ok_or(Failure(ImmStatus::InvalidArgument, "n * d overflows".into()))?;
    let flat = read_slice(points, len, "points")?;
    Ok(Dataset::new("ffi", flat.chunks(d).map(<[f64]>::to_vec).collect())?)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn imm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn imm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn imm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a model from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imm_model_from_json(json: *const c_char, out: *mut *mut ImmModel) -> ImmStatus {
    guard(|| {
        let text = read_str(json, "json")?;
        let inner: ReconstructionMap = serde_json::from_str(text)?;
        write_out(out, Box::into_raw(Box::new(ImmModel { inner })), "out")
    })
}

/// Serializes a model to JSON; free the result with [`imm_string_free`].
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imm_model_to_json(model: *const ImmModel, out: *mut *mut c_char) -> ImmStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_string(out, serde_json::to_string(m)?)
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn imm_model_free(model: *mut ImmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Ambient dimension `d` and number of layers `m`.
///
/// # Safety
/// `model` must be a live handle; `d` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imm_model_dims(model: *const ImmModel, d: *mut usize, m: *mut usize) -> ImmStatus {
    guard(|| {
        let g = model_ref(model)?;
        write_out(d, g.dim(), "d")?;
        write_out(m, g.m(), "m")
    })
}

/// Writes `G(x)` into `out`; both buffers hold `len` doubles, which must
/// equal the model dimension.
///
/// # Safety
/// `x` must point to `len` readable doubles and `out` to `len` writable ones.
#[no_mangle]
pub unsafe extern "C" fn imm_model_reconstruct(
    model: *const ImmModel,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> ImmStatus {
    guard(|| {
        let g = model_ref(model)?;
        if len != g.dim() {
            return fail(
                ImmStatus::DimensionMismatch,
                &format!("expected {} coordinates, got {len}", g.dim()),
            );
        }
        let x = read_slice(x, len, "x")?;
        if out.is_null() {
            return fail(ImmStatus::NullPointer, "`out` is null");
        }
        let y = g.reconstruct(x)?;
        ptr::copy_nonoverlapping(y.as_ptr(), out, len);
        Ok(())
    })
}

/// Mean reconstruction error over `n` row-major points of dimension `d`.
///
/// # Safety
/// `points` must point to `n * d` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imm_model_empirical_risk(
    model: *const ImmModel,
    points: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> ImmStatus {
    guard(|| {
        let g = model_ref(model)?;
        let data = read_points(points, n, d)?;
        write_out(out, g.empirical_risk(&data)?, "out")
    })
}

/// Fits a model to `n` row-major points of dimension `d`. `spec_json` is a
/// model spec; `train_json` is a training config or null for defaults. On
/// success `*out` receives a new handle and `*risk` the final empirical risk
/// (`risk` may be null).
///
/// # Safety
/// Pointers must be valid as described; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn imm_fit(
    points: *const f64,
    n: usize,
    d: usize,
    spec_json: *const c_char,
    train_json: *const c_char,
    out: *mut *mut ImmModel,
    risk: *mut f64,
) -> ImmStatus {
    guard(|| {
        if out.is_null() {
            return fail(ImmStatus::NullPointer, "`out` is null");
        }
        let data = read_points(points, n, d)?;
        let spec: ModelSpec = serde_json::from_str(read_str(spec_json, "spec_json")?)?;
        let cfg: TrainConfig = if train_json.is_null() {
            TrainConfig::default()
        } else {
            serde_json::from_str(read_str(train_json, "train_json")?)?
        };
        spec.validate(d)?;
        let report = fit(&data, &spec, &cfg)?;
        if !risk.is_null() {
            risk.write(report.final_empirical_risk);
        }
        out.write(Box::into_raw(Box::new(ImmModel {
            inner: report.best_model,
        })));
        Ok(())
    })
}

/// Entropy-integral bound for a class description at sample size `n`,
/// returned as a JSON report. `options_json` may be null for defaults.
///
/// # Safety
/// Strings must be NUL-terminated (or null where allowed); `out` writable.
#[no_mangle]
pub unsafe extern "C" fn imm_bound_report(
    class_json: *const c_char,
    n: usize,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> ImmStatus {
    guard(|| {
        let class: ClassSpec = serde_json::from_str(read_str(class_json, "class_json")?)?;
        let opts: DudleyOptions = if options_json.is_null() {
            DudleyOptions::default()
        } else {
            serde_json::from_str(read_str(options_json, "options_json")?)?
        };
        let report = dudley_bound(&class, n, &opts)?;
        write_string(out, serde_json::to_string(&report)?)
    })
}

/// `4·rademacher + D·√(2 log(1/δ)/n)`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn imm_theorem2_certificate(
    diameter: f64,
    n: usize,
    delta_conf: f64,
    rademacher_value: f64,
    out: *mut f64,
) -> ImmStatus {
    guard(|| {
        let t = theorem2_details(diameter, n, delta_conf, rademacher_value)?;
        write_out(out, t.certificate, "out")
    })
}
