//! C ABI over the overflow-probe core.
//!
//! Every fallible function returns an `OvpStatus` code. On failure the message
//! is kept per thread and can be read with `ovp_last_error`. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::ArrayView2;
use overflow_probe::error::Error;
use overflow_probe::probes::{artifact, predict_scores, ProbeModel};
use overflow_probe::tensor_io::{read_tensor, Tensor};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OvpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Domain = 5,
    SingleClass = 6,
    DimensionMismatch = 7,
    Config = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Saturation statistics of one vector.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OvpSaturation {
    pub hoyer: f64,
    pub spectral_entropy: f64,
    pub excess_kurtosis: f64,
}

/// A tensor read from an OVT1 file.
pub struct OvpTensor(Tensor);

/// A trained probe loaded from a model directory.
pub struct OvpModel(ProbeModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OvpStatus {
    match e {
        Error::Io { .. } => OvpStatus::Io,
        Error::BadMagic { .. }
        | Error::UnsupportedDType { .. }
        | Error::Truncated { .. }
        | Error::NonFinite { .. }
        | Error::InvalidTensor(_)
        | Error::ManifestLine { .. }
        | Error::Json { .. } => OvpStatus::Format,
        Error::SingleClass(_) => OvpStatus::SingleClass,
        Error::DimensionMismatch { .. } => OvpStatus::DimensionMismatch,
        Error::Config(_) => OvpStatus::Config,
        _ => OvpStatus::Domain,
    }
}

struct Fail(OvpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OvpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OvpStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            OvpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(OvpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(OvpStatus::InvalidUtf8, "path is not valid UTF-8".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ovp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ovp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads an OVT1 file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_read(path: *const c_char, out: *mut *mut OvpTensor) -> OvpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let t = read_tensor(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(OvpTensor(t)));
        Ok(())
    })
}

/// Number of dimensions; 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_rank(t: *const OvpTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.rank())
}

/// Number of elements; 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_len(t: *const OvpTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Element type code: 1 for f32, 2 for f64, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_dtype(t: *const OvpTensor) -> u8 {
    t.as_ref().map_or(0, |t| t.0.dtype().code())
}

/// Copies the shape into `dims`, which holds `cap` entries.
///
/// # Safety
/// `t` must be a live handle and `dims` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_shape(t: *const OvpTensor, dims: *mut usize, cap: usize) -> OvpStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("tensor"))?;
        let shape = t.0.shape();
        if cap < shape.len() {
            return Err(Fail(OvpStatus::BufferTooSmall, format!("shape needs {} entries", shape.len())));
        }
        if !shape.is_empty() && dims.is_null() {
            return Err(null("dims"));
        }
        for (i, &d) in shape.iter().enumerate() {
            *dims.add(i) = d;
        }
        Ok(())
    })
}

/// Copies the elements, widened to f64, into `buf` of `cap` entries.
///
/// # Safety
/// `t` must be a live handle and `buf` valid for `cap` writes.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_copy_f64(t: *const OvpTensor, buf: *mut f64, cap: usize) -> OvpStatus {
    guard(|| {
        let t = t.as_ref().ok_or_else(|| null("tensor"))?;
        let n = t.0.len();
        if cap < n {
            return Err(Fail(OvpStatus::BufferTooSmall, format!("tensor has {n} elements")));
        }
        if n > 0 && buf.is_null() {
            return Err(null("buf"));
        }
        for (i, v) in t.0.to_f64_vec().into_iter().enumerate() {
            *buf.add(i) = v;
        }
        Ok(())
    })
}

/// Releases a tensor handle. Null is ignored.
///
/// # Safety
/// `t` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ovp_tensor_free(t: *mut OvpTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Hoyer sparsity, spectral entropy and excess kurtosis of `v[0..n]`.
///
/// # Safety
/// `v` must be valid for `n` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovp_saturation_profile(v: *const f64, n: usize, out: *mut OvpSaturation) -> OvpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let s = overflow_probe::saturation::saturation_profile(slice_arg(v, n, "v")?)?;
        *out = OvpSaturation {
            hoyer: s.hoyer,
            spectral_entropy: s.spectral_entropy,
            excess_kurtosis: s.excess_kurtosis,
        };
        Ok(())
    })
}

/// ROC-AUC of `scores` against 0/1 `labels`, both of length `n`.
///
/// # Safety
/// `scores` and `labels` must be valid for `n` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovp_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> OvpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = overflow_probe::evaluation::roc_auc(slice_arg(scores, n, "scores")?, slice_arg(labels, n, "labels")?)?;
        Ok(())
    })
}

/// Raw size over DEFLATE-compressed size of `bytes[0..n]`.
///
/// # Safety
/// `bytes` must be valid for `n` reads and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovp_compressibility(bytes: *const u8, n: usize, out: *mut f64) -> OvpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = overflow_probe::complexity::compressibility(slice_arg(bytes, n, "bytes")?)?;
        Ok(())
    })
}

/// Loads a model directory written by `train`. On success `*out` owns a new handle.
///
/// # Safety
/// `dir` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ovp_model_load(dir: *const c_char, out: *mut *mut OvpModel) -> OvpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let m = artifact::load_model(path_arg(dir)?)?;
        *out = Box::into_raw(Box::new(OvpModel(m)));
        Ok(())
    })
}

/// Feature count the model expects; 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ovp_model_input_dim(m: *const OvpModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.input_dim())
}

/// Overflow probabilities for a row-major `rows x cols` feature matrix,
/// written to `scores[0..rows]`.
///
/// # Safety
/// `m` must be a live handle, `x` valid for `rows * cols` reads and
/// `scores` valid for `rows` writes.
#[no_mangle]
pub unsafe extern "C" fn ovp_model_predict(
    m: *const OvpModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    scores: *mut f64,
) -> OvpStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("model"))?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(OvpStatus::DimensionMismatch, "rows * cols overflows".into()))?;
        let data = slice_arg(x, n, "x")?;
        let view = ArrayView2::from_shape((rows, cols), data).map_err(|e| Fail(OvpStatus::DimensionMismatch, e.to_string()))?;
        let s = predict_scores(&m.0, view)?;
        if rows > 0 && scores.is_null() {
            return Err(null("scores"));
        }
        ptr::copy_nonoverlapping(s.as_ptr(), scores, s.len());
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ovp_model_free(m: *mut OvpModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
