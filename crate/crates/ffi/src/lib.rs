//! C ABI over the stylization model and the perceptual metric.
//!
//! Conventions, mirrored in the generated `include/pqdast.h`:
//!
//! - every fallible call returns a [`PqdastStatus`]; `Ok` is zero
//! - after a failure, [`pqdast_last_error`] returns a message that stays
//!   valid on the calling thread until its next failing call
//! - images are planar float32 RGB: channel-major (c, y, x), values in
//!   [0, 1], `3 * height * width` elements
//! - model handles are opaque, thread-compatible (no interior mutability),
//!   and freed exactly once with [`pqdast_model_free`]
//!
//! Every entry point catches panics; a panic across the ABI would be
//! undefined behavior, so internal assertion failures surface as
//! `RuntimeError` instead.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::Array3;
use pqdast::flip::{flip_score, FlipParams};
use pqdast::nn::{Role, StyleModel};
use pqdast::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PqdastStatus {
    /// The call succeeded.
    Ok = 0,
    /// A pointer was null or an argument was out of contract.
    InvalidArgument = 1,
    /// The file could not be read or written.
    IoError = 2,
    /// The file exists but is not a usable checkpoint.
    BadCheckpoint = 3,
    /// An internal failure; the message has details.
    RuntimeError = 4,
}

/// Opaque handle to a loaded stylization model.
pub struct PqdastModel {
    inner: StyleModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let safe = CString::new(msg.replace('\0', " ")).expect("nul-free");
    LAST_ERROR.with(|e| *e.borrow_mut() = safe);
}

fn fail(status: PqdastStatus, msg: String) -> PqdastStatus {
    set_error(msg);
    status
}

fn fail_err(err: Error) -> PqdastStatus {
    let status = match &err {
        Error::InvalidInput(_) | Error::InvalidParams(_) | Error::ShapeMismatch { .. } => {
            PqdastStatus::InvalidArgument
        }
        Error::BadFile { .. } | Error::SchemaVersion { .. } => PqdastStatus::BadCheckpoint,
        Error::Io(_) | Error::Image(_) => PqdastStatus::IoError,
        _ => PqdastStatus::RuntimeError,
    };
    fail(status, err.to_string())
}

/// Runs `body` with panics converted to `RuntimeError`.
fn guarded(body: impl FnOnce() -> PqdastStatus) -> PqdastStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            fail(PqdastStatus::RuntimeError, msg)
        }
    }
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; never free it.
/// Returns an empty string if nothing failed yet.
#[no_mangle]
pub extern "C" fn pqdast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint into a new model handle written to `out`. On failure
/// `out` is untouched.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pqdast_model_load(path: *const c_char, out: *mut *mut PqdastModel) -> PqdastStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(PqdastStatus::InvalidArgument, "null pointer".into());
        }
        let path = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => Path::new(s),
            Err(_) => return fail(PqdastStatus::InvalidArgument, "path is not valid UTF-8".into()),
        };
        match StyleModel::<f32>::load(path) {
            Ok(inner) => {
                unsafe { *out = Box::into_raw(Box::new(PqdastModel { inner })) };
                PqdastStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Frees a handle from `pqdast_model_load()`. Null is a no-op.
///
/// # Safety
/// `model` must be a handle returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn pqdast_model_free(model: *mut PqdastModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Returns 1 for a student (compressed) model, 0 for a teacher, -1 on null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pqdast_model_is_student(model: *const PqdastModel) -> c_int {
    if model.is_null() {
        return -1;
    }
    match unsafe { &*model }.inner.role() {
        Role::Student => 1,
        Role::Teacher => 0,
    }
}

/// Stylizes one content image with one style image into `out`
/// (`3 * height * width` floats, clamped to [0, 1]). Both sides of each
/// image must be multiples of 16 and at least 32.
///
/// # Safety
/// `content` must point to `3 * height * width` readable floats, `style` to
/// `3 * style_height * style_width`, and `out` to `3 * height * width`
/// writable floats; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pqdast_stylize(
    model: *const PqdastModel,
    content: *const f32,
    height: usize,
    width: usize,
    style: *const f32,
    style_height: usize,
    style_width: usize,
    out: *mut f32,
) -> PqdastStatus {
    guarded(|| {
        if model.is_null() || content.is_null() || style.is_null() || out.is_null() {
            return fail(PqdastStatus::InvalidArgument, "null pointer".into());
        }
        let content = match image_from_raw(content, height, width, "content") {
            Ok(img) => img,
            Err(status) => return status,
        };
        let style = match image_from_raw(style, style_height, style_width, "style") {
            Ok(img) => img,
            Err(status) => return status,
        };
        match unsafe { &*model }.inner.stylize(&content, &style) {
            Ok(stylized) => {
                let flat = stylized.as_standard_layout();
                let dst = unsafe { std::slice::from_raw_parts_mut(out, flat.len()) };
                for (d, s) in dst.iter_mut().zip(flat.iter()) {
                    *d = *s;
                }
                PqdastStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// Perceptual difference between two same-sized images under the given
/// viewing condition (pixels per degree; 67 is the usual default). Writes a
/// score in [0, 1] to `out_score`, 0 meaning identical.
///
/// # Safety
/// `reference` and `test` must each point to `3 * height * width` readable
/// floats and `out_score` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn pqdast_flip_score(
    reference: *const f32,
    test: *const f32,
    height: usize,
    width: usize,
    ppd: f64,
    out_score: *mut f64,
) -> PqdastStatus {
    guarded(|| {
        if reference.is_null() || test.is_null() || out_score.is_null() {
            return fail(PqdastStatus::InvalidArgument, "null pointer".into());
        }
        let reference = match image_from_raw(reference, height, width, "reference") {
            Ok(img) => img,
            Err(status) => return status,
        };
        let test = match image_from_raw(test, height, width, "test") {
            Ok(img) => img,
            Err(status) => return status,
        };
        let params = FlipParams { ppd, ..FlipParams::default() };
        match flip_score(&reference, &test, &params) {
            Ok(score) => {
                unsafe { *out_score = score as f64 };
                PqdastStatus::Ok
            }
            Err(e) => fail_err(e),
        }
    })
}

/// # Safety
/// `data` must point to `3 * height * width` readable floats.
unsafe fn image_from_raw(
    data: *const f32,
    height: usize,
    width: usize,
    what: &str,
) -> Result<Array3<f32>, PqdastStatus> {
    let len = 3usize
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .filter(|&n| n > 0)
        .ok_or_else(|| fail(PqdastStatus::InvalidArgument, format!("{what}: bad size {height}x{width}")))?;
    let slice = unsafe { std::slice::from_raw_parts(data, len) };
    Array3::from_shape_vec((3, height, width), slice.to_vec())
        .map_err(|e| fail(PqdastStatus::InvalidArgument, format!("{what}: {e}")))
}
