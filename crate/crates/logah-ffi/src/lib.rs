//! C ABI for the low-rank hypernetwork library.
//!
//! Conventions:
//! - every fallible call returns a [`LogahStatus`]; `LOGAH_STATUS_OK` is 0
//! - on error, [`logah_last_error_message`] returns a thread-local,
//!   NUL-terminated description valid until the next failing call
//! - handles (`LogahCheckpoint`) are opaque; free them with the matching
//!   `*_free` function, never with `free()`

use libc::c_char;
use logah::archspace::ArchKind;
use logah::workflows::{generate_dataset_files, preset_spec, write_initialization};
use logah::LogahError;
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result code of every fallible C-ABI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogahStatus {
    LogahStatusOk = 0,
    LogahStatusNullArgument = 1,
    LogahStatusInvalidUtf8 = 2,
    LogahStatusInvalidArgument = 3,
    LogahStatusIoError = 4,
    LogahStatusRuntimeError = 5,
    LogahStatusPanic = 6,
}

use LogahStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &LogahError) -> LogahStatus {
    match err {
        LogahError::Io(_) => LogahStatusIoError,
        LogahError::Config(_) | LogahError::Parse(_) | LogahError::InvalidSpec(_) => {
            LogahStatusInvalidArgument
        }
        _ => LogahStatusRuntimeError,
    }
}

fn fail(err: &LogahError) -> LogahStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Run `f` with panics converted to `LOGAH_STATUS_PANIC`.
fn guarded(f: impl FnOnce() -> LogahStatus) -> LogahStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            LogahStatusPanic
        }
    }
}

/// `Ok(path)` or an error status already recorded.
unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, LogahStatus> {
    if ptr.is_null() {
        set_error("null pointer argument");
        return Err(LogahStatusNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        LogahStatusInvalidUtf8
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn logah_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the most recent error on this thread. Never NULL; empty
/// string when no error has occurred. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn logah_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Dense (GHN-3-style) decoder parameter count:
/// `4*d^2*256 + 32*d^2 + 8*d^3 + d*num_classes`.
#[no_mangle]
pub extern "C" fn logah_ghn3_decoder_param_count(d: u64, num_classes: u64) -> u64 {
    logah::costmodel::ghn3_decoder_params(d, num_classes)
}

/// Low-rank decoder parameter count: `4*d^2 + 32*d^2 + 8*d*2*r^2 + r*k`.
#[no_mangle]
pub extern "C" fn logah_lowrank_decoder_param_count(d: u64, r: u64, k: u64) -> u64 {
    logah::costmodel::logah_decoder_params(d, r, k)
}

/// Sample `count` architectures of `kind` ("vit" or "gpt2") under a
/// parameter cap and write them to `out_path` as JSONL, plus a histogram CSV
/// sidecar at `<out_path>.hist.csv`.
///
/// # Safety
/// `kind` and `out_path` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn logah_generate_dataset(
    kind: *const c_char,
    count: usize,
    seed: u64,
    cap: u64,
    out_path: *const c_char,
) -> LogahStatus {
    guarded(|| {
        let kind = match cstr(kind) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let out = match cstr(out_path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let kind: ArchKind = match kind.parse() {
            Ok(k) => k,
            Err(e) => return fail(&e),
        };
        match generate_dataset_files(kind, count, seed, cap, Path::new(out)) {
            Ok(_) => LogahStatusOk,
            Err(e) => fail(&e),
        }
    })
}

/// Opaque trained-hypernetwork checkpoint handle.
pub struct LogahCheckpoint {
    inner: logah::Checkpoint,
}

/// Load a checkpoint file into a new handle stored in `*out`. On failure
/// `*out` is left untouched.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn logah_checkpoint_load(
    path: *const c_char,
    out: *mut *mut LogahCheckpoint,
) -> LogahStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return LogahStatusNullArgument;
        }
        let path = match cstr(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match logah::Checkpoint::load(Path::new(path)) {
            Ok(ckpt) => {
                *out = Box::into_raw(Box::new(LogahCheckpoint { inner: ckpt }));
                LogahStatusOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Optimizer step count stored in the checkpoint; 0 for a NULL handle.
///
/// # Safety
/// `handle` must be NULL or a live handle from [`logah_checkpoint_load`].
#[no_mangle]
pub unsafe extern "C" fn logah_checkpoint_step(handle: *const LogahCheckpoint) -> u64 {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.step as u64
}

/// Release a handle. NULL is a no-op.
///
/// # Safety
/// `handle` must be NULL or a live handle from [`logah_checkpoint_load`];
/// it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn logah_checkpoint_free(handle: *mut LogahCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Predict the full parameter set of a preset architecture ("vit-s",
/// "vit-b", "vit-l", "gpt2-s", "gpt2-m", "gpt2-l") and write it as a
/// named-tensor archive directory at `out_dir`. When `fallback_count` is
/// non-NULL it receives the number of tensors the decoder could not predict
/// (routed to the variance-scaled fallback initializer).
///
/// # Safety
/// `handle` must be a live handle; `preset` and `out_dir` valid
/// NUL-terminated strings; `fallback_count` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn logah_predict_preset(
    handle: *const LogahCheckpoint,
    preset: *const c_char,
    out_dir: *const c_char,
    fallback_count: *mut u64,
) -> LogahStatus {
    guarded(|| {
        if handle.is_null() {
            set_error("null checkpoint handle");
            return LogahStatusNullArgument;
        }
        let preset = match cstr(preset) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let out_dir = match cstr(out_dir) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let spec = match preset_spec(preset) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        match write_initialization(&(*handle).inner, &spec, Path::new(out_dir)) {
            Ok(set) => {
                if !fallback_count.is_null() {
                    *fallback_count = set.fallback.len() as u64;
                }
                LogahStatusOk
            }
            Err(e) => fail(&e),
        }
    })
}
