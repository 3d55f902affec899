//! C ABI over the training engine: opaque run handles, integer status
//! codes, caller-freed strings. Every entry point catches panics, so the
//! boundary never unwinds into foreign frames.
//!
//! Ownership rules:
//!   - `SeRun` handles come from `se_run_new`/`se_run_open` and must be
//!     released with `se_run_free`.
//!   - Strings returned through `char**` out-params must be released with
//!     `se_string_free`.
//!   - `se_version` and `se_last_error` return borrowed pointers; never
//!     free them. The error string is valid until the next failing call
//!     on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use sparse_evolve::gan::WeightSource;
use sparse_evolve::train::{sample_generator, write_run_dir, TrainConfig, Trainer};
use sparse_evolve::Error;

/// Opaque handle to one training run.
pub struct SeRun {
    trainer: Trainer,
}

/// Result code for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeStatus {
    /// Success.
    SeOk = 0,
    /// A required pointer argument was null.
    SeNullArg = 1,
    /// A string argument was not valid UTF-8.
    SeUtf8 = 2,
    /// The configuration was rejected (unknown key, bad value, bad JSON).
    SeConfig = 3,
    /// Training produced a non-finite value; the run stays usable and
    /// reports partial results.
    SeDiverged = 4,
    /// Filesystem failure while saving or loading.
    SeIo = 5,
    /// Argument outside the callee's domain (shape, range, contract).
    SeInvalid = 6,
    /// An internal panic was caught at the boundary.
    SePanic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).expect("nul bytes stripped");
    });
}

fn status_of(e: &Error) -> SeStatus {
    match e {
        Error::NonFinite(_) => SeStatus::SeDiverged,
        Error::Io(_) => SeStatus::SeIo,
        Error::Config(_) | Error::Json(_) => SeStatus::SeConfig,
        _ => SeStatus::SeInvalid,
    }
}

fn fail(e: &Error) -> SeStatus {
    set_error(&e.to_string());
    status_of(e)
}

/// Runs `f` with panics converted to `SePanic`.
fn guarded(f: impl FnOnce() -> SeStatus) -> SeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&msg);
            SeStatus::SePanic
        }
    }
}

/// Safety:
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, SeStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(SeStatus::SeNullArg);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        SeStatus::SeUtf8
    })
}

fn give_string(s: String, out: *mut *mut c_char) -> SeStatus {
    let clean: String = s.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    let c = CString::new(clean).expect("nul bytes stripped");
    unsafe { *out = c.into_raw() };
    SeStatus::SeOk
}

/// Library version as a static string. Do not free.
#[no_mangle]
pub extern "C" fn se_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Borrowed; do not
/// free. Empty string when no failure has occurred.
#[no_mangle]
pub extern "C" fn se_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a run from a JSON configuration document. An empty object
/// selects the built-in defaults; unknown keys are rejected.
///
/// Safety:
/// `config_json` must be a valid NUL-terminated string, `out` a valid
/// pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn se_run_new(
    config_json: *const c_char,
    out: *mut *mut SeRun,
) -> SeStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return SeStatus::SeNullArg;
        }
        let text = match read_str(config_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg: TrainConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return SeStatus::SeConfig;
            }
        };
        match Trainer::new(&cfg) {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(SeRun { trainer }));
                SeStatus::SeOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Reopens a run from a checkpoint file written by `se_run_save`
/// (`<dir>/checkpoint.bin`). The run resumes bit-exactly.
///
/// Safety:
/// `path` must be a valid NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_run_open(path: *const c_char, out: *mut *mut SeRun) -> SeStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return SeStatus::SeNullArg;
        }
        let path = match read_str(path) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match Trainer::load_checkpoint(Path::new(path)) {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(SeRun { trainer }));
                SeStatus::SeOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Advances the run by `n` steps. On divergence the run keeps its partial
/// results and further stepping is a no-op.
///
/// Safety:
/// `run` must be a live handle from `se_run_new`/`se_run_open`.
#[no_mangle]
pub unsafe extern "C" fn se_run_steps(run: *mut SeRun, n: u64) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_mut() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        match r.trainer.run_steps(n) {
            Ok(()) => SeStatus::SeOk,
            Err(e) => fail(&e),
        }
    })
}

/// Runs the remaining planned steps (config `steps` minus steps done).
///
/// Safety:
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn se_run_execute(run: *mut SeRun) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_mut() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        let remaining = r.trainer.planned_steps().saturating_sub(r.trainer.steps_done());
        match r.trainer.run_steps(remaining) {
            Ok(()) => SeStatus::SeOk,
            Err(e) => fail(&e),
        }
    })
}

/// Steps completed so far.
///
/// Safety:
/// `run` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_run_steps_done(run: *const SeRun, out: *mut u64) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        if out.is_null() {
            set_error("null out pointer");
            return SeStatus::SeNullArg;
        }
        *out = r.trainer.steps_done();
        SeStatus::SeOk
    })
}

/// Whether training hit a non-finite value.
///
/// Safety:
/// `run` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_run_diverged(run: *const SeRun, out: *mut bool) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        if out.is_null() {
            set_error("null out pointer");
            return SeStatus::SeNullArg;
        }
        *out = r.trainer.diverged();
        SeStatus::SeOk
    })
}

/// Serializes the run's results (config, metric rows, exploration events,
/// FLOPs ratios, mask hashes) as a JSON document. Free with
/// `se_string_free`.
///
/// Safety:
/// `run` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn se_run_summary_json(
    run: *const SeRun,
    out: *mut *mut c_char,
) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        if out.is_null() {
            set_error("null out pointer");
            return SeStatus::SeNullArg;
        }
        match serde_json::to_string(&r.trainer.result()) {
            Ok(s) => give_string(s, out),
            Err(e) => {
                set_error(&e.to_string());
                SeStatus::SeConfig
            }
        }
    })
}

/// Draws `n` generator samples into `out_xy` as interleaved x,y pairs
/// (`2*n` doubles). `averaged` selects the weight-averaged generator;
/// otherwise the raw current weights are used. Deterministic in `seed`.
///
/// Safety:
/// `run` must be a live handle; `out_xy` must point to at least `2*n`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn se_run_sample(
    run: *const SeRun,
    n: usize,
    seed: u64,
    averaged: bool,
    out_xy: *mut f64,
) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        if out_xy.is_null() {
            set_error("null out pointer");
            return SeStatus::SeNullArg;
        }
        let source = if averaged {
            WeightSource::Averaged
        } else {
            WeightSource::Current
        };
        match sample_generator(&r.trainer.g, source, r.trainer.cfg.latent_dim, n, seed) {
            Ok(t) => {
                std::ptr::copy_nonoverlapping(t.data().as_ptr(), out_xy, t.len());
                SeStatus::SeOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Writes a complete run directory (config.json, metrics.csv, events.log,
/// summary.json, final masks, checkpoint.bin) under `dir`, creating it if
/// needed. The checkpoint reopens with `se_run_open`.
///
/// Safety:
/// `run` must be a live handle, `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn se_run_save(run: *const SeRun, dir: *const c_char) -> SeStatus {
    guarded(|| {
        let Some(r) = run.as_ref() else {
            set_error("null run handle");
            return SeStatus::SeNullArg;
        };
        let dir = match read_str(dir) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let result = r.trainer.result();
        match write_run_dir(Path::new(dir), &result, Some(&r.trainer)) {
            Ok(()) => SeStatus::SeOk,
            Err(e) => fail(&e),
        }
    })
}

/// Releases a run handle. Null is a no-op.
///
/// Safety:
/// `run` must be null or a live handle; the handle is dead afterwards.
#[no_mangle]
pub unsafe extern "C" fn se_run_free(run: *mut SeRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Releases a string returned through a `char**` out-param. Null is a
/// no-op.
///
/// Safety:
/// `s` must be null or exactly as returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn se_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
