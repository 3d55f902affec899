//! Exercises the C ABI from Rust: handle lifecycle, stepping, summaries,
//! sampling, save/reopen, and the error paths.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use sparse_evolve_ffi::*;

const CFG: &str = r#"{
    "steps": 12,
    "batch": 8,
    "g_hidden": [12],
    "d_hidden": [12],
    "latent_dim": 4,
    "eval_interval": 6,
    "eval_samples": 64,
    "eval_projections": 2,
    "schedule": {"delta_t": 4, "p0": 0.5, "decay": "cosine", "t_end": 8}
}"#;

fn new_run(cfg: &str) -> *mut SeRun {
    let c = CString::new(cfg).unwrap();
    let mut run: *mut SeRun = ptr::null_mut();
    let status = unsafe { se_run_new(c.as_ptr(), &mut run) };
    assert_eq!(status, SeStatus::SeOk, "{}", last_error());
    assert!(!run.is_null());
    run
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(se_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn summary(run: *const SeRun) -> String {
    let mut s: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { se_run_summary_json(run, &mut s) }, SeStatus::SeOk);
    let text = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { se_string_free(s) };
    text
}

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(se_version()) }.to_str().unwrap();
    assert!(!v.is_empty());
}

#[test]
fn lifecycle_step_execute_summary() {
    let run = new_run(CFG);
    assert_eq!(unsafe { se_run_steps(run, 5) }, SeStatus::SeOk);
    let mut done = 0u64;
    assert_eq!(unsafe { se_run_steps_done(run, &mut done) }, SeStatus::SeOk);
    assert_eq!(done, 5);
    assert_eq!(unsafe { se_run_execute(run) }, SeStatus::SeOk);
    assert_eq!(unsafe { se_run_steps_done(run, &mut done) }, SeStatus::SeOk);
    assert_eq!(done, 12);

    let mut diverged = true;
    assert_eq!(unsafe { se_run_diverged(run, &mut diverged) }, SeStatus::SeOk);
    assert!(!diverged);

    let text = summary(run);
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["steps_done"], 12);
    unsafe { se_run_free(run) };
}

#[test]
fn sampling_is_deterministic_and_finite() {
    let run = new_run(CFG);
    assert_eq!(unsafe { se_run_execute(run) }, SeStatus::SeOk);
    let mut a = vec![0.0f64; 32];
    let mut b = vec![0.0f64; 32];
    assert_eq!(
        unsafe { se_run_sample(run, 16, 7, true, a.as_mut_ptr()) },
        SeStatus::SeOk
    );
    assert_eq!(
        unsafe { se_run_sample(run, 16, 7, true, b.as_mut_ptr()) },
        SeStatus::SeOk
    );
    assert_eq!(a, b);
    assert!(a.iter().all(|x| x.is_finite()));

    let mut c = vec![0.0f64; 32];
    assert_eq!(
        unsafe { se_run_sample(run, 16, 8, true, c.as_mut_ptr()) },
        SeStatus::SeOk
    );
    assert_ne!(a, c, "different seeds should draw different samples");
    unsafe { se_run_free(run) };
}

#[test]
fn save_then_reopen_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let straight = new_run(CFG);
    assert_eq!(unsafe { se_run_execute(straight) }, SeStatus::SeOk);
    let want = summary(straight);
    unsafe { se_run_free(straight) };

    let run = new_run(CFG);
    assert_eq!(unsafe { se_run_steps(run, 7) }, SeStatus::SeOk);
    let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { se_run_save(run, cdir.as_ptr()) }, SeStatus::SeOk);
    unsafe { se_run_free(run) };

    let ckpt = CString::new(dir.path().join("checkpoint.bin").to_str().unwrap().to_owned())
        .unwrap();
    let mut resumed: *mut SeRun = ptr::null_mut();
    assert_eq!(unsafe { se_run_open(ckpt.as_ptr(), &mut resumed) }, SeStatus::SeOk);
    let mut done = 0u64;
    assert_eq!(unsafe { se_run_steps_done(resumed, &mut done) }, SeStatus::SeOk);
    assert_eq!(done, 7);
    assert_eq!(unsafe { se_run_execute(resumed) }, SeStatus::SeOk);
    assert_eq!(summary(resumed), want, "resume must be bit-exact");
    unsafe { se_run_free(resumed) };
}

#[test]
fn bad_config_reports_config_error() {
    let c = CString::new(r#"{"stepz": 10}"#).unwrap();
    let mut run: *mut SeRun = ptr::null_mut();
    assert_eq!(unsafe { se_run_new(c.as_ptr(), &mut run) }, SeStatus::SeConfig);
    assert!(run.is_null());
    assert!(last_error().contains("stepz"), "error: {}", last_error());
}

#[test]
fn null_arguments_report_null_status() {
    let mut run: *mut SeRun = ptr::null_mut();
    assert_eq!(unsafe { se_run_new(ptr::null(), &mut run) }, SeStatus::SeNullArg);
    assert_eq!(unsafe { se_run_steps(ptr::null_mut(), 1) }, SeStatus::SeNullArg);
    let mut done = 0u64;
    assert_eq!(
        unsafe { se_run_steps_done(ptr::null(), &mut done) },
        SeStatus::SeNullArg
    );
    assert_eq!(
        unsafe { se_run_summary_json(ptr::null(), ptr::null_mut()) },
        SeStatus::SeNullArg
    );
    unsafe { se_run_free(ptr::null_mut()) };
    unsafe { se_string_free(ptr::null_mut()) };
}

#[test]
fn defaults_config_is_accepted() {
    let c = CString::new("{}").unwrap();
    let mut run: *mut SeRun = ptr::null_mut();
    assert_eq!(unsafe { se_run_new(c.as_ptr(), &mut run) }, SeStatus::SeOk);
    assert!(!run.is_null());
    unsafe { se_run_free(run) };
}
