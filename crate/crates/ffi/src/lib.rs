//! C ABI over `cobo-core`.
//!
//! Objects are handed out as opaque pointers and must be released with the
//! matching `*_free` function. Every fallible call returns a [`CoboStatus`];
//! on failure, [`cobo_last_error`] describes the most recent error on the
//! calling thread. Strings returned through out-parameters are owned by the
//! caller and released with [`cobo_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cobo_core::algorithms::{run_experiment, AlgorithmKind, Trajectory};
use cobo_core::harness::output::metrics_csv;
use cobo_core::harness::{verify_theory, ExperimentConfig};
use cobo_core::tasks::ClusterLayout;
use cobo_core::vector::{project_box, project_simplex};
use cobo_core::{Error, Vector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoboStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    ParseError = 4,
    UnknownAlgorithm = 5,
    NotApplicable = 6,
    NonFinite = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Parsed and validated experiment configuration.
pub struct CoboConfig {
    inner: ExperimentConfig,
}

/// Result of one training run.
pub struct CoboTrajectory {
    traj: Trajectory,
    layout: ClusterLayout,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: CoboStatus, msg: impl Into<String>) -> CoboStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> CoboStatus {
    let status = match &err {
        Error::Config { .. } => CoboStatus::InvalidConfig,
        Error::Parse(_) | Error::Json(_) => CoboStatus::ParseError,
        Error::SimplexNotApplicable(_) | Error::ConstantsUnavailable => CoboStatus::NotApplicable,
        Error::NonFinite { .. } => CoboStatus::NonFinite,
        Error::EmptyBatch => CoboStatus::InvalidConfig,
        Error::Io(_) | Error::Csv(_) => CoboStatus::Io,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), CoboStatus>) -> CoboStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CoboStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CoboStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, CoboStatus> {
    if p.is_null() {
        return Err(fail(CoboStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CoboStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, CoboStatus> {
    p.as_ref()
        .ok_or_else(|| fail(CoboStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, CoboStatus> {
    p.as_mut()
        .ok_or_else(|| fail(CoboStatus::NullPointer, format!("{name} is null")))
}

fn into_c_string(text: String) -> Result<*mut c_char, CoboStatus> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| fail(CoboStatus::Io, "output contains a NUL byte"))
}

/// Message for the last failed call on this thread. Empty after a successful
/// call. Valid until the next `cobo_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cobo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cobo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a JSON experiment config.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobo_config_from_json(json: *const c_char, out: *mut *mut CoboConfig) -> CoboStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = ExperimentConfig::from_json_str(str_arg(json, "json")?).map_err(from_core)?;
        *out = Box::into_raw(Box::new(CoboConfig { inner }));
        Ok(())
    })
}

/// Overrides the training seed.
///
/// # Safety
/// `config` must come from `cobo_config_from_json`.
#[no_mangle]
pub unsafe extern "C" fn cobo_config_set_seed(config: *mut CoboConfig, seed: u64) -> CoboStatus {
    guard(|| {
        out_arg(config, "config")?.inner.train.seed = seed;
        Ok(())
    })
}

/// Serializes the config (with defaults filled in) to JSON.
///
/// # Safety
/// `config` must come from `cobo_config_from_json`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cobo_config_to_json(config: *const CoboConfig, out: *mut *mut c_char) -> CoboStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(ref_arg(config, "config")?.inner.to_json_string())?;
        Ok(())
    })
}

/// # Safety
/// `config` must come from `cobo_config_from_json` or be null.
#[no_mangle]
pub unsafe extern "C" fn cobo_config_free(config: *mut CoboConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds the configured task set and trains `algorithm` on it
/// (`"cobo"`, `"local"`, `"fedavg"`, `"finetune_fedavg"`, `"ditto"`,
/// `"ifca"` or `"oracle"`).
///
/// # Safety
/// `config` must come from `cobo_config_from_json`, `algorithm` must be a
/// NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cobo_run(
    config: *const CoboConfig,
    algorithm: *const c_char,
    out: *mut *mut CoboTrajectory,
) -> CoboStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &ref_arg(config, "config")?.inner;
        let name = str_arg(algorithm, "algorithm")?;
        let kind = AlgorithmKind::from_name(name)
            .ok_or_else(|| fail(CoboStatus::UnknownAlgorithm, format!("unknown algorithm `{name}`")))?;
        let tasks = cfg.build_tasks().map_err(from_core)?;
        let traj = run_experiment(kind, &tasks, &cfg.train).map_err(from_core)?;
        *out = Box::into_raw(Box::new(CoboTrajectory {
            traj,
            layout: tasks.layout,
        }));
        Ok(())
    })
}

/// # Safety
/// `traj` must come from `cobo_run` or be null.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_free(traj: *mut CoboTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of metric records (round 0 plus one per recorded round).
///
/// # Safety
/// `traj` must come from `cobo_run`.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_num_records(traj: *const CoboTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.records.len())
}

/// Number of clients.
///
/// # Safety
/// `traj` must come from `cobo_run`.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_num_clients(traj: *const CoboTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.final_models.len())
}

/// Mean client loss at the last record.
///
/// # Safety
/// `traj` must come from `cobo_run`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_final_loss(traj: *const CoboTrajectory, out: *mut f64) -> CoboStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(traj, "traj")?.traj.last().mean_loss();
        Ok(())
    })
}

/// Recovery error at the last record. Returns `NotApplicable` in simplex mode.
///
/// # Safety
/// `traj` must come from `cobo_run`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_final_recovery_error(
    traj: *const CoboTrajectory,
    out: *mut f64,
) -> CoboStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        match ref_arg(traj, "traj")?.traj.last().recovery_error {
            Some(e) => {
                *out = e;
                Ok(())
            }
            None => Err(fail(CoboStatus::NotApplicable, "recovery error is not defined in simplex mode")),
        }
    })
}

/// Copies the final n x n collaboration matrix, row-major, into `buf`.
/// `len` is the capacity of `buf`; `BufferTooSmall` is returned if it is
/// below n*n.
///
/// # Safety
/// `traj` must come from `cobo_run`; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_final_weights(
    traj: *const CoboTrajectory,
    buf: *mut f64,
    len: usize,
) -> CoboStatus {
    guard(|| {
        let w = &ref_arg(traj, "traj")?.traj.final_weights.entries;
        if len < w.len() {
            return Err(fail(CoboStatus::BufferTooSmall, format!("need {} entries, got {len}", w.len())));
        }
        if buf.is_null() {
            return Err(fail(CoboStatus::NullPointer, "buf is null"));
        }
        std::slice::from_raw_parts_mut(buf, w.len()).copy_from_slice(w);
        Ok(())
    })
}

/// Per-round metrics as CSV text, in the same format the CLI writes.
///
/// # Safety
/// `traj` must come from `cobo_run`; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cobo_trajectory_metrics_csv(traj: *const CoboTrajectory, out: *mut *mut c_char) -> CoboStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let t = ref_arg(traj, "traj")?;
        let bytes = metrics_csv(&t.traj, &t.layout).map_err(from_core)?;
        *out = into_c_string(String::from_utf8(bytes).map_err(|_| fail(CoboStatus::Io, "CSV is not UTF-8"))?)?;
        Ok(())
    })
}

/// Runs the bound check for a quadratic task config. Writes the report as
/// JSON to `out_json` and whether a bound was violated to `out_violated`.
///
/// # Safety
/// `config` must come from `cobo_config_from_json`; out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cobo_verify_theory(
    config: *const CoboConfig,
    out_json: *mut *mut c_char,
    out_violated: *mut bool,
) -> CoboStatus {
    guard(|| {
        let out_json = out_arg(out_json, "out_json")?;
        let out_violated = out_arg(out_violated, "out_violated")?;
        let (report, _) = verify_theory(&ref_arg(config, "config")?.inner).map_err(from_core)?;
        *out_json = into_c_string(serde_json::to_string_pretty(&report).map_err(|e| from_core(e.into()))?)?;
        *out_violated = report.violated();
        Ok(())
    })
}

/// # Safety
/// `s` must be a string returned by this library, or null.
#[no_mangle]
pub unsafe extern "C" fn cobo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn project(
    input: *const f64,
    output: *mut f64,
    len: usize,
    f: fn(&Vector) -> Vector,
) -> Result<(), CoboStatus> {
    if input.is_null() || output.is_null() {
        return Err(fail(CoboStatus::NullPointer, "input or output is null"));
    }
    let v = std::slice::from_raw_parts(input, len).to_vec();
    let v = Vector::try_from_vec(v).ok_or_else(|| fail(CoboStatus::NonFinite, "input has non-finite entries"))?;
    std::slice::from_raw_parts_mut(output, len).copy_from_slice(f(&v).as_slice());
    Ok(())
}

/// Euclidean projection of `input` onto the probability simplex.
/// `input` and `output` may alias.
///
/// # Safety
/// Both buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cobo_project_simplex(input: *const f64, output: *mut f64, len: usize) -> CoboStatus {
    guard(|| {
        if len == 0 {
            return Err(fail(CoboStatus::InvalidConfig, "cannot project onto an empty simplex"));
        }
        project(input, output, len, project_simplex)
    })
}

/// Entrywise clamp of `input` to [0, 1]. `input` and `output` may alias.
///
/// # Safety
/// Both buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cobo_project_box(input: *const f64, output: *mut f64, len: usize) -> CoboStatus {
    guard(|| project(input, output, len, project_box))
}
