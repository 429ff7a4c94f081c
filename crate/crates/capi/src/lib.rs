//! C interface to `breit-lab`.
//!
//! Every function returns a [`BreitStatus`]; results come back through out
//! pointers. Handles are opaque and owned by the caller once returned, and
//! must be released with the matching `_free` function. The message for the
//! most recent failure on the calling thread is available from
//! [`breit_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use breit_core::cli::{self, RunRecord, TaskRequest};
use breit_core::model::{Config, RawConfig, Task};

/// Status codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    UnknownTask = 4,
    /// The task ran but an error or a failed tolerance was recorded.
    TaskFailed = 5,
    Serialization = 6,
    Panic = 7,
}

/// Task selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BreitTask {
    Spectrum = 0,
    Perturb = 1,
    Dynamics = 2,
    Verify = 3,
    Converge = 4,
}

impl From<BreitTask> for Task {
    fn from(t: BreitTask) -> Self {
        match t {
            BreitTask::Spectrum => Task::Spectrum,
            BreitTask::Perturb => Task::Perturb,
            BreitTask::Dynamics => Task::Dynamics,
            BreitTask::Verify => Task::Verify,
            BreitTask::Converge => Task::Converge,
        }
    }
}

/// Validated configuration.
pub struct BreitConfig {
    inner: Config,
}

/// Finished run: results, tolerance outcomes and the serialized record.
pub struct BreitRecord {
    inner: RunRecord,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

fn guard(f: impl FnOnce() -> BreitStatus) -> BreitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            BreitStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, BreitStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(BreitStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        BreitStatus::InvalidUtf8
    })
}

/// NUL-terminated message for the last failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn breit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn breit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse `text` (config file syntax), apply `n_overrides` `key=value`
/// strings and validate.
///
/// # Safety
/// `text` must be a NUL-terminated string; `overrides` must point to
/// `n_overrides` such strings (or be null when the count is zero); `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn breit_config_parse(
    text: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut BreitConfig,
) -> BreitStatus {
    guard(|| {
        if out.is_null() || (overrides.is_null() && n_overrides > 0) {
            set_error("null pointer argument");
            return BreitStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let mut raw = match RawConfig::parse(text) {
            Ok(r) => r,
            Err(e) => {
                set_error(e.to_string());
                return BreitStatus::InvalidConfig;
            }
        };
        for i in 0..n_overrides {
            let kv = match read_str(*overrides.add(i)) {
                Ok(t) => t,
                Err(s) => return s,
            };
            if let Err(e) = raw.set(kv) {
                set_error(e.to_string());
                return BreitStatus::InvalidConfig;
            }
        }
        match raw.validate() {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(BreitConfig { inner }));
                BreitStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                BreitStatus::InvalidConfig
            }
        }
    })
}

/// Effective configuration rendered in file syntax. Free the string with
/// [`breit_string_free`].
///
/// # Safety
/// `config` must come from [`breit_config_parse`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn breit_config_text(config: *const BreitConfig, out: *mut *mut c_char) -> BreitStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            set_error("null pointer argument");
            return BreitStatus::NullPointer;
        }
        match CString::new((*config).inner.to_text()) {
            Ok(s) => {
                *out = s.into_raw();
                BreitStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                BreitStatus::Serialization
            }
        }
    })
}

/// # Safety
/// `config` must come from [`breit_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn breit_config_free(config: *mut BreitConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run `task`. Companion CSV files are written next to `output_path` when
/// it is non-null; otherwise nothing touches the file system except tasks
/// that always write tables, which then use the current directory.
///
/// The record is returned in `out` whenever the task was attempted, also
/// when the status is [`BreitStatus::TaskFailed`].
///
/// # Safety
/// `config` must come from [`breit_config_parse`]; `output_path` must be
/// null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn breit_run(
    config: *const BreitConfig,
    task: BreitTask,
    output_path: *const c_char,
    out: *mut *mut BreitRecord,
) -> BreitStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            set_error("null pointer argument");
            return BreitStatus::NullPointer;
        }
        *out = ptr::null_mut();
        let task: Task = task.into();
        let output = if output_path.is_null() {
            PathBuf::from(format!("{}.json", task.as_str()))
        } else {
            match read_str(output_path) {
                Ok(p) => PathBuf::from(p),
                Err(s) => return s,
            }
        };
        let req = TaskRequest::new(task, (*config).inner.clone(), output.clone());
        let rec = cli::run(&req);
        if !output_path.is_null() {
            if let Err(e) = rec.write(&output) {
                set_error(e.to_string());
                return BreitStatus::Serialization;
            }
        }
        let json = match serde_json::to_string(&rec).map(CString::new) {
            Ok(Ok(s)) => s,
            _ => {
                set_error("record serialization failed");
                return BreitStatus::Serialization;
            }
        };
        let passed = rec.passed;
        if let Some(e) = &rec.error {
            set_error(e.clone());
        } else if !passed {
            set_error("a tolerance was not met");
        }
        *out = Box::into_raw(Box::new(BreitRecord { inner: rec, json }));
        if passed {
            BreitStatus::Ok
        } else {
            BreitStatus::TaskFailed
        }
    })
}

/// Parse a task name (`spectrum`, `perturb`, ...).
///
/// # Safety
/// `name` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn breit_task_from_name(name: *const c_char, out: *mut BreitTask) -> BreitStatus {
    guard(|| {
        if out.is_null() {
            set_error("null pointer argument");
            return BreitStatus::NullPointer;
        }
        let name = match read_str(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let t = match name.parse::<Task>() {
            Ok(t) => t,
            Err(e) => {
                set_error(e.to_string());
                return BreitStatus::UnknownTask;
            }
        };
        *out = match t {
            Task::Spectrum => BreitTask::Spectrum,
            Task::Perturb => BreitTask::Perturb,
            Task::Dynamics => BreitTask::Dynamics,
            Task::Verify => BreitTask::Verify,
            Task::Converge => BreitTask::Converge,
        };
        BreitStatus::Ok
    })
}

/// 1 when every tolerance was met, else 0; -1 for a null handle.
///
/// # Safety
/// `record` must come from [`breit_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn breit_record_passed(record: *const BreitRecord) -> i32 {
    if record.is_null() {
        return -1;
    }
    i32::from((*record).inner.passed)
}

/// Copy up to `capacity` entries of a numeric array from the results
/// payload (for example `eigenvalues` or `binding_energies`) into `values`,
/// and store the array length in `len`. Pass `capacity = 0` to query the
/// length.
///
/// # Safety
/// `record` must come from [`breit_run`]; `key` must be NUL-terminated;
/// `values` must have room for `capacity` doubles; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn breit_record_array(
    record: *const BreitRecord,
    key: *const c_char,
    values: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> BreitStatus {
    guard(|| {
        if record.is_null() || len.is_null() || (values.is_null() && capacity > 0) {
            set_error("null pointer argument");
            return BreitStatus::NullPointer;
        }
        let key = match read_str(key) {
            Ok(k) => k,
            Err(s) => return s,
        };
        let arr = match (*record).inner.results.get(key).and_then(|v| v.as_array()) {
            Some(a) => a,
            None => {
                set_error(format!("no array `{key}` in the results"));
                return BreitStatus::Serialization;
            }
        };
        *len = arr.len();
        for (i, v) in arr.iter().take(capacity).enumerate() {
            *values.add(i) = v.as_f64().unwrap_or(f64::NAN);
        }
        BreitStatus::Ok
    })
}

/// Borrow the JSON run record. The pointer lives as long as the handle.
///
/// # Safety
/// `record` must come from [`breit_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn breit_record_json(record: *const BreitRecord) -> *const c_char {
    if record.is_null() {
        return ptr::null();
    }
    (*record).json.as_ptr()
}

/// # Safety
/// `record` must come from [`breit_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn breit_record_free(record: *mut BreitRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn breit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
