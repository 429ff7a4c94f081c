use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use breit_capi::*;

const FREE_PAIR: &str = "mass2 = 1\nalpha_eff = 0\ngrid_n = 8\nbox_length = 10\n";

fn parse(text: &str, overrides: &[&str]) -> (BreitStatus, *mut BreitConfig) {
    let text = CString::new(text).unwrap();
    let owned: Vec<CString> = overrides.iter().map(|s| CString::new(*s).unwrap()).collect();
    let ptrs: Vec<*const _> = owned.iter().map(|s| s.as_ptr()).collect();
    let mut cfg = ptr::null_mut();
    let st = unsafe { breit_config_parse(text.as_ptr(), ptrs.as_ptr(), ptrs.len(), &mut cfg) };
    (st, cfg)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(breit_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn config_round_trip_through_text() {
    let (st, cfg) = parse(FREE_PAIR, &["grid_n=12", "seed=3"]);
    assert_eq!(st, BreitStatus::Ok);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { breit_config_text(cfg, &mut s) }, BreitStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe {
        breit_string_free(s);
        breit_config_free(cfg);
    }
    assert!(text.contains("grid_n = 12"));
    assert!(text.contains("seed = 3"));
    let (st, again) = parse(&text, &[]);
    assert_eq!(st, BreitStatus::Ok);
    unsafe { breit_config_free(again) };
}

#[test]
fn invalid_config_reports_code_and_message() {
    let (st, cfg) = parse(FREE_PAIR, &["grid_n=7"]);
    assert_eq!(st, BreitStatus::InvalidConfig);
    assert!(cfg.is_null());
    assert!(last_error().contains("grid_n"), "{}", last_error());
    let (st, _) = parse("alpha_eff = 0.1\n", &[]);
    assert_eq!(st, BreitStatus::InvalidConfig);
    assert!(last_error().contains("mass2"));
}

#[test]
fn null_and_utf8_guards() {
    let mut cfg = ptr::null_mut();
    let st = unsafe { breit_config_parse(ptr::null(), ptr::null(), 0, &mut cfg) };
    assert_eq!(st, BreitStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    let st = unsafe { breit_config_parse(bad.as_ptr().cast(), ptr::null(), 0, &mut cfg) };
    assert_eq!(st, BreitStatus::InvalidUtf8);
    let st = unsafe { breit_run(ptr::null(), BreitTask::Spectrum, ptr::null(), ptr::null_mut()) };
    assert_eq!(st, BreitStatus::NullPointer);
    assert_eq!(unsafe { breit_record_passed(ptr::null()) }, -1);
    assert!(unsafe { breit_record_json(ptr::null()) }.is_null());
    unsafe {
        breit_config_free(ptr::null_mut());
        breit_record_free(ptr::null_mut());
        breit_string_free(ptr::null_mut());
    }
}

#[test]
fn task_names() {
    let mut t = BreitTask::Spectrum;
    let name = CString::new("dynamics").unwrap();
    assert_eq!(unsafe { breit_task_from_name(name.as_ptr(), &mut t) }, BreitStatus::Ok);
    assert_eq!(t, BreitTask::Dynamics);
    let name = CString::new("orbit").unwrap();
    assert_eq!(unsafe { breit_task_from_name(name.as_ptr(), &mut t) }, BreitStatus::UnknownTask);
}

#[test]
fn free_spectrum_run_and_arrays() {
    let (_, cfg) = parse(FREE_PAIR, &["n_states=2"]);
    let out = std::env::temp_dir().join("breit_capi_free.json");
    let path = CString::new(out.to_str().unwrap()).unwrap();
    let mut rec = ptr::null_mut();
    let st = unsafe { breit_run(cfg, BreitTask::Spectrum, path.as_ptr(), &mut rec) };
    assert_eq!(st, BreitStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { breit_record_passed(rec) }, 1);

    let key = CString::new("binding_energies").unwrap();
    let mut len = 0usize;
    assert_eq!(unsafe { breit_record_array(rec, key.as_ptr(), ptr::null_mut(), 0, &mut len) }, BreitStatus::Ok);
    assert_eq!(len, 2);
    let mut vals = vec![f64::NAN; len];
    unsafe { breit_record_array(rec, key.as_ptr(), vals.as_mut_ptr(), len, &mut len) };
    assert!(vals.iter().all(|e| e.abs() < 1e-8), "{vals:?}");

    let json = unsafe { CStr::from_ptr(breit_record_json(rec)) }.to_str().unwrap().to_owned();
    let on_disk = std::fs::read_to_string(&out).unwrap();
    let a: serde_json::Value = serde_json::from_str(&json).unwrap();
    let b: serde_json::Value = serde_json::from_str(&on_disk).unwrap();
    assert_eq!(a["results"], b["results"]);

    let missing = CString::new("no_such_key").unwrap();
    let st = unsafe { breit_record_array(rec, missing.as_ptr(), ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, BreitStatus::Serialization);
    unsafe {
        breit_record_free(rec);
        breit_config_free(cfg);
    }
}

#[test]
fn failed_tolerance_still_returns_record() {
    let (_, cfg) = parse(FREE_PAIR, &["alpha_eff=0.3", "tol=1e-14", "max_iter=2"]);
    let mut rec = ptr::null_mut();
    let st = unsafe { breit_run(cfg, BreitTask::Spectrum, ptr::null(), &mut rec) };
    assert_eq!(st, BreitStatus::TaskFailed);
    assert!(!rec.is_null());
    assert_eq!(unsafe { breit_record_passed(rec) }, 0);
    unsafe {
        breit_record_free(rec);
        breit_config_free(cfg);
    }
}

#[test]
fn header_is_current_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/breit_lab.h")).unwrap();
    for sym in [
        "breit_config_parse",
        "breit_config_text",
        "breit_config_free",
        "breit_run",
        "breit_task_from_name",
        "breit_record_passed",
        "breit_record_array",
        "breit_record_json",
        "breit_record_free",
        "breit_string_free",
        "breit_last_error",
        "breit_version",
        "typedef struct BreitConfig BreitConfig;",
        "BREIT_STATUS_TASK_FAILED = 5",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
    let src = std::env::temp_dir().join("breit_capi_header_check.c");
    std::fs::write(
        &src,
        "#include \"breit_lab.h\"\nint main(void) { BreitConfig *c = 0; (void)c; return BREIT_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C99"),
        Err(_) => eprintln!("no C compiler on PATH; syntax check skipped"),
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(breit_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
