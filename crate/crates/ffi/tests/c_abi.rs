use disphyp_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let p = disphyp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn family_handle_and_plane_wave() {
    let name = CString::new("sym_const").unwrap();
    let mut sys = ptr::null_mut();
    let st = unsafe { disphyp_system_from_family(name.as_ptr(), 2, &mut sys) };
    assert_eq!(st, DisphypStatus::Ok);
    let (mut m, mut n) = (0usize, 0usize);
    assert_eq!(unsafe { disphyp_system_dims(sys, &mut m, &mut n) }, DisphypStatus::Ok);
    assert_eq!((m, n), (2, 2));

    let xi = [0.3, -0.4];
    let mut out = vec![0.0; 2 * m * m];
    let st = unsafe { disphyp_propagate_direct(sys, 0.0, 0.0, xi.as_ptr(), 2, 0.0, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, DisphypStatus::Ok);
    assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    let st = unsafe { disphyp_propagate_direct(sys, 1.0, 0.0, xi.as_ptr(), 2, 0.0, out.as_mut_ptr(), 3) };
    assert_eq!(st, DisphypStatus::BufferTooSmall);
    assert!(last_error().contains("8 doubles"));
    let st = unsafe { disphyp_propagate_direct(sys, 1.0, 0.0, xi.as_ptr(), 1, 0.0, out.as_mut_ptr(), 8) };
    assert_eq!(st, DisphypStatus::Domain);
    unsafe { disphyp_system_free(sys) };
}

#[test]
fn errors_are_reported() {
    let name = CString::new("no_such_family").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { disphyp_system_from_family(name.as_ptr(), 2, &mut sys) }, DisphypStatus::Config);
    assert!(sys.is_null());
    assert!(last_error().contains("no_such_family"));
    assert_eq!(unsafe { disphyp_system_from_family(ptr::null(), 2, &mut sys) }, DisphypStatus::NullPointer);
    let bad = CString::new("{\"kind\": \"nonsense\"}").unwrap();
    assert_eq!(unsafe { disphyp_system_from_json(bad.as_ptr(), &mut sys) }, DisphypStatus::Parse);
    unsafe {
        disphyp_system_free(ptr::null_mut());
        disphyp_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(disphyp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn assumption_report_as_json() {
    let name = CString::new("sym_const").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { disphyp_system_from_family(name.as_ptr(), 2, &mut sys) }, DisphypStatus::Ok);
    let mut json = ptr::null_mut();
    let mut pass = -1;
    assert_eq!(unsafe { disphyp_check_assumptions(sys, &mut json, &mut pass) }, DisphypStatus::Ok);
    assert_eq!(pass, 1);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["all_pass"], serde_json::Value::Bool(true));
    unsafe {
        disphyp_string_free(json);
        disphyp_system_free(sys);
    }
}

#[test]
fn run_config_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let cfg = CString::new(r#"{"system": {"family": "sym_const", "n": 2}, "stages": []}"#).unwrap();
    let mut code = -1;
    assert_eq!(unsafe { disphyp_run_config(cfg.as_ptr(), out.as_ptr(), 1, &mut code) }, DisphypStatus::Ok);
    assert_eq!(code, 0);
    assert!(dir.path().join("report.json").exists());
    let cfg = CString::new(r#"{"system": {"family": "sym_const"}, "extra": true}"#).unwrap();
    assert_eq!(unsafe { disphyp_run_config(cfg.as_ptr(), out.as_ptr(), 1, &mut code) }, DisphypStatus::Parse);
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/disphyp.h")).unwrap();
    for f in [
        "disphyp_last_error",
        "disphyp_system_from_family",
        "disphyp_system_from_json",
        "disphyp_system_free",
        "disphyp_propagate_direct",
        "disphyp_check_assumptions",
        "disphyp_run_config",
        "disphyp_string_free",
        "typedef struct DisphypSystem DisphypSystem",
        "DISPHYP_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(header.contains(f), "{f}");
    }
}
