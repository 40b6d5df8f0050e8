//! C interface to `disphyp`.
//!
//! Systems are opaque handles created from a bundled family or a JSON system
//! description. Every fallible call returns a [`DisphypStatus`]; the message
//! of the most recent failure on the calling thread is available from
//! [`disphyp_last_error`]. Strings returned by the library are released with
//! [`disphyp_string_free`].

use disphyp::assumptions::{check_assumptions, AssumptionConfig};
use disphyp::error::Error;
use disphyp::propagator::{solve_direct, PropOptions};
use disphyp::runner::{parse_config, run, RunOptions};
use disphyp::systems::{family_spec, System, SystemSpec};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Result codes of the C interface.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DisphypStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Domain = 5,
    Numerical = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque system handle.
pub struct DisphypSystem {
    inner: System,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> DisphypStatus {
    match e {
        Error::Parse(_) => DisphypStatus::Parse,
        Error::Config(_) => DisphypStatus::Config,
        Error::Domain(_) | Error::Zone(_) | Error::DerivativeOrder(_) => DisphypStatus::Domain,
        Error::Io(_) | Error::Cache(_) => DisphypStatus::Io,
        _ => DisphypStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (DisphypStatus, String)>>(f: F) -> DisphypStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DisphypStatus::Ok,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            DisphypStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (DisphypStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (DisphypStatus, String)> {
    if p.is_null() {
        return Err((DisphypStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DisphypStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn export_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior nul").into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn disphyp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn disphyp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a bundled family in space dimension `n`.
///
/// # Safety
/// `name` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disphyp_system_from_family(
    name: *const c_char,
    n: usize,
    out: *mut *mut DisphypSystem,
) -> DisphypStatus {
    guard(|| {
        if out.is_null() {
            return Err((DisphypStatus::NullPointer, "out is null".into()));
        }
        let name = read_str(name, "name")?;
        let spec = family_spec(name, n).map_err(lib_err)?;
        let inner = System::from_spec(name, spec).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DisphypSystem { inner }));
        Ok(())
    })
}

/// Creates a system from a JSON system description.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disphyp_system_from_json(json: *const c_char, out: *mut *mut DisphypSystem) -> DisphypStatus {
    guard(|| {
        if out.is_null() {
            return Err((DisphypStatus::NullPointer, "out is null".into()));
        }
        let text = read_str(json, "json")?;
        let spec: SystemSpec =
            serde_json::from_str(text).map_err(|e| (DisphypStatus::Parse, format!("system json: {e}")))?;
        let inner = System::from_spec("custom", spec).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(DisphypSystem { inner }));
        Ok(())
    })
}

/// Releases a system handle. Null is ignored.
///
/// # Safety
/// `sys` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn disphyp_system_free(sys: *mut DisphypSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of unknowns `m` and space dimension `n` of a system.
///
/// # Safety
/// `sys` must be a live handle; `m` and `n` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn disphyp_system_dims(sys: *const DisphypSystem, m: *mut usize, n: *mut usize) -> DisphypStatus {
    guard(|| {
        if sys.is_null() || m.is_null() || n.is_null() {
            return Err((DisphypStatus::NullPointer, "null argument".into()));
        }
        *m = (*sys).inner.dim();
        *n = (*sys).inner.space_dim();
        Ok(())
    })
}

/// Fundamental solution `E(t, s, xi)` by direct integration, written
/// row-major as interleaved `(re, im)` pairs into `out` (`2 m^2` doubles).
///
/// # Safety
/// `sys` must be a live handle, `xi` must hold `xi_len` doubles and `out`
/// must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn disphyp_propagate_direct(
    sys: *const DisphypSystem,
    t: f64,
    s: f64,
    xi: *const f64,
    xi_len: usize,
    rtol: f64,
    out: *mut f64,
    out_len: usize,
) -> DisphypStatus {
    guard(|| {
        if sys.is_null() || xi.is_null() || out.is_null() {
            return Err((DisphypStatus::NullPointer, "null argument".into()));
        }
        let sys = &(*sys).inner;
        let m = sys.dim();
        if xi_len != sys.space_dim() {
            return Err((DisphypStatus::Domain, format!("xi has {xi_len} entries, system has n = {}", sys.space_dim())));
        }
        if out_len < 2 * m * m {
            return Err((DisphypStatus::BufferTooSmall, format!("out needs {} doubles", 2 * m * m)));
        }
        let mut opts = PropOptions::default();
        if rtol > 0.0 {
            opts.rtol = rtol;
            opts.atol = rtol * 1e-2;
        }
        let xi = std::slice::from_raw_parts(xi, xi_len);
        let e = solve_direct(sys, t, s, xi, &opts).map_err(lib_err)?;
        let out = std::slice::from_raw_parts_mut(out, out_len);
        for r in 0..m {
            for c in 0..m {
                out[2 * (r * m + c)] = e[(r, c)].re;
                out[2 * (r * m + c) + 1] = e[(r, c)].im;
            }
        }
        Ok(())
    })
}

/// Screens the structural assumptions with default settings. The report is
/// returned as JSON in `*json_out`; `*all_pass` is set to 0 or 1.
///
/// # Safety
/// `sys` must be a live handle; `json_out` and `all_pass` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn disphyp_check_assumptions(
    sys: *const DisphypSystem,
    json_out: *mut *mut c_char,
    all_pass: *mut i32,
) -> DisphypStatus {
    guard(|| {
        if sys.is_null() || json_out.is_null() || all_pass.is_null() {
            return Err((DisphypStatus::NullPointer, "null argument".into()));
        }
        let rep = check_assumptions(&(*sys).inner, &AssumptionConfig::default()).map_err(lib_err)?;
        let text = serde_json::to_string(&rep).map_err(|e| (DisphypStatus::Numerical, e.to_string()))?;
        *all_pass = rep.all_pass as i32;
        *json_out = export_string(text);
        Ok(())
    })
}

/// Runs a pipeline config given as JSON text, writing the report and CSV
/// files to `out_dir`. `*exit_code` receives 0 when every stage passed and
/// 1 otherwise; configuration errors are returned as a status instead.
///
/// # Safety
/// `config_json` and `out_dir` must be nul-terminated strings and
/// `exit_code` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn disphyp_run_config(
    config_json: *const c_char,
    out_dir: *const c_char,
    no_cache: i32,
    exit_code: *mut i32,
) -> DisphypStatus {
    guard(|| {
        if exit_code.is_null() {
            return Err((DisphypStatus::NullPointer, "exit_code is null".into()));
        }
        let cfg = parse_config(read_str(config_json, "config_json")?).map_err(lib_err)?;
        let out = PathBuf::from(read_str(out_dir, "out_dir")?);
        let opts = RunOptions { out: Some(out), no_cache: no_cache != 0, ..Default::default() };
        let outcome = run(cfg, &opts).map_err(lib_err)?;
        *exit_code = outcome.exit_code;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn disphyp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
