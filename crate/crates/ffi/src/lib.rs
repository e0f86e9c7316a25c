//! C ABI for uleak.
//!
//! Objects are opaque handles created by `*_parse` / `*_load` functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`UleakStatus`]; on failure [`uleak_last_error`] describes the problem.
//! Strings returned to the caller must be released with
//! [`uleak_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use uleak::asm::{parse_program, Program};
use uleak::corpus::corpus_entry;
use uleak::harness::{run_campaign, run_input, CampaignConfig, InputAssignment, Interface, Outcome, Verdict};
use uleak::models::LeakageConfig;
use uleak::speculation::PredictorConfig;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UleakStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ConfigError = 4,
    RuntimeError = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UleakVerdictClass {
    Secure = 0,
    Leak = 1,
    Timeout = 2,
    Error = 3,
}

pub struct UleakProgram {
    name: String,
    program: Program,
}

pub struct UleakInterface {
    interface: Interface,
}

pub struct UleakVerdict {
    verdict: Verdict,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

struct Error(UleakStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Error>) -> UleakStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UleakStatus::Ok
        }
        Ok(Err(Error(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UleakStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Error> {
    if p.is_null() {
        return Err(Error(UleakStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error(UleakStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Error> {
    p.as_ref()
        .ok_or_else(|| Error(UleakStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut *mut T, what: &str) -> Result<(), Error> {
    if p.is_null() {
        Err(Error(UleakStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn config_error(msg: impl ToString) -> Error {
    Error(UleakStatus::ConfigError, msg.to_string())
}

/// Builds clause configurations; `params` is null or a comma-separated list
/// of `name=value` overrides.
unsafe fn configs(
    leakage: *const c_char,
    predictor: *const c_char,
    params: *const c_char,
) -> Result<(LeakageConfig, PredictorConfig), Error> {
    let l = str_arg(leakage, "leakage")?;
    let p = str_arg(predictor, "predictor")?;
    let mut lc = LeakageConfig::by_name(l).ok_or_else(|| config_error(format!("unknown leakage model '{l}'")))?;
    let mut pc = PredictorConfig::by_name(p).ok_or_else(|| config_error(format!("unknown predictor '{p}'")))?;
    if !params.is_null() {
        for kv in str_arg(params, "params")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| config_error(format!("parameter '{kv}' is not name=value")))?;
            let r = if lc.model.params().contains(&k.trim()) {
                lc.set_param(k.trim(), v.trim())
            } else {
                pc.set_param(k.trim(), v.trim())
            };
            r.map_err(config_error)?;
        }
    }
    Ok((lc, pc))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap().into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn uleak_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn uleak_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses assembly source.
///
/// # Safety
/// `source` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uleak_program_parse(source: *const c_char, out: *mut *mut UleakProgram) -> UleakStatus {
    guard(|| {
        out_arg(out, "out")?;
        let src = str_arg(source, "source")?;
        let program = parse_program(src).map_err(|e| Error(UleakStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(UleakProgram {
            name: "program".into(),
            program,
        }));
        Ok(())
    })
}

/// Number of instructions in `program`, or 0 if it is null.
///
/// # Safety
/// `program` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uleak_program_len(program: *const UleakProgram) -> usize {
    program.as_ref().map_or(0, |p| p.program.instructions.len())
}

/// # Safety
/// `program` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uleak_program_free(program: *mut UleakProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// Parses a TOML interface description.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uleak_interface_parse(text: *const c_char, out: *mut *mut UleakInterface) -> UleakStatus {
    guard(|| {
        out_arg(out, "out")?;
        let interface =
            Interface::parse(str_arg(text, "text")?).map_err(|e| Error(UleakStatus::ParseError, e.to_string()))?;
        *out = Box::into_raw(Box::new(UleakInterface { interface }));
        Ok(())
    })
}

/// # Safety
/// `interface` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uleak_interface_free(interface: *mut UleakInterface) {
    if !interface.is_null() {
        drop(Box::from_raw(interface));
    }
}

/// Loads a bundled corpus entry's program and interface.
///
/// # Safety
/// `name` must be a valid NUL-terminated string; both out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn uleak_corpus_load(
    name: *const c_char,
    program_out: *mut *mut UleakProgram,
    interface_out: *mut *mut UleakInterface,
) -> UleakStatus {
    guard(|| {
        out_arg(program_out, "program_out")?;
        out_arg(interface_out, "interface_out")?;
        let n = str_arg(name, "name")?;
        let e = corpus_entry(n).ok_or_else(|| config_error(format!("no corpus entry '{n}'")))?;
        *program_out = Box::into_raw(Box::new(UleakProgram {
            name: e.name,
            program: e.program,
        }));
        *interface_out = Box::into_raw(Box::new(UleakInterface { interface: e.interface }));
        Ok(())
    })
}

/// Runs a campaign of `cases` low-equivalent input pairs.
///
/// # Safety
/// Handles must be live; strings NUL-terminated (`params` may be null);
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn uleak_campaign_run(
    program: *const UleakProgram,
    interface: *const UleakInterface,
    leakage: *const c_char,
    predictor: *const c_char,
    params: *const c_char,
    cases: u64,
    seed: u64,
    jobs: u32,
    out: *mut *mut UleakVerdict,
) -> UleakStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = ref_arg(program, "program")?;
        let i = ref_arg(interface, "interface")?;
        i.interface.check_program(&p.program).map_err(config_error)?;
        let (lc, pc) = configs(leakage, predictor, params)?;
        if cases == 0 {
            return Err(config_error("cases must be at least 1"));
        }
        let cfg = CampaignConfig {
            cases,
            seed,
            jobs: jobs.max(1) as usize,
            ..CampaignConfig::new(lc, pc)
        };
        let verdict = run_campaign(&p.program, &p.name, &i.interface, &cfg);
        *out = Box::into_raw(Box::new(UleakVerdict { verdict }));
        Ok(())
    })
}

/// Class of a verdict; `Error` for a null handle.
///
/// # Safety
/// `verdict` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uleak_verdict_class(verdict: *const UleakVerdict) -> UleakVerdictClass {
    match verdict.as_ref().map(|v| &v.verdict.outcome) {
        Some(Outcome::Secure { .. }) => UleakVerdictClass::Secure,
        Some(Outcome::Leak(_)) => UleakVerdictClass::Leak,
        Some(Outcome::Timeout { .. }) => UleakVerdictClass::Timeout,
        Some(Outcome::Error { .. }) | None => UleakVerdictClass::Error,
    }
}

/// The verdict's one-line machine report; free with `uleak_string_free`.
///
/// # Safety
/// `verdict` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn uleak_verdict_report(verdict: *const UleakVerdict) -> *mut c_char {
    match verdict.as_ref() {
        Some(v) => into_c_string(v.verdict.machine_line()),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `verdict` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uleak_verdict_free(verdict: *mut UleakVerdict) {
    if !verdict.is_null() {
        drop(Box::from_raw(verdict));
    }
}

/// Dumps the leakage trace for one input given as hex.
///
/// # Safety
/// Handles must be live; strings NUL-terminated (`params` may be null);
/// `out` must be a valid pointer. The result is freed with
/// `uleak_string_free`.
#[no_mangle]
pub unsafe extern "C" fn uleak_trace_dump(
    program: *const UleakProgram,
    interface: *const UleakInterface,
    leakage: *const c_char,
    predictor: *const c_char,
    params: *const c_char,
    input_hex: *const c_char,
    out: *mut *mut c_char,
) -> UleakStatus {
    guard(|| {
        if out.is_null() {
            return Err(Error(UleakStatus::NullPointer, "out is null".into()));
        }
        let p = ref_arg(program, "program")?;
        let i = ref_arg(interface, "interface")?;
        let (lc, pc) = configs(leakage, predictor, params)?;
        let input = InputAssignment::from_hex(&i.interface, str_arg(input_hex, "input_hex")?)
            .map_err(|e| Error(UleakStatus::ParseError, e.to_string()))?;
        let r = run_input(&p.program, &i.interface, &input, &lc, &pc, None)
            .map_err(|e| Error(UleakStatus::RuntimeError, e.to_string()))?;
        *out = into_c_string(r.trace.dump());
        Ok(())
    })
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn uleak_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
