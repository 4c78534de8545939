//! C ABI over `mbt-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns an
//! [`MbtStatus`]; on failure the message is available from
//! [`mbt_last_error_message`] on the same thread. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`mbt_string_free`]. Panics are caught and reported as
//! [`MbtStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mbt_core::agents::{self, AgentConfig};
use mbt_core::assessment::{extract_metrics, form_to_json, grade_run, RubricConfig};
use mbt_core::error::Error;
use mbt_core::fidelity::{
    parse_traces, summarize, verify_simulation, ClearanceLog, ReplayOptions, Thresholds,
};
use mbt_core::harness::generator::{generate_scenario, Pattern, PatternSpec};
use mbt_core::harness::runlog::{parse_jsonl, to_jsonl};
use mbt_core::harness::scenario_file::ScenarioFile;
use mbt_core::irr::{irr_report, parse_scores, IrrOptions};
use mbt_core::safety::{detect_los, SeparationMinima};
use mbt_core::simcore::{run_scenario, RunLog, Scenario, SimConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MbtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidValue = 3,
    Config = 4,
    Parse = 5,
    NotFound = 6,
    Numerical = 7,
    Undefined = 8,
    TruncatedLog = 9,
    Io = 10,
    Panic = 11,
}

impl From<&Error> for MbtStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DegenerateGeometry(_) | Error::InvalidValue(_) => MbtStatus::InvalidValue,
            Error::Config(_) => MbtStatus::Config,
            Error::Parse { .. } => MbtStatus::Parse,
            Error::NotFound(_) => MbtStatus::NotFound,
            Error::Numerical(_) => MbtStatus::Numerical,
            Error::Undefined(_) => MbtStatus::Undefined,
            Error::TruncatedLog(_) => MbtStatus::TruncatedLog,
            Error::Io { .. } => MbtStatus::Io,
        }
    }
}

/// A validated scenario.
pub struct MbtScenario {
    file: ScenarioFile,
    scenario: Scenario,
}

/// A completed run.
pub struct MbtRunLog {
    log: RunLog,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MbtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(MbtStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MbtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MbtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            MbtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MbtStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MbtStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(MbtStatus::NullArgument, format!("{name} is null")))
}

fn check_out<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(MbtStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn string_out(s: String) -> *mut c_char {
    CString::new(s.replace('\0', ""))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mbt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mbt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned through an out-parameter of this
/// library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mbt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn scenario_handle(file: ScenarioFile) -> Result<*mut MbtScenario, Failure> {
    let scenario = file.to_scenario()?;
    Ok(Box::into_raw(Box::new(MbtScenario { file, scenario })))
}

/// Parse a scenario from JSON text.
///
/// # Safety
/// `json` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_scenario_from_json(
    json: *const c_char,
    out: *mut *mut MbtScenario,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let text = str_arg(json, "json")?;
        *out = scenario_handle(ScenarioFile::parse(text)?)?;
        Ok(())
    })
}

/// Load a scenario file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_scenario_load(
    path: *const c_char,
    out: *mut *mut MbtScenario,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let path = str_arg(path, "path")?;
        *out = scenario_handle(ScenarioFile::load(path)?)?;
        Ok(())
    })
}

/// Generate a scenario. `pattern` is catch-up, crossing, reciprocal or
/// mixed.
///
/// # Safety
/// `pattern` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_scenario_generate(
    pattern: *const c_char,
    n_aircraft: usize,
    difficulty: f64,
    seed: u64,
    out: *mut *mut MbtScenario,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let spec = PatternSpec {
            pattern: str_arg(pattern, "pattern")?.parse::<Pattern>()?,
            n_aircraft,
            difficulty,
            seed,
        };
        *out = scenario_handle(generate_scenario(&spec)?)?;
        Ok(())
    })
}

/// Canonical JSON of a scenario.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_scenario_to_json(
    scenario: *const MbtScenario,
    out: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = string_out(ref_arg(scenario, "scenario")?.file.to_json());
        Ok(())
    })
}

/// # Safety
/// `scenario` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_scenario_aircraft_count(
    scenario: *const MbtScenario,
    out: *mut usize,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ref_arg(scenario, "scenario")?.scenario.entries.len();
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mbt_scenario_free(scenario: *mut MbtScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Run `scenario` under the named agent (null, hawk or falcon) with default
/// settings.
///
/// # Safety
/// `scenario` must be a live handle, `agent` a valid C string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_simulate(
    scenario: *const MbtScenario,
    agent: *const c_char,
    seed: u64,
    out: *mut *mut MbtRunLog,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = ref_arg(scenario, "scenario")?;
        let mut a = agents::build(str_arg(agent, "agent")?, &AgentConfig::default(), seed)?;
        let log = run_scenario(&s.scenario, a.as_mut(), &SimConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(MbtRunLog { log }));
        Ok(())
    })
}

/// Parse a run log from its line-delimited JSON text.
///
/// # Safety
/// `jsonl` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_runlog_from_jsonl(
    jsonl: *const c_char,
    out: *mut *mut MbtRunLog,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let log = parse_jsonl(str_arg(jsonl, "jsonl")?)?;
        *out = Box::into_raw(Box::new(MbtRunLog { log }));
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_runlog_to_jsonl(
    log: *const MbtRunLog,
    out: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = string_out(to_jsonl(&ref_arg(log, "log")?.log));
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_runlog_event_count(
    log: *const MbtRunLog,
    out: *mut usize,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = ref_arg(log, "log")?.log.events.len();
        Ok(())
    })
}

/// Losses of separation in a run of `scenario`, at the default minima.
///
/// # Safety
/// `log` and `scenario` must be live handles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_runlog_los_count(
    log: *const MbtRunLog,
    scenario: *const MbtScenario,
    out: *mut usize,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let l = ref_arg(log, "log")?;
        let s = ref_arg(scenario, "scenario")?;
        *out = detect_los(&l.log, s.scenario.wind, &SeparationMinima::default()).len();
        Ok(())
    })
}

/// # Safety
/// `log` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mbt_runlog_free(log: *mut MbtRunLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Grading form JSON for a run of `scenario` under the default rubric.
///
/// # Safety
/// `log` and `scenario` must be live handles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_grade_run(
    log: *const MbtRunLog,
    scenario: *const MbtScenario,
    out: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let l = ref_arg(log, "log")?;
        let s = ref_arg(scenario, "scenario")?;
        let metrics = extract_metrics(&l.log, &s.scenario, &SeparationMinima::default())?;
        *out = string_out(form_to_json(&grade_run(&metrics, &RubricConfig::default())));
        Ok(())
    })
}

/// Fidelity summary JSON for one reference simulation: trace CSV text and
/// clearance log JSON text, replayed against `scenario`.
///
/// # Safety
/// `scenario` must be a live handle, the texts valid C strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_fidelity_summary(
    scenario: *const MbtScenario,
    traces_csv: *const c_char,
    clearances_json: *const c_char,
    out: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let s = ref_arg(scenario, "scenario")?;
        let traces = parse_traces(str_arg(traces_csv, "traces_csv")?)?;
        let clearances = ClearanceLog::parse(
            str_arg(clearances_json, "clearances_json")?,
            s.scenario.pilot_delay,
        )?;
        let outcomes = verify_simulation(
            &traces,
            &clearances,
            &s.scenario,
            &ReplayOptions::default(),
            &Thresholds::default(),
        )?;
        let summary = summarize(&s.scenario.id, &[outcomes]);
        *out = string_out(serde_json::to_string_pretty(&summary).expect("summary serializes"));
        Ok(())
    })
}

/// Inter-rater reliability report JSON for score CSV text. Zero
/// `permutations` skips the permutation test.
///
/// # Safety
/// `scores_csv` must be a valid C string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mbt_irr_report(
    scores_csv: *const c_char,
    permutations: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> MbtStatus {
    guard(|| {
        check_out(out, "out")?;
        let matrix = parse_scores(str_arg(scores_csv, "scores_csv")?)?;
        let options = IrrOptions {
            permutations,
            seed,
            ..IrrOptions::default()
        };
        let report = irr_report(&matrix, &options)?;
        *out = string_out(serde_json::to_string_pretty(&report).expect("report serializes"));
        Ok(())
    })
}
