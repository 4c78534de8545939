use std::ffi::{c_char, CStr, CString};
use std::ptr;

use mbt_ffi::*;

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { mbt_string_free(p) };
    s
}

fn last_error() -> String {
    let p = mbt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn generate(pattern: &str, n: usize, seed: u64) -> *mut MbtScenario {
    let pattern = CString::new(pattern).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_scenario_generate(pattern.as_ptr(), n, 1.0, seed, &mut s) },
        MbtStatus::Ok
    );
    s
}

#[test]
fn simulate_grade_and_round_trip() {
    let scenario = generate("reciprocal", 2, 3);
    let mut count = 0;
    assert_eq!(
        unsafe { mbt_scenario_aircraft_count(scenario, &mut count) },
        MbtStatus::Ok
    );
    assert_eq!(count, 2);

    let agent = CString::new("null").unwrap();
    let mut log = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_simulate(scenario, agent.as_ptr(), 3, &mut log) },
        MbtStatus::Ok
    );
    let mut los = 0;
    assert_eq!(
        unsafe { mbt_runlog_los_count(log, scenario, &mut los) },
        MbtStatus::Ok
    );
    assert!(los >= 1);

    let mut form = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_grade_run(log, scenario, &mut form) },
        MbtStatus::Ok
    );
    let form: serde_json::Value = serde_json::from_str(&take_string(form)).unwrap();
    assert_eq!(form["grades"][0]["competency"], "Safety");
    assert_eq!(form["grades"][0]["level"], "Not Achieved");

    let mut text = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_runlog_to_jsonl(log, &mut text) },
        MbtStatus::Ok
    );
    let text = CString::new(take_string(text)).unwrap();
    let mut again = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_runlog_from_jsonl(text.as_ptr(), &mut again) },
        MbtStatus::Ok
    );
    let (mut a, mut b) = (0, 0);
    unsafe {
        mbt_runlog_event_count(log, &mut a);
        mbt_runlog_event_count(again, &mut b);
    }
    assert_eq!(a, b);

    unsafe {
        mbt_runlog_free(log);
        mbt_runlog_free(again);
        mbt_scenario_free(scenario);
    }
}

#[test]
fn scenario_json_round_trips() {
    let scenario = generate("crossing", 4, 9);
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_scenario_to_json(scenario, &mut json) },
        MbtStatus::Ok
    );
    let json = take_string(json);
    let c = CString::new(json.clone()).unwrap();
    let mut parsed = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_scenario_from_json(c.as_ptr(), &mut parsed) },
        MbtStatus::Ok
    );
    let mut json2 = ptr::null_mut();
    unsafe { mbt_scenario_to_json(parsed, &mut json2) };
    assert_eq!(take_string(json2), json);
    unsafe {
        mbt_scenario_free(parsed);
        mbt_scenario_free(scenario);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut s = ptr::null_mut();
    let bad = CString::new("{ not json").unwrap();
    assert_eq!(
        unsafe { mbt_scenario_from_json(bad.as_ptr(), &mut s) },
        MbtStatus::Parse
    );
    assert!(s.is_null());
    assert!(last_error().contains("line"));

    assert_eq!(
        unsafe { mbt_scenario_from_json(ptr::null(), &mut s) },
        MbtStatus::NullArgument
    );
    assert!(last_error().contains("json"));

    let pattern = CString::new("spiral").unwrap();
    assert_eq!(
        unsafe { mbt_scenario_generate(pattern.as_ptr(), 2, 1.0, 0, &mut s) },
        MbtStatus::Config
    );

    let path = CString::new("/nonexistent/scenario.json").unwrap();
    assert_eq!(
        unsafe { mbt_scenario_load(path.as_ptr(), &mut s) },
        MbtStatus::Io
    );

    let one_rater =
        CString::new("scenario_id,rater_id,competency,grade\nS1,A,Safety,3\nS2,A,Safety,2\n")
            .unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_irr_report(one_rater.as_ptr(), 0, 0, &mut out) },
        MbtStatus::InvalidValue
    );

    let scenario = generate("reciprocal", 2, 1);
    let agent = CString::new("eagle").unwrap();
    let mut log = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_simulate(scenario, agent.as_ptr(), 0, &mut log) },
        MbtStatus::Config
    );
    assert!(last_error().contains("eagle"));
    unsafe { mbt_scenario_free(scenario) };

    // Success clears the message.
    let s = generate("crossing", 2, 1);
    assert!(mbt_last_error_message().is_null());
    unsafe { mbt_scenario_free(s) };
}

#[test]
fn irr_and_fidelity_reports() {
    let csv = CString::new(
        "scenario_id,rater_id,competency,grade\nS1,A,Safety,1\nS1,B,Safety,1\nS2,A,Safety,2\nS2,B,Safety,2\nS3,A,Safety,4\nS3,B,Safety,4\n",
    )
    .unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_irr_report(csv.as_ptr(), 200, 1, &mut out) },
        MbtStatus::Ok
    );
    let report: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(report["kendall_w"], 1.0);
    assert!(report["permutation"]["p_value"].as_f64().unwrap() > 0.0);

    // Self-replay through the C interface: traces and clearances from a run.
    let scenario = generate("crossing", 2, 4);
    let agent = CString::new("hawk").unwrap();
    let mut log = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_simulate(scenario, agent.as_ptr(), 4, &mut log) },
        MbtStatus::Ok
    );
    let mut jsonl = ptr::null_mut();
    unsafe { mbt_runlog_to_jsonl(log, &mut jsonl) };
    let run = mbt_core::harness::runlog::parse_jsonl(&take_string(jsonl)).unwrap();
    let traces = mbt_core::fidelity::traces_to_csv(&mbt_core::fidelity::traces_from_run_log(&run));
    let clearances = mbt_core::fidelity::ClearanceLog::from_run_log(&run).to_json(None);
    let (t, c) = (
        CString::new(traces).unwrap(),
        CString::new(clearances).unwrap(),
    );
    let mut summary = ptr::null_mut();
    assert_eq!(
        unsafe { mbt_fidelity_summary(scenario, t.as_ptr(), c.as_ptr(), &mut summary) },
        MbtStatus::Ok
    );
    let summary: serde_json::Value = serde_json::from_str(&take_string(summary)).unwrap();
    assert_eq!(summary["aircraft_in_threshold_pct"], 100.0);
    assert_eq!(summary["horizontal_error_nm"]["mean"], 0.0);
    unsafe {
        mbt_runlog_free(log);
        mbt_scenario_free(scenario);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        mbt_scenario_free(ptr::null_mut());
        mbt_runlog_free(ptr::null_mut());
        mbt_string_free(ptr::null_mut());
    }
    let v = unsafe { CStr::from_ptr(mbt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/mbt.h");
    for f in [
        "mbt_last_error_message",
        "mbt_version",
        "mbt_string_free",
        "mbt_scenario_from_json",
        "mbt_scenario_load",
        "mbt_scenario_generate",
        "mbt_scenario_to_json",
        "mbt_scenario_aircraft_count",
        "mbt_scenario_free",
        "mbt_simulate",
        "mbt_runlog_from_jsonl",
        "mbt_runlog_to_jsonl",
        "mbt_runlog_event_count",
        "mbt_runlog_los_count",
        "mbt_runlog_free",
        "mbt_grade_run",
        "mbt_fidelity_summary",
        "mbt_irr_report",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct MbtScenario MbtScenario;"));
    assert!(header.contains("MBT_STATUS_PANIC = 11"));
}
