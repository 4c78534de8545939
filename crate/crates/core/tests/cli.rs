use std::path::Path;
use std::process::{Command, Output};

fn mbt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbt"))
        .args(args)
        .current_dir(dir)
        .env_remove("MBT_CONFIG")
        .output()
        .expect("mbt runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = mbt(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn scenario_and_run(dir: &Path) {
    ok(
        &[
            "generate",
            "--pattern",
            "crossing",
            "--aircraft",
            "3",
            "--seed",
            "2",
            "--out",
            "s.json",
        ],
        dir,
    );
    ok(
        &[
            "simulate",
            "--scenario",
            "s.json",
            "--seed",
            "2",
            "--out",
            "run.jsonl",
        ],
        dir,
    );
}

#[test]
fn missing_scenario_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbt(
        &["simulate", "--scenario", "nope.json", "--out", "run.jsonl"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn assess_needs_three_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("suite")).unwrap();
    for name in ["suite/a.json", "suite/b.json"] {
        ok(
            &[
                "generate",
                "--pattern",
                "catch_up",
                "--seed",
                "1",
                "--out",
                name,
            ],
            dir.path(),
        );
    }
    let out = mbt(
        &["assess", "--suite", "suite", "--report", "r.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn irr_rejects_single_rater_and_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("one.csv"),
        "scenario_id,rater_id,competency,grade\nS1,R1,Safety,4\nS2,R1,Safety,2\n",
    )
    .unwrap();
    assert_eq!(
        code(&mbt(
            &["irr", "--scores", "one.csv", "--report", "r.json"],
            dir.path()
        )),
        2
    );

    std::fs::write(
        dir.path().join("bad.csv"),
        "scenario_id,rater_id,competency,grade\nS1,R1,Safety,4\nS1,R2,Safety\n",
    )
    .unwrap();
    let out = mbt(
        &["irr", "--scores", "bad.csv", "--report", "r.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains('3'));
}

#[test]
fn irr_without_permutations_omits_the_test() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("scenario_id,rater_id,competency,grade\n");
    for (s, grades) in [
        ("S1", [4, 4, 3]),
        ("S2", [2, 1, 2]),
        ("S3", [3, 3, 4]),
        ("S4", [1, 2, 1]),
    ] {
        for (r, g) in grades.iter().enumerate() {
            csv.push_str(&format!("{s},R{r},Safety,{g}\n"));
        }
    }
    std::fs::write(dir.path().join("scores.csv"), csv).unwrap();
    ok(
        &[
            "irr",
            "--scores",
            "scores.csv",
            "--permutations",
            "0",
            "--report",
            "r.json",
        ],
        dir.path(),
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert!(report.get("permutation").is_none());
    assert!(report["kendall_w"].as_f64().unwrap() > 0.5);
}

#[test]
fn strict_fidelity_exits_three_when_flagged() {
    let dir = tempfile::tempdir().unwrap();
    scenario_and_run(dir.path());
    ok(
        &[
            "replay",
            "--run",
            "run.jsonl",
            "--plot-data",
            "plot.csv",
            "--trace",
            "trace.csv",
            "--clearances",
            "c.json",
        ],
        dir.path(),
    );
    let base = [
        "fidelity",
        "--reference",
        "trace.csv",
        "--clearances",
        "c.json",
        "--scenario",
        "s.json",
        "--summary",
        "sum.json",
    ];
    ok(&base, dir.path());
    let mut drifted = base.to_vec();
    drifted.extend(["--wind-delta-x", "60", "--strict"]);
    assert_eq!(code(&mbt(&drifted, dir.path())), 3);
    drifted.pop();
    ok(&drifted, dir.path());
}

#[test]
fn wind_off_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &[
            "generate",
            "--pattern",
            "crossing",
            "--seed",
            "4",
            "--out",
            "s.json",
        ],
        dir.path(),
    );
    let mut scenario: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    scenario["wind"] = serde_json::json!({ "x_kt": 30.0, "y_kt": -20.0 });
    std::fs::write(dir.path().join("s.json"), scenario.to_string()).unwrap();
    ok(
        &[
            "simulate",
            "--scenario",
            "s.json",
            "--agent",
            "null",
            "--out",
            "a.jsonl",
        ],
        dir.path(),
    );
    ok(
        &[
            "simulate",
            "--scenario",
            "s.json",
            "--agent",
            "null",
            "--out",
            "b.jsonl",
            "--wind-off",
        ],
        dir.path(),
    );
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b.jsonl")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn replay_of_empty_run_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    scenario_and_run(dir.path());
    let run = std::fs::read_to_string(dir.path().join("run.jsonl")).unwrap();
    let lines: Vec<&str> = run.lines().collect();
    let empty = format!(
        "{}\n{}\n",
        lines[0], r#"{"footer":{"complete":true,"final_time":0.0,"event_count":0}}"#
    );
    std::fs::write(dir.path().join("empty.jsonl"), empty).unwrap();
    ok(
        &["replay", "--run", "empty.jsonl", "--plot-data", "plot.csv"],
        dir.path(),
    );
    assert_eq!(
        std::fs::read_to_string(dir.path().join("plot.csv")).unwrap(),
        "time_s,callsign,x_nm,y_nm,fl,event,detail\n"
    );
}

#[test]
fn coverage_lists_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["coverage"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["counts"]["in_scope"], 39);
}
