//! Time-series CSV of a run for external plotting.
//!
//! Columns: `time_s,callsign,x_nm,y_nm,fl,event,detail`. Snapshot rows have
//! an empty `event`. Other rows mark entries, exits, clearances, rejections
//! and losses of separation (`los`, one row per aircraft of the pair).
//! Position columns are empty when no state is known at that time.

use std::collections::HashMap;

use crate::airspace::{Position2D, Vector2D};
use crate::safety::{detect_los, SeparationMinima};
use crate::simcore::{EventKind, RunLog};

pub const PLOT_HEADER: [&str; 7] = [
    "time_s", "callsign", "x_nm", "y_nm", "fl", "event", "detail",
];

/// Shortest round-trip form, without a trailing `.0` on integers.
pub fn fmt_num(x: f64) -> String {
    format!("{x}")
}

struct Row {
    time: f64,
    callsign: String,
    at: Option<(Position2D, f64)>,
    event: &'static str,
    detail: String,
}

pub fn plot_data_csv(log: &RunLog, wind: Vector2D, minima: &SeparationMinima) -> String {
    let dt = log.header.dt;
    let tick = |t: f64| (t / dt).round() as i64;
    let mut states: HashMap<(i64, &str), (Position2D, f64)> = HashMap::new();
    for ev in &log.events {
        if let EventKind::StateSnapshot { state } = &ev.kind {
            states.insert(
                (tick(ev.time), state.callsign.as_str()),
                (state.pos, state.fl),
            );
        }
    }
    let lookup = |t: f64, cs: &str| states.get(&(tick(t), cs)).copied();

    let mut rows: Vec<Row> = Vec::new();
    for ev in &log.events {
        let row = match &ev.kind {
            EventKind::StateSnapshot { state } => Row {
                time: ev.time,
                callsign: state.callsign.clone(),
                at: Some((state.pos, state.fl)),
                event: "",
                detail: String::new(),
            },
            EventKind::Entered { callsign } => Row {
                time: ev.time,
                callsign: callsign.clone(),
                at: lookup(ev.time, callsign),
                event: "entered",
                detail: String::new(),
            },
            EventKind::Exited { callsign, pos, fl } => Row {
                time: ev.time,
                callsign: callsign.clone(),
                at: Some((*pos, *fl)),
                event: "exited",
                detail: String::new(),
            },
            EventKind::ClearanceIssued {
                clearance,
                rationale,
                ..
            } => Row {
                time: ev.time,
                callsign: clearance.callsign.clone(),
                at: lookup(ev.time, &clearance.callsign),
                event: "clearance",
                detail: if rationale.is_empty() {
                    clearance.kind.to_string()
                } else {
                    format!("{}: {rationale}", clearance.kind)
                },
            },
            EventKind::Rejected { callsign, reason } => Row {
                time: ev.time,
                callsign: callsign.clone(),
                at: lookup(ev.time, callsign),
                event: "rejected",
                detail: reason.clone(),
            },
        };
        rows.push(row);
    }
    for los in detect_los(log, wind, minima) {
        let snap_time = (los.time / dt).floor() * dt;
        for (me, other) in [(&los.pair.0, &los.pair.1), (&los.pair.1, &los.pair.0)] {
            rows.push(Row {
                time: los.time,
                callsign: me.clone(),
                at: lookup(snap_time, me),
                event: "los",
                detail: format!(
                    "with {other} until {} s, min {:.2} NM / {:.1} FL",
                    fmt_num(los.end_time),
                    los.min_lateral,
                    los.min_vertical
                ),
            });
        }
    }
    // Stable: events at equal times keep log order, losses after them.
    rows.sort_by(|a, b| a.time.total_cmp(&b.time));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(PLOT_HEADER).expect("in-memory write");
    for r in rows {
        let (x, y, fl) = match r.at {
            Some((p, fl)) => (fmt_num(p.x), fmt_num(p.y), fmt_num(fl)),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            fmt_num(r.time),
            r.callsign,
            x,
            y,
            fl,
            r.event.to_string(),
            r.detail,
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::NullAgent;
    use crate::harness::generator::{generate_scenario, Pattern, PatternSpec};
    use crate::simcore::{run_scenario, RunHeader, SimConfig};

    #[test]
    fn null_reciprocal_run_has_los_rows() {
        let spec = PatternSpec {
            n_aircraft: 2,
            ..PatternSpec::new(Pattern::Reciprocal, 3)
        };
        let scenario = generate_scenario(&spec).unwrap().to_scenario().unwrap();
        let log = run_scenario(&scenario, &mut NullAgent, &SimConfig::default(), 3).unwrap();
        let csv = plot_data_csv(&log, scenario.wind, &SeparationMinima::default());
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        let mut callsigns: Vec<&str> = rows.iter().map(|r| &r[1]).collect();
        callsigns.sort();
        callsigns.dedup();
        assert_eq!(callsigns.len(), 2);
        assert_eq!(rows.iter().filter(|r| &r[5] == "los").count() % 2, 0);
        assert!(rows.iter().any(|r| &r[5] == "los"));
        let times: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn empty_log_is_header_only() {
        let log = RunLog {
            header: RunHeader {
                scenario_id: "empty".into(),
                agent: "null".into(),
                seed: 0,
                dt: 5.0,
                decision_interval: 5.0,
                version: 1,
            },
            events: vec![],
            footer: None,
        };
        assert_eq!(
            plot_data_csv(&log, Vector2D::ZERO, &SeparationMinima::default()),
            "time_s,callsign,x_nm,y_nm,fl,event,detail\n"
        );
    }
}
