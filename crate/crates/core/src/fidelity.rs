//! Simulator verification by clearance replay against reference traces.
//!
//! A reference trace records where an aircraft actually went under some
//! sequence of clearances. Replaying the same clearances through the
//! kinematic model and comparing positions shows how faithfully the model
//! reproduces the reference simulator.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::airspace::{horizontal_distance, Position2D, Vector2D};
use crate::error::{Error, Result};
use crate::safety::SeparationMinima;
use crate::simcore::{apply_clearance, step, Clearance, EventKind, RunLog, Scenario, DEFAULT_DT_S};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub time: f64,
    pub pos: Position2D,
    pub fl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrace {
    pub callsign: String,
    pub samples: Vec<TracePoint>,
}

impl ReferenceTrace {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::InvalidValue(format!(
                "trace {} has fewer than 2 samples",
                self.callsign
            )));
        }
        if self.samples.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidValue(format!(
                "trace {} is not strictly time-sorted",
                self.callsign
            )));
        }
        Ok(())
    }
}

/// One logged clearance, in force from `effective_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearanceRecord {
    #[serde(flatten)]
    pub clearance: Clearance,
    pub effective_time: f64,
}

/// Clearance log of one reference run. Records of kinds the simulator does
/// not model are kept by callsign so their aircraft can be excluded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClearanceLog {
    pub records: Vec<ClearanceRecord>,
    pub unsupported: BTreeMap<String, Vec<String>>,
}

const SUPPORTED_KINDS: [&str; 3] = ["heading", "flight_level", "direct_to"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClearanceFile {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario_id: Option<String>,
    clearances: Vec<serde_json::Value>,
}

impl ClearanceLog {
    /// Parse the JSON clearance file. `effective_time` defaults to the
    /// issue time plus `pilot_delay`.
    pub fn parse(text: &str, pilot_delay: f64) -> Result<Self> {
        let file: ClearanceFile = serde_json::from_str(text).map_err(Error::from_json)?;
        if file.version != 1 {
            return Err(Error::parse(
                1,
                format!("unsupported clearance log version {}", file.version),
            ));
        }
        let record_line = |i: usize| {
            text.lines()
                .enumerate()
                .filter(|(_, l)| l.contains("\"callsign\""))
                .nth(i)
                .map(|(n, _)| n + 1)
                .unwrap_or(1)
        };
        let mut log = ClearanceLog::default();
        for (i, mut v) in file.clearances.into_iter().enumerate() {
            let kind = v.get("kind").and_then(|k| k.as_str()).map(str::to_string);
            let callsign = v
                .get("callsign")
                .and_then(|c| c.as_str())
                .map(str::to_string);
            let (Some(kind), Some(callsign)) = (kind, callsign) else {
                return Err(Error::parse(
                    record_line(i),
                    "clearance record needs kind and callsign",
                ));
            };
            if !SUPPORTED_KINDS.contains(&kind.as_str()) {
                log.unsupported.entry(callsign).or_default().push(kind);
                continue;
            }
            if let Some(obj) = v.as_object_mut() {
                if !obj.contains_key("effective_time") {
                    let issue = obj
                        .get("issue_time")
                        .and_then(|t| t.as_f64())
                        .unwrap_or(0.0);
                    obj.insert(
                        "effective_time".into(),
                        serde_json::json!(issue + pilot_delay),
                    );
                }
            }
            let rec: ClearanceRecord = serde_json::from_value(v)
                .map_err(|e| Error::parse(record_line(i), e.to_string()))?;
            log.records.push(rec);
        }
        Ok(log)
    }

    pub fn load(path: &Path, pilot_delay: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, pilot_delay)
    }

    pub fn to_json(&self, scenario_id: Option<&str>) -> String {
        let file = ClearanceFile {
            version: 1,
            scenario_id: scenario_id.map(str::to_string),
            clearances: self
                .records
                .iter()
                .map(|r| serde_json::to_value(r).expect("clearance serializes"))
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("clearance log serializes");
        s.push('\n');
        s
    }

    /// The clearances a run log shows as issued.
    pub fn from_run_log(log: &RunLog) -> Self {
        let records = log
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ClearanceIssued {
                    clearance,
                    effective_time,
                    ..
                } => Some(ClearanceRecord {
                    clearance: clearance.clone(),
                    effective_time: *effective_time,
                }),
                _ => None,
            })
            .collect();
        Self {
            records,
            unsupported: BTreeMap::new(),
        }
    }
}

fn write_seconds<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.fract() == 0.0 && t.abs() < 9.0e15 {
        s.serialize_i64(*t as i64)
    } else {
        s.serialize_f64(*t)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    #[serde(serialize_with = "write_seconds")]
    time_s: f64,
    callsign: String,
    x_nm: f64,
    y_nm: f64,
    fl: f64,
}

/// Traces in first-appearance order of their callsigns.
pub fn parse_traces(text: &str) -> Result<Vec<ReferenceTrace>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(1, e.to_string()))?
        .clone();
    let expected = ["time_s", "callsign", "x_nm", "y_nm", "fl"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            1,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut traces: Vec<ReferenceTrace> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: TraceRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(line, e.to_string()))?;
        if ![row.time_s, row.x_nm, row.y_nm, row.fl]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::parse(
                line,
                format!("non-finite value for {}", row.callsign),
            ));
        }
        let p = TracePoint {
            time: row.time_s,
            pos: Position2D::new(row.x_nm, row.y_nm),
            fl: row.fl,
        };
        match traces.iter_mut().find(|t| t.callsign == row.callsign) {
            Some(t) => t.samples.push(p),
            None => traces.push(ReferenceTrace {
                callsign: row.callsign,
                samples: vec![p],
            }),
        }
    }
    Ok(traces)
}

pub fn load_traces(path: &Path) -> Result<Vec<ReferenceTrace>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_traces(&text)
}

/// CSV with header `time_s,callsign,x_nm,y_nm,fl`, rows in time order.
pub fn traces_to_csv(traces: &[ReferenceTrace]) -> String {
    let mut rows: Vec<(f64, usize, &TracePoint, &str)> = Vec::new();
    for (i, t) in traces.iter().enumerate() {
        for p in &t.samples {
            rows.push((p.time, i, p, &t.callsign));
        }
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut w = csv::Writer::from_writer(Vec::new());
    for (_, _, p, cs) in rows {
        w.serialize(TraceRow {
            time_s: p.time,
            callsign: cs.to_string(),
            x_nm: p.pos.x,
            y_nm: p.pos.y,
            fl: p.fl,
        })
        .expect("trace row serializes");
    }
    if traces.iter().all(|t| t.samples.is_empty()) {
        return "time_s,callsign,x_nm,y_nm,fl\n".to_string();
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

/// Per-aircraft traces from the snapshots of a run log.
pub fn traces_from_run_log(log: &RunLog) -> Vec<ReferenceTrace> {
    let mut traces: Vec<ReferenceTrace> = Vec::new();
    for e in &log.events {
        if let EventKind::StateSnapshot { state } = &e.kind {
            let p = TracePoint {
                time: e.time,
                pos: state.pos,
                fl: state.fl,
            };
            match traces.iter_mut().find(|t| t.callsign == state.callsign) {
                Some(t) => t.samples.push(p),
                None => traces.push(ReferenceTrace {
                    callsign: state.callsign.clone(),
                    samples: vec![p],
                }),
            }
        }
    }
    traces
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    pub dt: f64,
    /// Added to the scenario wind.
    pub wind_delta: Vector2D,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT_S,
            wind_delta: Vector2D::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Replay {
    /// Replayed positions at the trace timestamps the replay covers.
    Simulated(Vec<TracePoint>),
    Excluded(String),
}

fn lerp(a: &TracePoint, b: &TracePoint, t: f64) -> TracePoint {
    if t == a.time {
        return *a;
    }
    if t == b.time {
        return *b;
    }
    let s = (t - a.time) / (b.time - a.time);
    TracePoint {
        time: t,
        pos: Position2D::new(
            a.pos.x + (b.pos.x - a.pos.x) * s,
            a.pos.y + (b.pos.y - a.pos.y) * s,
        ),
        fl: a.fl + (b.fl - a.fl) * s,
    }
}

/// Re-fly one aircraft under its logged clearances on the simulator's tick
/// grid, then interpolate to the trace's timestamps.
pub fn replay(
    trace: &ReferenceTrace,
    clearances: &ClearanceLog,
    scenario: &Scenario,
    options: &ReplayOptions,
) -> Result<Replay> {
    trace.validate()?;
    if let Some(kinds) = clearances.unsupported.get(&trace.callsign) {
        return Ok(Replay::Excluded(format!(
            "unsupported clearance kinds: {}",
            kinds.join(", ")
        )));
    }
    let Some(entry) = scenario.entry(&trace.callsign) else {
        return Ok(Replay::Excluded("aircraft not in scenario".into()));
    };
    let dt = options.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidValue(format!("replay dt {dt}")));
    }
    let mut perturbed = scenario.clone();
    perturbed.wind = scenario.wind.add(&options.wind_delta);
    let wind = perturbed.wind;

    let mut state = perturbed.spawn_state(entry)?;
    let mut tick = ((entry.spawn_time - 1e-9) / dt).ceil().max(0.0) as i64;
    let last = trace.samples.last().expect("validated").time;
    let mut own: Vec<&ClearanceRecord> = clearances
        .records
        .iter()
        .filter(|r| r.clearance.callsign == trace.callsign)
        .collect();
    own.sort_by(|a, b| a.effective_time.total_cmp(&b.effective_time));
    let mut next_clearance = 0;

    let mut simulated = Vec::new();
    loop {
        let t = tick as f64 * dt;
        while next_clearance < own.len() && own[next_clearance].effective_time <= t + 1e-9 {
            if let Ok(s) =
                apply_clearance(&state, &own[next_clearance].clearance, &perturbed.airspace)
            {
                state = s;
            }
            next_clearance += 1;
        }
        simulated.push(TracePoint {
            time: t,
            pos: state.pos,
            fl: state.fl,
        });
        if t >= last {
            break;
        }
        state = step(&state, &entry.perf, wind, dt);
        tick += 1;
    }

    let mut out = Vec::new();
    let mut j = 0;
    for s in &trace.samples {
        if s.time < simulated[0].time - 1e-9 || s.time > simulated[simulated.len() - 1].time + 1e-9
        {
            continue;
        }
        while j + 1 < simulated.len() && simulated[j + 1].time <= s.time {
            j += 1;
        }
        let p = if j + 1 < simulated.len() {
            lerp(&simulated[j], &simulated[j + 1], s.time)
        } else {
            simulated[j]
        };
        out.push(TracePoint { time: s.time, ..p });
    }
    if out.is_empty() {
        return Err(Error::InvalidValue(format!(
            "trace {} does not overlap its replay in time",
            trace.callsign
        )));
    }
    Ok(Replay::Simulated(out))
}

/// Acceptable replay error: half the separation minima.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub horizontal_nm: f64,
    pub vertical_fl: f64,
}

impl Thresholds {
    pub fn from_minima(m: &SeparationMinima) -> Self {
        Self {
            horizontal_nm: m.lateral_nm / 2.0,
            vertical_fl: m.vertical_fl / 2.0,
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::from_minima(&SeparationMinima::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub time: f64,
    pub reference_x_nm: f64,
    pub reference_y_nm: f64,
    pub reference_fl: f64,
    pub simulated_x_nm: f64,
    pub simulated_y_nm: f64,
    pub simulated_fl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftError {
    pub callsign: String,
    pub mean_horizontal: f64,
    pub mean_vertical: f64,
    pub max_horizontal: f64,
    pub max_vertical: f64,
    pub in_threshold: bool,
    pub samples: Vec<PairedSample>,
}

/// Per-sample errors at shared timestamps. Reference samples without a
/// simulated counterpart are skipped.
pub fn compute_errors(
    trace: &ReferenceTrace,
    simulated: &[TracePoint],
    thresholds: &Thresholds,
) -> Result<AircraftError> {
    let mut samples = Vec::new();
    let mut j = 0;
    for r in &trace.samples {
        while j < simulated.len() && simulated[j].time < r.time - 1e-9 {
            j += 1;
        }
        if j < simulated.len() && (simulated[j].time - r.time).abs() <= 1e-9 {
            let s = &simulated[j];
            samples.push(PairedSample {
                time: r.time,
                reference_x_nm: r.pos.x,
                reference_y_nm: r.pos.y,
                reference_fl: r.fl,
                simulated_x_nm: s.pos.x,
                simulated_y_nm: s.pos.y,
                simulated_fl: s.fl,
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::InvalidValue(format!(
            "reference and simulated times for {} are disjoint",
            trace.callsign
        )));
    }
    let h: Vec<f64> = samples
        .iter()
        .map(|s| {
            horizontal_distance(
                Position2D::new(s.reference_x_nm, s.reference_y_nm),
                Position2D::new(s.simulated_x_nm, s.simulated_y_nm),
            )
        })
        .collect();
    let v: Vec<f64> = samples
        .iter()
        .map(|s| (s.reference_fl - s.simulated_fl).abs())
        .collect();
    let n = samples.len() as f64;
    let max_h = h.iter().cloned().fold(0.0, f64::max);
    let max_v = v.iter().cloned().fold(0.0, f64::max);
    Ok(AircraftError {
        callsign: trace.callsign.clone(),
        mean_horizontal: h.iter().sum::<f64>() / n,
        mean_vertical: v.iter().sum::<f64>() / n,
        max_horizontal: max_h,
        max_vertical: max_v,
        in_threshold: max_h <= thresholds.horizontal_nm && max_v <= thresholds.vertical_fl,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AircraftOutcome {
    Compared(AircraftError),
    Excluded { callsign: String, reason: String },
}

impl AircraftOutcome {
    pub fn callsign(&self) -> &str {
        match self {
            AircraftOutcome::Compared(e) => &e.callsign,
            AircraftOutcome::Excluded { callsign, .. } => callsign,
        }
    }
}

/// Replay and compare every aircraft of one reference simulation.
pub fn verify_simulation(
    traces: &[ReferenceTrace],
    clearances: &ClearanceLog,
    scenario: &Scenario,
    options: &ReplayOptions,
    thresholds: &Thresholds,
) -> Result<Vec<AircraftOutcome>> {
    traces
        .iter()
        .map(|t| {
            Ok(match replay(t, clearances, scenario, options)? {
                Replay::Simulated(sim) => {
                    AircraftOutcome::Compared(compute_errors(t, &sim, thresholds)?)
                }
                Replay::Excluded(reason) => AircraftOutcome::Excluded {
                    callsign: t.callsign.clone(),
                    reason,
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// One verification row: columns as in a per-assessment summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub assessment: String,
    pub number_of_simulations: usize,
    pub aircraft_in_threshold_pct: f64,
    pub horizontal_error_nm: MeanSd,
    pub vertical_error_fl: MeanSd,
    pub aircraft_compared: usize,
    pub aircraft_excluded: usize,
    /// How per-sample errors were reduced.
    pub averaging: String,
}

fn mean_sd(xs: &[f64]) -> MeanSd {
    if xs.is_empty() {
        return MeanSd { mean: 0.0, sd: 0.0 };
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    MeanSd {
        mean,
        sd: var.sqrt(),
    }
}

/// Mean and population SD over per-aircraft time-mean errors of every
/// simulation. Excluded aircraft are counted separately.
pub fn summarize(assessment: &str, simulations: &[Vec<AircraftOutcome>]) -> FidelitySummary {
    let mut compared: Vec<&AircraftError> = simulations
        .iter()
        .flatten()
        .filter_map(|o| match o {
            AircraftOutcome::Compared(e) => Some(e),
            AircraftOutcome::Excluded { .. } => None,
        })
        .collect();
    // Sorting makes the floating-point sums independent of input order.
    compared.sort_by(|a, b| {
        a.mean_horizontal
            .total_cmp(&b.mean_horizontal)
            .then(a.mean_vertical.total_cmp(&b.mean_vertical))
    });
    let excluded = simulations.iter().flatten().count() - compared.len();
    let inside = compared.iter().filter(|e| e.in_threshold).count();
    let pct = if compared.is_empty() {
        0.0
    } else {
        100.0 * inside as f64 / compared.len() as f64
    };
    let mut h: Vec<f64> = compared.iter().map(|e| e.mean_horizontal).collect();
    let mut v: Vec<f64> = compared.iter().map(|e| e.mean_vertical).collect();
    h.sort_by(f64::total_cmp);
    v.sort_by(f64::total_cmp);
    FidelitySummary {
        assessment: assessment.to_string(),
        number_of_simulations: simulations.len(),
        aircraft_in_threshold_pct: pct,
        horizontal_error_nm: mean_sd(&h),
        vertical_error_fl: mean_sd(&v),
        aircraft_compared: compared.len(),
        aircraft_excluded: excluded,
        averaging: "time mean per aircraft and simulation, then across aircraft and simulations"
            .into(),
    }
}

/// Out-of-threshold aircraft with their paired trajectories.
pub fn flag_manual_review(outcomes: &[AircraftOutcome]) -> Vec<&AircraftError> {
    outcomes
        .iter()
        .filter_map(|o| match o {
            AircraftOutcome::Compared(e) if !e.in_threshold => Some(e),
            _ => None,
        })
        .collect()
}
