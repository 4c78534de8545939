//! Automated per-run measurements feeding the rubric.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::airspace::{horizontal_distance, Position2D};
use crate::error::{Error, Result};
use crate::harness::runlog::require_complete;
use crate::safety::{
    check_clearance_against, detect_los, ensured, Geometry, SafetyContext, SeparationEvent,
    SeparationMinima,
};
use crate::simcore::{
    apply_clearance, AircraftState, Clearance, EventKind, PerformanceProfile, RunLog, Scenario,
};

/// Extraction tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Lateral distance from the exit fix within which an exit counts.
    pub exit_tolerance_nm: f64,
    /// Exits further than this from the exit fix, or through the floor or
    /// ceiling, leave the sector somewhere they should not.
    pub containment_radius_nm: f64,
    /// Projection horizon for ensured separation.
    pub ensure_horizon_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            exit_tolerance_nm: 3.0,
            containment_radius_nm: 10.0,
            ensure_horizon_s: crate::safety::DEFAULT_ENSURE_HORIZON_S,
        }
    }
}

/// A separation finding between two aircraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFinding {
    pub pair: (String, String),
    /// Onset (actual or projected).
    pub time: f64,
    pub cpa_time: f64,
    /// When the finding was made; equal to `time` for actual losses.
    pub detected_at: f64,
    pub min_lateral_nm: f64,
    pub min_vertical_fl: f64,
    pub geometry: Option<Geometry>,
    pub event: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub losses: Vec<PairFinding>,
    /// Projected violations under the clearances in force after each
    /// decision epoch, one per continuous stretch of epochs.
    pub ensured_violations: Vec<PairFinding>,
    /// Clearances that introduced a projected violation.
    pub unsafe_clearances: Vec<PairFinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub callsign: String,
    pub exit_waypoint: String,
    pub exit_fl: u32,
    pub exited: bool,
    pub achieved: bool,
    pub exit_time: Option<f64>,
    pub lateral_miss_nm: Option<f64>,
    pub level_miss_fl: Option<f64>,
    pub event: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRatio {
    pub callsign: String,
    pub flown_nm: f64,
    pub planned_nm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllingMetrics {
    /// Callsign and event index of each exit outside the agreed area.
    pub containment_violations: Vec<(String, usize)>,
    pub path_ratios: Vec<PathRatio>,
    pub mean_path_ratio: Option<f64>,
    /// Summed over aircraft.
    pub time_below_exit_level_min: f64,
}

/// A projected conflict removed by a clearance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub pair: (String, String),
    pub clearance_time: f64,
    /// Projected closest approach before the clearance.
    pub cpa_time: f64,
    pub lead_time_s: f64,
    pub event: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub callsign: String,
    pub time: f64,
    pub event: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario_id: String,
    pub agent: String,
    pub seed: u64,
    pub aircraft: usize,
    pub clearances: usize,
    pub safety: SafetyMetrics,
    pub exits: Vec<ExitRecord>,
    pub controlling: ControllingMetrics,
    pub resolutions: Vec<Resolution>,
    pub transfers: Vec<Transfer>,
}

impl RunMetrics {
    pub fn los_count(&self) -> usize {
        self.safety.losses.len()
    }

    pub fn ensured_violation_count(&self) -> usize {
        self.safety.ensured_violations.len()
    }

    pub fn unsafe_clearance_count(&self) -> usize {
        self.safety.unsafe_clearances.len()
    }

    pub fn exits_achieved(&self) -> usize {
        self.exits.iter().filter(|e| e.achieved).count()
    }
}

pub fn extract_metrics(
    log: &RunLog,
    scenario: &Scenario,
    minima: &SeparationMinima,
) -> Result<RunMetrics> {
    extract_metrics_with(log, scenario, minima, &MetricsConfig::default())
}

struct Tick<'a> {
    time: f64,
    snapshots: Vec<(usize, &'a AircraftState)>,
    clearances: Vec<(usize, &'a Clearance, f64)>,
}

fn group_ticks(log: &RunLog) -> Vec<Tick<'_>> {
    let mut ticks: Vec<Tick<'_>> = Vec::new();
    for (i, ev) in log.events.iter().enumerate() {
        if ticks.last().is_none_or(|t| (t.time - ev.time).abs() > 1e-9) {
            ticks.push(Tick {
                time: ev.time,
                snapshots: Vec::new(),
                clearances: Vec::new(),
            });
        }
        let tick = ticks.last_mut().expect("pushed above");
        match &ev.kind {
            EventKind::StateSnapshot { state } => tick.snapshots.push((i, state)),
            EventKind::ClearanceIssued {
                clearance,
                effective_time,
                ..
            } => tick.clearances.push((i, clearance, *effective_time)),
            _ => {}
        }
    }
    ticks
}

fn finding(e: &SeparationEvent, event: Option<usize>) -> PairFinding {
    PairFinding {
        pair: e.pair.clone(),
        time: e.time,
        cpa_time: e.cpa_time,
        detected_at: e.detected_at.unwrap_or(e.time),
        min_lateral_nm: e.min_lateral,
        min_vertical_fl: e.min_vertical,
        geometry: e.geometry,
        event,
    }
}

/// Measure a completed run. Clearances are assumed in force from the
/// epoch they were issued, ahead of any pilot delay.
pub fn extract_metrics_with(
    log: &RunLog,
    scenario: &Scenario,
    minima: &SeparationMinima,
    config: &MetricsConfig,
) -> Result<RunMetrics> {
    require_complete(log)?;
    let dt = log.header.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidValue(format!("log dt {dt}")));
    }
    let perfs: BTreeMap<&str, &PerformanceProfile> = scenario
        .entries
        .iter()
        .map(|e| (e.callsign.as_str(), &e.perf))
        .collect();

    let mut snapshot_index: BTreeMap<(&str, i64), usize> = BTreeMap::new();
    let mut entered: Vec<&str> = Vec::new();
    let mut clearances = 0;
    for (i, ev) in log.events.iter().enumerate() {
        match &ev.kind {
            EventKind::StateSnapshot { state } => {
                snapshot_index.insert((state.callsign.as_str(), (ev.time / dt).round() as i64), i);
            }
            EventKind::Entered { callsign } => entered.push(callsign),
            EventKind::ClearanceIssued { .. } => clearances += 1,
            _ => {}
        }
    }
    for cs in &entered {
        if !perfs.contains_key(cs) {
            return Err(Error::NotFound(format!(
                "aircraft {cs} in log but not in scenario {}",
                scenario.id
            )));
        }
    }
    let cite = |cs: &str, t: f64| -> Option<usize> {
        let k = (t / dt).floor() as i64;
        snapshot_index
            .range((cs, k)..)
            .next()
            .filter(|((c, _), _)| *c == cs)
            .map(|(_, &i)| i)
    };

    let mut safety = SafetyMetrics {
        losses: detect_los(log, scenario.wind, minima)
            .iter()
            .map(|e| finding(e, cite(&e.pair.0, e.time)))
            .collect(),
        ..Default::default()
    };

    let mut ctx = SafetyContext::new(scenario.wind, *minima, Some(scenario.sector()));
    ctx.horizon = config.ensure_horizon_s;
    ctx.dt = dt;
    let decision_interval = log.header.decision_interval;
    let is_decision = |t: f64| {
        let k = t / decision_interval;
        (k - k.round()).abs() < 1e-6
    };

    let mut resolutions = Vec::new();
    let mut pending: Vec<(f64, Clearance)> = Vec::new();
    let mut previous_pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for tick in group_ticks(log) {
        let t = tick.time;
        pending.retain(|(eff, _)| *eff > t + 1e-9);
        let mut states: Vec<AircraftState> =
            tick.snapshots.iter().map(|(_, s)| (*s).clone()).collect();
        for (_, c) in &pending {
            if let Some(s) = states.iter_mut().find(|s| s.callsign == c.callsign) {
                if let Ok(next) = apply_clearance(s, c, &scenario.airspace) {
                    *s = next;
                }
            }
        }
        if !is_decision(t) && tick.clearances.is_empty() {
            continue;
        }

        let view = |states: &[AircraftState]| -> Vec<(AircraftState, &PerformanceProfile)> {
            states
                .iter()
                .filter_map(|s| perfs.get(s.callsign.as_str()).map(|p| (s.clone(), *p)))
                .collect()
        };
        let pre_owned = view(&states);
        let pre_refs: Vec<(&AircraftState, &PerformanceProfile)> =
            pre_owned.iter().map(|(s, p)| (s, *p)).collect();
        let pre = ensured(&pre_refs, &ctx, t);

        let mut current = pre.clone();
        for &(idx, c, eff) in &tick.clearances {
            let owned = view(&states);
            let refs: Vec<(&AircraftState, &PerformanceProfile)> =
                owned.iter().map(|(s, p)| (s, *p)).collect();
            match check_clearance_against(&refs, c, &scenario.airspace, &ctx, t, &current) {
                Ok((check, after)) => {
                    if let crate::safety::ClearanceCheck::Unsafe(introduced) = check {
                        if let Some(e) = introduced.first() {
                            safety.unsafe_clearances.push(finding(e, Some(idx)));
                        }
                    }
                    current = after;
                }
                Err(_) => continue,
            }
            if let Some(s) = states.iter_mut().find(|s| s.callsign == c.callsign) {
                if let Ok(next) = apply_clearance(s, c, &scenario.airspace) {
                    *s = next;
                }
            }
            if eff > t + 1e-9 {
                pending.push((eff, c.clone()));
            }
        }
        let post = current;

        let post_pairs: BTreeSet<(String, String)> = post.iter().map(|e| e.pair.clone()).collect();
        let mut counted = BTreeSet::new();
        for e in &post {
            if !previous_pairs.contains(&e.pair) && counted.insert(e.pair.clone()) {
                safety
                    .ensured_violations
                    .push(finding(e, cite(&e.pair.0, t)));
            }
        }
        for e in &pre {
            if post_pairs.contains(&e.pair) {
                continue;
            }
            let resolving = tick
                .clearances
                .iter()
                .find(|(_, c, _)| c.callsign == e.pair.0 || c.callsign == e.pair.1);
            let Some(&(idx, _, _)) = resolving else {
                continue;
            };
            if resolutions
                .iter()
                .any(|r: &Resolution| r.pair == e.pair && r.clearance_time == t)
            {
                continue;
            }
            resolutions.push(Resolution {
                pair: e.pair.clone(),
                clearance_time: t,
                cpa_time: e.cpa_time,
                lead_time_s: e.cpa_time - t,
                event: idx,
            });
        }
        previous_pairs = post_pairs;
    }
    resolutions.retain(|r| {
        !safety
            .losses
            .iter()
            .any(|l| l.pair == r.pair && l.time + 1e-9 >= r.clearance_time)
    });

    let (exits, controlling, transfers) = exit_and_path_metrics(log, scenario, config, &entered)?;
    Ok(RunMetrics {
        scenario_id: log.header.scenario_id.clone(),
        agent: log.header.agent.clone(),
        seed: log.header.seed,
        aircraft: entered.len(),
        clearances,
        safety,
        exits,
        controlling,
        resolutions,
        transfers,
    })
}

fn exit_and_path_metrics(
    log: &RunLog,
    scenario: &Scenario,
    config: &MetricsConfig,
    entered: &[&str],
) -> Result<(Vec<ExitRecord>, ControllingMetrics, Vec<Transfer>)> {
    let dt = log.header.dt;
    let sector = scenario.sector();
    let mut exits = Vec::new();
    let mut controlling = ControllingMetrics::default();
    let mut transfers = Vec::new();

    for &cs in entered {
        let entry = scenario
            .entry(cs)
            .ok_or_else(|| Error::NotFound(format!("aircraft {cs}")))?;
        let exit_fix = scenario.airspace.waypoint(&entry.exit.exit_waypoint)?.pos;
        let exit_fl = entry.exit.exit_fl.value();

        let mut track: Vec<Position2D> = Vec::new();
        let mut below_s = 0.0;
        let mut exit_event = None;
        for (i, ev) in log.events.iter().enumerate() {
            match &ev.kind {
                EventKind::StateSnapshot { state } if state.callsign == cs => {
                    track.push(state.pos);
                    if state.fl < f64::from(exit_fl) - 0.5 {
                        below_s += dt;
                    }
                }
                EventKind::Exited { callsign, pos, fl } if callsign == cs => {
                    track.push(*pos);
                    exit_event = Some((i, ev.time, *pos, *fl));
                }
                _ => {}
            }
        }
        controlling.time_below_exit_level_min += below_s / 60.0;

        let record = match exit_event {
            Some((i, time, pos, fl)) => {
                transfers.push(Transfer {
                    callsign: cs.to_string(),
                    time,
                    event: i,
                });
                let lateral = horizontal_distance(pos, exit_fix);
                let level = (fl - f64::from(exit_fl)).abs();
                let through_level_limit =
                    fl < sector.floor.as_f64() || fl > sector.ceiling.as_f64();
                if lateral > config.containment_radius_nm || through_level_limit {
                    controlling.containment_violations.push((cs.to_string(), i));
                }
                let planned = planned_distance(scenario, entry)?;
                let flown: f64 = track
                    .windows(2)
                    .map(|w| horizontal_distance(w[0], w[1]))
                    .sum();
                if planned > 0.0 {
                    controlling.path_ratios.push(PathRatio {
                        callsign: cs.to_string(),
                        flown_nm: flown,
                        planned_nm: planned,
                        ratio: flown / planned,
                    });
                }
                ExitRecord {
                    callsign: cs.to_string(),
                    exit_waypoint: entry.exit.exit_waypoint.clone(),
                    exit_fl,
                    exited: true,
                    achieved: lateral <= config.exit_tolerance_nm && level < 0.5,
                    exit_time: Some(time),
                    lateral_miss_nm: Some(lateral),
                    level_miss_fl: Some(level),
                    event: Some(i),
                }
            }
            None => ExitRecord {
                callsign: cs.to_string(),
                exit_waypoint: entry.exit.exit_waypoint.clone(),
                exit_fl,
                exited: false,
                achieved: false,
                exit_time: None,
                lateral_miss_nm: None,
                level_miss_fl: None,
                event: None,
            },
        };
        exits.push(record);
    }
    if !controlling.path_ratios.is_empty() {
        let n = controlling.path_ratios.len() as f64;
        controlling.mean_path_ratio =
            Some(controlling.path_ratios.iter().map(|p| p.ratio).sum::<f64>() / n);
    }
    Ok((exits, controlling, transfers))
}

/// Entry point along the filed route to the exit fix.
fn planned_distance(scenario: &Scenario, entry: &crate::simcore::ScenarioEntry) -> Result<f64> {
    let mut prev = entry.entry_pos;
    let mut total = 0.0;
    for name in &entry.route.waypoints {
        let p = scenario.airspace.waypoint(name)?.pos;
        total += horizontal_distance(prev, p);
        prev = p;
        if *name == entry.exit.exit_waypoint {
            return Ok(total);
        }
    }
    let exit = scenario.airspace.waypoint(&entry.exit.exit_waypoint)?.pos;
    Ok(total + horizontal_distance(prev, exit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::NullAgent;
    use crate::harness::generator::{generate_scenario, Pattern, PatternSpec};
    use crate::simcore::{run_scenario, RunHeader, SimConfig, SimEvent};

    fn empty_log() -> RunLog {
        RunLog {
            header: RunHeader {
                scenario_id: "empty".into(),
                agent: "null".into(),
                seed: 0,
                dt: 5.0,
                decision_interval: 10.0,
                version: 1,
            },
            events: Vec::new(),
            footer: Some(crate::simcore::RunFooter {
                complete: true,
                final_time: 0.0,
                event_count: 0,
            }),
        }
    }

    fn reciprocal() -> Scenario {
        let spec = PatternSpec {
            n_aircraft: 2,
            ..PatternSpec::new(Pattern::Reciprocal, 3)
        };
        generate_scenario(&spec).unwrap().to_scenario().unwrap()
    }

    #[test]
    fn empty_log_gives_zero_metrics() {
        let m = extract_metrics(&empty_log(), &reciprocal(), &SeparationMinima::default()).unwrap();
        assert_eq!(m.los_count(), 0);
        assert_eq!(m.ensured_violation_count(), 0);
        assert_eq!(m.unsafe_clearance_count(), 0);
        assert!(m.exits.is_empty());
        assert!(m.resolutions.is_empty());
        assert_eq!(m.controlling.time_below_exit_level_min, 0.0);
    }

    #[test]
    fn truncated_log_is_rejected() {
        let mut log = empty_log();
        log.footer = None;
        assert!(matches!(
            extract_metrics(&log, &reciprocal(), &SeparationMinima::default()),
            Err(Error::TruncatedLog(_))
        ));
        let mut log = empty_log();
        log.events.push(SimEvent {
            time: 0.0,
            kind: EventKind::Entered {
                callsign: "X".into(),
            },
        });
        assert!(matches!(
            extract_metrics(&log, &reciprocal(), &SeparationMinima::default()),
            Err(Error::TruncatedLog(_))
        ));
    }

    #[test]
    fn null_agent_head_on_counts_one_loss() {
        let scenario = reciprocal();
        let log = run_scenario(&scenario, &mut NullAgent, &SimConfig::default(), 0).unwrap();
        let minima = SeparationMinima::default();
        let m = extract_metrics(&log, &scenario, &minima).unwrap();
        assert_eq!(
            m.los_count(),
            detect_los(&log, scenario.wind, &minima).len()
        );
        assert_eq!(m.los_count(), 1);
        assert_eq!(m.safety.losses[0].geometry, Some(Geometry::Reciprocal));
        assert!(m.ensured_violation_count() >= 1);
        assert_eq!(m.unsafe_clearance_count(), 0);
        assert!(m.resolutions.is_empty());
        assert!(m.safety.losses[0].event.is_some());
    }

    #[test]
    fn wrong_exit_level_is_not_achieved() {
        let scenario = reciprocal();
        let log = run_scenario(&scenario, &mut NullAgent, &SimConfig::default(), 0).unwrap();
        let m = extract_metrics(&log, &scenario, &SeparationMinima::default()).unwrap();
        for e in &m.exits {
            let entry = scenario.entry(&e.callsign).unwrap();
            let same_level = entry.entry_fl == entry.exit.exit_fl;
            assert!(e.exited);
            // The null agent never changes level, so only level-matched
            // aircraft can achieve their exit.
            if !same_level {
                assert!(!e.achieved);
            }
        }
        assert_eq!(
            m.transfers.len(),
            m.exits.iter().filter(|e| e.exited).count()
        );
    }

    #[test]
    fn exit_at_340_against_320_is_a_miss() {
        let scenario = reciprocal();
        let mut log = run_scenario(&scenario, &mut NullAgent, &SimConfig::default(), 0).unwrap();
        let cs = scenario.entries[0].callsign.clone();
        let exit_fix = scenario
            .airspace
            .waypoint(&scenario.entries[0].exit.exit_waypoint)
            .unwrap()
            .pos;
        let coordinated = f64::from(scenario.entries[0].exit.exit_fl.value());
        for ev in &mut log.events {
            if let EventKind::Exited { callsign, pos, fl } = &mut ev.kind {
                if *callsign == cs {
                    *pos = exit_fix;
                    *fl = coordinated + 20.0;
                }
            }
        }
        let m = extract_metrics(&log, &scenario, &SeparationMinima::default()).unwrap();
        let rec = m.exits.iter().find(|e| e.callsign == cs).unwrap();
        assert!(!rec.achieved);
        assert_eq!(rec.level_miss_fl, Some(20.0));
        for ev in &mut log.events {
            if let EventKind::Exited { callsign, fl, .. } = &mut ev.kind {
                if *callsign == cs {
                    *fl = coordinated;
                }
            }
        }
        let m = extract_metrics(&log, &scenario, &SeparationMinima::default()).unwrap();
        assert!(m.exits.iter().find(|e| e.callsign == cs).unwrap().achieved);
    }

    #[test]
    fn straight_transit_has_unit_path_ratio() {
        let scenario = reciprocal();
        let log = run_scenario(&scenario, &mut NullAgent, &SimConfig::default(), 0).unwrap();
        let m = extract_metrics(&log, &scenario, &SeparationMinima::default()).unwrap();
        for p in &m.controlling.path_ratios {
            assert!((p.ratio - 1.0).abs() < 0.02, "{p:?}");
        }
        assert!(m.controlling.containment_violations.is_empty());
    }
}
