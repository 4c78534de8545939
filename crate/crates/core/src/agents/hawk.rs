//! Rules-based controller.
//!
//! Each epoch runs two passes over the projected traffic picture. The main
//! rules resolve projected separation violations (vertical first for
//! crossing and reciprocal geometry, vectoring the trailing aircraft for
//! catch-up). The iterative rules then move unaffected aircraft toward
//! their exit level and route them direct to their exit fix. Every
//! clearance is checked against the projection before it is issued.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentDecision, Observation};
use crate::airspace::{normalize_bearing, signed_turn, track_between, Airspace, Sector};
use crate::safety::{
    check_clearance_against, classify_geometry, ensured, Geometry, SafetyContext, SeparationEvent,
    DEFAULT_ENSURE_HORIZON_S,
};
use crate::simcore::{apply_clearance, AircraftState, Clearance, LateralMode, PerformanceProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HawkConfig {
    /// Off-track vector magnitudes tried in order, degrees.
    pub vector_angles_deg: Vec<f64>,
    /// Level changes tried in order, flight levels.
    pub level_steps: Vec<u32>,
    pub horizon_s: f64,
    pub projection_dt_s: f64,
    /// Try level changes before vectors for crossing and reciprocal pairs.
    pub vertical_first: bool,
}

impl Default for HawkConfig {
    fn default() -> Self {
        Self {
            vector_angles_deg: vec![30.0, 45.0, 60.0],
            level_steps: vec![10, 20, 30],
            horizon_s: DEFAULT_ENSURE_HORIZON_S,
            projection_dt_s: crate::simcore::DEFAULT_DT_S,
            vertical_first: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hawk {
    config: HawkConfig,
}

impl Hawk {
    pub fn new(config: HawkConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> &HawkConfig {
        &self.config
    }
}

/// A candidate resolution: one or two clearances plus a rationale tag.
struct Candidate {
    clearances: Vec<Clearance>,
    tag: &'static str,
}

/// The traffic picture as modified by clearances already chosen this epoch.
struct Working<'o> {
    states: Vec<AircraftState>,
    perfs: Vec<&'o PerformanceProfile>,
    violations: Vec<SeparationEvent>,
    used: BTreeSet<(String, &'static str)>,
}

impl Working<'_> {
    fn index(&self, callsign: &str) -> Option<usize> {
        self.states.iter().position(|s| s.callsign == callsign)
    }

    fn pair_event(&self, pair: &(String, String)) -> Option<&SeparationEvent> {
        self.violations.iter().find(|e| &e.pair == pair)
    }

    /// Apply clearances in order, each required to pass the safety check
    /// against the picture left by the previous ones.
    fn trial(
        &self,
        clearances: &[Clearance],
        airspace: &Airspace,
        ctx: &SafetyContext<'_>,
        now: f64,
    ) -> Option<(Vec<AircraftState>, Vec<SeparationEvent>)> {
        let mut states = self.states.clone();
        let mut violations = self.violations.clone();
        for c in clearances {
            if self.used.contains(&(c.callsign.clone(), c.kind.label())) {
                return None;
            }
            let view: Vec<(&AircraftState, &PerformanceProfile)> =
                states.iter().zip(self.perfs.iter().copied()).collect();
            let (check, after) =
                check_clearance_against(&view, c, airspace, ctx, now, &violations).ok()?;
            if !check.is_safe() {
                return None;
            }
            let i = states.iter().position(|s| s.callsign == c.callsign)?;
            states[i] = apply_clearance(&states[i], c, airspace).ok()?;
            violations = after;
        }
        Some((states, violations))
    }

    fn commit(
        &mut self,
        clearances: Vec<Clearance>,
        tag: &str,
        states: Vec<AircraftState>,
        violations: Vec<SeparationEvent>,
        decision: &mut AgentDecision,
    ) {
        for c in clearances {
            self.used.insert((c.callsign.clone(), c.kind.label()));
            decision.push(c, tag);
        }
        self.states = states;
        self.violations = violations;
    }
}

/// How badly a pair still violates; 0 when resolved.
fn shortfall(event: Option<&SeparationEvent>, ctx: &SafetyContext<'_>) -> f64 {
    match event {
        None => 0.0,
        Some(e) => {
            let lat = (1.0 - e.min_lateral / ctx.minima.lateral_nm).max(0.0);
            let vert = (1.0 - e.min_vertical / ctx.minima.vertical_fl).max(0.0);
            lat.min(vert) + 1e-6
        }
    }
}

fn ground_track(state: &AircraftState, obs: &Observation<'_>) -> f64 {
    state
        .ground_velocity(obs.wind)
        .bearing()
        .unwrap_or(state.heading)
}

/// Usable cleared levels strictly inside the sector's vertical limits.
fn level_usable(level: i64, sector: &Sector) -> bool {
    level > i64::from(sector.floor.value())
        && level < i64::from(sector.ceiling.value())
        && level > 0
}

fn is_transitioning(state: &AircraftState) -> bool {
    (state.fl - state.cleared_fl.as_f64()).abs() > 0.5
}

impl Hawk {
    fn level_candidates(
        &self,
        mover: &AircraftState,
        other: &AircraftState,
        exit_fl: u32,
        sector: &Sector,
        out: &mut Vec<Candidate>,
    ) {
        let cleared = i64::from(mover.cleared_fl.value());
        let other_level = i64::from(other.cleared_fl.value());
        let exit = i64::from(exit_fl);
        let mut levels: Vec<(i64, &'static str)> = Vec::new();

        // Stop a climbing or descending aircraft one step short of the other.
        if is_transitioning(mover) {
            let from = mover.fl;
            let cap = if cleared as f64 > from && (other_level as f64) > from - 5.0 {
                Some(other_level - 10)
            } else if (cleared as f64) < from && (other_level as f64) < from + 5.0 {
                Some(other_level + 10)
            } else {
                None
            };
            if let Some(cap) = cap {
                levels.push((cap, "main:vertical-cap"));
            }
        }
        let mut steps: Vec<(i64, &'static str)> = Vec::new();
        for &s in &self.config.level_steps {
            for dir in [1i64, -1] {
                steps.push((cleared + dir * i64::from(s), "main:vertical"));
            }
        }
        // Moves toward the exit level first, then smaller steps first.
        steps.sort_by_key(|(l, _)| {
            let toward = (l - exit).abs() < (cleared - exit).abs();
            (!toward, (l - cleared).abs())
        });
        levels.extend(steps);

        let mut seen = BTreeSet::new();
        for (level, tag) in levels {
            if level == cleared || !level_usable(level, sector) || (level - other_level).abs() < 10
            {
                continue;
            }
            if !seen.insert(level) {
                continue;
            }
            out.push(Candidate {
                clearances: vec![Clearance::level(&mover.callsign, level as u32)],
                tag,
            });
        }
    }

    /// Turn direction that takes `mover` away from `other`: +1 right, -1 left.
    fn away_side(mover: &AircraftState, other: &AircraftState, obs: &Observation<'_>) -> f64 {
        let track = ground_track(mover, obs);
        match track_between(mover.pos, other.pos) {
            Ok(b) if signed_turn(track, b) > 0.0 => -1.0,
            _ => 1.0,
        }
    }

    fn vector_candidates(
        &self,
        mover: &AircraftState,
        other: &AircraftState,
        obs: &Observation<'_>,
        out: &mut Vec<Candidate>,
    ) {
        let away = Self::away_side(mover, other, obs);
        for &angle in &self.config.vector_angles_deg {
            for side in [away, -away] {
                let heading = normalize_bearing(mover.heading + side * angle);
                out.push(Candidate {
                    clearances: vec![Clearance::heading(
                        &mover.callsign,
                        heading.round().rem_euclid(360.0),
                    )],
                    tag: "main:vector",
                });
            }
        }
    }

    fn complementary_candidates(
        &self,
        a: &AircraftState,
        b: &AircraftState,
        obs: &Observation<'_>,
        out: &mut Vec<Candidate>,
    ) {
        let side_a = Self::away_side(a, b, obs);
        let side_b = Self::away_side(b, a, obs);
        for &angle in &self.config.vector_angles_deg {
            let ha = normalize_bearing(a.heading + side_a * angle)
                .round()
                .rem_euclid(360.0);
            let hb = normalize_bearing(b.heading + side_b * angle)
                .round()
                .rem_euclid(360.0);
            out.push(Candidate {
                clearances: vec![
                    Clearance::heading(&a.callsign, ha),
                    Clearance::heading(&b.callsign, hb),
                ],
                tag: "main:complementary-vectors",
            });
        }
    }

    fn candidates(
        &self,
        work: &Working<'_>,
        ia: usize,
        ib: usize,
        obs: &Observation<'_>,
    ) -> Vec<Candidate> {
        let a = &work.states[ia];
        let b = &work.states[ib];
        let exit_of = |s: &AircraftState| {
            obs.find(&s.callsign)
                .map(|o| o.exit.exit_fl.value())
                .unwrap_or(s.cleared_fl.value())
        };
        let sector = &obs.airspace.sector;
        let geometry = classify_geometry(a, b, obs.wind).unwrap_or(Geometry::Crossing);

        // Aircraft that must change level anyway are moved first.
        let mut movers = [(a, b), (b, a)];
        if (is_transitioning(b) || b.cleared_fl.value() != exit_of(b))
            && !(is_transitioning(a) || a.cleared_fl.value() != exit_of(a))
        {
            movers.swap(0, 1);
        }

        let mut vertical = Vec::new();
        for (m, o) in movers {
            self.level_candidates(m, o, exit_of(m), sector, &mut vertical);
        }

        let mut lateral = Vec::new();
        if geometry == Geometry::CatchUp {
            // Vector the trailing aircraft.
            let rel = b.pos.sub(&a.pos);
            let (trail, lead) = if rel.dot(&a.ground_velocity(obs.wind)) >= 0.0 {
                (a, b)
            } else {
                (b, a)
            };
            self.vector_candidates(trail, lead, obs, &mut lateral);
            self.vector_candidates(lead, trail, obs, &mut lateral);
        } else {
            self.complementary_candidates(a, b, obs, &mut lateral);
            for (m, o) in movers {
                self.vector_candidates(m, o, obs, &mut lateral);
            }
        }

        let vertical_first = self.config.vertical_first && geometry != Geometry::CatchUp;
        if vertical_first {
            vertical.extend(lateral);
            vertical
        } else {
            lateral.extend(vertical);
            lateral
        }
    }

    fn main_rules(
        &self,
        work: &mut Working<'_>,
        obs: &Observation<'_>,
        ctx: &SafetyContext<'_>,
        decision: &mut AgentDecision,
    ) {
        let mut pairs: Vec<(f64, (String, String))> = work
            .violations
            .iter()
            .map(|e| (e.time, e.pair.clone()))
            .collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
        pairs.dedup_by(|x, y| x.1 == y.1);

        for (_, pair) in pairs {
            let before = shortfall(work.pair_event(&pair), ctx);
            if before == 0.0 {
                continue;
            }
            let (Some(ia), Some(ib)) = (work.index(&pair.0), work.index(&pair.1)) else {
                continue;
            };
            let mut fallback: Option<(f64, Candidate, Vec<AircraftState>, Vec<SeparationEvent>)> =
                None;
            let mut resolved = None;
            for cand in self.candidates(work, ia, ib, obs) {
                let Some((states, violations)) =
                    work.trial(&cand.clearances, obs.airspace, ctx, obs.time)
                else {
                    continue;
                };
                let after = shortfall(violations.iter().find(|e| e.pair == pair), ctx);
                if after == 0.0 {
                    resolved = Some((cand, states, violations));
                    break;
                }
                if after < before - 1e-9 && fallback.as_ref().is_none_or(|f| after < f.0) {
                    fallback = Some((after, cand, states, violations));
                }
            }
            if let Some((cand, states, violations)) = resolved {
                work.commit(cand.clearances, cand.tag, states, violations, decision);
            } else if let Some((_, cand, states, violations)) = fallback {
                work.commit(
                    cand.clearances,
                    "main:partial",
                    states,
                    violations,
                    decision,
                );
            }
        }
    }

    fn iterative_rules(
        &self,
        work: &mut Working<'_>,
        obs: &Observation<'_>,
        ctx: &SafetyContext<'_>,
        decision: &mut AgentDecision,
    ) {
        let implicated: BTreeSet<String> = work
            .violations
            .iter()
            .flat_map(|e| [e.pair.0.clone(), e.pair.1.clone()])
            .collect();
        let sector = &obs.airspace.sector;
        for observed in &obs.aircraft {
            let callsign = &observed.state.callsign;
            if implicated.contains(callsign) {
                continue;
            }
            let Some(i) = work.index(callsign) else {
                continue;
            };
            let exit = i64::from(observed.exit.exit_fl.value());

            let cleared = i64::from(work.states[i].cleared_fl.value());
            if cleared != exit {
                // Furthest safe step toward the exit level.
                let dir = (exit - cleared).signum();
                let mut level = exit;
                while level != cleared {
                    if level == exit || level_usable(level, sector) {
                        let c = Clearance::level(callsign, level as u32);
                        if let Some((states, violations)) =
                            work.trial(std::slice::from_ref(&c), obs.airspace, ctx, obs.time)
                        {
                            work.commit(vec![c], "iter:level", states, violations, decision);
                            break;
                        }
                    }
                    level -= dir * 10;
                }
            }

            let state = &work.states[i];
            let exit_name = &observed.exit.exit_waypoint;
            let needs_direct = match state.lateral {
                LateralMode::Heading { .. } => true,
                LateralMode::Route { next } => {
                    state.route.get(next).is_some_and(|w| &w.name != exit_name)
                }
            };
            if needs_direct {
                let c = Clearance::direct(callsign, exit_name);
                if let Some((states, violations)) =
                    work.trial(std::slice::from_ref(&c), obs.airspace, ctx, obs.time)
                {
                    work.commit(vec![c], "iter:direct", states, violations, decision);
                }
            }
        }
    }
}

impl Agent for Hawk {
    fn name(&self) -> &str {
        "hawk"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> AgentDecision {
        let mut decision = AgentDecision::default();
        if obs.aircraft.is_empty() {
            return decision;
        }
        let ctx = SafetyContext {
            wind: obs.wind,
            minima: obs.minima,
            sector: Some(&obs.airspace.sector),
            horizon: self.config.horizon_s,
            dt: self.config.projection_dt_s,
        };
        let states: Vec<AircraftState> = obs.aircraft.iter().map(|a| a.state.clone()).collect();
        let perfs: Vec<&PerformanceProfile> = obs.aircraft.iter().map(|a| &a.perf).collect();
        let view: Vec<(&AircraftState, &PerformanceProfile)> =
            states.iter().zip(perfs.iter().copied()).collect();
        let violations = ensured(&view, &ctx, obs.time);
        let mut work = Working {
            states,
            perfs,
            violations,
            used: BTreeSet::new(),
        };
        self.main_rules(&mut work, obs, &ctx, &mut decision);
        self.iterative_rules(&mut work, obs, &ctx, &mut decision);
        decision
    }
}
