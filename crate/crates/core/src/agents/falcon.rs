//! Optimization-based controller.
//!
//! Each aircraft gets a plan: a few intermediate fixes offset sideways
//! from the line between where it was first seen and its exit fix, plus a
//! flight level per leg. The last leg always runs direct to the exit fix at
//! the exit level, so exit coordination holds by construction. CMA-ES
//! searches the joint plan space of all aircraft against a cost that makes
//! any projected separation violation dominate path and level efficiency.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentDecision, Observation, ObservedAircraft};
use crate::airspace::{
    contains, horizontal_distance, track_between, Airspace, Position2D, Sector, Vector2D, Waypoint,
};
use crate::cmaes::{self, MinimizeOptions};
use crate::error::{Error, Result};
use crate::safety::{detect_violations, SeparationKind, SeparationMinima, Series, SeriesPoint};
use crate::simcore::{
    apply_clearance, step, wind_corrected_heading, AircraftState, Clearance, LateralMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FalconConfig {
    /// Intermediate fixes per aircraft.
    pub fixes_per_aircraft: usize,
    /// Objective evaluations per replan.
    pub budget: usize,
    pub sigma0: f64,
    /// Decision epochs between scheduled replans.
    pub replan_epochs: usize,
    /// NM of sideways fix offset per unit gene.
    pub offset_scale_nm: f64,
    /// Flight levels per unit level gene.
    pub level_scale_fl: f64,
    /// Offsets smaller than this snap to the direct line.
    pub min_offset_nm: f64,
    /// Keep fixes at least this far inside the sector.
    pub sector_margin_nm: f64,
    /// A fix counts as reached within this distance.
    pub fix_reach_nm: f64,
    /// Heading changes smaller than this are not re-issued.
    pub heading_tolerance_deg: f64,
    /// Aircraft on their last leg with more than this to go are replanned
    /// from their current position.
    pub reanchor_distance_nm: f64,
    /// Extra lateral spacing demanded by the planner.
    pub lateral_buffer_nm: f64,
    pub w_separation: f64,
    pub w_shortfall: f64,
    pub w_path: f64,
    /// Cost per minute spent below the exit level.
    pub w_level_per_min: f64,
    /// Cost per 10 FL missed at exit, or per 5 NM missed laterally.
    pub w_exit: f64,
    pub horizon_s: f64,
    pub sim_dt_s: f64,
    pub decision_interval_s: f64,
}

impl Default for FalconConfig {
    fn default() -> Self {
        Self {
            fixes_per_aircraft: 2,
            budget: 1500,
            sigma0: 1.0,
            replan_epochs: 6,
            offset_scale_nm: 5.0,
            level_scale_fl: 20.0,
            min_offset_nm: 0.5,
            sector_margin_nm: 3.0,
            fix_reach_nm: 2.0,
            heading_tolerance_deg: 2.0,
            reanchor_distance_nm: 15.0,
            lateral_buffer_nm: 1.0,
            w_separation: 1e4,
            w_shortfall: 1e2,
            w_path: 10.0,
            w_level_per_min: 1.0,
            w_exit: 1e3,
            horizon_s: 1500.0,
            sim_dt_s: crate::simcore::DEFAULT_DT_S,
            decision_interval_s: crate::simcore::DEFAULT_DECISION_INTERVAL_S,
        }
    }
}

impl FalconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fixes_per_aircraft == 0 {
            return Err(Error::Config(
                "falcon needs at least one intermediate fix".into(),
            ));
        }
        if self.replan_epochs == 0 {
            return Err(Error::Config(
                "replan interval must be at least one epoch".into(),
            ));
        }
        for (name, v) in [
            ("sigma0", self.sigma0),
            ("sim_dt_s", self.sim_dt_s),
            ("decision_interval_s", self.decision_interval_s),
            ("horizon_s", self.horizon_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("falcon {name} must be positive")));
            }
        }
        let k = (self.decision_interval_s / self.sim_dt_s).round();
        if k < 1.0 || (k * self.sim_dt_s - self.decision_interval_s).abs() > 1e-9 {
            return Err(Error::Config(
                "falcon sim_dt_s must divide decision_interval_s".into(),
            ));
        }
        Ok(())
    }

    fn decision_ticks(&self) -> usize {
        (self.decision_interval_s / self.sim_dt_s).round() as usize
    }

    fn genes_per_aircraft(&self) -> usize {
        2 * self.fixes_per_aircraft
    }
}

/// One leg of a decoded plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    /// Fix ending the leg; `None` means direct to the exit fix.
    pub fix: Option<Position2D>,
    /// Along-track distance of the fix from the anchor.
    pub along: f64,
    pub level: u32,
}

/// A decoded plan for one aircraft. The final leg is always direct to the
/// exit fix at the exit level.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftPlan {
    pub callsign: String,
    pub anchor: Position2D,
    pub exit_fix: Waypoint,
    pub exit_fl: u32,
    pub legs: Vec<Leg>,
}

impl AircraftPlan {
    fn direction(&self) -> Vector2D {
        let d = self.exit_fix.pos.sub(&self.anchor);
        let n = d.norm();
        if n > 0.0 {
            d.scale(1.0 / n)
        } else {
            Vector2D::new(0.0, 1.0)
        }
    }

    fn along(&self, p: Position2D) -> f64 {
        p.sub(&self.anchor).dot(&self.direction())
    }

    pub fn final_leg(&self) -> &Leg {
        self.legs.last().expect("plans always have a final leg")
    }
}

/// Static per-aircraft planning inputs.
#[derive(Debug, Clone)]
struct Track {
    anchor: Position2D,
    exit_fix: Waypoint,
    exit_fl: u32,
    /// Index of the leg currently flown.
    progress: usize,
    genes: Vec<f64>,
}

fn round_level(level: f64, sector: &Sector) -> u32 {
    let lo = f64::from(sector.floor.value() + 10);
    let hi = f64::from(sector.ceiling.value().saturating_sub(10));
    let l = ((level / 10.0).round() * 10.0).clamp(lo, hi);
    l as u32
}

fn inside_with_margin(sector: &Sector, p: Position2D, margin: f64) -> bool {
    if !sector.contains_lateral(p) {
        return false;
    }
    let b = &sector.boundary;
    (0..b.len())
        .all(|i| crate::airspace::distance_to_segment(p, b[i], b[(i + 1) % b.len()]) >= margin)
}

fn decode(
    track: &Track,
    callsign: &str,
    genes: &[f64],
    config: &FalconConfig,
    sector: &Sector,
) -> AircraftPlan {
    let k = config.fixes_per_aircraft;
    let delta = track.exit_fix.pos.sub(&track.anchor);
    let length = delta.norm();
    let dir = if length > 0.0 {
        delta.scale(1.0 / length)
    } else {
        Vector2D::new(0.0, 1.0)
    };
    let perp = Vector2D::new(dir.y, -dir.x);
    let mut legs = Vec::with_capacity(k + 1);
    for j in 0..k {
        let along = length * (j + 1) as f64 / (k + 1) as f64;
        let base = track.anchor.offset(dir, along);
        let mut offset = genes[j] * config.offset_scale_nm;
        let mut fix = None;
        if offset.abs() >= config.min_offset_nm {
            for _ in 0..6 {
                let p = base.offset(perp, offset);
                if inside_with_margin(sector, p, config.sector_margin_nm) {
                    fix = Some(p);
                    break;
                }
                offset *= 0.5;
            }
        }
        let level = round_level(
            f64::from(track.exit_fl) + genes[k + j] * config.level_scale_fl,
            sector,
        );
        legs.push(Leg { fix, along, level });
    }
    legs.push(Leg {
        fix: None,
        along: length,
        level: track.exit_fl,
    });
    AircraftPlan {
        callsign: callsign.to_string(),
        anchor: track.anchor,
        exit_fix: track.exit_fix.clone(),
        exit_fl: track.exit_fl,
        legs,
    }
}

fn leg_reached(plan: &AircraftPlan, leg: &Leg, pos: Position2D, reach: f64) -> bool {
    if plan.along(pos) >= leg.along {
        return true;
    }
    match leg.fix {
        Some(f) => horizontal_distance(f, pos) <= reach,
        None => false,
    }
}

/// Clearances that keep `state` on `plan`, advancing `progress` past
/// reached fixes. Emits nothing when the aircraft already complies.
fn follow(
    plan: &AircraftPlan,
    progress: &mut usize,
    state: &AircraftState,
    wind: Vector2D,
    config: &FalconConfig,
) -> Vec<Clearance> {
    let last = plan.legs.len() - 1;
    while *progress < last
        && leg_reached(plan, &plan.legs[*progress], state.pos, config.fix_reach_nm)
    {
        *progress += 1;
    }
    let leg = &plan.legs[*progress];
    let mut out = Vec::new();
    if state.cleared_fl.value() != leg.level {
        out.push(Clearance::level(&state.callsign, leg.level));
    }
    match leg.fix {
        Some(fix) => {
            if let Ok(track) = track_between(state.pos, fix) {
                let desired = wind_corrected_heading(track, state.tas, wind)
                    .round()
                    .rem_euclid(360.0);
                let current = match state.lateral {
                    LateralMode::Heading { heading_deg } => Some(heading_deg),
                    LateralMode::Route { .. } => None,
                };
                let off = current.is_none_or(|h| {
                    crate::airspace::angular_difference(h, desired) > config.heading_tolerance_deg
                });
                if off {
                    out.push(Clearance::heading(&state.callsign, desired));
                }
            }
        }
        None => {
            let on_exit = matches!(state.active_fix(), Some(w) if w.name == plan.exit_fix.name);
            if !on_exit {
                out.push(Clearance::direct(&state.callsign, &plan.exit_fix.name));
            }
        }
    }
    out
}

/// Inputs shared by every objective evaluation of one replan.
struct Problem<'a> {
    aircraft: &'a [ObservedAircraft],
    tracks: Vec<&'a Track>,
    airspace: &'a Airspace,
    wind: Vector2D,
    minima: SeparationMinima,
    now: f64,
    config: &'a FalconConfig,
}

/// Per-aircraft outcome of flying a joint plan.
struct Flown {
    series: Series,
    path: f64,
    below_exit_s: f64,
    exit: Option<(Position2D, f64)>,
    end: AircraftState,
}

impl Problem<'_> {
    fn decode_all(&self, x: &[f64]) -> Vec<AircraftPlan> {
        let g = self.config.genes_per_aircraft();
        self.aircraft
            .iter()
            .zip(&self.tracks)
            .enumerate()
            .map(|(i, (a, t))| {
                decode(
                    t,
                    &a.state.callsign,
                    &x[i * g..(i + 1) * g],
                    self.config,
                    &self.airspace.sector,
                )
            })
            .collect()
    }

    fn fly(&self, plans: &[AircraftPlan]) -> Vec<Flown> {
        let cfg = self.config;
        let dt = cfg.sim_dt_s;
        let ticks = (cfg.horizon_s / dt).ceil() as usize;
        let every = cfg.decision_ticks();
        let sector = &self.airspace.sector;
        let mut states: Vec<AircraftState> =
            self.aircraft.iter().map(|a| a.state.clone()).collect();
        let mut progress: Vec<usize> = self.tracks.iter().map(|t| t.progress).collect();
        let mut flown: Vec<Flown> = states
            .iter()
            .map(|s| Flown {
                series: Series {
                    callsign: s.callsign.clone(),
                    first_tick: 0,
                    points: Vec::new(),
                },
                path: 0.0,
                below_exit_s: 0.0,
                exit: None,
                end: s.clone(),
            })
            .collect();
        let mut active = states.len();
        for tick in 0..=ticks {
            if active == 0 {
                break;
            }
            for i in 0..states.len() {
                if flown[i].exit.is_some() {
                    continue;
                }
                if tick % every == 0 {
                    for c in follow(&plans[i], &mut progress[i], &states[i], self.wind, cfg) {
                        if let Ok(s) = apply_clearance(&states[i], &c, self.airspace) {
                            states[i] = s;
                        }
                    }
                }
                let s = &states[i];
                flown[i].series.points.push(SeriesPoint {
                    pos: s.pos,
                    fl: s.fl,
                    velocity: s.ground_velocity(self.wind),
                });
                if s.fl < f64::from(plans[i].exit_fl) - 0.5 {
                    flown[i].below_exit_s += dt;
                }
                if tick == ticks {
                    continue;
                }
                let next = step(s, &self.aircraft[i].perf, self.wind, dt);
                flown[i].path += horizontal_distance(s.pos, next.pos);
                if !contains(sector, next.pos, next.fl) {
                    flown[i].exit = Some((next.pos, next.fl));
                    active -= 1;
                }
                states[i] = next;
            }
        }
        for (f, s) in flown.iter_mut().zip(states) {
            f.end = s;
        }
        flown
    }

    fn cost(&self, plans: &[AircraftPlan]) -> f64 {
        let cfg = self.config;
        let flown = self.fly(plans);
        let series: Vec<Series> = flown.iter().map(|f| f.series.clone()).collect();
        let planning_minima = SeparationMinima {
            lateral_nm: self.minima.lateral_nm + cfg.lateral_buffer_nm,
            vertical_fl: self.minima.vertical_fl,
        };
        let mut cost = 0.0;
        for e in detect_violations(
            &series,
            &planning_minima,
            self.now,
            cfg.sim_dt_s,
            SeparationKind::EnsuredSeparationViolation,
        ) {
            let lat = (1.0 - e.min_lateral / planning_minima.lateral_nm).max(0.0);
            let vert = (1.0 - e.min_vertical / planning_minima.vertical_fl).max(0.0);
            cost += cfg.w_separation + cfg.w_shortfall * lat.min(vert);
        }
        for ((f, plan), a) in flown.iter().zip(plans).zip(self.aircraft) {
            let direct = horizontal_distance(a.state.pos, plan.exit_fix.pos).max(1.0);
            cost += cfg.w_path * (f.path / direct - 1.0).max(0.0);
            cost += cfg.w_level_per_min * f.below_exit_s / 60.0;
            match f.exit {
                Some((pos, fl)) => {
                    cost += cfg.w_exit * (fl - f64::from(plan.exit_fl)).abs() / 10.0;
                    let miss = horizontal_distance(pos, plan.exit_fix.pos);
                    if miss > 3.0 {
                        cost += cfg.w_exit * miss / 5.0;
                    }
                }
                None => {
                    let remaining = horizontal_distance(f.end.pos, plan.exit_fix.pos);
                    cost += cfg.w_exit * (1.0 + remaining / 5.0);
                }
            }
        }
        cost
    }
}

/// Optimization-based agent planning all aircraft jointly.
#[derive(Debug, Clone)]
pub struct Falcon {
    config: FalconConfig,
    seed: u64,
    epoch: usize,
    replans: u64,
    tracks: BTreeMap<String, Track>,
    plans: BTreeMap<String, AircraftPlan>,
}

impl Falcon {
    pub fn new(config: FalconConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let lambda = cmaes::default_params(config.genes_per_aircraft())?.lambda;
        if config.budget < lambda {
            return Err(Error::Config(format!(
                "falcon budget {} is below the population size {lambda}",
                config.budget
            )));
        }
        Ok(Self {
            config,
            seed,
            epoch: 0,
            replans: 0,
            tracks: BTreeMap::new(),
            plans: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &FalconConfig {
        &self.config
    }

    /// Current plans, keyed by callsign.
    pub fn plans(&self) -> &BTreeMap<String, AircraftPlan> {
        &self.plans
    }

    fn track_for(a: &ObservedAircraft, airspace: &Airspace) -> Option<Track> {
        let exit_fix = airspace.waypoint(&a.exit.exit_waypoint).ok()?.clone();
        Some(Track {
            anchor: a.state.pos,
            exit_fix,
            exit_fl: a.exit.exit_fl.value(),
            progress: 0,
            genes: Vec::new(),
        })
    }

    /// Plan all observed aircraft with the given evaluation budget.
    pub fn plan(
        &mut self,
        obs: &Observation<'_>,
        budget: usize,
        seed: u64,
    ) -> Result<Vec<AircraftPlan>> {
        let g = self.config.genes_per_aircraft();
        let lambda = cmaes::default_params(g * obs.aircraft.len().max(1))?.lambda;
        if budget < lambda {
            return Err(Error::Config(format!(
                "budget {budget} is below the population size {lambda}"
            )));
        }
        if obs.aircraft.is_empty() {
            return Err(Error::InvalidValue("nothing to plan".into()));
        }
        for a in &obs.aircraft {
            let cs = &a.state.callsign;
            let fresh = match self.tracks.get(cs) {
                None => true,
                Some(t) => {
                    let last = self.config.fixes_per_aircraft;
                    t.progress >= last
                        && horizontal_distance(a.state.pos, t.exit_fix.pos)
                            > self.config.reanchor_distance_nm
                        && self.plans.get(cs).is_some_and(|p| {
                            p.legs[..last]
                                .iter()
                                .any(|l| l.fix.is_some() || l.level != p.exit_fl)
                        })
                }
            };
            if fresh {
                match Self::track_for(a, obs.airspace) {
                    Some(t) => {
                        self.tracks.insert(cs.clone(), t);
                    }
                    None => continue,
                }
            }
        }
        let planned: Vec<ObservedAircraft> = obs
            .aircraft
            .iter()
            .filter(|a| self.tracks.contains_key(&a.state.callsign))
            .cloned()
            .collect();
        let mut x0 = Vec::with_capacity(g * planned.len());
        for a in &planned {
            let t = &self.tracks[&a.state.callsign];
            if t.genes.len() == g {
                x0.extend_from_slice(&t.genes);
            } else {
                x0.extend(std::iter::repeat_n(0.0, g));
            }
        }
        let problem = Problem {
            aircraft: &planned,
            tracks: planned
                .iter()
                .map(|a| &self.tracks[&a.state.callsign])
                .collect(),
            airspace: obs.airspace,
            wind: obs.wind,
            minima: obs.minima,
            now: obs.time,
            config: &self.config,
        };
        let warm_value = problem.cost(&problem.decode_all(&x0));
        let result = cmaes::minimize(
            |x| problem.cost(&problem.decode_all(x)),
            &x0,
            self.config.sigma0,
            budget,
            seed,
            &MinimizeOptions::default(),
        )?;
        let best = if result.value < warm_value - 1e-9 {
            result.x
        } else {
            x0
        };
        let plans = problem.decode_all(&best);
        for (i, a) in planned.iter().enumerate() {
            if let Some(t) = self.tracks.get_mut(&a.state.callsign) {
                t.genes = best[i * g..(i + 1) * g].to_vec();
            }
        }
        Ok(plans)
    }

    fn replan_seed(&self) -> u64 {
        let mut z = self.seed ^ self.replans.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

impl Agent for Falcon {
    fn name(&self) -> &str {
        "falcon"
    }

    fn decide(&mut self, obs: &Observation<'_>) -> AgentDecision {
        let mut decision = AgentDecision::default();
        let live: BTreeSet<&str> = obs
            .aircraft
            .iter()
            .map(|a| a.state.callsign.as_str())
            .collect();
        self.tracks.retain(|cs, _| live.contains(cs.as_str()));
        self.plans.retain(|cs, _| live.contains(cs.as_str()));
        if obs.aircraft.is_empty() {
            self.epoch += 1;
            return decision;
        }

        let new_entry = obs
            .aircraft
            .iter()
            .any(|a| !self.tracks.contains_key(&a.state.callsign));
        let scheduled = self.epoch.is_multiple_of(self.config.replan_epochs);
        if new_entry || scheduled || self.plans.is_empty() {
            let seed = self.replan_seed();
            self.replans += 1;
            match self.plan(obs, self.config.budget, seed) {
                Ok(plans) => {
                    self.plans = plans.into_iter().map(|p| (p.callsign.clone(), p)).collect();
                }
                Err(e) => log::warn!("falcon replan at t={} failed: {e}", obs.time),
            }
        }
        self.epoch += 1;

        for a in &obs.aircraft {
            let cs = &a.state.callsign;
            let (Some(plan), Some(track)) = (self.plans.get(cs), self.tracks.get_mut(cs)) else {
                continue;
            };
            for c in follow(plan, &mut track.progress, &a.state, obs.wind, &self.config) {
                let tag = match c.kind {
                    crate::simcore::ClearanceKind::FlightLevel { .. } => "plan:level",
                    crate::simcore::ClearanceKind::Heading { .. } => "plan:fix",
                    crate::simcore::ClearanceKind::DirectTo { .. } => "plan:exit",
                };
                decision.push(c, tag);
            }
        }
        decision
    }
}
