//! Fixed-step kinematic simulation of aircraft flying clearances under wind.
//!
//! Units: positions in NM, speeds in kt, time in seconds, levels in
//! hundreds of feet, vertical rates in ft/min.

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, Observation, ObservedAircraft};
use crate::airspace::{
    contains, horizontal_distance, normalize_bearing, signed_turn, Airspace, Position2D, Route,
    Sector, Vector2D, Waypoint,
};
use crate::error::{Error, Result};
use crate::safety::SeparationMinima;

/// Waypoint capture radius.
pub const CAPTURE_RADIUS_NM: f64 = 1.0;
pub const DEFAULT_DT_S: f64 = 5.0;
pub const DEFAULT_DECISION_INTERVAL_S: f64 = 10.0;
pub const DEFAULT_DURATION_S: u32 = 1800;
pub const LOG_FORMAT_VERSION: u32 = 1;

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Flight level in hundreds of feet, `0 < value <= 600`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct FlightLevel(u32);

impl FlightLevel {
    pub const MAX: u32 = 600;

    pub fn new(value: u32) -> Result<Self> {
        if value == 0 || value > Self::MAX {
            return Err(Error::InvalidValue(format!(
                "flight level {value} out of range"
            )));
        }
        Ok(Self(value))
    }

    /// A level that can be the target of a level clearance.
    pub fn cleared(value: u32) -> Result<Self> {
        let fl = Self::new(value)?;
        if !fl.is_cleared_level() {
            return Err(Error::InvalidValue(format!(
                "flight level {value} is not a multiple of 10"
            )));
        }
        Ok(fl)
    }

    pub fn value(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn is_cleared_level(self) -> bool {
        self.0.is_multiple_of(10)
    }
}

impl TryFrom<u32> for FlightLevel {
    type Error = Error;
    fn try_from(v: u32) -> Result<Self> {
        Self::new(v)
    }
}

impl From<FlightLevel> for u32 {
    fn from(fl: FlightLevel) -> u32 {
        fl.0
    }
}

impl std::fmt::Display for FlightLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FL{:03}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceProfile {
    pub type_code: String,
    /// kt
    pub cruise_tas: f64,
    /// ft/min
    pub climb_rate: f64,
    /// ft/min
    pub descent_rate: f64,
    /// deg/s
    pub turn_rate: f64,
}

impl PerformanceProfile {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidValue(format!(
                    "{}: {what} out of range",
                    self.type_code
                )))
            }
        };
        check((100.0..=600.0).contains(&self.cruise_tas), "cruise_tas")?;
        check((500.0..=6000.0).contains(&self.climb_rate), "climb_rate")?;
        check(
            (500.0..=6000.0).contains(&self.descent_rate),
            "descent_rate",
        )?;
        check((0.5..=6.0).contains(&self.turn_rate), "turn_rate")
    }

    pub fn climb_fl_per_s(&self) -> f64 {
        self.climb_rate / 6000.0
    }

    pub fn descent_fl_per_s(&self) -> f64 {
        self.descent_rate / 6000.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClearanceKind {
    Heading { heading_deg: f64 },
    FlightLevel { level: u32 },
    DirectTo { waypoint: String },
}

impl ClearanceKind {
    pub fn label(&self) -> &'static str {
        match self {
            ClearanceKind::Heading { .. } => "heading",
            ClearanceKind::FlightLevel { .. } => "flight_level",
            ClearanceKind::DirectTo { .. } => "direct_to",
        }
    }
}

impl std::fmt::Display for ClearanceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClearanceKind::Heading { heading_deg } => write!(f, "heading {heading_deg:03.0}"),
            ClearanceKind::FlightLevel { level } => write!(f, "level FL{level:03}"),
            ClearanceKind::DirectTo { waypoint } => write!(f, "direct {waypoint}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clearance {
    pub callsign: String,
    pub issue_time: f64,
    #[serde(flatten)]
    pub kind: ClearanceKind,
}

impl Clearance {
    pub fn heading(callsign: &str, deg: f64) -> Self {
        Self::new(callsign, ClearanceKind::Heading { heading_deg: deg })
    }

    pub fn level(callsign: &str, level: u32) -> Self {
        Self::new(callsign, ClearanceKind::FlightLevel { level })
    }

    pub fn direct(callsign: &str, waypoint: &str) -> Self {
        Self::new(
            callsign,
            ClearanceKind::DirectTo {
                waypoint: waypoint.to_string(),
            },
        )
    }

    fn new(callsign: &str, kind: ClearanceKind) -> Self {
        Self {
            callsign: callsign.to_string(),
            issue_time: 0.0,
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LateralMode {
    Heading {
        heading_deg: f64,
    },
    /// Following `AircraftState::route`, next fix at `next`.
    /// `next == route.len()` means the route is complete and heading is held.
    Route {
        next: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AircraftState {
    pub callsign: String,
    pub pos: Position2D,
    pub fl: f64,
    pub heading: f64,
    pub tas: f64,
    pub cleared_fl: FlightLevel,
    pub lateral: LateralMode,
    pub route: Vec<Waypoint>,
    pub entered: bool,
    pub exited: bool,
}

impl AircraftState {
    pub fn ground_velocity(&self, wind: Vector2D) -> Vector2D {
        Vector2D::from_bearing(self.heading)
            .scale(self.tas)
            .add(&wind)
    }

    /// Next route fix while in route mode.
    pub fn active_fix(&self) -> Option<&Waypoint> {
        match self.lateral {
            LateralMode::Route { next } => self.route.get(next),
            LateralMode::Heading { .. } => None,
        }
    }

    pub fn is_airborne(&self) -> bool {
        self.entered && !self.exited
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitCondition {
    pub exit_waypoint: String,
    pub exit_fl: FlightLevel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEntry {
    pub spawn_time: f64,
    pub callsign: String,
    pub perf: PerformanceProfile,
    pub entry_pos: Position2D,
    pub entry_fl: FlightLevel,
    pub route: Route,
    pub exit: ExitCondition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub airspace: Airspace,
    pub wind: Vector2D,
    pub entries: Vec<ScenarioEntry>,
    pub duration: f64,
    /// Fixed pilot response lag applied to every clearance.
    pub pilot_delay: f64,
}

impl Scenario {
    pub fn sector(&self) -> &Sector {
        &self.airspace.sector
    }

    pub fn entry(&self, callsign: &str) -> Option<&ScenarioEntry> {
        self.entries.iter().find(|e| e.callsign == callsign)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(format!("scenario {}: {m}", self.id));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(cfg("duration must be positive".into()));
        }
        if !(self.pilot_delay >= 0.0 && self.pilot_delay.is_finite()) {
            return Err(cfg("pilot delay must be non-negative".into()));
        }
        if !(self.wind.x.is_finite() && self.wind.y.is_finite()) {
            return Err(cfg("wind must be finite".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.callsign.as_str()) {
                return Err(cfg(format!("duplicate callsign {}", e.callsign)));
            }
            if e.callsign.is_empty() {
                return Err(cfg("empty callsign".into()));
            }
            if !(e.spawn_time >= 0.0 && e.spawn_time < self.duration) {
                return Err(cfg(format!("{}: spawn time outside duration", e.callsign)));
            }
            e.perf
                .validate()
                .map_err(|err| cfg(format!("{}: {err}", e.callsign)))?;
            self.airspace
                .resolve(&e.route)
                .map_err(|err| cfg(format!("{}: {err}", e.callsign)))?;
            if !contains(self.sector(), e.entry_pos, e.entry_fl.as_f64()) {
                return Err(cfg(format!("{}: entry point outside sector", e.callsign)));
            }
            if !e.entry_fl.is_cleared_level() || !e.exit.exit_fl.is_cleared_level() {
                return Err(cfg(format!(
                    "{}: levels must be multiples of 10",
                    e.callsign
                )));
            }
            let exit_wp = self
                .airspace
                .waypoint(&e.exit.exit_waypoint)
                .map_err(|err| cfg(format!("{}: {err}", e.callsign)))?;
            if !on_or_outside_boundary(self.sector(), exit_wp.pos) {
                return Err(cfg(format!(
                    "{}: exit waypoint {} lies strictly inside the sector",
                    e.callsign, exit_wp.name
                )));
            }
        }
        Ok(())
    }

    /// Initial state of an entry at spawn.
    pub fn spawn_state(&self, entry: &ScenarioEntry) -> Result<AircraftState> {
        let route = self.airspace.resolve(&entry.route)?;
        let mut state = AircraftState {
            callsign: entry.callsign.clone(),
            pos: entry.entry_pos,
            fl: entry.entry_fl.as_f64(),
            heading: 0.0,
            tas: entry.perf.cruise_tas,
            cleared_fl: entry.entry_fl,
            lateral: LateralMode::Route { next: 0 },
            route,
            entered: true,
            exited: false,
        };
        let mut next = 0;
        while next < state.route.len()
            && horizontal_distance(state.pos, state.route[next].pos) <= CAPTURE_RADIUS_NM
        {
            next += 1;
        }
        state.lateral = LateralMode::Route { next };
        let toward = state
            .route
            .get(next)
            .or_else(|| state.route.last())
            .map(|w| w.pos);
        if let Some(p) = toward {
            if let Some(b) = p.sub(&state.pos).bearing() {
                state.heading = wind_corrected_heading(b, state.tas, self.wind);
            }
        }
        Ok(state)
    }
}

fn on_or_outside_boundary(sector: &Sector, p: Position2D) -> bool {
    if !sector.contains_lateral(p) {
        return true;
    }
    let n = sector.boundary.len();
    (0..n).any(|i| {
        crate::airspace::distance_to_segment(p, sector.boundary[i], sector.boundary[(i + 1) % n])
            <= 1e-6
    })
}

/// Heading that makes the ground track follow `track` under `wind`.
pub fn wind_corrected_heading(track: f64, tas: f64, wind: Vector2D) -> f64 {
    let u = Vector2D::from_bearing(track);
    let along = u.dot(&wind);
    let disc = along * along - wind.dot(&wind) + tas * tas;
    if disc < 0.0 || (wind.x == 0.0 && wind.y == 0.0) {
        return track;
    }
    let s = along + disc.sqrt();
    let air = u.scale(s).add(&wind.scale(-1.0));
    air.bearing().unwrap_or(track)
}

/// Ground speed along `track` under `wind`.
pub fn ground_speed_along(track: f64, tas: f64, wind: Vector2D) -> f64 {
    let u = Vector2D::from_bearing(track);
    let along = u.dot(&wind);
    let disc = along * along - wind.dot(&wind) + tas * tas;
    if disc < 0.0 {
        along.max(0.0)
    } else {
        along + disc.sqrt()
    }
}

/// Advance one aircraft by `dt` seconds under its current clearances.
pub fn step(
    state: &AircraftState,
    perf: &PerformanceProfile,
    wind: Vector2D,
    dt: f64,
) -> AircraftState {
    let mut next = state.clone();

    let target = match state.lateral {
        LateralMode::Heading { heading_deg } => Some(heading_deg),
        LateralMode::Route { next: i } => state.route.get(i).and_then(|fix| {
            fix.pos
                .sub(&state.pos)
                .bearing()
                .map(|b| wind_corrected_heading(b, state.tas, wind))
        }),
    };
    if let Some(target) = target {
        let delta = signed_turn(state.heading, target);
        let max_turn = perf.turn_rate * dt;
        next.heading = if delta.abs() <= max_turn {
            target
        } else {
            normalize_bearing(state.heading + max_turn * delta.signum())
        };
    }

    let ground = next.ground_velocity(wind);
    next.pos = state.pos.offset(ground, dt / SECONDS_PER_HOUR);

    let cleared = state.cleared_fl.as_f64();
    if state.fl < cleared {
        next.fl = (state.fl + perf.climb_fl_per_s() * dt).min(cleared);
    } else if state.fl > cleared {
        next.fl = (state.fl - perf.descent_fl_per_s() * dt).max(cleared);
    }

    if let LateralMode::Route { next: mut i } = next.lateral {
        let gs_nm_s = ground.norm() / SECONDS_PER_HOUR;
        let turn_radius = gs_nm_s / perf.turn_rate.to_radians();
        while let Some(fix) = next.route.get(i) {
            let d = horizontal_distance(next.pos, fix.pos);
            let behind = fix
                .pos
                .sub(&next.pos)
                .bearing()
                .map(|b| crate::airspace::angular_difference(b, next.heading) > 90.0)
                .unwrap_or(true);
            if d <= CAPTURE_RADIUS_NM || (behind && d < 2.0 * turn_radius) {
                i += 1;
            } else {
                break;
            }
        }
        next.lateral = LateralMode::Route { next: i };
    }
    next
}

/// Why a clearance was not applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection(pub String);

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn apply_clearance(
    state: &AircraftState,
    clearance: &Clearance,
    airspace: &Airspace,
) -> std::result::Result<AircraftState, Rejection> {
    if clearance.callsign != state.callsign {
        return Err(Rejection(format!(
            "clearance for {} applied to {}",
            clearance.callsign, state.callsign
        )));
    }
    let mut next = state.clone();
    match &clearance.kind {
        ClearanceKind::Heading { heading_deg } => {
            if !(heading_deg.is_finite() && (0.0..360.0).contains(heading_deg)) {
                return Err(Rejection(format!("heading {heading_deg} outside [0, 360)")));
            }
            next.lateral = LateralMode::Heading {
                heading_deg: *heading_deg,
            };
        }
        ClearanceKind::FlightLevel { level } => {
            next.cleared_fl = FlightLevel::cleared(*level).map_err(|e| Rejection(e.to_string()))?;
        }
        ClearanceKind::DirectTo { waypoint } => {
            let wp = airspace
                .waypoint(waypoint)
                .map_err(|_| Rejection(format!("unknown waypoint {waypoint}")))?;
            if let Some(i) = state.route.iter().position(|w| w.name == wp.name) {
                next.lateral = LateralMode::Route { next: i };
            } else {
                let mut route = vec![wp.clone()];
                if let Some(last) = state.route.last() {
                    if last.name != wp.name {
                        route.push(last.clone());
                    }
                }
                next.route = route;
                next.lateral = LateralMode::Route { next: 0 };
            }
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub decision_interval: f64,
    pub minima: SeparationMinima,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT_S,
            decision_interval: DEFAULT_DECISION_INTERVAL_S,
            minima: SeparationMinima::default(),
        }
    }
}

impl SimConfig {
    /// Ticks between agent decisions.
    pub fn decision_ticks(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        let k = (self.decision_interval / self.dt).round();
        if k < 1.0 || (k * self.dt - self.decision_interval).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "dt {} does not divide decision interval {}",
                self.dt, self.decision_interval
            )));
        }
        Ok(k as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    StateSnapshot {
        state: AircraftState,
    },
    ClearanceIssued {
        clearance: Clearance,
        rationale: String,
        effective_time: f64,
    },
    Entered {
        callsign: String,
    },
    Exited {
        callsign: String,
        pos: Position2D,
        fl: f64,
    },
    Rejected {
        callsign: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario_id: String,
    pub agent: String,
    pub seed: u64,
    pub dt: f64,
    pub decision_interval: f64,
    pub version: u32,
}

/// Closing record; its absence marks a truncated log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFooter {
    pub complete: bool,
    pub final_time: f64,
    pub event_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub events: Vec<SimEvent>,
    pub footer: Option<RunFooter>,
}

impl RunLog {
    pub fn is_complete(&self) -> bool {
        matches!(&self.footer, Some(f) if f.complete && f.event_count == self.events.len())
    }
}

struct Slot {
    state: AircraftState,
    perf: PerformanceProfile,
    exit: ExitCondition,
}

/// Run a scenario to completion under `agent`.
///
/// Per tick: spawns, due delayed clearances, snapshots, agent decision
/// (on decision ticks), then kinematics and exit detection.
pub fn run_scenario(
    scenario: &Scenario,
    agent: &mut dyn Agent,
    config: &SimConfig,
    seed: u64,
) -> Result<RunLog> {
    scenario.validate()?;
    let decision_ticks = config.decision_ticks()?;
    let dt = config.dt;
    let n_ticks = (scenario.duration / dt + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..scenario.entries.len()).collect();
    order.sort_by(|&a, &b| {
        scenario.entries[a]
            .spawn_time
            .total_cmp(&scenario.entries[b].spawn_time)
            .then(a.cmp(&b))
    });

    let mut slots: Vec<Slot> = Vec::new();
    let mut next_spawn = 0;
    let mut pending: Vec<(f64, Clearance)> = Vec::new();
    let mut events = Vec::new();

    for tick in 0..=n_ticks {
        let t = tick as f64 * dt;

        while next_spawn < order.len() && scenario.entries[order[next_spawn]].spawn_time <= t + 1e-9
        {
            let entry = &scenario.entries[order[next_spawn]];
            slots.push(Slot {
                state: scenario.spawn_state(entry)?,
                perf: entry.perf.clone(),
                exit: entry.exit.clone(),
            });
            events.push(SimEvent {
                time: t,
                kind: EventKind::Entered {
                    callsign: entry.callsign.clone(),
                },
            });
            next_spawn += 1;
        }

        if !pending.is_empty() {
            let (due, rest): (Vec<_>, Vec<_>) =
                pending.drain(..).partition(|(eff, _)| *eff <= t + 1e-9);
            pending = rest;
            for (_, c) in due {
                if let Some(slot) = slots
                    .iter_mut()
                    .find(|s| s.state.callsign == c.callsign && s.state.is_airborne())
                {
                    match apply_clearance(&slot.state, &c, &scenario.airspace) {
                        Ok(s) => slot.state = s,
                        Err(r) => events.push(SimEvent {
                            time: t,
                            kind: EventKind::Rejected {
                                callsign: c.callsign.clone(),
                                reason: r.0,
                            },
                        }),
                    }
                }
            }
        }

        for slot in slots.iter().filter(|s| s.state.is_airborne()) {
            events.push(SimEvent {
                time: t,
                kind: EventKind::StateSnapshot {
                    state: slot.state.clone(),
                },
            });
        }

        if tick % decision_ticks == 0 {
            let obs = Observation {
                time: t,
                aircraft: slots
                    .iter()
                    .filter(|s| s.state.is_airborne())
                    .map(|s| ObservedAircraft {
                        state: s.state.clone(),
                        perf: s.perf.clone(),
                        exit: s.exit.clone(),
                    })
                    .collect(),
                airspace: &scenario.airspace,
                wind: scenario.wind,
                minima: config.minima,
            };
            let decision = agent.decide(&obs);
            let mut kinds_used: Vec<(String, &'static str)> = Vec::new();
            for (i, mut c) in decision.clearances.into_iter().enumerate() {
                c.issue_time = t;
                let rationale = decision.rationale.get(i).cloned().unwrap_or_default();
                let reject = |reason: String, events: &mut Vec<SimEvent>, c: &Clearance| {
                    events.push(SimEvent {
                        time: t,
                        kind: EventKind::Rejected {
                            callsign: c.callsign.clone(),
                            reason,
                        },
                    })
                };
                let Some(slot) = slots
                    .iter_mut()
                    .find(|s| s.state.callsign == c.callsign && s.state.is_airborne())
                else {
                    reject(
                        format!("no airborne aircraft {}", c.callsign),
                        &mut events,
                        &c,
                    );
                    continue;
                };
                let key = (c.callsign.clone(), c.kind.label());
                if kinds_used.contains(&key) {
                    reject(
                        format!("duplicate {} clearance this epoch", c.kind.label()),
                        &mut events,
                        &c,
                    );
                    continue;
                }
                match apply_clearance(&slot.state, &c, &scenario.airspace) {
                    Ok(s) => {
                        kinds_used.push(key);
                        let effective = t + scenario.pilot_delay;
                        if scenario.pilot_delay == 0.0 {
                            slot.state = s;
                        } else {
                            pending.push((effective, c.clone()));
                        }
                        events.push(SimEvent {
                            time: t,
                            kind: EventKind::ClearanceIssued {
                                clearance: c,
                                rationale,
                                effective_time: effective,
                            },
                        });
                    }
                    Err(r) => reject(r.0, &mut events, &c),
                }
            }
        }

        if tick == n_ticks {
            break;
        }

        let t_next = (tick + 1) as f64 * dt;
        for slot in slots.iter_mut().filter(|s| s.state.is_airborne()) {
            slot.state = step(&slot.state, &slot.perf, scenario.wind, dt);
            if !contains(&scenario.airspace.sector, slot.state.pos, slot.state.fl) {
                slot.state.exited = true;
                events.push(SimEvent {
                    time: t_next,
                    kind: EventKind::Exited {
                        callsign: slot.state.callsign.clone(),
                        pos: slot.state.pos,
                        fl: slot.state.fl,
                    },
                });
            }
        }
    }

    let event_count = events.len();
    Ok(RunLog {
        header: RunHeader {
            scenario_id: scenario.id.clone(),
            agent: agent.name().to_string(),
            seed,
            dt,
            decision_interval: config.decision_interval,
            version: LOG_FORMAT_VERSION,
        },
        events,
        footer: Some(RunFooter {
            complete: true,
            final_time: n_ticks as f64 * dt,
            event_count,
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub time: f64,
    pub pos: Position2D,
    pub fl: f64,
    pub heading: f64,
    /// Ground velocity, kt.
    pub velocity: Vector2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub callsign: String,
    pub samples: Vec<TrajectorySample>,
    /// Offset at which the aircraft left the sector, if it did.
    pub exited_at: Option<f64>,
}

fn sample_of(state: &AircraftState, wind: Vector2D, time: f64) -> TrajectorySample {
    TrajectorySample {
        time,
        pos: state.pos,
        fl: state.fl,
        heading: state.heading,
        velocity: state.ground_velocity(wind),
    }
}

/// Forward-simulate each aircraft under its current clearances only.
///
/// Samples start at offset 0 (the given state) and advance by `dt` until
/// `horizon`. When `sector` is given, an aircraft stops being sampled once
/// it leaves the sector, and projection ends early once every aircraft has.
pub fn project(
    aircraft: &[(&AircraftState, &PerformanceProfile)],
    wind: Vector2D,
    horizon: f64,
    dt: f64,
    sector: Option<&Sector>,
) -> Vec<Trajectory> {
    let n_steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
    let mut current: Vec<AircraftState> = aircraft.iter().map(|(s, _)| (*s).clone()).collect();
    let mut out: Vec<Trajectory> = aircraft
        .iter()
        .map(|(s, _)| Trajectory {
            callsign: s.callsign.clone(),
            samples: vec![sample_of(s, wind, 0.0)],
            exited_at: None,
        })
        .collect();
    let mut active = aircraft.len();
    for k in 1..=n_steps {
        if active == 0 {
            break;
        }
        let t = k as f64 * dt;
        for (i, (_, perf)) in aircraft.iter().enumerate() {
            if out[i].exited_at.is_some() {
                continue;
            }
            current[i] = step(&current[i], perf, wind, dt);
            if let Some(sector) = sector {
                if !contains(sector, current[i].pos, current[i].fl) {
                    out[i].exited_at = Some(t);
                    active -= 1;
                    continue;
                }
            }
            out[i].samples.push(sample_of(&current[i], wind, t));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::NullAgent;

    fn perf() -> PerformanceProfile {
        PerformanceProfile {
            type_code: "B738".into(),
            cruise_tas: 420.0,
            climb_rate: 2000.0,
            descent_rate: 2000.0,
            turn_rate: 3.0,
        }
    }

    fn state(x: f64, y: f64, fl: f64, heading: f64) -> AircraftState {
        AircraftState {
            callsign: "TST1".into(),
            pos: Position2D::new(x, y),
            fl,
            heading,
            tas: 420.0,
            cleared_fl: FlightLevel::new(fl.round() as u32).unwrap(),
            lateral: LateralMode::Heading {
                heading_deg: heading,
            },
            route: vec![],
            entered: true,
            exited: false,
        }
    }

    fn airspace() -> Airspace {
        let sector = Sector::square(
            40.0,
            FlightLevel::new(150).unwrap(),
            FlightLevel::new(460).unwrap(),
        )
        .unwrap();
        Airspace::new(
            sector,
            vec![
                Waypoint::new("WEST", Position2D::new(-40.0, 0.0)).unwrap(),
                Waypoint::new("EAST", Position2D::new(40.0, 0.0)).unwrap(),
                Waypoint::new("MID", Position2D::new(0.0, 10.0)).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn climb_arithmetic() {
        let mut s = state(0.0, 0.0, 300.0, 90.0);
        s.cleared_fl = FlightLevel::new(340).unwrap();
        assert_eq!(step(&s, &perf(), Vector2D::ZERO, 60.0).fl, 320.0);
        s.cleared_fl = FlightLevel::new(310).unwrap();
        assert_eq!(step(&s, &perf(), Vector2D::ZERO, 60.0).fl, 310.0);
        s.cleared_fl = FlightLevel::new(250).unwrap();
        assert_eq!(step(&s, &perf(), Vector2D::ZERO, 60.0).fl, 280.0);
    }

    #[test]
    fn level_flight_distance() {
        let s = state(0.0, 0.0, 300.0, 90.0);
        let n = step(&s, &perf(), Vector2D::ZERO, 60.0);
        assert!((n.pos.x - 7.0).abs() < 1e-12);
        assert!(n.pos.y.abs() < 1e-12);
    }

    #[test]
    fn turn_is_rate_limited_and_ties_go_right() {
        let mut s = state(0.0, 0.0, 300.0, 0.0);
        s.lateral = LateralMode::Heading { heading_deg: 180.0 };
        let n = step(&s, &perf(), Vector2D::ZERO, 5.0);
        assert_eq!(n.heading, 15.0);
        s.lateral = LateralMode::Heading { heading_deg: 350.0 };
        let n = step(&s, &perf(), Vector2D::ZERO, 5.0);
        assert_eq!(n.heading, 350.0);
    }

    #[test]
    fn route_following_captures_fixes() {
        let a = airspace();
        let mut s = state(-40.0, 0.0, 300.0, 90.0);
        s.route = vec![
            a.waypoint("WEST").unwrap().clone(),
            a.waypoint("EAST").unwrap().clone(),
        ];
        s.lateral = LateralMode::Route { next: 1 };
        let mut t = 0.0;
        while matches!(s.lateral, LateralMode::Route { next: 1 }) {
            s = step(&s, &perf(), Vector2D::ZERO, 5.0);
            t += 5.0;
            assert!(t < 2000.0);
        }
        assert!(horizontal_distance(s.pos, Position2D::new(40.0, 0.0)) <= CAPTURE_RADIUS_NM);
    }

    #[test]
    fn wind_correction_holds_track() {
        let wind = Vector2D::new(0.0, 40.0);
        let h = wind_corrected_heading(90.0, 420.0, wind);
        let mut s = state(0.0, 0.0, 300.0, h);
        s.lateral = LateralMode::Heading { heading_deg: h };
        let n = step(&s, &perf(), wind, 60.0);
        assert!(n.pos.y.abs() < 1e-9);
        assert!(n.pos.x > 0.0);
    }

    #[test]
    fn apply_clearance_examples() {
        let a = airspace();
        let mut s = state(0.0, 0.0, 300.0, 90.0);
        s.route = vec![
            a.waypoint("WEST").unwrap().clone(),
            a.waypoint("EAST").unwrap().clone(),
        ];
        let n = apply_clearance(&s, &Clearance::heading("TST1", 270.0), &a).unwrap();
        assert_eq!(n.lateral, LateralMode::Heading { heading_deg: 270.0 });
        assert!(apply_clearance(&s, &Clearance::level("TST1", 335), &a).is_err());
        let n = apply_clearance(&s, &Clearance::level("TST1", 340), &a).unwrap();
        assert_eq!(n.cleared_fl.value(), 340);
        let n = apply_clearance(&s, &Clearance::direct("TST1", "EAST"), &a).unwrap();
        assert_eq!(n.lateral, LateralMode::Route { next: 1 });
        assert_eq!(n.active_fix().unwrap().name, "EAST");
        assert!(apply_clearance(&s, &Clearance::direct("TST1", "NOPE"), &a).is_err());
        assert!(apply_clearance(&s, &Clearance::heading("OTHER", 10.0), &a).is_err());
        // off-route direct keeps the route's final fix
        let n = apply_clearance(&s, &Clearance::direct("TST1", "MID"), &a).unwrap();
        let names: Vec<_> = n.route.iter().map(|w| w.name.as_str()).collect();
        assert_eq!(names, ["MID", "EAST"]);
    }

    fn one_aircraft_scenario(wind: Vector2D) -> Scenario {
        Scenario {
            id: "single".into(),
            airspace: airspace(),
            wind,
            entries: vec![ScenarioEntry {
                spawn_time: 0.0,
                callsign: "TST1".into(),
                perf: perf(),
                entry_pos: Position2D::new(-40.0, 0.0),
                entry_fl: FlightLevel::new(300).unwrap(),
                route: Route::new(vec!["WEST".into(), "EAST".into()]).unwrap(),
                exit: ExitCondition {
                    exit_waypoint: "EAST".into(),
                    exit_fl: FlightLevel::new(300).unwrap(),
                },
            }],
            duration: 1800.0,
            pilot_delay: 0.0,
        }
    }

    #[test]
    fn empty_scenario_has_no_events() {
        let mut s = one_aircraft_scenario(Vector2D::ZERO);
        s.entries.clear();
        let log = run_scenario(&s, &mut NullAgent, &SimConfig::default(), 1).unwrap();
        assert!(log.events.is_empty());
        assert!(log.is_complete());
    }

    #[test]
    fn single_transit_enters_and_exits_once() {
        let s = one_aircraft_scenario(Vector2D::ZERO);
        let log = run_scenario(&s, &mut NullAgent, &SimConfig::default(), 1).unwrap();
        let entered: Vec<_> = log
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Entered { .. }))
            .collect();
        let exited: Vec<_> = log
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Exited { .. }))
            .collect();
        assert_eq!(entered.len(), 1);
        assert_eq!(exited.len(), 1);
        // Straight-line oracle: 80 NM at 7 NM/min leaves the sector just after 685.7 s.
        let transit = 80.0 / (420.0 / 3600.0);
        let t_exit = exited[0].time;
        assert!(
            t_exit >= transit && t_exit < transit + 5.0,
            "exit at {t_exit}"
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let s = one_aircraft_scenario(Vector2D::new(10.0, -15.0));
        let a = run_scenario(&s, &mut NullAgent, &SimConfig::default(), 7).unwrap();
        let b = run_scenario(&s, &mut NullAgent, &SimConfig::default(), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let s = one_aircraft_scenario(Vector2D::ZERO);
        let cfg = SimConfig {
            dt: 3.0,
            ..SimConfig::default()
        };
        assert!(matches!(
            run_scenario(&s, &mut NullAgent, &cfg, 1),
            Err(Error::Config(_))
        ));
        let mut bad = s.clone();
        bad.entries.push(bad.entries[0].clone());
        assert!(run_scenario(&bad, &mut NullAgent, &SimConfig::default(), 1).is_err());
        let mut bad = s;
        bad.entries[0].spawn_time = 1800.0;
        assert!(run_scenario(&bad, &mut NullAgent, &SimConfig::default(), 1).is_err());
    }

    #[test]
    fn projection_examples() {
        let s = state(0.0, 0.0, 300.0, 90.0);
        let p = perf();
        let traj = project(&[(&s, &p)], Vector2D::ZERO, 300.0, 5.0, None);
        assert_eq!(traj[0].samples.len(), 61);
        for smp in &traj[0].samples {
            assert!(smp.pos.y.abs() < 1e-9);
            assert_eq!(smp.fl, 300.0);
        }
        let mut climbing = s.clone();
        climbing.cleared_fl = FlightLevel::new(320).unwrap();
        let traj = project(&[(&climbing, &p)], Vector2D::ZERO, 300.0, 5.0, None);
        let fls: Vec<f64> = traj[0].samples.iter().map(|x| x.fl).collect();
        assert!(fls.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*fls.last().unwrap(), 320.0);
        // 20 FL at 2000 ft/min takes 60 s
        assert_eq!(fls[12], 320.0);
        assert!(fls[11] < 320.0);
    }

    #[test]
    fn projection_matches_null_agent_run() {
        let s = one_aircraft_scenario(Vector2D::new(12.0, 5.0));
        let log = run_scenario(&s, &mut NullAgent, &SimConfig::default(), 1).unwrap();
        let snaps: Vec<&AircraftState> = log
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::StateSnapshot { state } => Some(state),
                _ => None,
            })
            .collect();
        let p = perf();
        let traj = project(&[(snaps[0], &p)], s.wind, 1800.0, 5.0, Some(s.sector()));
        assert_eq!(traj[0].samples.len(), snaps.len());
        for (smp, snap) in traj[0].samples.iter().zip(&snaps) {
            assert_eq!(smp.pos, snap.pos);
            assert_eq!(smp.fl, snap.fl);
        }
    }
}
