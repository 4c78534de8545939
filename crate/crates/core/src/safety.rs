//! Separation semantics: loss of separation, ensured separation under
//! no-further-instruction projection, unsafe clearances and conflict geometry.
//!
//! Pairwise checks treat the motion between consecutive samples as linear,
//! so a violation that begins and ends between two ticks is still found and
//! its onset time is exact for constant-velocity motion.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::airspace::{
    angular_difference, horizontal_distance, Airspace, Position2D, Sector, Vector2D,
};
use crate::error::{Error, Result};
use crate::simcore::{
    apply_clearance, project, AircraftState, Clearance, EventKind, PerformanceProfile, RunLog,
    Trajectory,
};

/// Default look-ahead of the ensured-separation projection.
pub const DEFAULT_ENSURE_HORIZON_S: f64 = 1200.0;
/// Violations separated by fewer than this many ticks form one episode.
pub const EPISODE_MERGE_TICKS: f64 = 3.0;
pub const CATCH_UP_BELOW_DEG: f64 = 45.0;
pub const RECIPROCAL_ABOVE_DEG: f64 = 135.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationMinima {
    pub lateral_nm: f64,
    pub vertical_fl: f64,
}

impl Default for SeparationMinima {
    fn default() -> Self {
        Self {
            lateral_nm: 5.0,
            vertical_fl: 10.0,
        }
    }
}

impl SeparationMinima {
    pub fn new(lateral_nm: f64, vertical_fl: f64) -> Result<Self> {
        if lateral_nm > 0.0 && vertical_fl > 0.0 {
            Ok(Self {
                lateral_nm,
                vertical_fl,
            })
        } else {
            Err(Error::InvalidValue(
                "separation minima must be positive".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeparationKind {
    LossOfSeparation,
    EnsuredSeparationViolation,
    UnsafeClearance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Geometry {
    CatchUp,
    Crossing,
    Reciprocal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationEvent {
    pub kind: SeparationKind,
    /// Callsigns in lexical order.
    pub pair: (String, String),
    /// Onset of the (possibly projected) violation.
    pub time: f64,
    pub end_time: f64,
    /// Time of minimum lateral distance within the episode.
    pub cpa_time: f64,
    /// When a projected violation was detected.
    pub detected_at: Option<f64>,
    pub min_lateral: f64,
    pub min_vertical: f64,
    pub geometry: Option<Geometry>,
}

impl SeparationEvent {
    pub fn involves(&self, callsign: &str) -> bool {
        self.pair.0 == callsign || self.pair.1 == callsign
    }
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Inclusive rule: exactly at a minimum counts as separated.
pub fn separated(a: &AircraftState, b: &AircraftState, minima: &SeparationMinima) -> bool {
    points_separated(a.pos, a.fl, b.pos, b.fl, minima)
}

fn points_separated(
    pa: Position2D,
    fla: f64,
    pb: Position2D,
    flb: f64,
    m: &SeparationMinima,
) -> bool {
    horizontal_distance(pa, pb) >= m.lateral_nm || (fla - flb).abs() >= m.vertical_fl
}

pub fn classify_tracks(track_a: f64, track_b: f64) -> Geometry {
    let d = angular_difference(track_a, track_b);
    if d < CATCH_UP_BELOW_DEG {
        Geometry::CatchUp
    } else if d <= RECIPROCAL_ABOVE_DEG {
        Geometry::Crossing
    } else {
        Geometry::Reciprocal
    }
}

fn classify_velocities(va: Vector2D, vb: Vector2D) -> Result<Geometry> {
    let ta = va
        .bearing()
        .ok_or_else(|| Error::DegenerateGeometry("zero ground speed".into()))?;
    let tb = vb
        .bearing()
        .ok_or_else(|| Error::DegenerateGeometry("zero ground speed".into()))?;
    Ok(classify_tracks(ta, tb))
}

/// Conflict geometry from ground tracks.
pub fn classify_geometry(a: &AircraftState, b: &AircraftState, wind: Vector2D) -> Result<Geometry> {
    classify_velocities(a.ground_velocity(wind), b.ground_velocity(wind))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub pos: Position2D,
    pub fl: f64,
    pub velocity: Vector2D,
}

/// Contiguous samples of one aircraft on a global tick grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub callsign: String,
    pub first_tick: i64,
    pub points: Vec<SeriesPoint>,
}

impl Series {
    fn last_tick(&self) -> i64 {
        self.first_tick + self.points.len() as i64 - 1
    }

    fn at(&self, tick: i64) -> &SeriesPoint {
        &self.points[(tick - self.first_tick) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Episode {
    start: f64,
    end: f64,
    cpa_time: f64,
    min_lateral: f64,
    min_vertical: f64,
}

/// Open sub-interval of [0, 1] on which both minima are broken under
/// linear interpolation from `a0,b0` to `a1,b1`.
fn violating_span(
    a0: &SeriesPoint,
    a1: &SeriesPoint,
    b0: &SeriesPoint,
    b1: &SeriesPoint,
    m: &SeparationMinima,
) -> Option<(f64, f64)> {
    let r0 = b0.pos.sub(&a0.pos);
    let r1 = b1.pos.sub(&a1.pos);
    let dr = Vector2D::new(r1.x - r0.x, r1.y - r0.y);
    let qa = dr.dot(&dr);
    let qb = 2.0 * r0.dot(&dr);
    let qc = r0.dot(&r0) - m.lateral_nm * m.lateral_nm;
    let (mut lo, mut hi) = if qa == 0.0 {
        if qc < 0.0 {
            (0.0, 1.0)
        } else {
            return None;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        ((-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa))
    };
    let v0 = b0.fl - a0.fl;
    let dv = (b1.fl - a1.fl) - v0;
    if dv == 0.0 {
        if v0.abs() >= m.vertical_fl {
            return None;
        }
    } else {
        let s1 = (-m.vertical_fl - v0) / dv;
        let s2 = (m.vertical_fl - v0) / dv;
        lo = lo.max(s1.min(s2));
        hi = hi.min(s1.max(s2));
    }
    lo = lo.max(0.0);
    hi = hi.min(1.0);
    (lo < hi).then_some((lo, hi))
}

fn lerp_point(p0: &SeriesPoint, p1: &SeriesPoint, s: f64) -> (Position2D, f64) {
    (
        Position2D::new(
            p0.pos.x + s * (p1.pos.x - p0.pos.x),
            p0.pos.y + s * (p1.pos.y - p0.pos.y),
        ),
        p0.fl + s * (p1.fl - p0.fl),
    )
}

fn pair_episodes(a: &Series, b: &Series, m: &SeparationMinima, t0: f64, dt: f64) -> Vec<Episode> {
    let first = a.first_tick.max(b.first_tick);
    let last = a.last_tick().min(b.last_tick());
    if first > last {
        return Vec::new();
    }
    let time_of = |tick: i64, s: f64| t0 + (tick as f64 + s) * dt;
    let mut spans: Vec<Episode> = Vec::new();
    let push = |ep: Episode, spans: &mut Vec<Episode>| {
        if let Some(prev) = spans.last_mut() {
            if ep.start - prev.end < EPISODE_MERGE_TICKS * dt {
                prev.end = prev.end.max(ep.end);
                if ep.min_lateral < prev.min_lateral {
                    prev.min_lateral = ep.min_lateral;
                    prev.cpa_time = ep.cpa_time;
                }
                prev.min_vertical = prev.min_vertical.min(ep.min_vertical);
                return;
            }
        }
        spans.push(ep);
    };

    if first == last {
        let (pa, pb) = (a.at(first), b.at(first));
        if !points_separated(pa.pos, pa.fl, pb.pos, pb.fl, m) {
            let t = time_of(first, 0.0);
            push(
                Episode {
                    start: t,
                    end: t,
                    cpa_time: t,
                    min_lateral: horizontal_distance(pa.pos, pb.pos),
                    min_vertical: (pa.fl - pb.fl).abs(),
                },
                &mut spans,
            );
        }
        return spans;
    }

    for k in first..last {
        let (a0, a1, b0, b1) = (a.at(k), a.at(k + 1), b.at(k), b.at(k + 1));
        let Some((lo, hi)) = violating_span(a0, a1, b0, b1, m) else {
            continue;
        };
        // lateral minimum on [lo, hi]
        let r0 = b0.pos.sub(&a0.pos);
        let r1 = b1.pos.sub(&a1.pos);
        let dr = Vector2D::new(r1.x - r0.x, r1.y - r0.y);
        let qa = dr.dot(&dr);
        let s_star = if qa == 0.0 {
            lo
        } else {
            (-r0.dot(&dr) / qa).clamp(lo, hi)
        };
        let (pa, _) = lerp_point(a0, a1, s_star);
        let (pb, _) = lerp_point(b0, b1, s_star);
        let min_lateral = horizontal_distance(pa, pb);
        let v_lo = lerp_point(b0, b1, lo).1 - lerp_point(a0, a1, lo).1;
        let v_hi = lerp_point(b0, b1, hi).1 - lerp_point(a0, a1, hi).1;
        let min_vertical = if v_lo.signum() != v_hi.signum() {
            0.0
        } else {
            v_lo.abs().min(v_hi.abs())
        };
        push(
            Episode {
                start: time_of(k, lo),
                end: time_of(k, hi),
                cpa_time: time_of(k, s_star),
                min_lateral,
                min_vertical,
            },
            &mut spans,
        );
    }
    spans
}

fn episode_geometry(a: &Series, b: &Series, t: f64, t0: f64, dt: f64) -> Option<Geometry> {
    let tick = ((t - t0) / dt).floor() as i64;
    let tick = tick
        .max(a.first_tick.max(b.first_tick))
        .min(a.last_tick().min(b.last_tick()));
    classify_velocities(a.at(tick).velocity, b.at(tick).velocity).ok()
}

/// Pairwise violations over time-aligned series, ordered by (time, pair).
///
/// Tick `k` of every series is at time `t0 + k * dt`.
pub fn detect_violations(
    series: &[Series],
    minima: &SeparationMinima,
    t0: f64,
    dt: f64,
    kind: SeparationKind,
) -> Vec<SeparationEvent> {
    let mut out = Vec::new();
    for i in 0..series.len() {
        for j in (i + 1)..series.len() {
            let (a, b) = (&series[i], &series[j]);
            for ep in pair_episodes(a, b, minima, t0, dt) {
                out.push(SeparationEvent {
                    kind,
                    pair: ordered_pair(&a.callsign, &b.callsign),
                    time: ep.start,
                    end_time: ep.end,
                    cpa_time: ep.cpa_time,
                    detected_at: None,
                    min_lateral: ep.min_lateral,
                    min_vertical: ep.min_vertical,
                    geometry: episode_geometry(a, b, ep.start, t0, dt),
                });
            }
        }
    }
    sort_events(&mut out);
    out
}

fn sort_events(events: &mut [SeparationEvent]) {
    events.sort_by(|x, y| x.time.total_cmp(&y.time).then_with(|| x.pair.cmp(&y.pair)));
}

/// Build per-aircraft series from the snapshots in a run log.
pub fn series_from_log(log: &RunLog, wind: Vector2D) -> Vec<Series> {
    let dt = log.header.dt;
    let mut out: Vec<Series> = Vec::new();
    for ev in &log.events {
        if let EventKind::StateSnapshot { state } = &ev.kind {
            let tick = (ev.time / dt).round() as i64;
            let point = SeriesPoint {
                pos: state.pos,
                fl: state.fl,
                velocity: state.ground_velocity(wind),
            };
            match out.iter_mut().find(|s| s.callsign == state.callsign) {
                Some(s) if s.last_tick() + 1 == tick => s.points.push(point),
                Some(s) if s.last_tick() >= tick => {}
                _ => out.push(Series {
                    callsign: state.callsign.clone(),
                    first_tick: tick,
                    points: vec![point],
                }),
            }
        }
    }
    out
}

/// Losses of separation in a completed run.
pub fn detect_los(log: &RunLog, wind: Vector2D, minima: &SeparationMinima) -> Vec<SeparationEvent> {
    let series = series_from_log(log, wind);
    detect_violations(
        &series,
        minima,
        0.0,
        log.header.dt,
        SeparationKind::LossOfSeparation,
    )
}

pub fn series_from_trajectories(trajs: &[Trajectory]) -> Vec<Series> {
    trajs
        .iter()
        .map(|t| Series {
            callsign: t.callsign.clone(),
            first_tick: 0,
            points: t
                .samples
                .iter()
                .map(|s| SeriesPoint {
                    pos: s.pos,
                    fl: s.fl,
                    velocity: s.velocity,
                })
                .collect(),
        })
        .collect()
}

/// Shared inputs of the projection-based checks.
#[derive(Debug, Clone, Copy)]
pub struct SafetyContext<'a> {
    pub wind: Vector2D,
    pub minima: SeparationMinima,
    /// Aircraft that leave the sector drop out of the projection.
    pub sector: Option<&'a Sector>,
    pub horizon: f64,
    pub dt: f64,
}

impl<'a> SafetyContext<'a> {
    pub fn new(wind: Vector2D, minima: SeparationMinima, sector: Option<&'a Sector>) -> Self {
        Self {
            wind,
            minima,
            sector,
            horizon: DEFAULT_ENSURE_HORIZON_S,
            dt: crate::simcore::DEFAULT_DT_S,
        }
    }
}

/// Projected violations if no further instructions are issued.
///
/// The horizon ends early once every aircraft has left the sector.
/// An empty result means the current clearances are fail-safe.
pub fn ensured(
    aircraft: &[(&AircraftState, &PerformanceProfile)],
    ctx: &SafetyContext<'_>,
    now: f64,
) -> Vec<SeparationEvent> {
    if aircraft.len() < 2 {
        return Vec::new();
    }
    let trajs = project(aircraft, ctx.wind, ctx.horizon, ctx.dt, ctx.sector);
    let series = series_from_trajectories(&trajs);
    let mut events = detect_violations(
        &series,
        &ctx.minima,
        now,
        ctx.dt,
        SeparationKind::EnsuredSeparationViolation,
    );
    for e in &mut events {
        e.detected_at = Some(now);
    }
    events
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClearanceCheck {
    Safe,
    Unsafe(Vec<SeparationEvent>),
}

impl ClearanceCheck {
    pub fn is_safe(&self) -> bool {
        matches!(self, ClearanceCheck::Safe)
    }
}

fn violating_pairs(events: &[SeparationEvent]) -> BTreeSet<(String, String)> {
    events.iter().map(|e| e.pair.clone()).collect()
}

/// Whether `clearance` would introduce a projected violation absent before.
pub fn check_clearance(
    aircraft: &[(&AircraftState, &PerformanceProfile)],
    clearance: &Clearance,
    airspace: &Airspace,
    ctx: &SafetyContext<'_>,
    now: f64,
) -> Result<ClearanceCheck> {
    let before = ensured(aircraft, ctx, now);
    check_clearance_against(aircraft, clearance, airspace, ctx, now, &before).map(|(c, _)| c)
}

/// As [`check_clearance`] with the pre-clearance violations supplied;
/// also returns the post-clearance violations.
pub fn check_clearance_against(
    aircraft: &[(&AircraftState, &PerformanceProfile)],
    clearance: &Clearance,
    airspace: &Airspace,
    ctx: &SafetyContext<'_>,
    now: f64,
    before: &[SeparationEvent],
) -> Result<(ClearanceCheck, Vec<SeparationEvent>)> {
    let idx = aircraft
        .iter()
        .position(|(s, _)| s.callsign == clearance.callsign)
        .ok_or_else(|| Error::NotFound(format!("aircraft {}", clearance.callsign)))?;
    let changed = apply_clearance(aircraft[idx].0, clearance, airspace)
        .map_err(|r| Error::InvalidValue(r.0))?;
    let mut hypothetical: Vec<(&AircraftState, &PerformanceProfile)> = aircraft.to_vec();
    hypothetical[idx] = (&changed, aircraft[idx].1);
    let after = ensured(&hypothetical, ctx, now);
    let prior = violating_pairs(before);
    let introduced: Vec<SeparationEvent> = after
        .iter()
        .filter(|e| !prior.contains(&e.pair))
        .cloned()
        .map(|mut e| {
            e.kind = SeparationKind::UnsafeClearance;
            e
        })
        .collect();
    let check = if introduced.is_empty() {
        ClearanceCheck::Safe
    } else {
        ClearanceCheck::Unsafe(introduced)
    };
    Ok((check, after))
}
