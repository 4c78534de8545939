//! On-disk scenario format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::airspace::{Airspace, Position2D, Route, Sector, Vector2D, Waypoint};
use crate::error::{Error, Result};
use crate::simcore::{ExitCondition, FlightLevel, PerformanceProfile, Scenario, ScenarioEntry};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

fn default_version() -> u32 {
    SCENARIO_FORMAT_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: f64,
    pub y: f64,
}

/// Geographic reference for the plane origin. Informational only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoOrigin {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub boundary: Vec<PointSpec>,
    pub floor: u32,
    pub ceiling: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSpec {
    pub x_kt: f64,
    pub y_kt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub name: String,
    pub waypoints: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryPoint {
    pub x: f64,
    pub y: f64,
    pub fl: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitSpec {
    pub waypoint: String,
    pub fl: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub spawn_time_s: f64,
    pub callsign: String,
    #[serde(rename = "type")]
    pub type_code: String,
    pub cruise_tas_kt: f64,
    pub climb_fpm: f64,
    pub descent_fpm: f64,
    pub turn_dps: f64,
    pub entry: EntryPoint,
    pub route: String,
    pub exit: ExitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_version")]
    pub version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<GeoOrigin>,
    pub sector: SectorSpec,
    pub wind: WindSpec,
    pub waypoints: Vec<WaypointSpec>,
    pub routes: Vec<RouteSpec>,
    pub entries: Vec<EntrySpec>,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_delay_s: Option<f64>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(Error::from_json)?;
        if file.version != SCENARIO_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported scenario format version {}",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form: fixed key order, shortest round-trip floats.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario files always serialize");
        s.push('\n');
        s
    }

    pub fn to_scenario(&self) -> Result<Scenario> {
        let cfg = |m: String| Error::Config(format!("scenario {}: {m}", self.id));
        let level =
            |v: u32, what: &str| FlightLevel::new(v).map_err(|e| cfg(format!("{what}: {e}")));
        let sector = Sector::new(
            self.sector
                .boundary
                .iter()
                .map(|p| Position2D::new(p.x, p.y))
                .collect(),
            level(self.sector.floor, "sector floor")?,
            level(self.sector.ceiling, "sector ceiling")?,
        )
        .map_err(|e| cfg(e.to_string()))?;
        let waypoints = self
            .waypoints
            .iter()
            .map(|w| Waypoint::new(w.name.clone(), Position2D::new(w.x, w.y)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| cfg(e.to_string()))?;
        let airspace = Airspace::new(sector, waypoints).map_err(|e| cfg(e.to_string()))?;

        let mut routes = BTreeMap::new();
        for r in &self.routes {
            for name in &r.waypoints {
                airspace.waypoint(name).map_err(|_| {
                    cfg(format!(
                        "route {} references unknown waypoint {name}",
                        r.name
                    ))
                })?;
            }
            let route = Route::new(r.waypoints.clone())
                .map_err(|e| cfg(format!("route {}: {e}", r.name)))?;
            if routes.insert(r.name.clone(), route).is_some() {
                return Err(cfg(format!("duplicate route {}", r.name)));
            }
        }

        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let route = routes
                .get(&e.route)
                .ok_or_else(|| cfg(format!("{}: unknown route {}", e.callsign, e.route)))?
                .clone();
            entries.push(ScenarioEntry {
                spawn_time: e.spawn_time_s,
                callsign: e.callsign.clone(),
                perf: PerformanceProfile {
                    type_code: e.type_code.clone(),
                    cruise_tas: e.cruise_tas_kt,
                    climb_rate: e.climb_fpm,
                    descent_rate: e.descent_fpm,
                    turn_rate: e.turn_dps,
                },
                entry_pos: Position2D::new(e.entry.x, e.entry.y),
                entry_fl: level(e.entry.fl, &format!("{} entry level", e.callsign))?,
                route,
                exit: ExitCondition {
                    exit_waypoint: e.exit.waypoint.clone(),
                    exit_fl: level(e.exit.fl, &format!("{} exit level", e.callsign))?,
                },
            });
        }
        let scenario = Scenario {
            id: self.id.clone(),
            airspace,
            wind: Vector2D::new(self.wind.x_kt, self.wind.y_kt),
            entries,
            duration: self.duration_s,
            pilot_delay: self.pilot_delay_s.unwrap_or(0.0),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Read and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(ScenarioFile, Scenario)> {
    let file = ScenarioFile::load(path)?;
    let scenario = file.to_scenario()?;
    Ok((file, scenario))
}
