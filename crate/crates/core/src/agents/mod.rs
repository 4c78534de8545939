//! Controller agents and the interface the simulator drives them through.

mod falcon;
mod hawk;

pub use falcon::{AircraftPlan, Falcon, FalconConfig, Leg};
pub use hawk::{Hawk, HawkConfig};

use serde::{Deserialize, Serialize};

use crate::airspace::{Airspace, Vector2D};
use crate::error::{Error, Result};
use crate::safety::SeparationMinima;
use crate::simcore::{AircraftState, Clearance, ExitCondition, PerformanceProfile};

/// One airborne aircraft as seen by an agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedAircraft {
    pub state: AircraftState,
    pub perf: PerformanceProfile,
    pub exit: ExitCondition,
}

/// Everything an agent may see at a decision epoch.
#[derive(Debug, Clone)]
pub struct Observation<'a> {
    pub time: f64,
    /// Entered, non-exited aircraft only.
    pub aircraft: Vec<ObservedAircraft>,
    pub airspace: &'a Airspace,
    pub wind: Vector2D,
    pub minima: SeparationMinima,
}

impl Observation<'_> {
    pub fn pairs(&self) -> Vec<(&AircraftState, &PerformanceProfile)> {
        self.aircraft.iter().map(|a| (&a.state, &a.perf)).collect()
    }

    pub fn find(&self, callsign: &str) -> Option<&ObservedAircraft> {
        self.aircraft.iter().find(|a| a.state.callsign == callsign)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AgentDecision {
    pub clearances: Vec<Clearance>,
    /// Free-text tag per clearance, same order.
    pub rationale: Vec<String>,
}

impl AgentDecision {
    pub fn push(&mut self, clearance: Clearance, rationale: impl Into<String>) {
        self.clearances.push(clearance);
        self.rationale.push(rationale.into());
    }

    pub fn is_empty(&self) -> bool {
        self.clearances.is_empty()
    }
}

pub trait Agent {
    fn name(&self) -> &str;

    /// Clearances to issue this epoch. Must be a deterministic function of
    /// the observation sequence and the agent's seed.
    fn decide(&mut self, obs: &Observation<'_>) -> AgentDecision;
}

/// Never issues anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullAgent;

impl Agent for NullAgent {
    fn name(&self) -> &str {
        "null"
    }

    fn decide(&mut self, _obs: &Observation<'_>) -> AgentDecision {
        AgentDecision::default()
    }
}

/// Per-agent tuning, all optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hawk: HawkConfig,
    pub falcon: FalconConfig,
}

pub const AGENT_NAMES: [&str; 3] = ["null", "hawk", "falcon"];

/// Build an agent by name.
pub fn build(name: &str, config: &AgentConfig, seed: u64) -> Result<Box<dyn Agent + Send>> {
    match name {
        "null" => Ok(Box::new(NullAgent)),
        "hawk" => Ok(Box::new(Hawk::new(config.hawk.clone()))),
        "falcon" => Ok(Box::new(Falcon::new(config.falcon.clone(), seed)?)),
        other => Err(Error::Config(format!(
            "unknown agent {other:?}; expected one of {}",
            AGENT_NAMES.join(", ")
        ))),
    }
}
