//! Optional TOML overrides, read from the file named by `MBT_CONFIG`.
//!
//! | table       | keys |
//! |-------------|------|
//! | `[sim]`     | `dt`, `decision_interval` (seconds) |
//! | `[minima]`  | `lateral_nm`, `vertical_fl` |
//! | `[metrics]` | `exit_tolerance_nm`, `containment_radius_nm`, `ensure_horizon_s` |
//! | `[rubric]`  | every field of [`RubricConfig`] |
//! | `[hawk]`, `[falcon]` | agent tuning |
//! | `[fidelity]`| `horizontal_nm`, `vertical_fl` (default: half the minima), `dt` |
//! | `[irr]`     | `permutations`, `statistic`, `scope`, `pooling` |
//!
//! Command-line flags take precedence over the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, FalconConfig, HawkConfig};
use crate::assessment::{MetricsConfig, RubricConfig, SummativeConfig};
use crate::error::{Error, Result};
use crate::fidelity::Thresholds;
use crate::irr::{PermutationScope, Pooling, Statistic};
use crate::safety::SeparationMinima;
use crate::simcore::SimConfig;

pub const CONFIG_ENV: &str = "MBT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub dt: f64,
    pub decision_interval: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt: s.dt,
            decision_interval: s.decision_interval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySection {
    pub horizontal_nm: Option<f64>,
    pub vertical_fl: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrrSection {
    pub permutations: usize,
    pub statistic: Statistic,
    pub scope: PermutationScope,
    pub pooling: Pooling,
}

impl Default for IrrSection {
    fn default() -> Self {
        let o = crate::irr::IrrOptions::default();
        Self {
            permutations: o.permutations,
            statistic: o.statistic,
            scope: o.scope,
            pooling: o.pooling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub sim: SimSection,
    pub minima: SeparationMinimaSection,
    pub metrics: MetricsConfig,
    pub rubric: RubricConfig,
    pub hawk: HawkConfig,
    pub falcon: FalconConfig,
    pub fidelity: FidelitySection,
    pub irr: IrrSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationMinimaSection {
    pub lateral_nm: f64,
    pub vertical_fl: f64,
}

impl Default for SeparationMinimaSection {
    fn default() -> Self {
        let m = SeparationMinima::default();
        Self {
            lateral_nm: m.lateral_nm,
            vertical_fl: m.vertical_fl,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(line, e.message().to_string())
        })?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The file named by `MBT_CONFIG`, or defaults when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("minima.lateral_nm", self.minima.lateral_nm),
            ("minima.vertical_fl", self.minima.vertical_fl),
            ("sim.dt", self.sim.dt),
            ("sim.decision_interval", self.sim.decision_interval),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.sim_config().decision_ticks()?;
        Ok(())
    }

    pub fn minima(&self) -> SeparationMinima {
        SeparationMinima {
            lateral_nm: self.minima.lateral_nm,
            vertical_fl: self.minima.vertical_fl,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            decision_interval: self.sim.decision_interval,
            minima: self.minima(),
        }
    }

    pub fn agents(&self) -> AgentConfig {
        AgentConfig {
            hawk: self.hawk.clone(),
            falcon: self.falcon.clone(),
        }
    }

    pub fn summative(&self) -> SummativeConfig {
        SummativeConfig {
            sim: self.sim_config(),
            agents: self.agents(),
            metrics: self.metrics,
            rubric: self.rubric.clone(),
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        let half = Thresholds::from_minima(&self.minima());
        Thresholds {
            horizontal_nm: self.fidelity.horizontal_nm.unwrap_or(half.horizontal_nm),
            vertical_fl: self.fidelity.vertical_fl.unwrap_or(half.vertical_fl),
        }
    }
}
