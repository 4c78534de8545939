//! How each in-scope objective is evidenced.

use serde::Serialize;

use super::registry::{Registry, Scope};
use super::Competency;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum CoverageKind {
    /// Measured by a field of the run metrics.
    Metric(&'static str),
    /// Demonstrated by an agent behaviour visible in the clearance log.
    AgentBehavior(&'static str),
    /// Observed qualitatively only.
    QualitativeOnly(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoverageEntry {
    pub id: String,
    pub competency: Competency,
    #[serde(flatten)]
    pub kind: CoverageKind,
}

const COGNITIVE: &str = "internal situational awareness; no observable artifact";

fn mapping(id: &str) -> Option<CoverageKind> {
    use CoverageKind::*;
    Some(match id {
        "MBT.SAFETY.001" => Metric("safety.losses"),
        "MBT.SAFETY.002" => Metric("safety.ensured_violations"),
        "MBT.SAFETY.003" => {
            AgentBehavior("hawk vectors and complementary vectors; falcon lateral plan fixes")
        }
        "MBT.SAFETY.004" => {
            AgentBehavior("hawk level changes and level caps; falcon planned levels")
        }
        "MBT.SAFETY.005" => Metric("safety.losses[geometry=CatchUp]"),
        "MBT.SAFETY.006" => Metric("safety.losses[geometry=Crossing]"),
        "MBT.SAFETY.007" => Metric("safety.losses[geometry=Reciprocal]"),
        "MBT.PLAN.001" | "MBT.PLAN.002" | "MBT.PLAN.003" | "MBT.PLAN.004" | "MBT.PLAN.005" => {
            QualitativeOnly(COGNITIVE)
        }
        "MBT.PLAN.006" => Metric("safety.unsafe_clearances"),
        "MBT.PLAN.007" => Metric("resolutions"),
        "MBT.PLAN.008" => Metric("safety.losses.min_lateral_nm"),
        "MBT.PLAN.009" => {
            AgentBehavior("hawk resolves violating pairs in order of projected onset")
        }
        "MBT.PLAN.010" => Metric("resolutions.lead_time_s"),
        "MBT.COORD.001" => Metric("exits"),
        "MBT.COORD.002" => {
            QualitativeOnly("exit conditions are fixed per scenario and cannot be revised")
        }
        "MBT.CONTROL.001" | "MBT.CONTROL.002" | "MBT.CONTROL.003" | "MBT.CONTROL.004" => {
            QualitativeOnly(COGNITIVE)
        }
        "MBT.CONTROL.005" => AgentBehavior("route following with direct-to the exit fix"),
        "MBT.CONTROL.006" => QualitativeOnly("self-correction is visible only as later clearances"),
        "MBT.CONTROL.007" => Metric("exits.lateral_miss_nm"),
        "MBT.CONTROL.008" => QualitativeOnly("no published route structure in generated sectors"),
        "MBT.CONTROL.009" => AgentBehavior(
            "candidate clearances projected with per-type climb, descent and turn rates",
        ),
        "MBT.CONTROL.010" => {
            AgentBehavior("hawk picks vertical or lateral resolution by conflict geometry")
        }
        "MBT.CONTROL.011" => Metric("controlling.containment_violations"),
        "MBT.CONTROL.012" => Metric("safety.unsafe_clearances"),
        "MBT.CONTROL.013" => Metric("resolutions"),
        "MBT.CONTROL.014" => AgentBehavior("projections re-evaluated at every decision epoch"),
        "MBT.CONTROL.015" => {
            AgentBehavior("hawk partial resolutions refined later; falcon periodic replanning")
        }
        "MBT.CONTROL.016" => Metric("resolutions.lead_time_s"),
        "MBT.CONTROL.017" => AgentBehavior("hawk combines vectoring with level changes"),
        "MBT.CONTROL.018" => QualitativeOnly("traffic load is not varied within a run"),
        "MBT.CONTROL.019" => {
            Metric("controlling.mean_path_ratio, controlling.time_below_exit_level_min")
        }
        "MBT.COMMS.001" => Metric("transfers"),
        _ => return None,
    })
}

/// One entry per in-scope objective; fails if any is unmapped.
pub fn coverage_report(registry: &Registry) -> Result<Vec<CoverageEntry>> {
    registry
        .objectives()
        .iter()
        .filter(|o| o.scope == Scope::InScope)
        .map(|o| {
            mapping(&o.id)
                .map(|kind| CoverageEntry {
                    id: o.id.clone(),
                    competency: o.competency,
                    kind,
                })
                .ok_or_else(|| Error::NotFound(format!("no coverage entry for {}", o.id)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::load_registry;

    #[test]
    fn every_in_scope_objective_is_covered() {
        let r = load_registry().unwrap();
        let report = coverage_report(&r).unwrap();
        assert_eq!(report.len(), r.counts().in_scope);
        let qualitative: Vec<&str> = report
            .iter()
            .filter(|e| matches!(e.kind, CoverageKind::QualitativeOnly(_)))
            .map(|e| e.id.as_str())
            .collect();
        for id in [
            "MBT.PLAN.001",
            "MBT.PLAN.005",
            "MBT.CONTROL.001",
            "MBT.CONTROL.004",
        ] {
            assert!(qualitative.contains(&id), "{id}");
        }
    }

    #[test]
    fn metric_entries_name_real_fields() {
        let r = load_registry().unwrap();
        let m = serde_json::to_value(crate::assessment::RunMetrics::default()).unwrap();
        for e in coverage_report(&r).unwrap() {
            if let CoverageKind::Metric(path) = e.kind {
                for part in path.split(", ") {
                    let mut v = &m;
                    for seg in part.split('.') {
                        let key = seg.split('[').next().unwrap();
                        v = match v.get(key) {
                            Some(x) => x,
                            // Fields of list elements cannot be walked on empty lists.
                            None if v.is_array() => break,
                            None => panic!("{} maps to unknown field {part}", e.id),
                        };
                    }
                }
            }
        }
    }

    #[test]
    fn unmapped_objective_is_reported() {
        let text = r#"{"version":1,"objectives":[
            {"id":"MBT.SAFETY.999","competency":"Safety","scope":"in_scope","criterion":"x"}]}"#;
        let r = Registry::parse(text).unwrap();
        assert!(matches!(coverage_report(&r), Err(Error::NotFound(_))));
    }
}
