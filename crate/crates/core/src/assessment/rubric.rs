//! Deterministic rubric turning run metrics into competency grades.

use serde::{Deserialize, Serialize};

use super::metrics::RunMetrics;
use super::{Competency, CompetencyGrade, Evidence, GradeLevel, GradingForm};

/// Every grading threshold. Defaults reflect a basic-training standard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RubricConfig {
    /// Ensured-separation failures tolerated for Mostly Achieved.
    pub ensured_mostly_max: usize,
    /// A single exit miss within these bounds is a minor one.
    pub minor_exit_miss_fl: f64,
    pub minor_exit_miss_nm: f64,
    pub path_ratio_fully_max: f64,
    pub path_ratio_mostly_max: f64,
    pub path_ratio_partly_max: f64,
    /// Mean minutes per aircraft spent below the exit level.
    pub below_exit_level_fully_max_min: f64,
    pub planning_lead_time_s: f64,
    pub planning_fully_fraction: f64,
    pub planning_mostly_fraction: f64,
    pub planning_partly_fraction: f64,
}

impl Default for RubricConfig {
    fn default() -> Self {
        Self {
            ensured_mostly_max: 3,
            minor_exit_miss_fl: 10.0,
            minor_exit_miss_nm: 5.0,
            path_ratio_fully_max: 1.10,
            path_ratio_mostly_max: 1.25,
            path_ratio_partly_max: 1.5,
            below_exit_level_fully_max_min: 5.0,
            planning_lead_time_s: 120.0,
            planning_fully_fraction: 0.9,
            planning_mostly_fraction: 0.7,
            planning_partly_fraction: 0.5,
        }
    }
}

fn pair(p: &(String, String)) -> String {
    format!("{}/{}", p.0, p.1)
}

fn grade_safety(m: &RunMetrics, cfg: &RubricConfig) -> CompetencyGrade {
    let mut evidence = Vec::new();
    for l in &m.safety.losses {
        evidence.push(Evidence::at(
            l.event,
            format!(
                "loss of separation {} at t={:.0}s, closest {:.1} NM / {:.0} FL",
                pair(&l.pair),
                l.time,
                l.min_lateral_nm,
                l.min_vertical_fl
            ),
        ));
    }
    for u in &m.safety.unsafe_clearances {
        evidence.push(Evidence::at(
            u.event,
            format!(
                "unsafe clearance introduced a projected conflict {} at t={:.0}s",
                pair(&u.pair),
                u.time
            ),
        ));
    }
    for e in &m.safety.ensured_violations {
        evidence.push(Evidence::at(
            e.event,
            format!(
                "separation not ensured at t={:.0}s: {} projected to lose separation at t={:.0}s",
                e.detected_at,
                pair(&e.pair),
                e.time
            ),
        ));
    }
    let ensured = m.ensured_violation_count();
    let level = if m.los_count() > 0 {
        GradeLevel::NotAchieved
    } else if m.unsafe_clearance_count() > 0 || ensured > cfg.ensured_mostly_max {
        GradeLevel::PartlyAchieved
    } else if ensured > 0 {
        GradeLevel::MostlyAchieved
    } else {
        GradeLevel::FullyAchieved
    };
    if evidence.is_empty() {
        evidence.push(Evidence::note(
            "separation maintained and ensured throughout",
        ));
    }
    CompetencyGrade {
        competency: Competency::Safety,
        level,
        evidence,
    }
}

fn grade_coordination(m: &RunMetrics, cfg: &RubricConfig) -> CompetencyGrade {
    let mut evidence = Vec::new();
    let mut minor = 0;
    let mut major = 0;
    for e in m.exits.iter().filter(|e| !e.achieved) {
        match (e.lateral_miss_nm, e.level_miss_fl) {
            (Some(lat), Some(lev)) => {
                if lat <= cfg.minor_exit_miss_nm && lev <= cfg.minor_exit_miss_fl {
                    minor += 1;
                } else {
                    major += 1;
                }
                evidence.push(Evidence::at(
                    e.event,
                    format!(
                        "{} left {:.1} NM from {} and {:.0} FL from coordinated FL{:03}",
                        e.callsign, lat, e.exit_waypoint, lev, e.exit_fl
                    ),
                ));
            }
            _ => {
                major += 1;
                evidence.push(Evidence::note(format!(
                    "{} did not leave the sector",
                    e.callsign
                )));
            }
        }
    }
    let level = match (minor + major, major) {
        (0, _) => GradeLevel::FullyAchieved,
        (1, 0) => GradeLevel::MostlyAchieved,
        (1, _) | (2, _) => GradeLevel::PartlyAchieved,
        _ => GradeLevel::NotAchieved,
    };
    if evidence.is_empty() {
        evidence.push(Evidence::note(format!(
            "all {} aircraft achieved their coordinated exit conditions",
            m.exits.len()
        )));
    }
    CompetencyGrade {
        competency: Competency::Coordination,
        level,
        evidence,
    }
}

fn grade_controlling(m: &RunMetrics, cfg: &RubricConfig) -> CompetencyGrade {
    let c = &m.controlling;
    let mut evidence = Vec::new();
    for (cs, ev) in &c.containment_violations {
        evidence.push(Evidence::at(
            Some(*ev),
            format!("{cs} left the sector away from its exit"),
        ));
    }
    let ratio = c.mean_path_ratio.unwrap_or(1.0);
    let per_aircraft_below = if m.aircraft > 0 {
        c.time_below_exit_level_min / m.aircraft as f64
    } else {
        0.0
    };
    let level = if c.containment_violations.len() >= 2 || ratio > cfg.path_ratio_partly_max {
        GradeLevel::NotAchieved
    } else if !c.containment_violations.is_empty() || ratio > cfg.path_ratio_mostly_max {
        GradeLevel::PartlyAchieved
    } else if ratio > cfg.path_ratio_fully_max
        || per_aircraft_below > cfg.below_exit_level_fully_max_min
    {
        GradeLevel::MostlyAchieved
    } else {
        GradeLevel::FullyAchieved
    };
    if let Some(r) = c.mean_path_ratio {
        let worst = c
            .path_ratios
            .iter()
            .max_by(|a, b| a.ratio.total_cmp(&b.ratio));
        let mut text = format!("mean path ratio {r:.3}");
        if let Some(w) = worst {
            text.push_str(&format!(", longest {} at {:.3}", w.callsign, w.ratio));
        }
        evidence.push(Evidence::note(text));
    }
    evidence.push(Evidence::note(format!(
        "{:.1} min per aircraft below exit level",
        per_aircraft_below
    )));
    CompetencyGrade {
        competency: Competency::Controlling,
        level,
        evidence,
    }
}

fn grade_planning(m: &RunMetrics, cfg: &RubricConfig) -> CompetencyGrade {
    let n = m.resolutions.len();
    let mut evidence = Vec::new();
    let timely = m
        .resolutions
        .iter()
        .filter(|r| r.lead_time_s >= cfg.planning_lead_time_s)
        .count();
    for r in m
        .resolutions
        .iter()
        .filter(|r| r.lead_time_s < cfg.planning_lead_time_s)
    {
        evidence.push(Evidence::at(
            Some(r.event),
            format!(
                "late resolution of {}: {:.0}s before closest approach",
                pair(&r.pair),
                r.lead_time_s
            ),
        ));
    }
    let level = if n == 0 {
        GradeLevel::FullyAchieved
    } else {
        let f = timely as f64 / n as f64;
        if f >= cfg.planning_fully_fraction {
            GradeLevel::FullyAchieved
        } else if f >= cfg.planning_mostly_fraction {
            GradeLevel::MostlyAchieved
        } else if f >= cfg.planning_partly_fraction {
            GradeLevel::PartlyAchieved
        } else {
            GradeLevel::NotAchieved
        }
    };
    evidence.insert(
        0,
        Evidence::note(if n == 0 {
            "no projected conflicts required resolution".to_string()
        } else {
            format!(
                "{timely} of {n} resolutions issued at least {:.0}s before closest approach",
                cfg.planning_lead_time_s
            )
        }),
    );
    CompetencyGrade {
        competency: Competency::Planning,
        level,
        evidence,
    }
}

fn grade_communication(m: &RunMetrics) -> CompetencyGrade {
    let missing: Vec<&str> = m
        .exits
        .iter()
        .filter(|e| !m.transfers.iter().any(|t| t.callsign == e.callsign))
        .map(|e| e.callsign.as_str())
        .collect();
    let (level, text) = if missing.is_empty() {
        (
            GradeLevel::FullyAchieved,
            format!("{} transfers made at sector exit", m.transfers.len()),
        )
    } else {
        (
            GradeLevel::PartlyAchieved,
            format!("no transfer recorded for {}", missing.join(", ")),
        )
    };
    CompetencyGrade {
        competency: Competency::Communication,
        level,
        evidence: vec![Evidence::note(text)],
    }
}

/// Grade one run. Communication is reported but never affects pass/fail.
pub fn grade_run(metrics: &RunMetrics, config: &RubricConfig) -> GradingForm {
    GradingForm {
        run_id: format!("{}-{}-{}", metrics.scenario_id, metrics.agent, metrics.seed),
        grades: vec![
            grade_safety(metrics, config),
            grade_controlling(metrics, config),
            grade_planning(metrics, config),
            grade_coordination(metrics, config),
            grade_communication(metrics),
        ],
        metrics: Some(metrics.clone()),
    }
}
