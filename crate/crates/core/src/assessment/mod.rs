//! Competency assessment: objective registry, per-run metrics, rubric
//! grading, three-run summative exercises and the assessor decision.

mod coverage;
mod forms;
mod metrics;
mod registry;
mod rubric;
mod summative;

pub use coverage::{coverage_report, CoverageEntry, CoverageKind};
pub use forms::{
    decision_to_markdown, form_to_json, form_to_markdown, ingest_human_form, parse_form,
};
pub use metrics::{
    extract_metrics, extract_metrics_with, ControllingMetrics, ExitRecord, MetricsConfig,
    PairFinding, PathRatio, Resolution, RunMetrics, SafetyMetrics, Transfer,
};
pub use registry::{load_registry, ObjectiveRecord, Registry, Scope, ScopeCounts};
pub use rubric::{grade_run, RubricConfig};
pub use summative::{
    run_seed, run_summative, SummativeConfig, SummativeRun, SUMMATIVE_DURATION_S, SUMMATIVE_RUNS,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Competency {
    Safety,
    Controlling,
    Planning,
    Coordination,
    Communication,
}

impl Competency {
    /// The four areas that decide pass or fail, in reporting order.
    pub const GRADED: [Competency; 4] = [
        Competency::Safety,
        Competency::Controlling,
        Competency::Planning,
        Competency::Coordination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Competency::Safety => "Safety",
            Competency::Controlling => "Controlling",
            Competency::Planning => "Planning",
            Competency::Coordination => "Coordination",
            Competency::Communication => "Communication",
        }
    }
}

impl fmt::Display for Competency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Competency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Competency::Safety,
            Competency::Controlling,
            Competency::Planning,
            Competency::Coordination,
            Competency::Communication,
        ]
        .into_iter()
        .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| Error::InvalidValue(format!("unknown competency {s:?}")))
    }
}

/// Four-point grade; ordinal 4 (fully) down to 1 (not achieved).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GradeLevel {
    #[serde(rename = "Not Achieved", alias = "NotAchieved")]
    NotAchieved,
    #[serde(rename = "Partly Achieved", alias = "PartlyAchieved")]
    PartlyAchieved,
    #[serde(rename = "Mostly Achieved", alias = "MostlyAchieved")]
    MostlyAchieved,
    #[serde(rename = "Fully Achieved", alias = "FullyAchieved")]
    FullyAchieved,
}

impl GradeLevel {
    pub const ALL: [GradeLevel; 4] = [
        GradeLevel::FullyAchieved,
        GradeLevel::MostlyAchieved,
        GradeLevel::PartlyAchieved,
        GradeLevel::NotAchieved,
    ];

    pub fn ordinal(self) -> u8 {
        match self {
            GradeLevel::FullyAchieved => 4,
            GradeLevel::MostlyAchieved => 3,
            GradeLevel::PartlyAchieved => 2,
            GradeLevel::NotAchieved => 1,
        }
    }

    pub fn from_ordinal(n: u8) -> Result<Self> {
        GradeLevel::ALL
            .into_iter()
            .find(|g| g.ordinal() == n)
            .ok_or_else(|| Error::InvalidValue(format!("grade ordinal {n} outside 1..=4")))
    }

    pub fn label(self) -> &'static str {
        match self {
            GradeLevel::FullyAchieved => "Fully Achieved",
            GradeLevel::MostlyAchieved => "Mostly Achieved",
            GradeLevel::PartlyAchieved => "Partly Achieved",
            GradeLevel::NotAchieved => "Not Achieved",
        }
    }
}

impl PartialOrd for GradeLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GradeLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ordinal().cmp(&other.ordinal())
    }
}

impl fmt::Display for GradeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for GradeLevel {
    type Err = Error;

    /// Accepts the labels ("Mostly Achieved"), their unspaced forms and
    /// ordinals "1".."4".
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if let Ok(n) = t.parse::<u8>() {
            return GradeLevel::from_ordinal(n);
        }
        let squashed: String = t.chars().filter(|c| !c.is_whitespace()).collect();
        GradeLevel::ALL
            .into_iter()
            .find(|g| {
                let label: String = g.label().chars().filter(|c| !c.is_whitespace()).collect();
                label.eq_ignore_ascii_case(&squashed)
            })
            .ok_or_else(|| Error::InvalidValue(format!("unknown grade level {s:?}")))
    }
}

/// A cited observation; `event` indexes the run log's events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<usize>,
    pub text: String,
}

impl Evidence {
    pub fn at(event: Option<usize>, text: impl Into<String>) -> Self {
        Self {
            event,
            text: text.into(),
        }
    }

    pub fn note(text: impl Into<String>) -> Self {
        Self::at(None, text)
    }
}

impl fmt::Display for Evidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.event {
            Some(i) => write!(f, "[event {i}] {}", self.text),
            None => f.write_str(&self.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompetencyGrade {
    pub competency: Competency,
    pub level: GradeLevel,
    #[serde(default)]
    pub evidence: Vec<Evidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradingForm {
    pub run_id: String,
    /// Graded competencies in [`Competency::GRADED`] order, optionally
    /// followed by Communication.
    pub grades: Vec<CompetencyGrade>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
}

impl GradingForm {
    pub fn grade(&self, competency: Competency) -> Option<&CompetencyGrade> {
        self.grades.iter().find(|g| g.competency == competency)
    }

    pub fn level(&self, competency: Competency) -> Option<GradeLevel> {
        self.grade(competency).map(|g| g.level)
    }

    /// All graded competencies present exactly once, and evidence given
    /// for every grade below Fully Achieved.
    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.grades.iter().enumerate() {
            if self.grades[..i]
                .iter()
                .any(|h| h.competency == g.competency)
            {
                return Err(Error::InvalidValue(format!(
                    "duplicate {} grade",
                    g.competency
                )));
            }
            if g.level < GradeLevel::FullyAchieved && g.evidence.is_empty() {
                return Err(Error::InvalidValue(format!(
                    "{} graded {} without evidence",
                    g.competency, g.level
                )));
            }
        }
        for c in Competency::GRADED {
            if self.grade(c).is_none() {
                return Err(Error::InvalidValue(format!("missing {c} grade")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Satisfactory,
    Unsatisfactory,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Satisfactory => "Satisfactory",
            Verdict::Unsatisfactory => "Unsatisfactory",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Overall {
    Pass,
    Fail,
}

impl fmt::Display for Overall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Overall::Pass => "Pass",
            Overall::Fail => "Fail",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetencyDecision {
    pub competency: Competency,
    pub verdict: Verdict,
    /// One grade per run, in form order.
    pub grades: Vec<GradeLevel>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessorDecision {
    pub competencies: Vec<CompetencyDecision>,
    pub overall: Overall,
    pub rationale: String,
}

impl AssessorDecision {
    pub fn verdict(&self, competency: Competency) -> Option<Verdict> {
        self.competencies
            .iter()
            .find(|d| d.competency == competency)
            .map(|d| d.verdict)
    }
}

/// Satisfactory when no run is Not Achieved and at most one is Partly
/// Achieved.
pub fn competency_verdict(levels: &[GradeLevel]) -> Verdict {
    let not = levels.contains(&GradeLevel::NotAchieved);
    let partly = levels
        .iter()
        .filter(|&&l| l == GradeLevel::PartlyAchieved)
        .count();
    if !not && partly <= 1 {
        Verdict::Satisfactory
    } else {
        Verdict::Unsatisfactory
    }
}

/// Aggregate three run forms. Pass requires Satisfactory in every graded
/// competency. A form lacking a graded competency counts as Not Achieved
/// there.
pub fn assess(forms: &[GradingForm; SUMMATIVE_RUNS]) -> AssessorDecision {
    let mut competencies = Vec::new();
    for c in Competency::GRADED {
        let grades: Vec<GradeLevel> = forms
            .iter()
            .map(|f| f.level(c).unwrap_or(GradeLevel::NotAchieved))
            .collect();
        let verdict = competency_verdict(&grades);
        let mut lines = Vec::new();
        for f in forms {
            match f.grade(c) {
                Some(g) if g.evidence.is_empty() => {
                    lines.push(format!("{}: {}.", f.run_id, g.level))
                }
                Some(g) => {
                    let ev: Vec<String> = g.evidence.iter().map(|e| e.to_string()).collect();
                    lines.push(format!("{}: {}. {}", f.run_id, g.level, ev.join("; ")))
                }
                None => lines.push(format!("{}: no grade recorded.", f.run_id)),
            }
        }
        competencies.push(CompetencyDecision {
            competency: c,
            verdict,
            grades,
            rationale: lines.join("\n"),
        });
    }
    let failed: Vec<&str> = competencies
        .iter()
        .filter(|d| d.verdict == Verdict::Unsatisfactory)
        .map(|d| d.competency.as_str())
        .collect();
    let (overall, rationale) = if failed.is_empty() {
        (
            Overall::Pass,
            "Satisfactory in all competency areas.".to_string(),
        )
    } else {
        (
            Overall::Fail,
            format!("Unsatisfactory in: {}.", failed.join(", ")),
        )
    };
    AssessorDecision {
        competencies,
        overall,
        rationale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn form(run: &str, levels: [GradeLevel; 4]) -> GradingForm {
        GradingForm {
            run_id: run.into(),
            grades: Competency::GRADED
                .iter()
                .zip(levels)
                .map(|(&c, level)| CompetencyGrade {
                    competency: c,
                    level,
                    evidence: if level < GradeLevel::FullyAchieved {
                        vec![Evidence::note("observed")]
                    } else {
                        Vec::new()
                    },
                })
                .collect(),
            metrics: None,
        }
    }

    use GradeLevel::*;

    #[test]
    fn level_labels_parse() {
        assert_eq!(
            "Mostly Achieved".parse::<GradeLevel>().unwrap().ordinal(),
            3
        );
        assert_eq!(
            "fullyachieved".parse::<GradeLevel>().unwrap(),
            FullyAchieved
        );
        assert_eq!("1".parse::<GradeLevel>().unwrap(), NotAchieved);
        assert!("Almost".parse::<GradeLevel>().is_err());
        assert!("5".parse::<GradeLevel>().is_err());
    }

    #[test]
    fn verdict_policy_examples() {
        assert_eq!(
            competency_verdict(&[FullyAchieved, FullyAchieved, MostlyAchieved]),
            Verdict::Satisfactory
        );
        assert_eq!(
            competency_verdict(&[PartlyAchieved, PartlyAchieved, FullyAchieved]),
            Verdict::Unsatisfactory
        );
        assert_eq!(
            competency_verdict(&[PartlyAchieved, MostlyAchieved, FullyAchieved]),
            Verdict::Satisfactory
        );
        assert_eq!(
            competency_verdict(&[NotAchieved, FullyAchieved, FullyAchieved]),
            Verdict::Unsatisfactory
        );
    }

    #[test]
    fn coordination_alone_does_not_pass() {
        // Safety, Controlling, Planning, Coordination
        let forms = [
            form(
                "r1",
                [
                    PartlyAchieved,
                    PartlyAchieved,
                    PartlyAchieved,
                    FullyAchieved,
                ],
            ),
            form(
                "r2",
                [
                    PartlyAchieved,
                    PartlyAchieved,
                    PartlyAchieved,
                    FullyAchieved,
                ],
            ),
            form(
                "r3",
                [
                    MostlyAchieved,
                    MostlyAchieved,
                    MostlyAchieved,
                    MostlyAchieved,
                ],
            ),
        ];
        let d = assess(&forms);
        assert_eq!(
            d.verdict(Competency::Coordination),
            Some(Verdict::Satisfactory)
        );
        assert_eq!(d.verdict(Competency::Safety), Some(Verdict::Unsatisfactory));
        assert_eq!(d.overall, Overall::Fail);
    }

    #[test]
    fn all_satisfactory_passes() {
        let f = form(
            "r",
            [FullyAchieved, MostlyAchieved, FullyAchieved, FullyAchieved],
        );
        let d = assess(&[f.clone(), f.clone(), f]);
        assert_eq!(d.overall, Overall::Pass);
        assert_eq!(d.competencies.len(), 4);
    }

    #[test]
    fn missing_grade_counts_as_not_achieved() {
        let mut f = form("r", [FullyAchieved; 4]);
        f.grades.retain(|g| g.competency != Competency::Planning);
        let g = form("s", [FullyAchieved; 4]);
        let d = assess(&[f, g.clone(), g]);
        assert_eq!(
            d.verdict(Competency::Planning),
            Some(Verdict::Unsatisfactory)
        );
    }

    fn level() -> impl Strategy<Value = GradeLevel> {
        (1u8..=4).prop_map(|n| GradeLevel::from_ordinal(n).unwrap())
    }

    proptest! {
        #[test]
        fn assess_is_permutation_invariant(
            a in proptest::array::uniform4(level()),
            b in proptest::array::uniform4(level()),
            c in proptest::array::uniform4(level()),
            perm in 0usize..6,
        ) {
            let fs = [form("a", a), form("b", b), form("c", c)];
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let o = orders[perm];
            let permuted = [fs[o[0]].clone(), fs[o[1]].clone(), fs[o[2]].clone()];
            let d1 = assess(&fs);
            let d2 = assess(&permuted);
            prop_assert_eq!(d1.overall, d2.overall);
            for comp in Competency::GRADED {
                prop_assert_eq!(d1.verdict(comp), d2.verdict(comp));
            }
        }

        #[test]
        fn pass_iff_every_competency_satisfactory(
            a in proptest::array::uniform4(level()),
            b in proptest::array::uniform4(level()),
            c in proptest::array::uniform4(level()),
        ) {
            let d = assess(&[form("a", a), form("b", b), form("c", c)]);
            let all = d.competencies.iter().all(|x| x.verdict == Verdict::Satisfactory);
            prop_assert_eq!(d.overall == Overall::Pass, all);
        }
    }
}
