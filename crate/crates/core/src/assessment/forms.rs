//! Grading form files: JSON for machines, markdown for people.

use std::fmt::Write as _;
use std::path::Path;

use super::{AssessorDecision, Competency, GradeLevel, GradingForm};
use crate::error::{Error, Result};

pub fn form_to_json(form: &GradingForm) -> String {
    let mut s = serde_json::to_string_pretty(form).expect("grading form serializes");
    s.push('\n');
    s
}

/// 1-based line of the first line containing `needle` after `skip` earlier
/// matches, or the last line.
fn line_of(text: &str, needle: &str, skip: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.contains(needle))
        .nth(skip)
        .map(|(i, _)| i + 1)
        .unwrap_or_else(|| text.lines().count().max(1))
}

/// Parse and validate a form. Errors carry the offending line.
pub fn parse_form(text: &str) -> Result<GradingForm> {
    let form: GradingForm = serde_json::from_str(text).map_err(Error::from_json)?;
    let end = text.lines().count().max(1);
    for (i, g) in form.grades.iter().enumerate() {
        let needle = format!("\"{}\"", g.competency);
        let earlier = form.grades[..i]
            .iter()
            .filter(|h| h.competency == g.competency)
            .count();
        if earlier > 0 {
            return Err(Error::parse(
                line_of(text, &needle, earlier),
                format!("duplicate {} grade", g.competency),
            ));
        }
        if g.level < GradeLevel::FullyAchieved && g.evidence.is_empty() {
            return Err(Error::parse(
                line_of(text, &needle, 0),
                format!("{} graded {} without evidence", g.competency, g.level),
            ));
        }
    }
    for c in Competency::GRADED {
        if form.grade(c).is_none() {
            return Err(Error::parse(end, format!("missing {c} grade")));
        }
    }
    Ok(form)
}

/// Read an externally authored grading form.
pub fn ingest_human_form(path: &Path) -> Result<GradingForm> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_form(&text)
}

pub fn form_to_markdown(form: &GradingForm) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Grading form: {}\n", form.run_id);
    if let Some(m) = &form.metrics {
        let _ = writeln!(
            md,
            "Scenario `{}`, agent `{}`, seed {}. {} aircraft, {} clearances issued.\n",
            m.scenario_id, m.agent, m.seed, m.aircraft, m.clearances
        );
    }
    let _ = writeln!(md, "| Competency | Grade |\n|---|---|");
    for g in &form.grades {
        let _ = writeln!(md, "| {} | {} |", g.competency, g.level);
    }
    for g in &form.grades {
        let _ = writeln!(md, "\n## {}: {}\n", g.competency, g.level);
        for e in &g.evidence {
            let _ = writeln!(md, "- {e}");
        }
    }
    md
}

/// Assessor decision followed by every run's form.
pub fn decision_to_markdown(decision: &AssessorDecision, forms: &[GradingForm]) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Assessor decision: {}\n", decision.overall);
    let _ = writeln!(md, "| Competency | Grades | Verdict |\n|---|---|---|");
    for d in &decision.competencies {
        let grades: Vec<&str> = d.grades.iter().map(|g| g.label()).collect();
        let _ = writeln!(
            md,
            "| {} | {} | {} |",
            d.competency,
            grades.join(", "),
            d.verdict
        );
    }
    let _ = writeln!(md, "\n{}\n", decision.rationale);
    for f in forms {
        for line in form_to_markdown(f).lines() {
            if line.starts_with('#') {
                md.push('#');
            }
            md.push_str(line);
            md.push('\n');
        }
        md.push('\n');
    }
    md
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::{CompetencyGrade, Evidence};

    fn sample() -> GradingForm {
        GradingForm {
            run_id: "run-1".into(),
            grades: vec![
                CompetencyGrade {
                    competency: Competency::Safety,
                    level: GradeLevel::MostlyAchieved,
                    evidence: vec![Evidence::at(Some(12), "separation not ensured")],
                },
                CompetencyGrade {
                    competency: Competency::Controlling,
                    level: GradeLevel::FullyAchieved,
                    evidence: vec![],
                },
                CompetencyGrade {
                    competency: Competency::Planning,
                    level: GradeLevel::FullyAchieved,
                    evidence: vec![],
                },
                CompetencyGrade {
                    competency: Competency::Coordination,
                    level: GradeLevel::PartlyAchieved,
                    evidence: vec![Evidence::note("two exit levels missed")],
                },
            ],
            metrics: None,
        }
    }

    #[test]
    fn emit_then_ingest_is_identity() {
        let f = sample();
        assert_eq!(parse_form(&form_to_json(&f)).unwrap(), f);
    }

    #[test]
    fn human_labels_are_accepted() {
        let text = form_to_json(&sample()).replace("Fully Achieved", "FullyAchieved");
        let f = parse_form(&text).unwrap();
        assert_eq!(f.level(Competency::Planning).unwrap().ordinal(), 4);
        assert_eq!(f.level(Competency::Safety).unwrap().ordinal(), 3);
    }

    #[test]
    fn unknown_level_reports_its_line() {
        let text = form_to_json(&sample()).replacen("Mostly Achieved", "Nearly Achieved", 1);
        let want = line_of(&text, "Nearly Achieved", 0);
        match parse_form(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_competency_reports_its_line() {
        let text = form_to_json(&sample()).replacen("\"Planning\"", "\"Humour\"", 1);
        let want = line_of(&text, "Humour", 0);
        match parse_form(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_safety_is_an_error() {
        let mut f = sample();
        f.grades.remove(0);
        let err = parse_form(&form_to_json(&f)).unwrap_err();
        assert!(
            matches!(err, Error::Parse { ref message, .. } if message.contains("Safety")),
            "{err}"
        );
    }

    #[test]
    fn duplicate_and_unevidenced_grades_are_rejected() {
        let mut f = sample();
        f.grades.push(f.grades[1].clone());
        assert!(matches!(
            parse_form(&form_to_json(&f)),
            Err(Error::Parse { .. })
        ));
        let mut f = sample();
        f.grades[0].evidence.clear();
        assert!(matches!(
            parse_form(&form_to_json(&f)),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn markdown_lists_every_grade() {
        let md = form_to_markdown(&sample());
        assert!(md.contains("| Safety | Mostly Achieved |"));
        assert!(md.contains("[event 12] separation not ensured"));
    }
}
