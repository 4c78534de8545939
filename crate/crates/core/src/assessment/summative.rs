//! Three-run summative exercises.

use std::path::Path;

use super::forms::{form_to_json, form_to_markdown};
use super::metrics::{extract_metrics_with, MetricsConfig};
use super::rubric::{grade_run, RubricConfig};
use super::GradingForm;
use crate::agents::{self, AgentConfig};
use crate::error::{Error, Result};
use crate::harness::{atomic_write, runlog};
use crate::simcore::{run_scenario, RunLog, Scenario, SimConfig};

pub const SUMMATIVE_RUNS: usize = 3;
pub const SUMMATIVE_DURATION_S: f64 = 1800.0;

#[derive(Debug, Clone, Default)]
pub struct SummativeConfig {
    pub sim: SimConfig,
    pub agents: AgentConfig,
    pub metrics: MetricsConfig,
    pub rubric: RubricConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummativeRun {
    pub log: RunLog,
    pub form: GradingForm,
}

/// Seed of run `index` within an exercise seeded `seed`.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

fn persist(dir: &Path, index: usize, run: &SummativeRun) -> Result<()> {
    let stem = format!("run{}_{}", index + 1, run.log.header.scenario_id);
    atomic_write(
        dir.join(format!("{stem}.jsonl")),
        runlog::to_jsonl(&run.log).as_bytes(),
    )?;
    atomic_write(
        dir.join(format!("{stem}.form.json")),
        form_to_json(&run.form).as_bytes(),
    )?;
    atomic_write(
        dir.join(format!("{stem}.form.md")),
        form_to_markdown(&run.form).as_bytes(),
    )
}

fn one_run(
    agent: &str,
    scenario: &Scenario,
    seed: u64,
    config: &SummativeConfig,
) -> Result<SummativeRun> {
    let mut a = agents::build(agent, &config.agents, seed)?;
    let log = run_scenario(scenario, a.as_mut(), &config.sim, seed)?;
    let metrics = extract_metrics_with(&log, scenario, &config.sim.minima, &config.metrics)?;
    let form = grade_run(&metrics, &config.rubric);
    Ok(SummativeRun { log, form })
}

/// Run, measure and grade `agent` on exactly three half-hour scenarios.
///
/// Runs execute concurrently. With `out_dir`, each completed run's log and
/// forms are written as soon as it finishes, so a failing run leaves the
/// others' artifacts in place.
pub fn run_summative(
    agent: &str,
    suite: &[Scenario],
    seed: u64,
    config: &SummativeConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<SummativeRun>> {
    if suite.len() != SUMMATIVE_RUNS {
        return Err(Error::Config(format!(
            "a summative exercise needs {SUMMATIVE_RUNS} scenarios, got {}",
            suite.len()
        )));
    }
    for s in suite {
        if (s.duration - SUMMATIVE_DURATION_S).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "scenario {} lasts {} s, summative runs last {SUMMATIVE_DURATION_S} s",
                s.id, s.duration
            )));
        }
    }
    agents::build(agent, &config.agents, seed)?;

    let results: Vec<Result<SummativeRun>> = std::thread::scope(|scope| {
        let handles: Vec<_> = suite
            .iter()
            .enumerate()
            .map(|(i, scenario)| {
                scope.spawn(move || {
                    let run = one_run(agent, scenario, run_seed(seed, i), config)?;
                    if let Some(dir) = out_dir {
                        persist(dir, i, &run)?;
                    }
                    Ok(run)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::{assess, Competency, GradeLevel, Overall};
    use crate::harness::generator::conflict_suite;

    fn suite(files: Vec<crate::harness::scenario_file::ScenarioFile>) -> Vec<Scenario> {
        files
            .into_iter()
            .map(|f| f.to_scenario().unwrap())
            .collect()
    }

    #[test]
    fn wrong_suite_size_is_rejected() {
        let s = suite(conflict_suite(1).unwrap());
        let err = run_summative("null", &s[..2], 0, &SummativeConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn wrong_duration_is_rejected() {
        let mut s = suite(conflict_suite(1).unwrap());
        s[1].duration = 600.0;
        assert!(run_summative("null", &s, 0, &SummativeConfig::default(), None).is_err());
    }

    #[test]
    fn null_agent_fails_safety_and_persists_artifacts() {
        let s = suite(conflict_suite(1).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let runs =
            run_summative("null", &s, 5, &SummativeConfig::default(), Some(dir.path())).unwrap();
        assert_eq!(runs.len(), 3);
        assert!(runs
            .iter()
            .any(|r| r.form.level(Competency::Safety) == Some(GradeLevel::NotAchieved)));
        let forms: [GradingForm; 3] = std::array::from_fn(|i| runs[i].form.clone());
        assert_eq!(assess(&forms).overall, Overall::Fail);
        let files = std::fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(files, 9);
    }

    #[test]
    fn reruns_are_identical() {
        let s = suite(conflict_suite(2).unwrap());
        let a = run_summative("null", &s, 9, &SummativeConfig::default(), None).unwrap();
        let b = run_summative("null", &s, 9, &SummativeConfig::default(), None).unwrap();
        assert_eq!(a, b);
    }
}
