use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mbt_core::agents;
use mbt_core::airspace::Vector2D;
use mbt_core::assessment::{
    assess, coverage_report, decision_to_markdown, load_registry, run_seed, run_summative,
    AssessorDecision, GradingForm,
};
use mbt_core::error::{Error, Result};
use mbt_core::fidelity::{
    flag_manual_review, load_traces, summarize, traces_from_run_log, traces_to_csv,
    verify_simulation, ClearanceLog, ReplayOptions,
};
use mbt_core::harness::atomic_write;
use mbt_core::harness::config::Config;
use mbt_core::harness::generator::{
    conflict_suite, easy_suite, generate_scenario, Pattern, PatternSpec,
};
use mbt_core::harness::plot::plot_data_csv;
use mbt_core::harness::runlog::{read_log, require_complete, to_jsonl};
use mbt_core::harness::scenario_file::{load_scenario, ScenarioFile};
use mbt_core::irr::{irr_report, load_scores, IrrOptions, PermutationScope, Pooling, Statistic};
use mbt_core::simcore::run_scenario;

const EXIT_INPUT: u8 = 2;
const EXIT_STRICT: u8 = 3;

/// Deterministic en-route ATC simulation and agent assessment.
///
/// Overrides for rubric, metric and threshold settings are read from the
/// TOML file named by MBT_CONFIG.
#[derive(Parser)]
#[command(name = "mbt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under an agent and write the run log.
    Simulate(SimulateArgs),
    /// Run a three-scenario summative exercise and grade it.
    Assess(AssessArgs),
    /// Replay reference traces and compare against them.
    Fidelity(FidelityArgs),
    /// Inter-rater reliability of a score file.
    Irr(IrrArgs),
    /// Turn a run log into plot data.
    Replay(ReplayArgs),
    /// Generate scenario files.
    Generate(GenerateArgs),
    /// Map every in-scope objective to its evidence.
    Coverage(CoverageArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "hawk")]
    agent: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Tick length in seconds; must divide the decision interval.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Ignore the scenario's wind.
    #[arg(long)]
    wind_off: bool,
}

#[derive(Args)]
struct AssessArgs {
    #[arg(long, default_value = "hawk")]
    agent: String,
    /// Directory holding exactly three scenario files (*.json).
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report; the markdown forms go next to it with an .md extension.
    #[arg(long)]
    report: PathBuf,
    /// Also keep each run's log and forms here.
    #[arg(long)]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct FidelityArgs {
    /// Reference trace CSV, one per simulation.
    #[arg(long, required = true)]
    reference: Vec<PathBuf>,
    /// Clearance log, paired with each --reference in order.
    #[arg(long, required = true)]
    clearances: Vec<PathBuf>,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    summary: PathBuf,
    /// Row label; defaults to the scenario id.
    #[arg(long)]
    assessment: Option<String>,
    /// Added to the scenario wind, in knots.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    wind_delta_x: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    wind_delta_y: f64,
    /// Exit 3 when any aircraft is out of threshold.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    MeanSpearman,
    KendallW,
    IccConsistency,
    IccAgreement,
}

impl From<StatArg> for Statistic {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::MeanSpearman => Statistic::MeanSpearman,
            StatArg::KendallW => Statistic::KendallW,
            StatArg::IccConsistency => Statistic::IccConsistency,
            StatArg::IccAgreement => Statistic::IccAgreement,
        }
    }
}

#[derive(Args)]
struct IrrArgs {
    #[arg(long)]
    scores: PathBuf,
    /// Permutation draws; 0 skips the permutation test.
    #[arg(long)]
    permutations: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum)]
    statistic: Option<StatArg>,
    /// Shuffle only within each scenario.
    #[arg(long)]
    within_scenario: bool,
    /// Average the statistics over scenarios instead of pooling items.
    #[arg(long)]
    per_scenario: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    plot_data: PathBuf,
    /// Scenario of the run, for its wind.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Also export the run as a reference trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also export the run's clearances.
    #[arg(long)]
    clearances: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Conflict,
    Easy,
}

#[derive(Args)]
struct GenerateArgs {
    /// catch-up, crossing, reciprocal or mixed.
    #[arg(long, default_value = "mixed")]
    pattern: String,
    #[arg(long = "aircraft", default_value_t = PatternSpec::DEFAULT_AIRCRAFT)]
    n_aircraft: usize,
    #[arg(long, default_value_t = 1.0)]
    difficulty: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file for a single scenario.
    #[arg(long, conflicts_with = "suite")]
    out: Option<PathBuf>,
    /// Generate a three-scenario suite into --out-dir instead.
    #[arg(long, value_enum, requires = "out_dir")]
    suite: Option<SuiteArg>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Outcome {
    Ok,
    StrictFailure,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn simulate(args: SimulateArgs, config: &Config) -> Result<Outcome> {
    let (_, mut scenario) = load_scenario(&args.scenario)?;
    if args.wind_off {
        scenario.wind = Vector2D::ZERO;
    }
    let mut sim = config.sim_config();
    if let Some(dt) = args.dt {
        sim.dt = dt;
    }
    sim.decision_ticks()?;
    let mut agent = agents::build(&args.agent, &config.agents(), args.seed)?;
    let log = run_scenario(&scenario, agent.as_mut(), &sim, args.seed)?;
    atomic_write(&args.out, to_jsonl(&log).as_bytes())?;
    log::info!(
        "{} events written to {}",
        log.events.len(),
        args.out.display()
    );
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct RunEntry<'a> {
    scenario_id: &'a str,
    seed: u64,
    form: &'a GradingForm,
}

#[derive(Serialize)]
struct AssessReport<'a> {
    version: u32,
    agent: &'a str,
    seed: u64,
    decision: &'a AssessorDecision,
    runs: Vec<RunEntry<'a>>,
}

fn suite_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

fn assess_cmd(args: AssessArgs, config: &Config) -> Result<Outcome> {
    let files = suite_files(&args.suite)?;
    if files.len() != 3 {
        return Err(Error::Config(format!(
            "{} holds {} scenario files; a summative suite has exactly 3",
            args.suite.display(),
            files.len()
        )));
    }
    let suite = files
        .iter()
        .map(|f| load_scenario(f).map(|(_, s)| s))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &args.artifacts {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let runs = run_summative(
        &args.agent,
        &suite,
        args.seed,
        &config.summative(),
        args.artifacts.as_deref(),
    )?;
    let forms: [GradingForm; 3] = std::array::from_fn(|i| runs[i].form.clone());
    let decision = assess(&forms);
    let report = AssessReport {
        version: 1,
        agent: &args.agent,
        seed: args.seed,
        decision: &decision,
        runs: suite
            .iter()
            .zip(&forms)
            .enumerate()
            .map(|(i, (s, form))| RunEntry {
                scenario_id: &s.id,
                seed: run_seed(args.seed, i),
                form,
            })
            .collect(),
    };
    atomic_write(&args.report, to_json(&report).as_bytes())?;
    atomic_write(
        args.report.with_extension("md"),
        decision_to_markdown(&decision, &forms).as_bytes(),
    )?;
    println!("{}: {}", args.agent, decision.overall);
    Ok(Outcome::Ok)
}

fn fidelity_cmd(args: FidelityArgs, config: &Config) -> Result<Outcome> {
    if args.reference.len() != args.clearances.len() {
        return Err(Error::Config(format!(
            "{} reference traces but {} clearance logs",
            args.reference.len(),
            args.clearances.len()
        )));
    }
    let (_, scenario) = load_scenario(&args.scenario)?;
    let options = ReplayOptions {
        dt: config.fidelity.dt.unwrap_or(config.sim.dt),
        wind_delta: Vector2D::new(args.wind_delta_x, args.wind_delta_y),
    };
    let thresholds = config.thresholds();
    let mut simulations = Vec::new();
    for (trace_path, clearance_path) in args.reference.iter().zip(&args.clearances) {
        let traces = load_traces(trace_path)?;
        let clearances = ClearanceLog::load(clearance_path, scenario.pilot_delay)?;
        simulations.push(verify_simulation(
            &traces,
            &clearances,
            &scenario,
            &options,
            &thresholds,
        )?);
    }
    let summary = summarize(
        args.assessment.as_deref().unwrap_or(&scenario.id),
        &simulations,
    );
    atomic_write(&args.summary, to_json(&summary).as_bytes())?;
    let flagged: Vec<_> = simulations
        .iter()
        .flat_map(|s| flag_manual_review(s))
        .collect();
    for e in &flagged {
        eprintln!(
            "manual review: {} max horizontal {:.3} NM, max vertical {:.2} FL",
            e.callsign, e.max_horizontal, e.max_vertical
        );
    }
    println!(
        "{:.1}% of aircraft within threshold",
        summary.aircraft_in_threshold_pct
    );
    if args.strict && !flagged.is_empty() {
        return Ok(Outcome::StrictFailure);
    }
    Ok(Outcome::Ok)
}

fn irr_cmd(args: IrrArgs, config: &Config) -> Result<Outcome> {
    let matrix = load_scores(&args.scores)?;
    let options = IrrOptions {
        pooling: if args.per_scenario {
            Pooling::PerScenario
        } else {
            config.irr.pooling
        },
        permutations: args.permutations.unwrap_or(config.irr.permutations),
        statistic: args
            .statistic
            .map(Statistic::from)
            .unwrap_or(config.irr.statistic),
        scope: if args.within_scenario {
            PermutationScope::WithinScenario
        } else {
            config.irr.scope
        },
        seed: args.seed,
    };
    let report = irr_report(&matrix, &options)?;
    atomic_write(&args.report, to_json(&report).as_bytes())?;
    Ok(Outcome::Ok)
}

fn replay_cmd(args: ReplayArgs, config: &Config) -> Result<Outcome> {
    let log = read_log(&args.run)?;
    require_complete(&log)?;
    let wind = match &args.scenario {
        Some(p) => load_scenario(p)?.1.wind,
        None => Vector2D::ZERO,
    };
    atomic_write(
        &args.plot_data,
        plot_data_csv(&log, wind, &config.minima()).as_bytes(),
    )?;
    if let Some(p) = &args.trace {
        atomic_write(p, traces_to_csv(&traces_from_run_log(&log)).as_bytes())?;
    }
    if let Some(p) = &args.clearances {
        let json = ClearanceLog::from_run_log(&log).to_json(Some(&log.header.scenario_id));
        atomic_write(p, json.as_bytes())?;
    }
    Ok(Outcome::Ok)
}

fn generate_cmd(args: GenerateArgs) -> Result<Outcome> {
    let write = |path: &Path, file: &ScenarioFile| atomic_write(path, file.to_json().as_bytes());
    match (args.suite, &args.out_dir, &args.out) {
        (Some(kind), Some(dir), _) => {
            let files = match kind {
                SuiteArg::Conflict => conflict_suite(args.seed)?,
                SuiteArg::Easy => easy_suite(args.seed)?,
            };
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            for (i, f) in files.iter().enumerate() {
                write(&dir.join(format!("{}_{}.json", i + 1, f.id)), f)?;
            }
        }
        (None, _, Some(out)) => {
            let spec = PatternSpec {
                pattern: args.pattern.parse::<Pattern>()?,
                n_aircraft: args.n_aircraft,
                difficulty: args.difficulty,
                seed: args.seed,
            };
            write(out, &generate_scenario(&spec)?)?;
        }
        _ => {
            return Err(Error::Config(
                "give --out, or --suite with --out-dir".into(),
            ))
        }
    }
    Ok(Outcome::Ok)
}

fn coverage_cmd(args: CoverageArgs) -> Result<Outcome> {
    let registry = load_registry()?;
    #[derive(Serialize)]
    struct Report<'a> {
        counts: mbt_core::assessment::ScopeCounts,
        entries: &'a [mbt_core::assessment::CoverageEntry],
    }
    let entries = coverage_report(&registry)?;
    let json = to_json(&Report {
        counts: registry.counts(),
        entries: &entries,
    });
    match args.out {
        Some(p) => atomic_write(p, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(Outcome::Ok)
}

fn run(cli: Cli) -> Result<Outcome> {
    let config = Config::from_env()?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &config),
        Command::Assess(a) => assess_cmd(a, &config),
        Command::Fidelity(a) => fidelity_cmd(a, &config),
        Command::Irr(a) => irr_cmd(a, &config),
        Command::Replay(a) => replay_cmd(a, &config),
        Command::Generate(a) => generate_cmd(a),
        Command::Coverage(a) => coverage_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::StrictFailure) => ExitCode::from(EXIT_STRICT),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
