//! The `search`, `eval`, `pareto`, and `report` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use iternas::cost_model::{CostProfile, CostVector, HardwareProfile, MAX_ACTIVATION_BYTES, MAX_CHANNELS, MAX_PRIMAL_LAYERS};
use iternas::evaluator::{build_oracle, load_records, RecordWriter};
use iternas::predictor::PredictorPolicy;
use iternas::search_space::SearchSpace;
use iternas::{
    run_iterative_search, Evaluator, Genome, OracleSpec, Result as CoreResult, Scope, SearchConfig,
    SearchObserver, SwapRecord,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::{CliError, EMPTY_LOG, IO};
use crate::pareto::{oracle_points, pareto_front, write_csv};
use crate::report::{build_report, Report};
use crate::{BEST_GENOME_FILE, CALIBRATION_FILE, EVALS_FILE, HEADER_FILE, HISTORY_FILE, META_FILE};

/// Everything that determines a run's results, with presets expanded.
#[derive(Debug, Clone, Serialize)]
pub struct RunHeader {
    pub space: SearchSpace,
    pub hardware: HardwareProfile,
    pub budgets: CostProfile,
    pub search: SearchConfig,
    pub oracle: OracleSpec,
    pub predictor_policy: PredictorPolicy,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchSummary {
    pub best_fitness: f64,
    pub oracle_calls: u64,
    pub swaps: usize,
    pub converged: bool,
    pub wall_time_s: f64,
    pub output_dir: PathBuf,
}

#[derive(Serialize)]
struct RunMeta {
    started_unix_s: f64,
    finished_unix_s: f64,
    wall_time_s: f64,
    jobs: usize,
}

struct HistoryLog {
    out: BufWriter<File>,
}

impl SearchObserver for HistoryLog {
    fn swap_finished(&mut self, record: &SwapRecord) -> CoreResult<()> {
        serde_json::to_writer(&mut self.out, &record.history_line())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new(IO, format!("{}: {e}", path.display())))
}

/// Runs a search and writes all artifacts into the configured output
/// directory. The resolved header is printed as one JSON line on `out`.
pub fn cmd_search(
    config_path: &Path,
    seed: Option<u64>,
    jobs: usize,
    out: &mut dyn Write,
) -> Result<SearchSummary, CliError> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.search.seed = seed;
    }
    let problem = config.problem()?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| CliError::new(IO, format!("{}: {e}", dir.display())))?;

    let header = RunHeader {
        space: problem.space.clone(),
        hardware: problem.hardware.clone(),
        budgets: problem.budgets.clone(),
        search: config.search.clone(),
        oracle: config.oracle.clone(),
        predictor_policy: config.predictor_policy.clone(),
    };
    let mut w = create(&dir.join(HEADER_FILE))?;
    serde_json::to_writer_pretty(&mut w, &header)?;
    w.write_all(b"\n")?;
    w.flush()?;
    serde_json::to_writer(&mut *out, &header)?;
    writeln!(out)?;

    let started = unix_now();
    let clock = Instant::now();
    let seed = config.search.seed;
    let mut evaluator = Evaluator::from_spec(&config.oracle, &problem.space, seed)?
        .with_jobs(jobs)?
        .with_log(RecordWriter::create(&dir.join(EVALS_FILE))?)
        .with_predictor(config.predictor_policy.clone())?;
    let mut history = HistoryLog {
        out: create(&dir.join(HISTORY_FILE))?,
    };
    let result = run_iterative_search(&problem, &config.search, &mut evaluator, &mut history);
    evaluator.flush()?;
    let outcome = result?;

    let mut w = create(&dir.join(BEST_GENOME_FILE))?;
    w.write_all(outcome.best.canonical.as_bytes())?;
    w.flush()?;

    let mut cal = csv::Writer::from_writer(create(&dir.join(CALIBRATION_FILE))?);
    cal.write_record(["predicted", "true", "swap", "generation"])?;
    for p in evaluator.calibration() {
        cal.serialize((p.predicted, p.actual, p.swap, p.generation))?;
    }
    cal.flush()?;

    let wall = clock.elapsed().as_secs_f64();
    let mut w = create(&dir.join(META_FILE))?;
    serde_json::to_writer_pretty(
        &mut w,
        &RunMeta {
            started_unix_s: started,
            finished_unix_s: unix_now(),
            wall_time_s: wall,
            jobs,
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()?;

    Ok(SearchSummary {
        best_fitness: outcome.best.fitness,
        oracle_calls: outcome.oracle_calls,
        swaps: outcome.history.len(),
        converged: outcome.converged,
        wall_time_s: wall,
        output_dir: dir,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintCheck {
    pub name: &'static str,
    pub limit: u64,
    pub measured: u64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetChecks {
    pub backbone: bool,
    pub head: bool,
    pub total: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModuleCosts {
    pub backbone: CostVector,
    pub head: CostVector,
    pub total: CostVector,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub genome: String,
    pub cost: ModuleCosts,
    pub constraints: Vec<ConstraintCheck>,
    pub budgets: BudgetChecks,
    pub feasible: bool,
    pub fitness: f64,
}

/// Costs, constraint checks, and oracle fitness of one genome. Violations
/// are reported, not treated as errors.
pub fn cmd_eval(config_path: &Path, genome_path: &Path) -> Result<EvalReport, CliError> {
    let config = RunConfig::load(config_path)?;
    let problem = config.problem()?;
    let text = std::fs::read_to_string(genome_path)
        .map_err(|e| CliError::new(IO, format!("{}: {e}", genome_path.display())))?;
    let genome = Genome::from_canonical_text(&text, &problem.space)?;
    let report = problem.cost(&genome);
    let hw = &problem.hardware;
    let constraints = vec![
        ConstraintCheck {
            name: MAX_CHANNELS,
            limit: hw.max_channels,
            measured: report.max_channels,
            pass: !report.violates(MAX_CHANNELS),
        },
        ConstraintCheck {
            name: MAX_PRIMAL_LAYERS,
            limit: hw.max_primal_layers,
            measured: report.total.primal_layers,
            pass: !report.violates(MAX_PRIMAL_LAYERS),
        },
        ConstraintCheck {
            name: MAX_ACTIVATION_BYTES,
            limit: hw.max_activation_bytes,
            measured: report.peak_activation_bytes,
            pass: !report.violates(MAX_ACTIVATION_BYTES),
        },
    ];
    let budgets = BudgetChecks {
        backbone: report.backbone.fits_within(&problem.budgets.tau_backbone),
        head: report.head.fits_within(&problem.budgets.tau_head),
        total: report.total.fits_within(&problem.budgets.tau_total),
    };
    let feasible = [Scope::Backbone, Scope::Head, Scope::Both]
        .into_iter()
        .all(|s| problem.is_feasible(&report, s));
    let canonical = genome.to_canonical_text();
    let fitness = build_oracle(&config.oracle, &problem.space)?.evaluate(&genome, &canonical, &report)?;
    Ok(EvalReport {
        genome: canonical,
        cost: ModuleCosts {
            backbone: report.backbone,
            head: report.head,
            total: report.total,
        },
        constraints,
        budgets,
        feasible,
        fitness,
    })
}

/// Writes the Pareto front of the oracle-scored records as CSV.
pub fn cmd_pareto(evals_path: &Path, out: &mut dyn Write) -> Result<usize, CliError> {
    if !evals_path.is_file() {
        return Err(CliError::new(IO, format!("{}: no such file", evals_path.display())));
    }
    let loaded = load_records(evals_path)?;
    let points = oracle_points(&loaded.records);
    if points.is_empty() {
        return Err(CliError::new(
            EMPTY_LOG,
            format!("{}: no oracle-scored records", evals_path.display()),
        ));
    }
    let front = pareto_front(&points);
    write_csv(&front, out)?;
    Ok(front.len())
}

pub fn cmd_report(dir: &Path) -> Result<Report, CliError> {
    build_report(dir)
}
