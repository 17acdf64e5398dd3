//! Summary of a finished run directory.

use std::path::Path;

use iternas::controller::HistoryLine;
use iternas::evaluator::load_records;
use iternas::predictor::{spearman, CalibrationPair};
use serde::Serialize;

use crate::exit::{CliError, LOG_SCHEMA, MISSING_ARTIFACT};
use crate::pareto::{oracle_points, pareto_front, FrontPoint};
use crate::{CALIBRATION_FILE, EVALS_FILE, HISTORY_FILE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub swap: usize,
    pub module: String,
    pub best_fitness: f64,
    pub oracle_calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub pairs: usize,
    /// `None` when fewer than two pairs or a constant column.
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub swaps: usize,
    pub best_fitness: Option<f64>,
    pub best_fitness_curve: Vec<CurvePoint>,
    pub curve_non_decreasing: bool,
    pub oracle_calls: u64,
    pub predictor_evaluations: usize,
    pub calibration: Option<Calibration>,
    pub pareto_front: Vec<FrontPoint>,
}

fn require(dir: &Path, name: &str) -> Result<std::path::PathBuf, CliError> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(CliError::new(
            MISSING_ARTIFACT,
            format!("missing run artifact {}", path.display()),
        ));
    }
    Ok(path)
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryLine>, CliError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::new(LOG_SCHEMA, format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_calibration(path: &Path) -> Result<Vec<CalibrationPair>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|row| row.map_err(|e| CliError::new(LOG_SCHEMA, format!("{}: {e}", path.display()))))
        .collect()
}

pub fn build_report(dir: &Path) -> Result<Report, CliError> {
    let history = read_history(&require(dir, HISTORY_FILE)?)?;
    let records = load_records(&require(dir, EVALS_FILE)?)?.records;
    let pairs = read_calibration(&require(dir, CALIBRATION_FILE)?)?;

    let curve: Vec<CurvePoint> = history
        .iter()
        .map(|h| CurvePoint {
            swap: h.swap,
            module: h.module.to_string(),
            best_fitness: h.best_fitness,
            oracle_calls: h.oracle_calls,
        })
        .collect();
    let calibration = (!pairs.is_empty()).then(|| {
        let predicted: Vec<f64> = pairs.iter().map(|p| p.predicted).collect();
        let actual: Vec<f64> = pairs.iter().map(|p| p.actual).collect();
        Calibration {
            pairs: pairs.len(),
            spearman: spearman(&predicted, &actual),
        }
    });
    let oracle_calls = records.iter().filter(|r| r.source == iternas::FitnessSource::Oracle).count() as u64;
    Ok(Report {
        swaps: history.len(),
        best_fitness: history.last().map(|h| h.best_fitness),
        curve_non_decreasing: curve.windows(2).all(|w| w[1].best_fitness >= w[0].best_fitness),
        best_fitness_curve: curve,
        oracle_calls,
        predictor_evaluations: records.len() - oracle_calls as usize,
        calibration,
        pareto_front: pareto_front(&oracle_points(&records)),
    })
}
