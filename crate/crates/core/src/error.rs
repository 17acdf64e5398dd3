use std::path::PathBuf;

use thiserror::Error;

use crate::evolution::ModuleKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid hardware profile: {0}")]
    InvalidHardware(String),

    #[error("invalid search config: {0}")]
    InvalidConfig(String),

    #[error("genome does not match search space: {0}")]
    GenomeMismatch(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("field `{field}` index {index} out of range (0..{len})")]
    IndexOutOfRange {
        field: String,
        index: usize,
        len: usize,
    },

    #[error(
        "budget inconsistency in `{component}`: backbone {backbone} + head {head} exceeds total {total}"
    )]
    BudgetInconsistency {
        component: &'static str,
        backbone: u64,
        head: u64,
        total: u64,
    },

    #[error("no feasible {module} configuration found in {draws} uniform draws")]
    InfeasibleSpace { module: ModuleKind, draws: usize },

    #[error("insufficient training data: {have} records, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("predictor fit failed: {0}")]
    Predictor(String),

    #[error("oracle error for genome {genome_id}: {kind}")]
    Oracle {
        genome_id: String,
        kind: OracleFailure,
    },

    #[error("{path}:{line}: schema violation: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleFailure {
    #[error("timed out after {0:.1}s")]
    Timeout(f64),
    #[error("exited with status {0}")]
    NonZeroExit(String),
    #[error("could not parse fitness from output {0:?}")]
    BadOutput(String),
    #[error("non-finite fitness {0}")]
    NonFinite(f64),
    #[error("failed to launch: {0}")]
    Launch(String),
}
