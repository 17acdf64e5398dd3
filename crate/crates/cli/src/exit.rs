//! Process exit codes. Every failure path of the binary maps to one of
//! these constants.

use std::fmt;

use iternas::Error;

pub const OK: i32 = 0;
pub const INTERNAL: i32 = 1;
/// Reserved for command-line usage errors (reported by the argument parser).
pub const USAGE: i32 = 2;
pub const CONFIG: i32 = 3;
pub const BUDGET_INCONSISTENT: i32 = 4;
pub const INFEASIBLE_SPACE: i32 = 5;
pub const IO: i32 = 6;
pub const ORACLE: i32 = 7;
pub const EMPTY_LOG: i32 = 8;
pub const MISSING_ARTIFACT: i32 = 9;
pub const GENOME: i32 = 10;
pub const LOG_SCHEMA: i32 = 11;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidSpace(_) | Error::InvalidHardware(_) | Error::InvalidConfig(_) => CONFIG,
        Error::BudgetInconsistency { .. } => BUDGET_INCONSISTENT,
        Error::InfeasibleSpace { .. } => INFEASIBLE_SPACE,
        Error::Io(_) => IO,
        Error::Oracle { .. } => ORACLE,
        Error::Parse { .. } | Error::GenomeMismatch(_) | Error::IndexOutOfRange { .. } => GENOME,
        Error::Schema { .. } | Error::Json(_) => LOG_SCHEMA,
        Error::InsufficientData { .. } | Error::Predictor(_) => INTERNAL,
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        CliError::new(code_for(&err), err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::new(IO, err.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(err: serde_json::Error) -> Self {
        CliError::new(INTERNAL, err.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(err: csv::Error) -> Self {
        CliError::new(IO, err.to_string())
    }
}
