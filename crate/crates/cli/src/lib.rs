//! Command-line front end for the `iternas` search engine.
//!
//! A run directory produced by `search` contains:
//!
//! | file | content |
//! |------|---------|
//! | `run_header.json` | resolved configuration (deterministic) |
//! | `history.jsonl` | one line per module swap |
//! | `evals.jsonl` | one line per evaluation |
//! | `calibration.csv` | `predicted,true,swap,generation` |
//! | `best_genome.txt` | canonical text of the best genome |
//! | `run_meta.json` | timestamps and wall time |

pub mod commands;
pub mod config;
pub mod exit;
pub mod pareto;
pub mod report;

pub const HEADER_FILE: &str = "run_header.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const EVALS_FILE: &str = "evals.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.csv";
pub const BEST_GENOME_FILE: &str = "best_genome.txt";
pub const META_FILE: &str = "run_meta.json";
