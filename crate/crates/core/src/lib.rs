//! Hardware-aware iterative evolutionary architecture search.
//!
//! An architecture genome is split into a backbone and a head. The search
//! alternates between the two: one module evolves while the other is held
//! fixed, and each module keeps a memory buffer of its best configurations
//! that seeds the population the next time that module is revisited.
//!
//! ```text
//!   init feasible genome
//!          |
//!          v
//!   +--> backbone search (head fixed) --+
//!   |                                   |
//!   +--- head search (backbone fixed) <-+
//! ```
//!
//! Fitness comes from a pluggable [`evaluator::Oracle`], optionally
//! backed by a learned [`predictor`] that replaces a fraction of oracle
//! calls. Candidates are always checked against a hardware profile and
//! per-module budgets before evaluation.

pub mod controller;
pub mod cost_model;
pub mod error;
pub mod evaluator;
pub mod evolution;
pub mod predictor;
pub mod rng;
pub mod search_space;

pub use controller::{
    run_iterative_search, MemoryBuffer, NoopObserver, SearchObserver, SearchOutcome, SwapRecord,
};
pub use cost_model::{CostProfile, CostReport, CostVector, HardwareProfile, Scope, Violation};
pub use error::{Error, Result};
pub use evaluator::{EvalRecord, Evaluator, FitnessSource, Oracle, OracleKind, OracleSpec};
pub use evolution::{FitnessFn, ModuleKind, ScoredGenome, SearchConfig};
pub use predictor::{PredictorModel, PredictorPolicy};
pub use search_space::{Genome, HeadBlockSlot, HeadGene, HeadRole, SearchSpace, StageGene};

/// Everything a candidate is checked against: the space it lives in, the
/// device it must fit on, and the per-module budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub space: SearchSpace,
    pub hardware: HardwareProfile,
    pub budgets: CostProfile,
}

impl Problem {
    pub fn new(space: SearchSpace, hardware: HardwareProfile, budgets: CostProfile) -> Result<Self> {
        space.validate()?;
        hardware.validate()?;
        budgets.validate()?;
        Ok(Self {
            space,
            hardware,
            budgets,
        })
    }

    pub fn cost(&self, genome: &Genome) -> CostReport {
        cost_model::genome_cost(genome, &self.space, &self.hardware)
    }

    pub fn is_feasible(&self, report: &CostReport, scope: Scope) -> bool {
        cost_model::is_feasible(report, &self.budgets, scope)
    }
}
