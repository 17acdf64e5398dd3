//! Outer coordinate-descent loop over the backbone and head modules.
//!
//! Each swap evolves one module with the other held fixed. The population
//! for a swap is built from the module's memory buffer (its best genes from
//! earlier swaps, transplanted onto the current fixed module) topped up
//! with fresh feasible samples.

use serde::{Deserialize, Serialize};

use crate::cost_model::{CostVector, Scope};
use crate::error::{Error, Result};
use crate::evaluator::FitnessSource;
use crate::evolution::{
    context_hash, evolve_generation, rank_order, sample_feasible_module, Candidate, EvalTag,
    FitnessFn, GenerationKey, ModuleKind, Schedule, ScoredGenome, SearchConfig,
};
use crate::rng::{self, Purpose};
use crate::search_space::Genome;
use crate::Problem;

/// Best configurations of one module, deduplicated by that module's genes.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    module: ModuleKind,
    capacity: usize,
    entries: Vec<ScoredGenome>,
}

impl MemoryBuffer {
    pub fn new(module: ModuleKind, capacity: usize) -> Self {
        MemoryBuffer {
            module,
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn module(&self) -> ModuleKind {
        self.module
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[ScoredGenome] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&ScoredGenome> {
        self.entries.first()
    }

    /// Adds oracle-scored members. Predictor estimates are never stored.
    pub fn merge<I: IntoIterator<Item = ScoredGenome>>(&mut self, members: I) {
        self.entries
            .extend(members.into_iter().filter(|m| m.source == FitnessSource::Oracle));
        self.entries.sort_by(rank_order);
        let module = self.module;
        let mut seen = std::collections::HashSet::new();
        self.entries
            .retain(|e| seen.insert(e.genome.module_canonical_text(module)));
        self.entries.truncate(self.capacity);
    }
}

/// Summary of one module swap.
#[derive(Debug, Clone, PartialEq)]
pub struct SwapRecord {
    pub swap_index: usize,
    pub module: ModuleKind,
    /// Best full genome seen so far (after this swap).
    pub best: ScoredGenome,
    pub generations_run: usize,
    pub evaluations_used: usize,
    /// Cumulative oracle calls at the end of the swap.
    pub oracle_calls: u64,
    pub elites: usize,
    pub fresh: usize,
}

/// One line of `history.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoryLine {
    pub swap: usize,
    pub module: ModuleKind,
    pub best_fitness: f64,
    pub best_genome: String,
    pub best_cost: CostVector,
    pub backbone_cost: CostVector,
    pub head_cost: CostVector,
    pub generations: usize,
    pub evaluations: usize,
    pub oracle_calls: u64,
    pub elites: usize,
    pub fresh: usize,
}

impl SwapRecord {
    pub fn history_line(&self) -> HistoryLine {
        HistoryLine {
            swap: self.swap_index,
            module: self.module,
            best_fitness: self.best.fitness,
            best_genome: self.best.canonical.clone(),
            best_cost: self.best.cost.total,
            backbone_cost: self.best.cost.backbone,
            head_cost: self.best.cost.head,
            generations: self.generations_run,
            evaluations: self.evaluations_used,
            oracle_calls: self.oracle_calls,
            elites: self.elites,
            fresh: self.fresh,
        }
    }
}

/// Hooks into the search loop, for logging and instrumentation.
pub trait SearchObserver {
    /// `buffer` is the module's memory as it was before this swap; the first
    /// `elites` members of `population` came from it.
    fn swap_started(&mut self, _swap: usize, _population: &[ScoredGenome], _elites: usize, _buffer: &MemoryBuffer) {}

    fn generation_finished(&mut self, _swap: usize, _generation: usize, _population: &[ScoredGenome]) {}

    fn swap_finished(&mut self, _record: &SwapRecord) -> Result<()> {
        Ok(())
    }
}

pub struct NoopObserver;

impl SearchObserver for NoopObserver {}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: ScoredGenome,
    pub history: Vec<SwapRecord>,
    pub backbone_buffer: MemoryBuffer,
    pub head_buffer: MemoryBuffer,
    pub oracle_calls: u64,
    /// Stopped early because the best fitness stalled for `patience` swaps.
    pub converged: bool,
}

/// Swap-start population: up to `elite_count` buffer entries carried onto
/// `fixed`'s other module, then fresh feasible samples up to `N`. Returns
/// the unscored candidates and the number of elites among them (first).
pub fn passthrough_candidates(
    buffer: &MemoryBuffer,
    fixed: &Genome,
    problem: &Problem,
    config: &SearchConfig,
    swap: usize,
) -> Result<(Vec<Candidate>, usize)> {
    let module = buffer.module();
    let scope = Scope::from(module);
    let n = config.population_size;
    let want = config.elite_count().min(n);

    let mut out = Vec::with_capacity(n);
    for entry in buffer.entries() {
        if out.len() == want {
            break;
        }
        let genome = fixed.with_module_from(&entry.genome, module);
        let c = Candidate::new(genome, problem);
        // hardware limits couple the modules, so an elite can stop fitting
        if problem.is_feasible(&c.cost, scope) {
            out.push(c);
        }
    }
    let elites = out.len();
    let draws = config.resample_limit * 10;
    for slot in elites..n {
        let mut r = rng::stream(config.seed, Purpose::Passthrough, &[swap as u64, slot as u64]);
        out.push(sample_feasible_module(fixed, module, problem, draws, &mut r)?);
    }
    Ok((out, elites))
}

/// Builds and scores the swap-start population. Elites stored under a
/// different fixed module are scored again under the current one.
pub fn passthrough_init(
    buffer: &MemoryBuffer,
    fixed: &Genome,
    problem: &Problem,
    config: &SearchConfig,
    scorer: &mut dyn FitnessFn,
    swap: usize,
) -> Result<(Vec<ScoredGenome>, usize)> {
    let (candidates, elites) = passthrough_candidates(buffer, fixed, problem, config, swap)?;
    let ctx = context_hash(fixed, buffer.module());
    let scores = scorer.score(&candidates, &ctx, EvalTag { swap, generation: 0 })?;
    let population = candidates
        .into_iter()
        .zip(scores)
        .map(|(c, s)| c.scored(s, &ctx))
        .collect();
    Ok((population, elites))
}

/// Result of one module's inner search.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub best: ScoredGenome,
    pub population: Vec<ScoredGenome>,
    pub elites: usize,
    pub evaluations: usize,
}

/// Evolves `buffer.module()` for `generations_per_swap` generations with
/// the other module of `fixed` held constant, then merges the final
/// population into the buffer. The returned best is oracle-verified.
pub fn run_inner_search(
    buffer: &mut MemoryBuffer,
    fixed: &Genome,
    problem: &Problem,
    config: &SearchConfig,
    scorer: &mut dyn FitnessFn,
    swap: usize,
    observer: &mut dyn SearchObserver,
) -> Result<InnerResult> {
    let module = buffer.module();
    let (mut population, elites) = passthrough_init(buffer, fixed, problem, config, scorer, swap)?;
    scorer.refresh(&mut population);
    observer.swap_started(swap, &population, elites, buffer);
    let mut evaluations = population.len();

    for generation in 1..=config.generations_per_swap {
        let key = GenerationKey {
            seed: config.seed,
            swap,
            generation,
        };
        let outcome = evolve_generation(population, module, problem, config, scorer, key)?;
        evaluations += outcome.offspring;
        population = outcome.population;
        scorer.refresh(&mut population);
        observer.generation_finished(swap, generation, &population);
    }

    let tag = EvalTag {
        swap,
        generation: config.generations_per_swap,
    };
    // never let a surrogate estimate decide the winner
    verify_leader(&mut population, scorer, tag)?;

    buffer.merge(population.iter().cloned());
    Ok(InnerResult {
        best: population[0].clone(),
        population,
        elites,
        evaluations,
    })
}

/// Replaces the leader's predictor estimate with the oracle value until
/// the leader is oracle-scored.
fn verify_leader(population: &mut [ScoredGenome], scorer: &mut dyn FitnessFn, tag: EvalTag) -> Result<()> {
    population.sort_by(rank_order);
    while population[0].source == FitnessSource::Predictor {
        let m = &population[0];
        let candidate = Candidate {
            genome: m.genome.clone(),
            canonical: m.canonical.clone(),
            cost: m.cost.clone(),
        };
        let fitness = scorer.verify(&candidate, &m.context_hash, tag)?;
        population[0].fitness = fitness;
        population[0].source = FitnessSource::Oracle;
        population.sort_by(rank_order);
    }
    Ok(())
}

fn module_for(schedule: Schedule, swap: usize) -> ModuleKind {
    match schedule {
        Schedule::BackboneOnly => ModuleKind::Backbone,
        Schedule::Alternate if swap % 2 == 1 => ModuleKind::Backbone,
        Schedule::Alternate => ModuleKind::Head,
    }
}

fn initial_genome(problem: &Problem, config: &SearchConfig) -> Result<Candidate> {
    let draws = config.resample_limit * 10;
    for attempt in 0..=config.resample_limit {
        let mut r = rng::stream(config.seed, Purpose::Init, &[attempt as u64]);
        let base = Genome::minimal(&problem.space);
        let with_backbone = sample_feasible_module(&base, ModuleKind::Backbone, problem, draws, &mut r)?;
        let full = sample_feasible_module(&with_backbone.genome, ModuleKind::Head, problem, draws, &mut r)?;
        if problem.is_feasible(&full.cost, Scope::Both) {
            return Ok(full);
        }
    }
    Err(Error::InfeasibleSpace {
        module: ModuleKind::Backbone,
        draws: (config.resample_limit + 1) * draws,
    })
}

/// Alternates backbone and head searches from a random feasible genome and
/// returns the best full genome observed with the per-swap history.
pub fn run_iterative_search(
    problem: &Problem,
    config: &SearchConfig,
    scorer: &mut dyn FitnessFn,
    observer: &mut dyn SearchObserver,
) -> Result<SearchOutcome> {
    config.validate()?;
    problem.budgets.validate()?;

    let first = module_for(config.schedule, 1);
    let start = initial_genome(problem, config)?;
    let ctx = context_hash(&start.genome, first);
    let fitness = scorer.verify(&start, &ctx, EvalTag { swap: 0, generation: 0 })?;
    let mut incumbent = start.scored(
        crate::evolution::Score {
            fitness,
            source: FitnessSource::Oracle,
        },
        &ctx,
    );

    let capacity = config.buffer_capacity();
    let mut backbone_buffer = MemoryBuffer::new(ModuleKind::Backbone, capacity);
    let mut head_buffer = MemoryBuffer::new(ModuleKind::Head, capacity);
    let mut history = Vec::new();
    let mut stale = 0;
    let mut converged = false;

    for swap in 1..=config.max_module_swaps {
        let module = module_for(config.schedule, swap);
        let buffer = match module {
            ModuleKind::Backbone => &mut backbone_buffer,
            ModuleKind::Head => &mut head_buffer,
        };
        let before = incumbent.fitness;
        incumbent.context_hash = context_hash(&incumbent.genome, module);

        let inner = run_inner_search(buffer, &incumbent.genome, problem, config, scorer, swap, observer)?;
        buffer.merge(std::iter::once(incumbent.clone()));
        if rank_order(&inner.best, &incumbent).is_lt() {
            incumbent = inner.best;
        }

        let record = SwapRecord {
            swap_index: swap,
            module,
            best: incumbent.clone(),
            generations_run: config.generations_per_swap,
            evaluations_used: inner.evaluations,
            oracle_calls: scorer.oracle_calls(),
            elites: inner.elites,
            fresh: config.population_size - inner.elites,
        };
        observer.swap_finished(&record)?;
        history.push(record);

        let gain = incumbent.fitness - before;
        if gain > config.improvement_threshold * incumbent.fitness.abs().max(1.0) {
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            converged = true;
            break;
        }
    }

    Ok(SearchOutcome {
        best: incumbent,
        history,
        backbone_buffer,
        head_buffer,
        oracle_calls: scorer.oracle_calls(),
        converged,
    })
}
