//! One module-scoped evolutionary cycle: constraint-aware variation,
//! fitness evaluation, and tournament selection.
//!
//! Only the active module's genes ever change inside a cycle; the other
//! module is carried verbatim from the parents. Offspring that break the
//! active module's budget or a hardware limit are re-drawn before they are
//! scored.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::{CostReport, Scope};
use crate::error::{Error, Result};
use crate::evaluator::FitnessSource;
use crate::rng::{self, Purpose};
use crate::search_space::{sample_module, Genome, SearchSpace};
use crate::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Backbone,
    Head,
}

impl ModuleKind {
    pub fn other(self) -> ModuleKind {
        match self {
            ModuleKind::Backbone => ModuleKind::Head,
            ModuleKind::Head => ModuleKind::Backbone,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleKind::Backbone => "backbone",
            ModuleKind::Head => "head",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Module order for the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Backbone, head, backbone, ...
    #[default]
    Alternate,
    BackboneOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub population_size: usize,
    /// Per-gene probability of resampling during mutation.
    pub mutation_prob: f64,
    /// Fraction of the population kept as parents (and survivors).
    pub parent_ratio: f64,
    /// Probability that an offspring is produced by mutation alone rather
    /// than crossover followed by mutation.
    pub mutation_ratio: f64,
    pub tournament_size: usize,
    pub generations_per_swap: usize,
    pub max_module_swaps: usize,
    pub passthrough_ratio: f64,
    pub resample_limit: usize,
    pub seed: u64,
    /// Stop after this many swaps without improvement.
    pub patience: usize,
    pub improvement_threshold: f64,
    /// Memory buffer capacity; `None` means twice the population size.
    pub buffer_capacity: Option<usize>,
    pub schedule: Schedule,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            population_size: 100,
            mutation_prob: 0.1,
            parent_ratio: 0.25,
            mutation_ratio: 0.5,
            tournament_size: 2,
            generations_per_swap: 10,
            max_module_swaps: 50,
            passthrough_ratio: 0.5,
            resample_limit: 32,
            seed: 0,
            patience: 6,
            improvement_threshold: 1e-9,
            buffer_capacity: None,
            schedule: Schedule::Alternate,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name}={v} must lie in [0, 1]")))
            }
        };
        unit("mutation_prob", self.mutation_prob)?;
        unit("parent_ratio", self.parent_ratio)?;
        unit("mutation_ratio", self.mutation_ratio)?;
        unit("passthrough_ratio", self.passthrough_ratio)?;
        if self.population_size < 2 {
            return Err(Error::InvalidConfig("population_size must be >= 2".into()));
        }
        if self.tournament_size < 2 {
            return Err(Error::InvalidConfig("tournament_size must be >= 2".into()));
        }
        if self.resample_limit == 0 {
            return Err(Error::InvalidConfig("resample_limit must be >= 1".into()));
        }
        if self.buffer_capacity == Some(0) {
            return Err(Error::InvalidConfig("buffer_capacity must be >= 1".into()));
        }
        Ok(())
    }

    pub fn parent_count(&self) -> usize {
        ((self.parent_ratio * self.population_size as f64).ceil() as usize)
            .clamp(1, self.population_size)
    }

    pub fn elite_count(&self) -> usize {
        (self.passthrough_ratio * self.population_size as f64).floor() as usize
    }

    pub fn buffer_capacity(&self) -> usize {
        self.buffer_capacity.unwrap_or(2 * self.population_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGenome {
    pub genome: Genome,
    pub canonical: String,
    pub fitness: f64,
    pub cost: CostReport,
    pub source: FitnessSource,
    /// Digest of the fixed module's genes when the fitness was measured.
    pub context_hash: String,
}

impl ScoredGenome {
    pub fn params(&self) -> u64 {
        self.cost.total.params
    }
}

/// Higher fitness first, then fewer parameters, then canonical text order.
pub fn rank_order(a: &ScoredGenome, b: &ScoredGenome) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then_with(|| a.params().cmp(&b.params()))
        .then_with(|| a.canonical.cmp(&b.canonical))
}

/// A feasible, not yet scored genome.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub genome: Genome,
    pub canonical: String,
    pub cost: CostReport,
}

impl Candidate {
    pub fn new(genome: Genome, problem: &Problem) -> Self {
        let cost = problem.cost(&genome);
        let canonical = genome.to_canonical_text();
        Candidate {
            genome,
            canonical,
            cost,
        }
    }

    pub fn scored(self, score: Score, context_hash: &str) -> ScoredGenome {
        ScoredGenome {
            genome: self.genome,
            canonical: self.canonical,
            fitness: score.fitness,
            cost: self.cost,
            source: score.source,
            context_hash: context_hash.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub fitness: f64,
    pub source: FitnessSource,
}

/// Where in the search an evaluation happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalTag {
    pub swap: usize,
    pub generation: usize,
}

/// Scores candidates for the search. Implementations may evaluate a batch
/// concurrently but must return scores in batch order.
pub trait FitnessFn {
    fn score(&mut self, batch: &[Candidate], context_hash: &str, tag: EvalTag) -> Result<Vec<Score>>;

    /// True (oracle) fitness of one candidate.
    fn verify(&mut self, candidate: &Candidate, context_hash: &str, tag: EvalTag) -> Result<f64>;

    /// Called between generations; the only point where a surrogate may be
    /// refit.
    fn end_generation(&mut self) -> Result<()> {
        Ok(())
    }

    fn oracle_calls(&self) -> u64 {
        0
    }

    /// Brings surrogate-scored members up to date with the current model
    /// (or with an oracle value obtained since). Not an evaluation.
    fn refresh(&mut self, _members: &mut [ScoredGenome]) {}
}

/// Digest of the genes a module's search holds fixed.
pub fn context_hash(genome: &Genome, active: ModuleKind) -> String {
    rng::digest(&genome.module_canonical_text(active.other()))
}

fn resample_other<R: Rng + ?Sized>(rng: &mut R, current: usize, len: usize) -> usize {
    if len < 2 {
        return current;
    }
    let pick = rng.random_range(0..len - 1);
    if pick >= current {
        pick + 1
    } else {
        pick
    }
}

/// Each gene of `module` flips with probability `mutation_prob` to a
/// different legal value. Depth increases append uniformly drawn expansion
/// indices; decreases truncate.
pub fn mutate_module<R: Rng + ?Sized>(
    genome: &Genome,
    module: ModuleKind,
    space: &SearchSpace,
    mutation_prob: f64,
    rng: &mut R,
) -> Genome {
    let mut out = genome.clone();
    let nw = space.width_multipliers.len();
    let ne = space.expansion_ratios.len();
    match module {
        ModuleKind::Backbone => {
            let depths = space.depth_max - space.depth_min + 1;
            for stage in &mut out.backbone {
                if rng.random_bool(mutation_prob) {
                    let d = resample_other(rng, stage.depth - space.depth_min, depths);
                    stage.depth = space.depth_min + d;
                }
                if rng.random_bool(mutation_prob) {
                    stage.width_index = resample_other(rng, stage.width_index, nw);
                }
                for e in stage.expansion_indices.iter_mut() {
                    if rng.random_bool(mutation_prob) {
                        *e = resample_other(rng, *e, ne);
                    }
                }
                if stage.depth < stage.expansion_indices.len() {
                    stage.expansion_indices.truncate(stage.depth);
                }
                while stage.expansion_indices.len() < stage.depth {
                    stage.expansion_indices.push(rng.random_range(0..ne));
                }
            }
        }
        ModuleKind::Head => {
            for gene in &mut out.head {
                if rng.random_bool(mutation_prob) {
                    gene.width_index = resample_other(rng, gene.width_index, nw);
                }
                if rng.random_bool(mutation_prob) {
                    gene.expansion_index = resample_other(rng, gene.expansion_index, ne);
                }
            }
        }
    }
    out
}

/// Stage-level (or slot-level) uniform crossover of the active module. The
/// fixed module is copied from `a`.
pub fn crossover_module<R: Rng + ?Sized>(a: &Genome, b: &Genome, module: ModuleKind, rng: &mut R) -> Genome {
    let mut child = a.clone();
    match module {
        ModuleKind::Backbone => {
            for (slot, donor) in child.backbone.iter_mut().zip(&b.backbone) {
                if rng.random_bool(0.5) {
                    *slot = donor.clone();
                }
            }
        }
        ModuleKind::Head => {
            for (slot, donor) in child.head.iter_mut().zip(&b.head) {
                if rng.random_bool(0.5) {
                    *slot = *donor;
                }
            }
        }
    }
    child
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Crossover,
    MutationOnly,
    /// Variation kept failing the budget; drawn uniformly instead.
    Resampled,
}

/// Produces one offspring that is feasible for `module`'s budget and the
/// hardware limits.
pub fn make_feasible_offspring<R: Rng + ?Sized>(
    parents: &[&Genome],
    module: ModuleKind,
    problem: &Problem,
    config: &SearchConfig,
    rng: &mut R,
) -> Result<(Candidate, Origin)> {
    assert!(!parents.is_empty(), "make_feasible_offspring needs at least one parent");
    let scope = Scope::from(module);
    let first = parents[0];
    let second = parents[1 % parents.len()];

    let mutation_only = rng.random_bool(config.mutation_ratio);
    let origin = if mutation_only {
        Origin::MutationOnly
    } else {
        Origin::Crossover
    };
    for _ in 0..=config.resample_limit {
        let base = if mutation_only {
            first.clone()
        } else {
            crossover_module(first, second, module, rng)
        };
        let child = mutate_module(&base, module, &problem.space, config.mutation_prob, rng);
        let candidate = Candidate::new(child, problem);
        if problem.is_feasible(&candidate.cost, scope) {
            return Ok((candidate, origin));
        }
    }
    let candidate = sample_feasible_module(first, module, problem, config.resample_limit * 10, rng)?;
    Ok((candidate, Origin::Resampled))
}

/// Uniformly resamples `module`'s genes of `base` until the result is
/// feasible, giving up after `draws` attempts.
pub fn sample_feasible_module<R: Rng + ?Sized>(
    base: &Genome,
    module: ModuleKind,
    problem: &Problem,
    draws: usize,
    rng: &mut R,
) -> Result<Candidate> {
    let scope = Scope::from(module);
    for _ in 0..draws {
        let g = sample_module(&problem.space, base, module, rng);
        let candidate = Candidate::new(g, problem);
        if problem.is_feasible(&candidate.cost, scope) {
            return Ok(candidate);
        }
    }
    Err(Error::InfeasibleSpace { module, draws })
}

/// Best of the members at `picks`.
pub fn select_from<'a>(population: &'a [ScoredGenome], picks: &[usize]) -> &'a ScoredGenome {
    picks
        .iter()
        .map(|&i| &population[i])
        .min_by(|a, b| rank_order(a, b))
        .expect("tournament needs at least one pick")
}

/// Draws `tournament_size` members (without replacement when the
/// population is large enough) and returns the best.
pub fn tournament_select<'a, R: Rng + ?Sized>(
    population: &'a [ScoredGenome],
    tournament_size: usize,
    rng: &mut R,
) -> &'a ScoredGenome {
    assert!(!population.is_empty(), "tournament on an empty population");
    let picks: Vec<usize> = if population.len() >= tournament_size {
        index::sample(rng, population.len(), tournament_size).into_vec()
    } else {
        (0..tournament_size).map(|_| rng.random_range(0..population.len())).collect()
    };
    select_from(population, &picks)
}

/// Identifies the random streams of one generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationKey {
    pub seed: u64,
    pub swap: usize,
    pub generation: usize,
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub population: Vec<ScoredGenome>,
    pub parents_kept: usize,
    pub offspring: usize,
    pub crossovers: usize,
    pub resampled: usize,
}

/// One generation: the top parents survive, the remaining slots are filled
/// with feasible offspring of tournament-selected parents, and the new
/// members are scored as one batch.
pub fn evolve_generation(
    mut population: Vec<ScoredGenome>,
    module: ModuleKind,
    problem: &Problem,
    config: &SearchConfig,
    scorer: &mut dyn FitnessFn,
    key: GenerationKey,
) -> Result<GenerationOutcome> {
    assert!(!population.is_empty(), "evolve_generation on an empty population");
    let n = config.population_size;
    population.sort_by(rank_order);
    let parent_count = config.parent_count().min(population.len());
    population.truncate(parent_count);
    let parents = population;
    let ctx = parents[0].context_hash.clone();

    let mut candidates = Vec::with_capacity(n.saturating_sub(parent_count));
    let mut crossovers = 0;
    let mut resampled = 0;
    for slot in 0..n.saturating_sub(parent_count) {
        let mut rng = rng::stream(
            key.seed,
            Purpose::Offspring,
            &[key.swap as u64, key.generation as u64, slot as u64],
        );
        let a = tournament_select(&parents, config.tournament_size, &mut rng);
        let b = tournament_select(&parents, config.tournament_size, &mut rng);
        let (candidate, origin) =
            make_feasible_offspring(&[&a.genome, &b.genome], module, problem, config, &mut rng)?;
        match origin {
            Origin::Crossover => crossovers += 1,
            Origin::Resampled => resampled += 1,
            Origin::MutationOnly => {}
        }
        candidates.push(candidate);
    }

    let tag = EvalTag {
        swap: key.swap,
        generation: key.generation,
    };
    let scores = scorer.score(&candidates, &ctx, tag)?;
    let offspring = candidates.len();
    let mut next = parents;
    next.extend(
        candidates
            .into_iter()
            .zip(scores)
            .map(|(c, s)| c.scored(s, &ctx)),
    );
    scorer.end_generation()?;
    Ok(GenerationOutcome {
        population: next,
        parents_kept: parent_count,
        offspring,
        crossovers,
        resampled,
    })
}
