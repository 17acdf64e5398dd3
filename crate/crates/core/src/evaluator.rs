//! Fitness oracles, evaluation caching, and the JSON-lines evaluation log.
//!
//! Fitness is "higher is better" throughout. The synthetic oracles are
//! deterministic desk-scale landscapes; `external_command` hands the
//! canonical genome to a child process (for example a real trainer) and
//! reads a decimal fitness back.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost_model::{CostReport, CostVector};
use crate::error::{Error, OracleFailure, Result};
use crate::evolution::{Candidate, EvalTag, FitnessFn, Score, ScoredGenome};
use crate::predictor::{CalibrationPair, Hybrid, PredictorPolicy};
use crate::rng::{self, Purpose};
use crate::search_space::{encode_valid, Genome, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessSource {
    Oracle,
    Predictor,
}

/// One line of the evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    #[serde(rename = "genome")]
    pub canonical_genome: String,
    pub fitness: f64,
    pub source: FitnessSource,
    pub cost: CostVector,
    #[serde(rename = "ctx")]
    pub context_hash: String,
    pub swap: usize,
    #[serde(rename = "gen")]
    pub generation: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    SyntheticLinear,
    SyntheticRugged,
    ExternalCommand,
}

/// Kind-specific oracle settings; each kind reads the fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    /// Seeds the linear weights and interaction tables.
    pub weight_seed: u64,
    pub offset: f64,
    /// Penalty per `params_scale` parameters.
    pub cost_penalty: f64,
    pub params_scale: f64,
    /// Strength of interactions between groups of the same module.
    pub interaction_scale: f64,
    /// Strength of backbone-head interactions.
    pub coupling_scale: f64,
    pub command: Option<String>,
    pub timeout_secs: f64,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams {
            weight_seed: 0,
            offset: 0.0,
            cost_penalty: 0.0,
            params_scale: 1e6,
            interaction_scale: 0.0,
            coupling_scale: 0.0,
            command: None,
            timeout_secs: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub kind: OracleKind,
    #[serde(default)]
    pub params: OracleParams,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

impl OracleSpec {
    pub fn synthetic_linear(weight_seed: u64) -> Self {
        OracleSpec {
            kind: OracleKind::SyntheticLinear,
            params: OracleParams {
                weight_seed,
                ..Default::default()
            },
            noise_std: 0.0,
            noise_seed: 0,
        }
    }

    pub fn external(command: impl Into<String>) -> Self {
        OracleSpec {
            kind: OracleKind::ExternalCommand,
            params: OracleParams {
                command: Some(command.into()),
                ..Default::default()
            },
            noise_std: 0.0,
            noise_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise_std must be finite and >= 0".into()));
        }
        if !(self.params.params_scale > 0.0) {
            return Err(Error::InvalidConfig("params_scale must be > 0".into()));
        }
        if self.kind == OracleKind::ExternalCommand && self.params.command.is_none() {
            return Err(Error::InvalidConfig("external_command oracle needs `command`".into()));
        }
        if !(self.params.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("timeout_secs must be > 0".into()));
        }
        Ok(())
    }
}

/// A source of true fitness. Must be safe to call from several threads.
pub trait Oracle: Send + Sync {
    fn evaluate(&self, genome: &Genome, canonical: &str, cost: &CostReport) -> Result<f64>;
}

pub fn build_oracle(spec: &OracleSpec, space: &SearchSpace) -> Result<Box<dyn Oracle>> {
    spec.validate()?;
    Ok(match spec.kind {
        OracleKind::SyntheticLinear => Box::new(LinearLandscape::new(spec, space)),
        OracleKind::SyntheticRugged => Box::new(RuggedLandscape::new(spec, space)),
        OracleKind::ExternalCommand => Box::new(ExternalCommand::new(spec)?),
    })
}

fn keyed_noise(noise_std: f64, noise_seed: u64, canonical: &str) -> f64 {
    if noise_std == 0.0 {
        return 0.0;
    }
    let mut r = rng::keyed_stream(noise_seed, Purpose::Noise, canonical);
    Normal::new(0.0, noise_std).expect("noise_std validated").sample(&mut r)
}

/// `offset + w . encode(g) - cost_penalty * params / params_scale + noise`.
#[derive(Debug, Clone)]
pub struct LinearLandscape {
    space: SearchSpace,
    weights: Vec<f64>,
    offset: f64,
    cost_penalty: f64,
    params_scale: f64,
    noise_std: f64,
    noise_seed: u64,
}

impl LinearLandscape {
    pub fn new(spec: &OracleSpec, space: &SearchSpace) -> Self {
        let mut r = rng::stream(spec.params.weight_seed, Purpose::Weights, &[0]);
        let weights = (0..space.feature_len()).map(|_| r.sample(StandardNormal)).collect();
        LinearLandscape {
            space: space.clone(),
            weights,
            offset: spec.params.offset,
            cost_penalty: spec.params.cost_penalty,
            params_scale: spec.params.params_scale,
            noise_std: spec.noise_std,
            noise_seed: spec.noise_seed,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), self.space.feature_len());
        self.weights = weights;
    }

    pub fn fitness(&self, genome: &Genome, canonical: &str, params: u64) -> f64 {
        let x = encode_valid(genome, &self.space);
        let dot: f64 = x.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
        self.offset + dot - self.cost_penalty * params as f64 / self.params_scale
            + keyed_noise(self.noise_std, self.noise_seed, canonical)
    }
}

impl Oracle for LinearLandscape {
    fn evaluate(&self, genome: &Genome, canonical: &str, cost: &CostReport) -> Result<f64> {
        Ok(self.fitness(genome, canonical, cost.total.params))
    }
}

/// Linear landscape plus pairwise interactions between gene groups
/// (backbone stages and head slots). Each group is reduced to a discrete
/// state and every pair of groups looks up a seeded random table, so
/// optima of one module shift with the other module's choices.
#[derive(Debug, Clone)]
pub struct RuggedLandscape {
    linear: LinearLandscape,
    pairs: Vec<PairTerm>,
}

#[derive(Debug, Clone)]
struct PairTerm {
    a: usize,
    b: usize,
    scale: f64,
    cols: usize,
    table: Vec<f64>,
}

impl RuggedLandscape {
    pub fn new(spec: &OracleSpec, space: &SearchSpace) -> Self {
        let linear = LinearLandscape::new(spec, space);
        let stages = space.num_stages;
        let groups = stages + space.head_blocks.len();
        let nw = space.width_multipliers.len();
        let ne = space.expansion_ratios.len();
        let depths = space.depth_max - space.depth_min + 1;
        let states = |g: usize| if g < stages { depths * nw } else { nw * ne };

        let mut r = rng::stream(spec.params.weight_seed, Purpose::Weights, &[1]);
        let mut pairs = Vec::new();
        for a in 0..groups {
            for b in a + 1..groups {
                let cross = (a < stages) != (b < stages);
                let scale = if cross {
                    spec.params.coupling_scale
                } else {
                    spec.params.interaction_scale
                };
                let (ra, rb) = (states(a), states(b));
                // tables are drawn even when unused so scales don't shift the stream
                let table: Vec<f64> = (0..ra * rb).map(|_| r.sample(StandardNormal)).collect();
                if scale != 0.0 {
                    pairs.push(PairTerm {
                        a,
                        b,
                        scale,
                        cols: rb,
                        table,
                    });
                }
            }
        }
        RuggedLandscape { linear, pairs }
    }

    pub fn linear(&self) -> &LinearLandscape {
        &self.linear
    }

    fn group_states(&self, genome: &Genome) -> Vec<usize> {
        let space = &self.linear.space;
        let nw = space.width_multipliers.len();
        let ne = space.expansion_ratios.len();
        genome
            .backbone
            .iter()
            .map(|s| (s.depth - space.depth_min) * nw + s.width_index)
            .chain(genome.head.iter().map(|h| h.width_index * ne + h.expansion_index))
            .collect()
    }

    pub fn fitness(&self, genome: &Genome, canonical: &str, params: u64) -> f64 {
        let base = self.linear.fitness(genome, canonical, params);
        if self.pairs.is_empty() {
            return base;
        }
        let states = self.group_states(genome);
        let coupled: f64 = self
            .pairs
            .iter()
            .map(|p| p.scale * p.table[states[p.a] * p.cols + states[p.b]])
            .sum();
        base + coupled
    }
}

impl Oracle for RuggedLandscape {
    fn evaluate(&self, genome: &Genome, canonical: &str, cost: &CostReport) -> Result<f64> {
        Ok(self.fitness(genome, canonical, cost.total.params))
    }
}

/// Runs `sh -c <command>` with the canonical genome on stdin and parses one
/// decimal number from stdout.
#[derive(Debug, Clone)]
pub struct ExternalCommand {
    command: String,
    timeout: Duration,
}

impl ExternalCommand {
    pub fn new(spec: &OracleSpec) -> Result<Self> {
        let command = spec
            .params
            .command
            .clone()
            .ok_or_else(|| Error::InvalidConfig("external_command oracle needs `command`".into()))?;
        Ok(ExternalCommand {
            command,
            timeout: Duration::from_secs_f64(spec.params.timeout_secs),
        })
    }

    fn run(&self, canonical: &str) -> std::result::Result<f64, OracleFailure> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleFailure::Launch(e.to_string()))?;

        if let Some(mut stdin) = child.stdin.take() {
            // the child may exit without reading its input
            let _ = stdin.write_all(canonical.as_bytes());
        }
        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = std::thread::spawn(move || {
            let mut out = String::new();
            let _ = stdout.read_to_string(&mut out);
            out
        });

        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(OracleFailure::Timeout(self.timeout.as_secs_f64()));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(OracleFailure::Launch(e.to_string())),
            }
        };
        let out = reader.join().unwrap_or_default();
        if !status.success() {
            let code = status
                .code()
                .map(|c| c.to_string())
                .unwrap_or_else(|| "killed by signal".to_string());
            return Err(OracleFailure::NonZeroExit(code));
        }
        let value: f64 = out
            .trim()
            .parse()
            .map_err(|_| OracleFailure::BadOutput(out.trim().to_string()))?;
        if !value.is_finite() {
            return Err(OracleFailure::NonFinite(value));
        }
        Ok(value)
    }
}

impl Oracle for ExternalCommand {
    fn evaluate(&self, _genome: &Genome, canonical: &str, _cost: &CostReport) -> Result<f64> {
        self.run(canonical).map_err(|kind| Error::Oracle {
            genome_id: rng::digest(canonical),
            kind,
        })
    }
}

/// Append-only JSON-lines writer.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        Ok(RecordWriter {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, record: &EvalRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn append_record(path: &Path, record: &EvalRecord) -> Result<()> {
    let mut w = RecordWriter::append(path)?;
    w.write(record)?;
    w.flush()
}

#[derive(Debug, Clone, Default)]
pub struct LoadedRecords {
    pub records: Vec<EvalRecord>,
    pub warnings: Vec<String>,
}

/// Loads every complete record. An unterminated last line that does not
/// parse is treated as a torn write and dropped with a warning; any other
/// malformed line is an error.
pub fn load_records(path: &Path) -> Result<LoadedRecords> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut loaded = LoadedRecords::default();
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        let terminated = line.ends_with('\n');
        let body = line.trim();
        if body.is_empty() {
            continue;
        }
        match serde_json::from_str::<EvalRecord>(body) {
            Ok(rec) => {
                if !rec.fitness.is_finite() {
                    return Err(schema(path, line_no, "non-finite fitness"));
                }
                loaded.records.push(rec);
            }
            Err(e) if !terminated => {
                let msg = format!("{}:{line_no}: discarding truncated trailing record ({e})", path.display());
                log::warn!("{msg}");
                loaded.warnings.push(msg);
            }
            Err(e) => return Err(schema(path, line_no, &e.to_string())),
        }
    }
    Ok(loaded)
}

fn schema(path: &Path, line: usize, message: &str) -> Error {
    Error::Schema {
        path: PathBuf::from(path),
        line,
        message: message.to_string(),
    }
}

/// Scores candidates for the search: caches oracle results per
/// `(genome, context)`, logs every evaluation, fans oracle calls out over
/// a thread pool, and optionally substitutes predictor estimates for a
/// fraction of oracle calls.
pub struct Evaluator {
    space: SearchSpace,
    oracle: Box<dyn Oracle>,
    seed: u64,
    cache: HashMap<(String, String), f64>,
    log: Option<RecordWriter>,
    pool: Option<rayon::ThreadPool>,
    oracle_calls: u64,
    predictor_calls: u64,
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    hybrid: Option<Hybrid>,
    calibration: Vec<CalibrationPair>,
}

enum Plan {
    Cached(f64),
    Job(usize),
    Predict,
}

impl Evaluator {
    pub fn new(oracle: Box<dyn Oracle>, space: &SearchSpace, seed: u64) -> Self {
        Evaluator {
            space: space.clone(),
            oracle,
            seed,
            cache: HashMap::new(),
            log: None,
            pool: None,
            oracle_calls: 0,
            predictor_calls: 0,
            train_x: Vec::new(),
            train_y: Vec::new(),
            hybrid: None,
            calibration: Vec::new(),
        }
    }

    pub fn from_spec(spec: &OracleSpec, space: &SearchSpace, seed: u64) -> Result<Self> {
        Ok(Self::new(build_oracle(spec, space)?, space, seed))
    }

    pub fn with_log(mut self, writer: RecordWriter) -> Self {
        self.log = Some(writer);
        self
    }

    /// Caps concurrent oracle calls. `jobs <= 1` evaluates serially.
    pub fn with_jobs(mut self, jobs: usize) -> Result<Self> {
        self.pool = if jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn with_predictor(mut self, policy: PredictorPolicy) -> Result<Self> {
        policy.validate()?;
        self.hybrid = Some(Hybrid::new(policy));
        Ok(self)
    }

    pub fn predictor_calls(&self) -> u64 {
        self.predictor_calls
    }

    pub fn calibration(&self) -> &[CalibrationPair] {
        &self.calibration
    }

    pub fn hybrid(&self) -> Option<&Hybrid> {
        self.hybrid.as_ref()
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(())
    }

    fn wants_oracle(&self, canonical: &str, ctx: &str) -> bool {
        match &self.hybrid {
            None => true,
            Some(h) => h.wants_oracle(self.seed, canonical, ctx),
        }
    }

    fn run_jobs(&self, jobs: &[&Candidate]) -> Vec<Result<f64>> {
        let call = |c: &&Candidate| self.oracle.evaluate(&c.genome, &c.canonical, &c.cost);
        match &self.pool {
            Some(pool) if jobs.len() > 1 => pool.install(|| jobs.par_iter().map(call).collect()),
            _ => jobs.iter().map(call).collect(),
        }
    }

    fn record(&mut self, c: &Candidate, fitness: f64, source: FitnessSource, ctx: &str, tag: EvalTag) -> Result<()> {
        let rec = EvalRecord {
            canonical_genome: c.canonical.clone(),
            fitness,
            source,
            cost: c.cost.total,
            context_hash: ctx.to_string(),
            swap: tag.swap,
            generation: tag.generation,
            seed: self.seed,
        };
        if let Some(log) = &mut self.log {
            log.write(&rec)?;
        }
        Ok(())
    }

    fn accept_oracle(&mut self, c: &Candidate, fitness: f64, ctx: &str, tag: EvalTag) -> Result<()> {
        self.oracle_calls += 1;
        let x = encode_valid(&c.genome, &self.space);
        if let Some(model) = self.hybrid.as_ref().and_then(|h| h.model()) {
            self.calibration.push(CalibrationPair {
                predicted: model.predict_features(&x),
                actual: fitness,
                swap: tag.swap,
                generation: tag.generation,
            });
        }
        self.train_x.push(x);
        self.train_y.push(fitness);
        self.cache.insert((c.canonical.clone(), ctx.to_string()), fitness);
        self.record(c, fitness, FitnessSource::Oracle, ctx, tag)
    }

    fn score_chunk(&mut self, batch: &[Candidate], ctx: &str, tag: EvalTag) -> Result<Vec<Score>> {
        let mut plans = Vec::with_capacity(batch.len());
        let mut jobs: Vec<&Candidate> = Vec::new();
        let mut job_of: HashMap<&str, usize> = HashMap::new();
        for c in batch {
            let key = (c.canonical.clone(), ctx.to_string());
            let plan = if let Some(&f) = self.cache.get(&key) {
                Plan::Cached(f)
            } else if let Some(&j) = job_of.get(c.canonical.as_str()) {
                Plan::Job(j)
            } else if self.wants_oracle(&c.canonical, ctx) {
                job_of.insert(&c.canonical, jobs.len());
                jobs.push(c);
                Plan::Job(jobs.len() - 1)
            } else {
                Plan::Predict
            };
            plans.push(plan);
        }

        let results = self.run_jobs(&jobs);
        let mut fitness_of = Vec::with_capacity(results.len());
        for r in results {
            fitness_of.push(r?);
        }

        let mut logged = vec![false; jobs.len()];
        let mut scores = Vec::with_capacity(batch.len());
        for (c, plan) in batch.iter().zip(plans) {
            let score = match plan {
                Plan::Cached(f) => Score {
                    fitness: f,
                    source: FitnessSource::Oracle,
                },
                Plan::Job(j) => {
                    let f = fitness_of[j];
                    if !logged[j] {
                        logged[j] = true;
                        self.accept_oracle(c, f, ctx, tag)?;
                    }
                    Score {
                        fitness: f,
                        source: FitnessSource::Oracle,
                    }
                }
                Plan::Predict => {
                    let model = self
                        .hybrid
                        .as_ref()
                        .and_then(|h| h.model())
                        .expect("predictions are only planned once a model exists");
                    let f = model.predict_features(&encode_valid(&c.genome, &self.space));
                    self.predictor_calls += 1;
                    self.record(c, f, FitnessSource::Predictor, ctx, tag)?;
                    Score {
                        fitness: f,
                        source: FitnessSource::Predictor,
                    }
                }
            };
            scores.push(score);
        }
        Ok(scores)
    }

    /// While the predictor is warming up, the batch is cut right after the
    /// candidate that completes the training set, so the model can be fit
    /// before the rest is scored.
    fn warmup_split(&self, batch: &[Candidate], ctx: &str) -> usize {
        let need = match &self.hybrid {
            Some(h) if h.model().is_none() && h.policy().uses_predictor() => {
                h.records_needed(self.space.feature_len()).saturating_sub(self.train_y.len())
            }
            _ => return batch.len(),
        };
        let mut fresh = std::collections::HashSet::new();
        for (i, c) in batch.iter().enumerate() {
            if !self.cache.contains_key(&(c.canonical.clone(), ctx.to_string())) {
                fresh.insert(c.canonical.as_str());
            }
            if fresh.len() >= need {
                return i + 1;
            }
        }
        batch.len()
    }
}

impl FitnessFn for Evaluator {
    fn score(&mut self, batch: &[Candidate], ctx: &str, tag: EvalTag) -> Result<Vec<Score>> {
        if let Some(h) = &mut self.hybrid {
            h.warm_start(&self.train_x, &self.train_y)?;
        }
        let split = self.warmup_split(batch, ctx);
        if split == batch.len() {
            return self.score_chunk(batch, ctx, tag);
        }
        let mut scores = self.score_chunk(&batch[..split], ctx, tag)?;
        scores.extend(self.score(&batch[split..], ctx, tag)?);
        Ok(scores)
    }

    fn verify(&mut self, c: &Candidate, ctx: &str, tag: EvalTag) -> Result<f64> {
        if let Some(&f) = self.cache.get(&(c.canonical.clone(), ctx.to_string())) {
            return Ok(f);
        }
        let f = self.oracle.evaluate(&c.genome, &c.canonical, &c.cost)?;
        self.accept_oracle(c, f, ctx, tag)?;
        Ok(f)
    }

    fn end_generation(&mut self) -> Result<()> {
        if let Some(h) = &mut self.hybrid {
            h.end_generation(&self.train_x, &self.train_y)?;
        }
        Ok(())
    }

    fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }

    fn refresh(&mut self, members: &mut [ScoredGenome]) {
        let model = self.hybrid.as_ref().and_then(|h| h.model());
        for m in members.iter_mut().filter(|m| m.source == FitnessSource::Predictor) {
            if let Some(&f) = self.cache.get(&(m.canonical.clone(), m.context_hash.clone())) {
                m.fitness = f;
                m.source = FitnessSource::Oracle;
            } else if let Some(model) = model {
                m.fitness = model.predict_features(&encode_valid(&m.genome, &self.space));
            }
        }
    }
}
