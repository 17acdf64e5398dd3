//! Accuracy predictor: ridge regression on the genome encoding, and the
//! hybrid policy that lets it stand in for a share of oracle calls.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{EvalRecord, FitnessSource};
use crate::rng::{self, Purpose};
use crate::search_space::{encode, Genome, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    /// Intercept first, then one weight per standardized feature.
    pub weights: Vec<f64>,
    pub ridge_lambda: f64,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub training_count: usize,
}

/// Smallest training set [`fit`] accepts for `feature_len` features.
pub fn min_records_for(feature_len: usize) -> usize {
    feature_len.div_ceil(4).max(2)
}

/// Closed-form ridge regression on standardized features. The intercept is
/// not penalized. Rank-deficient designs get the minimum-norm solution.
pub fn fit_features(x: &[Vec<f64>], y: &[f64], ridge_lambda: f64) -> Result<PredictorModel> {
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::Predictor(format!("ridge_lambda {ridge_lambda} must be finite and >= 0")));
    }
    assert_eq!(x.len(), y.len(), "feature rows and targets differ in length");
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    let need = min_records_for(d);
    if n < need {
        return Err(Error::InsufficientData { have: n, need });
    }

    let mut means = vec![0.0; d];
    for row in x {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let mut scales = vec![0.0; d];
    for row in x {
        for j in 0..d {
            scales[j] += (row[j] - means[j]).powi(2);
        }
    }
    for s in scales.iter_mut() {
        *s = (*s / n as f64).sqrt();
        if *s < 1e-12 {
            *s = 1.0;
        }
    }

    let design = DMatrix::from_fn(n, d, |i, j| (x[i][j] - means[j]) / scales[j]);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let centered = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut weights = vec![y_mean];
    if d > 0 {
        let svd = design.svd(true, true);
        let u = svd.u.as_ref().ok_or_else(|| Error::Predictor("SVD produced no U".into()))?;
        let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Predictor("SVD produced no V".into()))?;
        let s_max = svd.singular_values.max();
        let tol = s_max * (n.max(d) as f64) * f64::EPSILON;
        let uty = u.transpose() * &centered;
        let mut coef = DVector::zeros(svd.singular_values.len());
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                coef[k] = s / (s * s + ridge_lambda) * uty[k];
            }
        }
        let w = v_t.transpose() * coef;
        weights.extend(w.iter().copied());
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Predictor("non-finite weights".into()));
    }
    Ok(PredictorModel {
        weights,
        ridge_lambda,
        feature_means: means,
        feature_scales: scales,
        training_count: n,
    })
}

/// Fits on the oracle-sourced records only.
pub fn fit(records: &[EvalRecord], space: &SearchSpace, ridge_lambda: f64) -> Result<PredictorModel> {
    let mut x = Vec::with_capacity(records.len());
    let mut y = Vec::with_capacity(records.len());
    for r in records.iter().filter(|r| r.source == FitnessSource::Oracle) {
        let g = Genome::from_canonical_text(&r.canonical_genome, space)?;
        x.push(encode(&g, space)?);
        y.push(r.fitness);
    }
    if x.is_empty() {
        return Err(Error::InsufficientData {
            have: 0,
            need: min_records_for(space.feature_len()),
        });
    }
    fit_features(&x, &y, ridge_lambda)
}

impl PredictorModel {
    pub fn predict_features(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.feature_means.len());
        self.weights[0]
            + x.iter()
                .enumerate()
                .map(|(j, v)| self.weights[j + 1] * (v - self.feature_means[j]) / self.feature_scales[j])
                .sum::<f64>()
    }

    pub fn predict(&self, genome: &Genome, space: &SearchSpace) -> Result<f64> {
        let x = encode(genome, space)?;
        if x.len() != self.feature_means.len() {
            return Err(Error::GenomeMismatch(format!(
                "model expects {} features, genome encodes to {}",
                self.feature_means.len(),
                x.len()
            )));
        }
        Ok(self.predict_features(&x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorPolicy {
    /// Oracle evaluations required before the predictor is first used.
    pub min_training_records: usize,
    /// Chance that a candidate without a cached result goes to the oracle
    /// once the predictor is active.
    pub oracle_fraction: f64,
    /// Generations between refits.
    pub refresh_interval: usize,
    pub ridge_lambda: f64,
}

impl Default for PredictorPolicy {
    fn default() -> Self {
        PredictorPolicy {
            min_training_records: 100,
            oracle_fraction: 1.0,
            refresh_interval: 1,
            ridge_lambda: 1e-3,
        }
    }
}

impl PredictorPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.oracle_fraction > 0.0 && self.oracle_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "oracle_fraction={} must lie in (0, 1]",
                self.oracle_fraction
            )));
        }
        if self.refresh_interval == 0 {
            return Err(Error::InvalidConfig("refresh_interval must be >= 1".into()));
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::InvalidConfig("ridge_lambda must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn uses_predictor(&self) -> bool {
        self.oracle_fraction < 1.0
    }
}

/// One (predicted, true) pair for an oracle-evaluated candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPair {
    pub predicted: f64,
    #[serde(rename = "true")]
    pub actual: f64,
    pub swap: usize,
    pub generation: usize,
}

/// Predictor state inside the evaluator.
#[derive(Debug, Clone)]
pub struct Hybrid {
    policy: PredictorPolicy,
    model: Option<PredictorModel>,
    generations_since_fit: usize,
    fits: usize,
}

impl Hybrid {
    pub fn new(policy: PredictorPolicy) -> Self {
        Hybrid {
            policy,
            model: None,
            generations_since_fit: 0,
            fits: 0,
        }
    }

    pub fn policy(&self) -> &PredictorPolicy {
        &self.policy
    }

    pub fn model(&self) -> Option<&PredictorModel> {
        self.model.as_ref()
    }

    pub fn fits(&self) -> usize {
        self.fits
    }

    /// The oracle-or-predictor decision is keyed on the genome and its
    /// context, so re-proposing a genome never buys it a second draw.
    pub fn wants_oracle(&self, seed: u64, canonical: &str, ctx: &str) -> bool {
        if self.model.is_none() || !self.policy.uses_predictor() {
            return true;
        }
        let key = format!("{ctx}|{canonical}");
        let u: f64 = rng::keyed_stream(seed, Purpose::HybridChoice, &key).random();
        u < self.policy.oracle_fraction
    }

    /// Oracle records required before the first fit.
    pub fn records_needed(&self, feature_len: usize) -> usize {
        self.policy.min_training_records.max(min_records_for(feature_len))
    }

    /// Fits the first model as soon as the warm-up set is complete.
    pub fn warm_start(&mut self, x: &[Vec<f64>], y: &[f64]) -> Result<()> {
        let d = x.first().map_or(0, Vec::len);
        if self.model.is_none() && self.policy.uses_predictor() && !y.is_empty() && y.len() >= self.records_needed(d) {
            self.model = Some(fit_features(x, y, self.policy.ridge_lambda)?);
            self.generations_since_fit = 0;
            self.fits += 1;
        }
        Ok(())
    }

    pub fn end_generation(&mut self, x: &[Vec<f64>], y: &[f64]) -> Result<()> {
        if !self.policy.uses_predictor() {
            return Ok(());
        }
        self.generations_since_fit += 1;
        let enough = y.len() >= self.policy.min_training_records
            && y.len() >= min_records_for(x.first().map_or(0, Vec::len));
        let due = self.model.is_none() || self.generations_since_fit >= self.policy.refresh_interval;
        if enough && due {
            self.model = Some(fit_features(x, y, self.policy.ridge_lambda)?);
            self.generations_since_fit = 0;
            self.fits += 1;
        }
        Ok(())
    }
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}
