//! Built-in matchers over similarity features, external score tables, and
//! the matching threshold.
//!
//! All built-in matchers emit a score in `[0, 1]`; the only binarization
//! point is [`apply_match_threshold`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{EntityTable, LabeledPairSet};
use crate::features::FeatureVector;
use crate::rng;

pub const LOGISTIC_EPOCHS: usize = 500;
pub const LOGISTIC_LEARNING_RATE: f64 = 0.1;
/// Tolerance around `[0, 1]` inside which external scores are clamped.
pub const SCORE_EPSILON: f64 = 1e-6;
const VARIANCE_SMOOTHING: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatcherError {
    #[error("training split is empty")]
    EmptyTraining,
    #[error("{kind} matcher needs both match and non-match training pairs")]
    Untrainable { kind: MatcherKind },
    #[error("feature arity mismatch: matcher expects {expected}, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("features ({features}) and labels ({labels}) differ in length")]
    LabelCount { features: usize, labels: usize },
    #[error("matcher `{0}` only carries external scores and cannot predict")]
    NotPredictive(String),
    #[error("unknown matcher kind `{0}`")]
    UnknownKind(String),
    #[error("score file has no score for test pair ({left_id}, {right_id})")]
    MissingPair { left_id: String, right_id: String },
    #[error("score {score} for pair ({left_id}, {right_id}) is outside [0, 1]")]
    ScoreOutOfRange {
        left_id: String,
        right_id: String,
        score: f64,
    },
    #[error("score file references unknown {side} id `{id}`")]
    DanglingId { side: &'static str, id: String },
    #[error("score file repeats pair ({left_id}, {right_id})")]
    DuplicateScore { left_id: String, right_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatcherKind {
    Threshold,
    Logistic,
    NaiveBayes,
    DecisionStump,
}

impl MatcherKind {
    pub const ALL: [MatcherKind; 4] = [
        MatcherKind::Threshold,
        MatcherKind::Logistic,
        MatcherKind::NaiveBayes,
        MatcherKind::DecisionStump,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MatcherKind::Threshold => "threshold",
            MatcherKind::Logistic => "logistic",
            MatcherKind::NaiveBayes => "naive-bayes",
            MatcherKind::DecisionStump => "decision-stump",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MatcherKind::Threshold => {
                "Scores a pair by the mean of its similarity features; no learned weights."
            }
            MatcherKind::Logistic => {
                "Logistic regression over similarity features, batch gradient descent (500 epochs, rate 0.1)."
            }
            MatcherKind::NaiveBayes => {
                "Gaussian naive Bayes over similarity features; the score is the match posterior."
            }
            MatcherKind::DecisionStump => {
                "Single-feature decision stump chosen to minimize validation error; leaves hold smoothed match rates."
            }
        }
    }
}

impl fmt::Display for MatcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MatcherKind {
    type Err = MatcherError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MatcherKind::ALL
            .into_iter()
            .find(|k| k.id() == s.trim())
            .ok_or_else(|| MatcherError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MatcherModel {
    /// Emits the mean feature value. `cut` is the validation-F1-optimal cut
    /// found during training, kept for diagnostics only.
    Threshold { cut: f64 },
    Logistic { weights: Vec<f64>, bias: f64 },
    NaiveBayes {
        /// Log priors, `[non-match, match]`.
        log_prior: [f64; 2],
        means: [Vec<f64>; 2],
        variances: [Vec<f64>; 2],
    },
    DecisionStump {
        feature: usize,
        cut: f64,
        /// Score when `x[feature] <= cut`.
        below: f64,
        /// Score when `x[feature] > cut`.
        above: f64,
    },
    /// Scores supplied from outside; nothing to evaluate.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub feature_names: Vec<String>,
    /// F1 on the validation split at the default 0.5 threshold.
    pub validation_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matcher {
    pub id: String,
    pub model: MatcherModel,
    pub meta: TrainingMeta,
}

impl Matcher {
    pub fn external(name: &str) -> Self {
        Self {
            id: external_id(name),
            model: MatcherModel::External,
            meta: TrainingMeta {
                seed: 0,
                epochs: 0,
                feature_names: Vec::new(),
                validation_f1: None,
            },
        }
    }

    pub fn arity(&self) -> Option<usize> {
        match &self.model {
            MatcherModel::External => None,
            _ => Some(self.meta.feature_names.len()),
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, MatcherError> {
        if let Some(expected) = self.arity() {
            if expected != x.len() {
                return Err(MatcherError::Arity {
                    expected,
                    found: x.len(),
                });
            }
        }
        let s = match &self.model {
            MatcherModel::Threshold { .. } => mean(x),
            MatcherModel::Logistic { weights, bias } => sigmoid(dot(weights, x) + bias),
            MatcherModel::NaiveBayes {
                log_prior,
                means,
                variances,
            } => {
                let l0 = log_prior[0] + log_likelihood(x, &means[0], &variances[0]);
                let l1 = log_prior[1] + log_likelihood(x, &means[1], &variances[1]);
                // P(match | x) = 1 / (1 + exp(l0 - l1))
                sigmoid(l1 - l0)
            }
            MatcherModel::DecisionStump {
                feature,
                cut,
                below,
                above,
            } => {
                if x[*feature] > *cut {
                    *above
                } else {
                    *below
                }
            }
            MatcherModel::External => return Err(MatcherError::NotPredictive(self.id.clone())),
        };
        Ok(s.clamp(0.0, 1.0))
    }

    /// Scores `pairs` (row order preserved); `features[i]` belongs to
    /// `pairs.pairs[i]`.
    pub fn predict(
        &self,
        pairs: &LabeledPairSet,
        features: &[FeatureVector],
    ) -> Result<ScoreTable, MatcherError> {
        if features.len() != pairs.len() {
            return Err(MatcherError::LabelCount {
                features: features.len(),
                labels: pairs.len(),
            });
        }
        let rows = pairs
            .pairs
            .iter()
            .zip(features)
            .map(|(p, f)| {
                Ok(ScoreRow {
                    left_id: p.left_id.clone(),
                    right_id: p.right_id.clone(),
                    score: self.score(&f.0)?,
                })
            })
            .collect::<Result<_, MatcherError>>()?;
        Ok(ScoreTable {
            matcher_id: self.id.clone(),
            rows,
        })
    }
}

pub fn external_id(name: &str) -> String {
    format!("external:{name}")
}

/// Labeled feature rows.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'a> {
    pub features: &'a [FeatureVector],
    pub labels: &'a [bool],
}

impl<'a> Labeled<'a> {
    pub fn new(features: &'a [FeatureVector], labels: &'a [bool]) -> Result<Self, MatcherError> {
        if features.len() != labels.len() {
            return Err(MatcherError::LabelCount {
                features: features.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn has_both_classes(&self) -> bool {
        self.labels.iter().any(|&l| l) && self.labels.iter().any(|&l| !l)
    }
}

/// Trains one built-in matcher. `valid` may be empty, in which case model
/// selection falls back to the training rows.
pub fn train_matcher(
    kind: MatcherKind,
    feature_names: &[String],
    train: Labeled<'_>,
    valid: Labeled<'_>,
    seed: u64,
) -> Result<Matcher, MatcherError> {
    if train.len() == 0 {
        return Err(MatcherError::EmptyTraining);
    }
    let arity = feature_names.len();
    for f in train.features.iter().chain(valid.features) {
        if f.len() != arity {
            return Err(MatcherError::Arity {
                expected: arity,
                found: f.len(),
            });
        }
    }
    let select = if valid.len() > 0 { valid } else { train };
    let (model, epochs) = match kind {
        MatcherKind::Threshold => (train_threshold(select), 0),
        MatcherKind::Logistic => {
            if !train.has_both_classes() {
                return Err(MatcherError::Untrainable { kind });
            }
            (train_logistic(train, seed), LOGISTIC_EPOCHS)
        }
        MatcherKind::NaiveBayes => {
            if !train.has_both_classes() {
                return Err(MatcherError::Untrainable { kind });
            }
            (train_naive_bayes(train), 0)
        }
        MatcherKind::DecisionStump => (train_stump(train, select), 0),
    };
    let mut matcher = Matcher {
        id: kind.id().to_string(),
        model,
        meta: TrainingMeta {
            seed,
            epochs,
            feature_names: feature_names.to_vec(),
            validation_f1: None,
        },
    };
    if valid.len() > 0 {
        let predicted: Vec<bool> = valid
            .features
            .iter()
            .map(|f| matcher.score(&f.0).map(|s| s > 0.5))
            .collect::<Result<_, _>>()?;
        matcher.meta.validation_f1 = f1_score(&predicted, valid.labels);
    }
    Ok(matcher)
}

fn train_threshold(select: Labeled<'_>) -> MatcherModel {
    let means: Vec<f64> = select.features.iter().map(FeatureVector::mean).collect();
    let mut cuts: Vec<f64> = means.clone();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (f64::NEG_INFINITY, 0.5);
    for &cut in &cuts {
        // a cut just below each observed mean
        let c = cut - 1e-12;
        let predicted: Vec<bool> = means.iter().map(|&m| m > c).collect();
        let f1 = f1_score(&predicted, select.labels).unwrap_or(0.0);
        if f1 > best.0 {
            best = (f1, c);
        }
    }
    MatcherModel::Threshold { cut: best.1 }
}

fn train_logistic(train: Labeled<'_>, seed: u64) -> MatcherModel {
    let d = train.features[0].len();
    let n = train.len() as f64;
    let mut rng = rng::stream(seed, rng::streams::LOGISTIC_INIT);
    let mut weights: Vec<f64> = (0..d).map(|_| rng.random_range(-0.01..0.01)).collect();
    let mut bias = 0.0;
    let mut grad = vec![0.0; d];
    for _ in 0..LOGISTIC_EPOCHS {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (x, &y) in train.features.iter().zip(train.labels) {
            let err = sigmoid(dot(&weights, &x.0) + bias) - if y { 1.0 } else { 0.0 };
            for (g, xi) in grad.iter_mut().zip(&x.0) {
                *g += err * xi;
            }
            grad_b += err;
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= LOGISTIC_LEARNING_RATE * g / n;
        }
        bias -= LOGISTIC_LEARNING_RATE * grad_b / n;
    }
    MatcherModel::Logistic { weights, bias }
}

fn train_naive_bayes(train: Labeled<'_>) -> MatcherModel {
    let d = train.features[0].len();
    let n = train.len() as f64;
    let class_stats = |class: bool| -> (f64, Vec<f64>, Vec<f64>) {
        let rows: Vec<&FeatureVector> = train
            .features
            .iter()
            .zip(train.labels)
            .filter(|(_, &l)| l == class)
            .map(|(f, _)| f)
            .collect();
        let k = rows.len() as f64;
        let means: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r.0[j]).sum::<f64>() / k).collect();
        let vars: Vec<f64> = (0..d)
            .map(|j| rows.iter().map(|r| sq(r.0[j] - means[j])).sum::<f64>() / k)
            .collect();
        (k, means, vars)
    };
    let (k0, m0, mut v0) = class_stats(false);
    let (k1, m1, mut v1) = class_stats(true);

    // variance floor: a fraction of the largest overall feature variance
    let overall_var = (0..d)
        .map(|j| {
            let mu = train.features.iter().map(|r| r.0[j]).sum::<f64>() / n;
            train.features.iter().map(|r| sq(r.0[j] - mu)).sum::<f64>() / n
        })
        .fold(0.0, f64::max);
    let floor = f64::max(VARIANCE_SMOOTHING * overall_var, VARIANCE_SMOOTHING);
    v0.iter_mut().chain(v1.iter_mut()).for_each(|v| *v += floor);

    MatcherModel::NaiveBayes {
        log_prior: [libm::log(k0 / n), libm::log(k1 / n)],
        means: [m0, m1],
        variances: [v0, v1],
    }
}

fn train_stump(train: Labeled<'_>, select: Labeled<'_>) -> MatcherModel {
    let d = train.features[0].len();
    let mut best: Option<(usize, MatcherModel)> = None;
    for feature in 0..d {
        let mut values: Vec<f64> = train.features.iter().map(|f| f.0[feature]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let cut = (w[0] + w[1]) / 2.0;
            let (below, above) = stump_leaves(train, feature, cut);
            let errors = select
                .features
                .iter()
                .zip(select.labels)
                .filter(|(f, &l)| {
                    let s = if f.0[feature] > cut { above } else { below };
                    (s > 0.5) != l
                })
                .count();
            if best.as_ref().is_none_or(|(e, _)| errors < *e) {
                best = Some((
                    errors,
                    MatcherModel::DecisionStump {
                        feature,
                        cut,
                        below,
                        above,
                    },
                ));
            }
        }
    }
    best.map(|(_, m)| m).unwrap_or_else(|| {
        // every feature constant: predict the smoothed base rate
        let (rate, _) = stump_leaves(train, 0, f64::INFINITY);
        MatcherModel::DecisionStump {
            feature: 0,
            cut: f64::MAX,
            below: rate,
            above: rate,
        }
    })
}

/// Laplace-smoothed match rate on each side of the cut.
pub fn stump_leaves(train: Labeled<'_>, feature: usize, cut: f64) -> (f64, f64) {
    let (mut nb, mut mb, mut na, mut ma) = (0u64, 0u64, 0u64, 0u64);
    for (f, &l) in train.features.iter().zip(train.labels) {
        let x = f.0.get(feature).copied().unwrap_or(0.0);
        if x > cut {
            na += 1;
            ma += u64::from(l);
        } else {
            nb += 1;
            mb += u64::from(l);
        }
    }
    let smooth = |m: u64, n: u64| (m as f64 + 1.0) / (n as f64 + 2.0);
    (smooth(mb, nb), smooth(ma, na))
}

fn log_likelihood(x: &[f64], means: &[f64], variances: &[f64]) -> f64 {
    x.iter()
        .zip(means)
        .zip(variances)
        .map(|((&xi, &mu), &var)| {
            -0.5 * libm::log(2.0 * core::f64::consts::PI * var) - (xi - mu) * (xi - mu) / (2.0 * var)
        })
        .sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// F1 of the positive class; `None` when there are neither predicted nor
/// true positives.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> Option<f64> {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let den = 2 * tp + fp + fn_;
    (den > 0).then(|| 2.0 * tp as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub left_id: String,
    pub right_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub matcher_id: String,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn lookup(&self) -> BTreeMap<(&str, &str), f64> {
        self.rows
            .iter()
            .map(|r| ((r.left_id.as_str(), r.right_id.as_str()), r.score))
            .collect()
    }
}

/// `score > threshold` (strict) marks a match.
pub fn apply_match_threshold(scores: &ScoreTable, threshold: f64) -> Vec<bool> {
    scores.rows.iter().map(|r| r.score > threshold).collect()
}

/// Validates externally produced scores against the test split.
///
/// Rows are reordered to test-split order; rows for pairs outside the test
/// split are dropped with a warning. Scores within `SCORE_EPSILON` of
/// `[0, 1]` are clamped with a warning; anything further out is rejected.
pub fn validate_external_scores(
    matcher_id: &str,
    rows: Vec<ScoreRow>,
    test: &LabeledPairSet,
    left: &EntityTable,
    right: &EntityTable,
) -> Result<(ScoreTable, Vec<String>), MatcherError> {
    let mut warnings = Vec::new();
    let mut by_pair: BTreeMap<(String, String), f64> = BTreeMap::new();
    for row in rows {
        if !left.contains(&row.left_id) {
            return Err(MatcherError::DanglingId {
                side: "left",
                id: row.left_id,
            });
        }
        if !right.contains(&row.right_id) {
            return Err(MatcherError::DanglingId {
                side: "right",
                id: row.right_id,
            });
        }
        let mut score = row.score;
        if !score.is_finite() || !(-SCORE_EPSILON..=1.0 + SCORE_EPSILON).contains(&score) {
            return Err(MatcherError::ScoreOutOfRange {
                left_id: row.left_id,
                right_id: row.right_id,
                score,
            });
        }
        if !(0.0..=1.0).contains(&score) {
            warnings.push(format!(
                "score {score} for ({}, {}) clamped into [0, 1]",
                row.left_id, row.right_id
            ));
            score = score.clamp(0.0, 1.0);
        }
        let key = (row.left_id, row.right_id);
        if by_pair.contains_key(&key) {
            return Err(MatcherError::DuplicateScore {
                left_id: key.0,
                right_id: key.1,
            });
        }
        by_pair.insert(key, score);
    }

    let mut out = Vec::with_capacity(test.len());
    let mut used = BTreeSet::new();
    for p in &test.pairs {
        let key = (p.left_id.clone(), p.right_id.clone());
        let Some(&score) = by_pair.get(&key) else {
            return Err(MatcherError::MissingPair {
                left_id: p.left_id.clone(),
                right_id: p.right_id.clone(),
            });
        };
        used.insert(key);
        out.push(ScoreRow {
            left_id: p.left_id.clone(),
            right_id: p.right_id.clone(),
            score,
        });
    }
    let extra = by_pair.len() - used.len();
    if extra > 0 {
        warnings.push(format!("{extra} scored pairs are not in the test split and were ignored"));
    }
    Ok((
        ScoreTable {
            matcher_id: matcher_id.to_string(),
            rows: out,
        },
        warnings,
    ))
}
