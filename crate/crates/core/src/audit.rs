//! Workloads, per-group confusion counting and the audit report.
//!
//! A correspondence counts toward group `g` once when `g` is legitimate for
//! it (set semantics: a pair whose two entities share `g` still adds one).
//! The overall value pools every correspondence exactly once.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::LabeledPairSet;
use crate::groups::{
    is_legitimate, legitimate_groups, GroupEncoding, GroupError, GroupIndex, GroupKey, GroupLabel,
    Paradigm,
};
use crate::matcher::ScoreTable;
use crate::measure::{ConfusionCounts, DisparityMode, Measure};

pub const DEFAULT_FAIRNESS_THRESHOLD: f64 = 0.2;
pub const DEFAULT_MIN_SUPPORT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("no score for pair ({left_id}, {right_id})")]
    MissingScore { left_id: String, right_id: String },
    #[error("no group encoding for {side} entity `{id}`")]
    MissingEncoding { side: &'static str, id: String },
    #[error("workload is empty")]
    EmptyWorkload,
    #[error("group key does not match the {0} paradigm")]
    ParadigmMismatch(&'static str),
    #[error("group index {0} is outside the subgroup universe")]
    UnknownGroupIndex(usize),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("invalid audit config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub left_id: String,
    pub right_id: String,
    pub left: GroupEncoding,
    pub right: GroupEncoding,
    pub predicted: bool,
    pub truth: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub matcher_id: String,
    pub match_threshold: f64,
    pub correspondences: Vec<Correspondence>,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }
}

/// Joins scores, labels and encodings into a workload at threshold `tau`.
pub fn build_workload(
    scores: &ScoreTable,
    pairs: &LabeledPairSet,
    groups: &GroupIndex,
    tau: f64,
) -> Result<Workload, AuditError> {
    let lookup = scores.lookup();
    let correspondences = pairs
        .pairs
        .iter()
        .map(|p| {
            let score = *lookup
                .get(&(p.left_id.as_str(), p.right_id.as_str()))
                .ok_or_else(|| AuditError::MissingScore {
                    left_id: p.left_id.clone(),
                    right_id: p.right_id.clone(),
                })?;
            let left = groups.left.get(&p.left_id).ok_or_else(|| AuditError::MissingEncoding {
                side: "left",
                id: p.left_id.clone(),
            })?;
            let right = groups.right.get(&p.right_id).ok_or_else(|| AuditError::MissingEncoding {
                side: "right",
                id: p.right_id.clone(),
            })?;
            Ok(Correspondence {
                left_id: p.left_id.clone(),
                right_id: p.right_id.clone(),
                left: left.clone(),
                right: right.clone(),
                predicted: score > tau,
                truth: p.label,
                score,
            })
        })
        .collect::<Result<_, AuditError>>()?;
    Ok(Workload {
        matcher_id: scores.matcher_id.clone(),
        match_threshold: tau,
        correspondences,
    })
}

/// Confusion counts of one group (or group pair).
pub fn group_confusion(
    workload: &Workload,
    key: GroupKey,
    universe: usize,
) -> Result<ConfusionCounts, AuditError> {
    match key {
        GroupKey::Single(g) if g >= universe => return Err(AuditError::UnknownGroupIndex(g)),
        GroupKey::Pair(a, b) if a.max(b) >= universe => {
            return Err(AuditError::UnknownGroupIndex(a.max(b)))
        }
        _ => {}
    }
    let mut c = ConfusionCounts::default();
    for t in &workload.correspondences {
        if is_legitimate(&t.left, &t.right, key) {
            c.record(t.predicted, t.truth);
        }
    }
    Ok(c)
}

/// Confusion counts of every group (or pair) with at least one legitimate
/// correspondence, in one pass.
pub fn confusion_by_group(
    workload: &Workload,
    paradigm: Paradigm,
) -> BTreeMap<GroupKey, ConfusionCounts> {
    let mut out: BTreeMap<GroupKey, ConfusionCounts> = BTreeMap::new();
    for t in &workload.correspondences {
        for key in legitimate_groups(&t.left, &t.right, paradigm) {
            out.entry(key).or_default().record(t.predicted, t.truth);
        }
    }
    out
}

pub fn pooled_counts(workload: &Workload) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for t in &workload.correspondences {
        c.record(t.predicted, t.truth);
    }
    c
}

/// `Pr(alpha | beta)` over the whole workload, each correspondence counted
/// once.
pub fn overall_value(workload: &Workload, measure: Measure) -> Result<Option<f64>, AuditError> {
    if workload.is_empty() {
        return Err(AuditError::EmptyWorkload);
    }
    Ok(measure.value(&pooled_counts(workload)))
}

fn default_measures() -> Vec<Measure> {
    Measure::ALL.to_vec()
}
fn default_tau() -> f64 {
    0.5
}
fn default_theta() -> f64 {
    DEFAULT_FAIRNESS_THRESHOLD
}
fn default_mode() -> DisparityMode {
    DisparityMode::Subtraction
}
fn default_min_support() -> u64 {
    DEFAULT_MIN_SUPPORT
}
fn default_paradigm() -> Paradigm {
    Paradigm::Single
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    #[serde(default = "default_paradigm")]
    pub paradigm: Paradigm,
    #[serde(default = "default_measures")]
    pub measures: Vec<Measure>,
    #[serde(default = "default_tau")]
    pub match_threshold: f64,
    #[serde(default = "default_theta")]
    pub fairness_threshold: f64,
    #[serde(default = "default_mode")]
    pub mode: DisparityMode,
    #[serde(default)]
    pub unfair_only: bool,
    #[serde(default = "default_min_support")]
    pub min_support: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            paradigm: default_paradigm(),
            measures: default_measures(),
            match_threshold: default_tau(),
            fairness_threshold: default_theta(),
            mode: default_mode(),
            unfair_only: false,
            min_support: default_min_support(),
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.match_threshold) {
            return Err(AuditError::InvalidConfig("match_threshold must be in [0, 1]".to_string()));
        }
        if !unit(self.fairness_threshold) {
            return Err(AuditError::InvalidConfig(
                "fairness_threshold must be in [0, 1]".to_string(),
            ));
        }
        if self.measures.is_empty() {
            return Err(AuditError::InvalidConfig("at least one measure is required".to_string()));
        }
        Ok(())
    }

    /// Measures sorted by id, without repeats.
    pub fn sorted_measures(&self) -> Vec<Measure> {
        let mut m = self.measures.clone();
        m.sort_by_key(|m| m.id());
        m.dedup();
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Annotation {
    /// Fewer legitimate correspondences than `min_support`; never flagged.
    LowSupport,
    /// The group's measure value has a zero denominator.
    UndefinedGroupValue,
    /// The pooled measure value has a zero denominator.
    UndefinedOverallValue,
    /// Division-mode disparity against a zero overall value.
    UndefinedDisparity,
}

/// Measure value, disparity and flag for one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub group_value: Option<f64>,
    pub disparity: Option<f64>,
    pub unfair: bool,
    pub annotation: Option<Annotation>,
}

/// The shared per-group evaluation used by audits, explanations and
/// strategy re-audits.
pub fn evaluate_group(
    counts: &ConfusionCounts,
    overall: Option<f64>,
    measure: Measure,
    mode: DisparityMode,
    fairness_threshold: f64,
    min_support: u64,
) -> Evaluation {
    let group_value = measure.value(counts);
    let (disparity, mut annotation) = match (group_value, overall) {
        (None, _) => (None, Some(Annotation::UndefinedGroupValue)),
        (_, None) => (None, Some(Annotation::UndefinedOverallValue)),
        (Some(g), Some(o)) => match measure.disparity(o, g, mode) {
            Some(d) => (Some(d), None),
            None => (None, Some(Annotation::UndefinedDisparity)),
        },
    };
    let low = counts.total() < min_support;
    if low && annotation.is_none() {
        annotation = Some(Annotation::LowSupport);
    }
    let unfair = !low && disparity.is_some_and(|d| d > fairness_threshold);
    Evaluation {
        group_value,
        disparity,
        unfair,
        annotation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub matcher: String,
    pub paradigm: Paradigm,
    pub measure: Measure,
    pub group: GroupLabel,
    pub group_value: Option<f64>,
    pub overall_value: Option<f64>,
    pub disparity: Option<f64>,
    pub mode: DisparityMode,
    pub unfair: bool,
    pub support: ConfusionCounts,
    pub annotation: Option<Annotation>,
}

/// Audit entries ordered by measure id, then group label. Serializes as a
/// bare JSON array.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn unfair(&self) -> impl Iterator<Item = &AuditEntry> {
        self.entries.iter().filter(|e| e.unfair)
    }

    pub fn find(&self, matcher: &str, measure: Measure, group: &GroupLabel) -> Option<&AuditEntry> {
        self.entries
            .iter()
            .find(|e| e.matcher == matcher && e.measure == measure && &e.group == group)
    }

    pub fn extend(&mut self, other: AuditReport) {
        self.entries.extend(other.entries);
    }
}

/// Audits one workload: every measure against every group (or pair) with
/// at least one legitimate correspondence.
pub fn audit(
    workload: &Workload,
    config: &AuditConfig,
    groups: &GroupIndex,
) -> Result<AuditReport, AuditError> {
    config.validate()?;
    if workload.is_empty() {
        return Err(AuditError::EmptyWorkload);
    }
    let counts = confusion_by_group(workload, config.paradigm);
    let pooled = pooled_counts(workload);
    Ok(report_from_counts(
        &workload.matcher_id,
        &counts,
        &pooled,
        config,
        groups,
    ))
}

/// Builds report entries from precomputed group counts and the pooled
/// counts the overall value is taken from.
pub fn report_from_counts(
    matcher: &str,
    counts: &BTreeMap<GroupKey, ConfusionCounts>,
    pooled: &ConfusionCounts,
    config: &AuditConfig,
    groups: &GroupIndex,
) -> AuditReport {
    let mut labeled: Vec<(GroupLabel, &ConfusionCounts)> =
        counts.iter().map(|(k, c)| (groups.label(*k), c)).collect();
    labeled.sort_by(|a, b| a.0.cmp(&b.0));

    let mut entries = Vec::new();
    for measure in config.sorted_measures() {
        let overall = measure.value(pooled);
        for (label, c) in &labeled {
            let ev = evaluate_group(
                c,
                overall,
                measure,
                config.mode,
                config.fairness_threshold,
                config.min_support,
            );
            if config.unfair_only && !ev.unfair {
                continue;
            }
            entries.push(AuditEntry {
                matcher: matcher.to_string(),
                paradigm: config.paradigm,
                measure,
                group: label.clone(),
                group_value: ev.group_value,
                overall_value: overall,
                disparity: ev.disparity,
                mode: config.mode,
                unfair: ev.unfair,
                support: **c,
                annotation: ev.annotation,
            });
        }
    }
    AuditReport { entries }
}
