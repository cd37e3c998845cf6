//! Multiple-workload analysis: bootstrap resampling and a one-sided z-test
//! of "mean disparity <= theta" per (group, measure).

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{confusion_by_group, pooled_counts, AuditConfig, AuditError, Workload};
use crate::groups::{GroupIndex, GroupKey, GroupLabel};
use crate::measure::Measure;
use crate::rng::{self, streams};

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;
pub const DEFAULT_WORKLOADS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("k must be at least 1")]
    ZeroWorkloads,
    #[error("significance level must be in (0, 1), got {0}")]
    Significance(f64),
    #[error("no workloads supplied")]
    NoWorkloads,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// `k` resamples of `base`, each of size `n`, drawn with replacement.
/// Resample `i` depends only on `(seed, i)`.
pub fn bootstrap_workloads(base: &Workload, k: usize, seed: u64) -> Result<Vec<Workload>, StatsError> {
    if k == 0 {
        return Err(StatsError::ZeroWorkloads);
    }
    if base.is_empty() {
        return Err(StatsError::Audit(AuditError::EmptyWorkload));
    }
    Ok((0..k).map(|i| bootstrap_workload(base, i, seed)).collect())
}

pub fn bootstrap_workload(base: &Workload, index: usize, seed: u64) -> Workload {
    let mut r = rng::stream(seed, streams::BOOTSTRAP + index as u64);
    let n = base.len();
    let correspondences = (0..n)
        .map(|_| base.correspondences[r.random_range(0..n)].clone())
        .collect();
    Workload {
        matcher_id: base.matcher_id.clone(),
        match_threshold: base.match_threshold,
        correspondences,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityPopulation {
    pub group: GroupLabel,
    pub measure: Measure,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `None` when the sample deviation is zero or `k = 1`.
    pub z_statistic: Option<f64>,
    pub p_value: f64,
    pub reject_null: bool,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub alpha: f64,
    pub theta: f64,
}

/// Upper standard-normal tail `1 - Phi(z)`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / core::f64::consts::SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / core::f64::consts::SQRT_2)
}

/// Complementary error function, Chebyshev fit with fractional error below
/// 1.2e-7 everywhere.
pub fn erfc(x: f64) -> f64 {
    let z = libm::fabs(x);
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let ans = t * libm::exp(poly);
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// One-sided one-sample z-test of `H0: mean <= theta`.
pub fn test_fairness(
    pop: &DisparityPopulation,
    theta: f64,
    alpha: f64,
) -> Result<TestResult, StatsError> {
    test_values(&pop.values, theta, alpha)
}

pub fn test_values(values: &[f64], theta: f64, alpha: f64) -> Result<TestResult, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyPopulation);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Significance(alpha));
    }
    let k = values.len();
    let mean = values.iter().sum::<f64>() / k as f64;
    let std = if k > 1 {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        libm::sqrt(ss / (k - 1) as f64)
    } else {
        0.0
    };
    let (z_statistic, p_value) = if std > 0.0 {
        let z = (mean - theta) / (std / libm::sqrt(k as f64));
        (Some(z), normal_sf(z).clamp(0.0, 1.0))
    } else if mean > theta {
        (None, 0.0)
    } else {
        (None, 1.0)
    };
    Ok(TestResult {
        z_statistic,
        p_value,
        reject_null: p_value <= alpha,
        k,
        mean,
        std,
        alpha,
        theta,
    })
}

/// Disparity populations across `workloads` for every group seen in any of
/// them. Workloads where a group's disparity is undefined contribute no
/// value; the count of such workloads is returned alongside.
pub fn disparity_populations(
    workloads: &[Workload],
    config: &AuditConfig,
) -> BTreeMap<(Measure, GroupKey), (Vec<f64>, usize)> {
    let measures = config.sorted_measures();
    let per: Vec<_> = workloads
        .iter()
        .map(|w| (confusion_by_group(w, config.paradigm), pooled_counts(w)))
        .collect();
    let mut keys: Vec<GroupKey> = per.iter().flat_map(|(c, _)| c.keys().copied()).collect();
    keys.sort();
    keys.dedup();

    let mut out = BTreeMap::new();
    for &m in &measures {
        for &key in &keys {
            let mut values = Vec::new();
            let mut undefined = 0;
            for (counts, pooled) in &per {
                let d = counts.get(&key).and_then(|c| {
                    let (g, o) = (m.value(c)?, m.value(pooled)?);
                    m.disparity(o, g, config.mode)
                });
                match d {
                    Some(d) => values.push(d),
                    None => undefined += 1,
                }
            }
            out.insert((m, key), (values, undefined));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiWorkloadConfig {
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    DEFAULT_WORKLOADS
}
fn default_alpha() -> f64 {
    DEFAULT_SIGNIFICANCE
}

impl Default for MultiWorkloadConfig {
    fn default() -> Self {
        Self {
            audit: AuditConfig::default(),
            k: DEFAULT_WORKLOADS,
            alpha: DEFAULT_SIGNIFICANCE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiWorkloadRow {
    pub matcher: String,
    pub measure: Measure,
    pub group: GroupLabel,
    /// Workloads with a defined disparity.
    pub k: usize,
    /// Workloads where the disparity was undefined and skipped.
    pub undefined: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: bool,
    pub alpha: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiWorkloadReport {
    pub rows: Vec<MultiWorkloadRow>,
}

/// Tests every (measure, group) over the given workloads, which must all
/// come from one matcher.
pub fn analyze_workloads(
    workloads: &[Workload],
    config: &MultiWorkloadConfig,
    groups: &GroupIndex,
) -> Result<MultiWorkloadReport, StatsError> {
    config.audit.validate()?;
    let first = workloads.first().ok_or(StatsError::NoWorkloads)?;
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(StatsError::Significance(config.alpha));
    }
    let theta = config.audit.fairness_threshold;
    let mut rows = Vec::new();
    for ((measure, key), (values, undefined)) in disparity_populations(workloads, &config.audit) {
        let t = (!values.is_empty())
            .then(|| test_values(&values, theta, config.alpha))
            .transpose()?;
        rows.push(MultiWorkloadRow {
            matcher: first.matcher_id.clone(),
            measure,
            group: groups.label(key),
            k: values.len(),
            undefined,
            mean: t.map(|t| t.mean),
            std: t.map(|t| t.std),
            z: t.and_then(|t| t.z_statistic),
            p_value: t.map(|t| t.p_value),
            reject: t.is_some_and(|t| t.reject_null),
            alpha: config.alpha,
            theta,
        });
    }
    rows.sort_by(|a, b| (a.measure.id(), &a.group).cmp(&(b.measure.id(), &b.group)));
    Ok(MultiWorkloadReport { rows })
}

/// Bootstraps `config.k` workloads from `base` and tests them.
pub fn multiworkload(
    base: &Workload,
    config: &MultiWorkloadConfig,
    groups: &GroupIndex,
) -> Result<MultiWorkloadReport, StatsError> {
    let workloads = bootstrap_workloads(base, config.k, config.seed)?;
    analyze_workloads(&workloads, config, groups)
}
