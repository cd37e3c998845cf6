//! Ensemble resolution: per-group matcher assignments scored by worst-group
//! performance `A` and unfairness `F`, their Pareto frontier, and the
//! re-audit of a chosen assignment.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{group_confusion, report_from_counts, AuditConfig, AuditError, AuditReport, Workload};
use crate::groups::{GroupIndex, GroupKey, Paradigm};
use crate::measure::{ConfusionCounts, DisparityMode, Measure, Orientation};
use crate::rng::{self, streams};

pub const DEFAULT_CAP: usize = 100_000;
/// Matcher id used in strategy re-audit reports.
pub const STRATEGY_MATCHER: &str = "ensemble";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResolveError {
    #[error("no matcher workloads supplied")]
    NoMatchers,
    #[error("matcher `{0}` appears twice")]
    DuplicateMatcher(String),
    #[error("workloads of `{0}` and `{1}` cover different test pairs")]
    MismatchedWorkloads(String, String),
    #[error("no groups to resolve")]
    NoGroups,
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("unknown matcher `{0}`")]
    UnknownMatcher(String),
    #[error("group `{0}` has no matcher with a defined {1} value")]
    NoMatcherForGroup(String, Measure),
    #[error("{measure} is undefined for group `{group}` under matcher `{matcher}`")]
    Undefined {
        group: String,
        matcher: String,
        measure: Measure,
    },
    #[error("assignment does not cover group `{0}`")]
    MissingGroup(String),
    #[error("cap must be at least 1")]
    ZeroCap,
    #[error(transparent)]
    Audit(#[from] AuditError),
}

fn default_measure() -> Measure {
    Measure::AccuracyParity
}
fn default_mode() -> DisparityMode {
    DisparityMode::Subtraction
}
fn default_cap() -> usize {
    DEFAULT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    #[serde(default = "default_measure")]
    pub measure: Measure,
    #[serde(default = "default_mode")]
    pub mode: DisparityMode,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Focus group reported per point.
    #[serde(default)]
    pub target_group: Option<String>,
    #[serde(default)]
    pub seed: u64,
    /// Groups to assign; every single-paradigm group with support when
    /// absent.
    #[serde(default)]
    pub groups: Option<Vec<String>>,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        Self {
            measure: default_measure(),
            mode: default_mode(),
            cap: DEFAULT_CAP,
            target_group: None,
            seed: 0,
            groups: None,
        }
    }
}

impl ResolutionConfig {
    pub fn orientation(&self) -> Orientation {
        self.measure.orientation()
    }
}

/// `values[g][m]`: measure value of group `g` under matcher `m`. Matchers
/// are sorted by id, groups by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTable {
    pub measure: Measure,
    pub groups: Vec<String>,
    pub matchers: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<ConfusionCounts>>,
    /// Legitimate correspondences per group (identical across matchers).
    pub supports: Vec<u64>,
}

impl PerformanceTable {
    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }

    pub fn matcher_index(&self, id: &str) -> Option<usize> {
        self.matchers.iter().position(|m| m == id)
    }

    /// Matchers with a defined value, per group.
    pub fn allowed(&self) -> Vec<Vec<usize>> {
        self.values
            .iter()
            .map(|row| (0..row.len()).filter(|&m| row[m].is_some()).collect())
            .collect()
    }
}

/// Measure value of `key` (single paradigm) in `workload`.
pub fn per_group_performance(
    workload: &Workload,
    key: GroupKey,
    measure: Measure,
    universe: usize,
) -> Result<Option<f64>, ResolveError> {
    Ok(measure.value(&group_confusion(workload, key, universe)?))
}

fn sorted_workloads(workloads: &[Workload]) -> Result<Vec<&Workload>, ResolveError> {
    if workloads.is_empty() {
        return Err(ResolveError::NoMatchers);
    }
    let mut sorted: Vec<&Workload> = workloads.iter().collect();
    sorted.sort_by(|a, b| a.matcher_id.cmp(&b.matcher_id));
    for w in sorted.windows(2) {
        if w[0].matcher_id == w[1].matcher_id {
            return Err(ResolveError::DuplicateMatcher(w[0].matcher_id.clone()));
        }
    }
    let ids = |w: &Workload| -> Vec<(String, String)> {
        let mut v: Vec<_> = w
            .correspondences
            .iter()
            .map(|c| (c.left_id.clone(), c.right_id.clone()))
            .collect();
        v.sort();
        v
    };
    let first = ids(sorted[0]);
    for w in &sorted[1..] {
        if ids(w) != first {
            return Err(ResolveError::MismatchedWorkloads(
                sorted[0].matcher_id.clone(),
                w.matcher_id.clone(),
            ));
        }
    }
    Ok(sorted)
}

pub fn performance_table(
    workloads: &[Workload],
    groups: &GroupIndex,
    config: &ResolutionConfig,
) -> Result<PerformanceTable, ResolveError> {
    let sorted = sorted_workloads(workloads)?;
    let group_idx: Vec<usize> = match &config.groups {
        Some(names) => {
            let mut idx = names
                .iter()
                .map(|n| groups.index_of(n).ok_or_else(|| ResolveError::UnknownGroup(n.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            idx.sort();
            idx.dedup();
            idx
        }
        None => (0..groups.len())
            .filter(|&g| {
                sorted[0]
                    .correspondences
                    .iter()
                    .any(|c| c.left.contains(g) || c.right.contains(g))
            })
            .collect(),
    };
    if group_idx.is_empty() {
        return Err(ResolveError::NoGroups);
    }
    let mut values = Vec::new();
    let mut counts = Vec::new();
    let mut supports = Vec::new();
    for &g in &group_idx {
        let row: Vec<ConfusionCounts> = sorted
            .iter()
            .map(|w| group_confusion(w, GroupKey::Single(g), groups.len()))
            .collect::<Result<_, _>>()?;
        supports.push(row[0].total());
        values.push(row.iter().map(|c| config.measure.value(c)).collect());
        counts.push(row);
    }
    Ok(PerformanceTable {
        measure: config.measure,
        groups: group_idx.iter().map(|&g| groups.name(g).to_string()).collect(),
        matchers: sorted.iter().map(|w| w.matcher_id.clone()).collect(),
        values,
        counts,
        supports,
    })
}

/// `a` strictly better than `b` under the orientation.
fn better(o: Orientation, a: f64, b: f64) -> bool {
    match o {
        Orientation::HigherBetter => a > b,
        Orientation::LowerBetter => a < b,
    }
}

/// Per-group best matcher; ties go to the lexicographically smallest id.
pub fn best_per_group(table: &PerformanceTable) -> Result<Vec<usize>, ResolveError> {
    let o = table.measure.orientation();
    table
        .values
        .iter()
        .enumerate()
        .map(|(g, row)| {
            let mut best: Option<(usize, f64)> = None;
            for (m, v) in row.iter().enumerate() {
                if let Some(v) = *v {
                    if best.is_none_or(|(_, b)| better(o, v, b)) {
                        best = Some((m, v));
                    }
                }
            }
            best.map(|(m, _)| m)
                .ok_or_else(|| ResolveError::NoMatcherForGroup(table.groups[g].clone(), table.measure))
        })
        .collect()
}

/// `base^exp` with an overflow guard.
pub fn checked_pow(base: usize, exp: usize) -> Option<u128> {
    let mut acc: u128 = 1;
    for _ in 0..exp {
        acc = acc.checked_mul(base as u128)?;
    }
    Some(acc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSize {
    pub groups: usize,
    pub matchers: usize,
    /// Total maps from groups to matchers, `m^k`; `None` on overflow.
    pub total_maps: Option<u128>,
    /// `k^m`, the count as literally written in the source formulation.
    pub k_pow_m: Option<u128>,
    /// Assignments using only defined (group, matcher) values.
    pub feasible: Option<u128>,
    pub enumerated: usize,
    pub sampled: bool,
}

/// Assignments over `allowed`: all of them when the feasible space fits in
/// `cap`, otherwise the constants, `best`, and seeded random distinct
/// assignments up to `cap`.
pub fn enumerate_assignments(
    allowed: &[Vec<usize>],
    matchers: usize,
    best: &[usize],
    cap: usize,
    seed: u64,
) -> Result<(Vec<Vec<usize>>, bool), ResolveError> {
    if cap == 0 {
        return Err(ResolveError::ZeroCap);
    }
    let feasible = allowed
        .iter()
        .try_fold(1u128, |acc, a| acc.checked_mul(a.len() as u128));
    if feasible.is_some_and(|n| n <= cap as u128) {
        let n = feasible.unwrap_or(0) as usize;
        let mut out = Vec::with_capacity(n);
        let mut digits = vec![0usize; allowed.len()];
        for _ in 0..n {
            out.push(digits.iter().zip(allowed).map(|(&d, a)| a[d]).collect());
            for pos in (0..digits.len()).rev() {
                digits[pos] += 1;
                if digits[pos] < allowed[pos].len() {
                    break;
                }
                digits[pos] = 0;
            }
        }
        return Ok((out, false));
    }

    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    for m in 0..matchers {
        if allowed.iter().all(|a| a.contains(&m)) {
            seen.insert(vec![m; allowed.len()]);
        }
    }
    seen.insert(best.to_vec());
    let mut r = rng::stream(seed, streams::ENUMERATION);
    while seen.len() < cap {
        let a: Vec<usize> = allowed.iter().map(|a| a[r.random_range(0..a.len())]).collect();
        seen.insert(a);
    }
    Ok((seen.into_iter().collect(), true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPerformance {
    pub group: String,
    pub matcher: String,
    pub value: f64,
    pub support: u64,
    /// Disparity of this group against the assignment's reference value.
    pub disparity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentScore {
    pub assignment: BTreeMap<String, String>,
    #[serde(rename = "F")]
    pub unfairness: f64,
    #[serde(rename = "A")]
    pub worst_performance: f64,
    pub reference: f64,
    pub per_group: Vec<GroupPerformance>,
    /// The target group's row when a target is configured.
    pub target: Option<GroupPerformance>,
    #[serde(skip)]
    pub indices: Vec<usize>,
}

/// Scores one assignment (`assignment[g]` is a matcher index).
pub fn score_assignment(
    assignment: &[usize],
    table: &PerformanceTable,
    config: &ResolutionConfig,
) -> Result<AssignmentScore, ResolveError> {
    let o = table.measure.orientation();
    let mut v = Vec::with_capacity(assignment.len());
    for (g, &m) in assignment.iter().enumerate() {
        v.push(table.values[g][m].ok_or_else(|| ResolveError::Undefined {
            group: table.groups[g].clone(),
            matcher: table.matchers[m].clone(),
            measure: table.measure,
        })?);
    }
    let worst = v.iter().copied().fold(v[0], |acc, x| if better(o, acc, x) { x } else { acc });
    let total: u64 = table.supports.iter().sum();
    let reference = if total > 0 {
        v.iter().zip(&table.supports).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    };
    let homogeneous = v.iter().all(|&x| x == v[0]);
    let disparities: Vec<f64> = v
        .iter()
        .map(|&x| {
            if homogeneous {
                0.0
            } else {
                table.measure.disparity(reference, x, config.mode).unwrap_or(0.0).clamp(0.0, 1.0)
            }
        })
        .collect();
    let unfairness = disparities.iter().copied().fold(0.0, f64::max);
    let per_group: Vec<GroupPerformance> = assignment
        .iter()
        .enumerate()
        .map(|(g, &m)| GroupPerformance {
            group: table.groups[g].clone(),
            matcher: table.matchers[m].clone(),
            value: v[g],
            support: table.supports[g],
            disparity: disparities[g],
        })
        .collect();
    let target = config
        .target_group
        .as_ref()
        .and_then(|t| per_group.iter().find(|p| &p.group == t).cloned());
    Ok(AssignmentScore {
        assignment: per_group.iter().map(|p| (p.group.clone(), p.matcher.clone())).collect(),
        unfairness,
        worst_performance: worst,
        reference,
        per_group,
        target,
        indices: assignment.to_vec(),
    })
}

/// `p` dominates `q`: no worse on both axes, strictly better on one.
pub fn dominates(p: &AssignmentScore, q: &AssignmentScore, o: Orientation) -> bool {
    let a_ge = !better(o, q.worst_performance, p.worst_performance);
    p.unfairness <= q.unfairness
        && a_ge
        && (p.unfairness < q.unfairness || better(o, p.worst_performance, q.worst_performance))
}

/// Indices of the non-dominated points, sorted by `F` ascending; equal
/// `(F, A)` points keep the lexicographically smallest assignment.
pub fn pareto_indices(scores: &[AssignmentScore], o: Orientation) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        let (p, q) = (&scores[i], &scores[j]);
        p.unfairness
            .total_cmp(&q.unfairness)
            .then_with(|| match o {
                Orientation::HigherBetter => q.worst_performance.total_cmp(&p.worst_performance),
                Orientation::LowerBetter => p.worst_performance.total_cmp(&q.worst_performance),
            })
            .then_with(|| p.indices.cmp(&q.indices))
    });
    let mut out: Vec<usize> = Vec::new();
    for i in order {
        let keep = match out.last() {
            None => true,
            Some(&last) => better(o, scores[i].worst_performance, scores[last].worst_performance),
        };
        if keep {
            out.push(i);
        }
    }
    out
}

pub fn pareto_frontier(scores: &[AssignmentScore], o: Orientation) -> Vec<AssignmentScore> {
    pareto_indices(scores, o).into_iter().map(|i| scores[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub group: String,
    pub matcher: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub config: ResolutionConfig,
    pub table: PerformanceTable,
    pub space: SpaceSize,
    pub excluded: Vec<Exclusion>,
    pub points: Vec<AssignmentScore>,
    pub frontier_indices: Vec<usize>,
    pub best_per_group_index: usize,
}

impl Resolution {
    pub fn frontier(&self) -> impl Iterator<Item = &AssignmentScore> {
        self.frontier_indices.iter().map(|&i| &self.points[i])
    }

    pub fn best_per_group(&self) -> &AssignmentScore {
        &self.points[self.best_per_group_index]
    }
}

pub fn resolve(
    workloads: &[Workload],
    groups: &GroupIndex,
    config: &ResolutionConfig,
) -> Result<Resolution, ResolveError> {
    if config.cap == 0 {
        return Err(ResolveError::ZeroCap);
    }
    let table = performance_table(workloads, groups, config)?;
    let allowed = table.allowed();
    let mut excluded = Vec::new();
    for (g, row) in table.values.iter().enumerate() {
        for (m, v) in row.iter().enumerate() {
            if v.is_none() {
                excluded.push(Exclusion {
                    group: table.groups[g].clone(),
                    matcher: table.matchers[m].clone(),
                    reason: alloc::format!("{} undefined", table.measure),
                });
            }
        }
    }
    let best = best_per_group(&table)?;
    let (assignments, sampled) =
        enumerate_assignments(&allowed, table.matchers.len(), &best, config.cap, config.seed)?;
    let points = assignments
        .iter()
        .map(|a| score_assignment(a, &table, config))
        .collect::<Result<Vec<_>, _>>()?;
    let frontier_indices = pareto_indices(&points, table.measure.orientation());
    let best_per_group_index = assignments
        .iter()
        .position(|a| *a == best)
        .expect("enumeration always contains best_per_group");
    let (k, m) = (table.groups.len(), table.matchers.len());
    let space = SpaceSize {
        groups: k,
        matchers: m,
        total_maps: checked_pow(m, k),
        k_pow_m: checked_pow(k, m),
        feasible: allowed.iter().try_fold(1u128, |acc, a| acc.checked_mul(a.len() as u128)),
        enumerated: points.len(),
        sampled,
    };
    Ok(Resolution {
        config: config.clone(),
        table,
        space,
        excluded,
        points,
        frontier_indices,
        best_per_group_index,
    })
}

/// Re-audits an assignment (group name to matcher id) under the single
/// paradigm: each group's counts come from its assigned matcher and the
/// overall value pools the assigned group counts.
pub fn audit_strategy(
    assignment: &BTreeMap<String, String>,
    workloads: &[Workload],
    groups: &GroupIndex,
    config: &AuditConfig,
) -> Result<AuditReport, ResolveError> {
    if assignment.is_empty() {
        return Err(ResolveError::NoGroups);
    }
    let by_id: BTreeMap<&str, &Workload> = workloads.iter().map(|w| (w.matcher_id.as_str(), w)).collect();
    let mut counts = BTreeMap::new();
    for (group, matcher) in assignment {
        let g = groups.index_of(group).ok_or_else(|| ResolveError::UnknownGroup(group.clone()))?;
        let w = by_id
            .get(matcher.as_str())
            .ok_or_else(|| ResolveError::UnknownMatcher(matcher.clone()))?;
        let key = GroupKey::Single(g);
        counts.insert(key, group_confusion(w, key, groups.len())?);
    }
    let pooled: ConfusionCounts = counts.values().copied().sum();
    let config = AuditConfig {
        paradigm: Paradigm::Single,
        ..config.clone()
    };
    config.validate()?;
    Ok(report_from_counts(STRATEGY_MATCHER, &counts, &pooled, &config, groups))
}

/// Checks that `assignment` covers exactly the groups of `table` with known
/// matchers and returns it as matcher indices.
pub fn assignment_indices(
    assignment: &BTreeMap<String, String>,
    table: &PerformanceTable,
) -> Result<Vec<usize>, ResolveError> {
    for g in assignment.keys() {
        if table.group_index(g).is_none() {
            return Err(ResolveError::UnknownGroup(g.clone()));
        }
    }
    table
        .groups
        .iter()
        .map(|g| {
            let m = assignment.get(g).ok_or_else(|| ResolveError::MissingGroup(g.clone()))?;
            table.matcher_index(m).ok_or_else(|| ResolveError::UnknownMatcher(m.clone()))
        })
        .collect()
}
