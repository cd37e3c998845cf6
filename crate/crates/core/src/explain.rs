//! Explanations of one (group, measure) finding: subgroup breakdown,
//! confusion-cell driver, training representation and sampled examples.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{evaluate_group, group_confusion, pooled_counts, Annotation, AuditConfig, AuditError, Workload};
use crate::dataset::{Dataset, EntityTable, LabeledPairSet, SplitTag};
use crate::groups::{is_legitimate, GroupError, GroupIndex, GroupKey, GroupLabel, Paradigm};
use crate::measure::{Cell, ConfusionCounts, Measure};
use crate::rng::{self, streams};

pub const DEFAULT_SAMPLE_SIZE: usize = 5;
pub const NO_DESCENDANTS: &str = "no descendants";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("group `{group}` belongs to the {actual} paradigm, query asked for {requested}")]
    ParadigmMismatch {
        group: String,
        requested: &'static str,
        actual: &'static str,
    },
    #[error("{measure} is undefined for group `{group}`")]
    UndefinedMeasure { measure: Measure, group: String },
    #[error("the {0} split is empty")]
    EmptySplit(SplitTag),
}

fn default_sample_size() -> usize {
    DEFAULT_SAMPLE_SIZE
}

fn default_split() -> SplitTag {
    SplitTag::Train
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationQuery {
    pub matcher_id: String,
    pub group: GroupLabel,
    pub measure: Measure,
    #[serde(default = "default_paradigm")]
    pub paradigm: Paradigm,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Split the representation shares are computed over.
    #[serde(default = "default_split")]
    pub split: SplitTag,
}

fn default_paradigm() -> Paradigm {
    Paradigm::Single
}

impl ExplanationQuery {
    pub fn new(matcher_id: impl Into<String>, group: GroupLabel, measure: Measure) -> Self {
        Self {
            matcher_id: matcher_id.into(),
            group,
            measure,
            paradigm: Paradigm::Single,
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
            split: SplitTag::Train,
        }
    }

    /// Resolves the group label against `groups` and checks the paradigm.
    pub fn key(&self, groups: &GroupIndex) -> Result<GroupKey, ExplainError> {
        let key = groups.key(&self.group)?;
        if key.paradigm() != self.paradigm {
            return Err(ExplainError::ParadigmMismatch {
                group: self.group.to_string(),
                requested: self.paradigm.as_str(),
                actual: key.paradigm().as_str(),
            });
        }
        Ok(key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub subgroup: GroupLabel,
    pub group_value: Option<f64>,
    pub disparity: Option<f64>,
    pub unfair: bool,
    pub support: u64,
    pub low_support: bool,
    pub annotation: Option<Annotation>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgroupBreakdown {
    pub children: Vec<SubgroupRow>,
    pub reason: Option<String>,
}

/// Every transitive descendant of `index` in the hierarchy.
pub fn descendants(groups: &GroupIndex, index: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut stack = groups.children(index);
    while let Some(c) = stack.pop() {
        if out.insert(c) {
            stack.extend(groups.children(c));
        }
    }
    out
}

/// Descendant keys of `key`. A pair's descendants refine one or both
/// members.
pub fn descendant_keys(groups: &GroupIndex, key: GroupKey) -> BTreeSet<GroupKey> {
    match key {
        GroupKey::Single(g) => descendants(groups, g).into_iter().map(GroupKey::Single).collect(),
        GroupKey::Pair(a, b) => {
            let with_self = |g: usize| {
                let mut d = descendants(groups, g);
                d.insert(g);
                d
            };
            let (da, db) = (with_self(a), with_self(b));
            let mut out = BTreeSet::new();
            for &x in &da {
                for &y in &db {
                    out.insert(GroupKey::pair(x, y));
                }
            }
            out.remove(&key);
            out
        }
    }
}

pub fn explain_subgroups(
    query: &ExplanationQuery,
    workload: &Workload,
    groups: &GroupIndex,
    config: &AuditConfig,
) -> Result<SubgroupBreakdown, ExplainError> {
    let key = query.key(groups)?;
    let keys = descendant_keys(groups, key);
    if keys.is_empty() {
        return Ok(SubgroupBreakdown {
            children: Vec::new(),
            reason: Some(NO_DESCENDANTS.to_string()),
        });
    }
    let overall = query.measure.value(&pooled_counts(workload));
    let mut children = Vec::new();
    for k in keys {
        let c = group_confusion(workload, k, groups.len())?;
        let ev = evaluate_group(
            &c,
            overall,
            query.measure,
            config.mode,
            config.fairness_threshold,
            config.min_support,
        );
        children.push(SubgroupRow {
            subgroup: groups.label(k),
            group_value: ev.group_value,
            disparity: ev.disparity,
            unfair: ev.unfair,
            support: c.total(),
            low_support: c.total() < config.min_support,
            annotation: ev.annotation,
        });
    }
    children.sort_by(|a, b| a.subgroup.cmp(&b.subgroup));
    Ok(SubgroupBreakdown {
        children,
        reason: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub ppv: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Rates {
    pub fn of(c: &ConfusionCounts) -> Self {
        Self {
            tpr: c.tpr(),
            fpr: c.fpr(),
            ppv: c.ppv(),
            accuracy: c.accuracy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    pub cell: Cell,
    /// Disparity with `cell` zeroed; `None` when it becomes undefined.
    pub disparity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureBreakdown {
    pub cells: ConfusionCounts,
    pub rates: Rates,
    pub overall_cells: ConfusionCounts,
    pub overall_rates: Rates,
    pub group_value: f64,
    pub overall_value: Option<f64>,
    pub disparity: Option<f64>,
    pub counterfactuals: Vec<Counterfactual>,
    /// Cell whose zeroing reduces the disparity most; `None` when no cell
    /// reduces it.
    pub driver: Option<Cell>,
}

/// Confusion cells and rates of a group, with the dominant driver cell.
pub fn explain_measure(
    counts: &ConfusionCounts,
    overall: &ConfusionCounts,
    measure: Measure,
    config: &AuditConfig,
    group: &GroupLabel,
) -> Result<MeasureBreakdown, ExplainError> {
    let group_value = measure.value(counts).ok_or_else(|| ExplainError::UndefinedMeasure {
        measure,
        group: group.to_string(),
    })?;
    let overall_value = measure.value(overall);
    let disp = |c: &ConfusionCounts| {
        let (g, o) = (measure.value(c)?, overall_value?);
        measure.disparity(o, g, config.mode)
    };
    let disparity = disp(counts);
    let counterfactuals: Vec<Counterfactual> = Cell::ALL
        .iter()
        .map(|&cell| Counterfactual {
            cell,
            disparity: disp(&counts.with_cell_zeroed(cell)),
        })
        .collect();
    let mut driver: Option<(Cell, f64)> = None;
    if let Some(d) = disparity {
        for cf in &counterfactuals {
            if let Some(x) = cf.disparity {
                if x < d && driver.is_none_or(|(_, best)| x < best) {
                    driver = Some((cf.cell, x));
                }
            }
        }
    }
    Ok(MeasureBreakdown {
        cells: *counts,
        rates: Rates::of(counts),
        overall_cells: *overall,
        overall_rates: Rates::of(overall),
        group_value,
        overall_value,
        disparity,
        counterfactuals,
        driver: driver.map(|(c, _)| c),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub split: SplitTag,
    pub entities: usize,
    pub group_entities: usize,
    pub pairs: usize,
    pub group_pairs: usize,
    pub matches: usize,
    pub group_matches: usize,
    pub non_matches: usize,
    pub group_non_matches: usize,
    pub entity_share: f64,
    pub pair_share: f64,
    /// Share among `y = match` pairs; `None` when the split has none.
    pub match_share: Option<f64>,
    pub non_match_share: Option<f64>,
}

/// Shares of `key` among the entities and pairs of one split. Entities are
/// the distinct (side, id) references of the split; a pair belongs to the
/// group when the group is legitimate for it.
pub fn explain_representation(
    key: GroupKey,
    pairs: &LabeledPairSet,
    groups: &GroupIndex,
) -> Result<RepresentationReport, ExplainError> {
    if pairs.is_empty() {
        return Err(ExplainError::EmptySplit(pairs.split));
    }
    let members: Vec<usize> = match key {
        GroupKey::Single(g) => alloc::vec![g],
        GroupKey::Pair(a, b) => alloc::vec![a, b],
    };
    let encoding = |left: bool, id: &str| {
        groups.encoding(left, id).ok_or_else(|| AuditError::MissingEncoding {
            side: if left { "left" } else { "right" },
            id: id.to_string(),
        })
    };
    let mut entities: BTreeSet<(bool, &str)> = BTreeSet::new();
    let (mut group_pairs, mut matches, mut group_matches) = (0, 0, 0);
    for p in &pairs.pairs {
        entities.insert((true, &p.left_id));
        entities.insert((false, &p.right_id));
        let legit = is_legitimate(encoding(true, &p.left_id)?, encoding(false, &p.right_id)?, key);
        group_pairs += usize::from(legit);
        if p.label {
            matches += 1;
            group_matches += usize::from(legit);
        }
    }
    let mut group_entities = 0;
    for &(left, id) in &entities {
        let e = encoding(left, id)?;
        group_entities += usize::from(members.iter().any(|&g| e.contains(g)));
    }
    let share = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let n = pairs.len();
    let non_matches = n - matches;
    let group_non_matches = group_pairs - group_matches;
    Ok(RepresentationReport {
        split: pairs.split,
        entities: entities.len(),
        group_entities,
        pairs: n,
        group_pairs,
        matches,
        group_matches,
        non_matches,
        group_non_matches,
        entity_share: group_entities as f64 / entities.len() as f64,
        pair_share: group_pairs as f64 / n as f64,
        match_share: share(group_matches, matches),
        non_match_share: share(group_non_matches, non_matches),
    })
}

/// Error cells reviewed for a measure, in priority order. Statistical
/// parity draws from false negatives first, then false positives.
pub fn error_cells(measure: Measure) -> &'static [Cell] {
    match measure {
        Measure::Tprp => &[Cell::Fn],
        Measure::Ppvp | Measure::Fprp => &[Cell::Fp],
        Measure::StatisticalParity => &[Cell::Fn, Cell::Fp],
        Measure::AccuracyParity => &[Cell::Fn, Cell::Fp],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub left_id: String,
    pub right_id: String,
    pub left: BTreeMap<String, Option<String>>,
    pub right: BTreeMap<String, Option<String>>,
    pub score: f64,
    pub predicted: bool,
    pub truth: bool,
    pub cell: Cell,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub cells: Vec<Cell>,
    /// Legitimate correspondences in the error cells.
    pub candidates: usize,
    pub examples: Vec<Example>,
    pub annotation: Option<String>,
}

fn attributes(table: &EntityTable, id: &str) -> BTreeMap<String, Option<String>> {
    match table.get(id) {
        Some(r) => table.schema.iter().cloned().zip(r.values.iter().cloned()).collect(),
        None => BTreeMap::new(),
    }
}

/// Samples up to `query.sample_size` legitimate correspondences from the
/// measure's error cells, without replacement. Accuracy parity samples
/// uniformly over FN and FP together; statistical parity fills from FN and
/// tops up from FP.
pub fn explain_examples(
    query: &ExplanationQuery,
    workload: &Workload,
    groups: &GroupIndex,
    left: &EntityTable,
    right: &EntityTable,
) -> Result<ExampleSet, ExplainError> {
    let key = query.key(groups)?;
    let cells = error_cells(query.measure);
    let in_cells = |c: &crate::audit::Correspondence, wanted: &[Cell]| {
        is_legitimate(&c.left, &c.right, key) && wanted.contains(&Cell::of(c.predicted, c.truth))
    };
    let tiers: Vec<Vec<usize>> = match query.measure {
        Measure::StatisticalParity => cells
            .iter()
            .map(|cell| {
                (0..workload.len())
                    .filter(|&i| in_cells(&workload.correspondences[i], &[*cell]))
                    .collect()
            })
            .collect(),
        _ => alloc::vec![(0..workload.len())
            .filter(|&i| in_cells(&workload.correspondences[i], cells))
            .collect()],
    };
    let candidates = tiers.iter().map(Vec::len).sum();
    let mut r = rng::stream(query.seed, streams::EXAMPLES);
    let mut chosen = Vec::new();
    for tier in tiers {
        let room = query.sample_size - chosen.len();
        if room == 0 {
            break;
        }
        chosen.extend(sample_without_replacement(&mut r, tier, room));
    }
    let examples = chosen
        .into_iter()
        .map(|i| {
            let c = &workload.correspondences[i];
            Example {
                left_id: c.left_id.clone(),
                right_id: c.right_id.clone(),
                left: attributes(left, &c.left_id),
                right: attributes(right, &c.right_id),
                score: c.score,
                predicted: c.predicted,
                truth: c.truth,
                cell: Cell::of(c.predicted, c.truth),
            }
        })
        .collect();
    Ok(ExampleSet {
        cells: cells.to_vec(),
        candidates,
        examples,
        annotation: (candidates == 0).then(|| "error cell is empty".to_string()),
    })
}

/// Partial Fisher-Yates: `k` distinct items of `items` in draw order.
fn sample_without_replacement<R: rand::Rng>(r: &mut R, mut items: Vec<usize>, k: usize) -> Vec<usize> {
    let k = k.min(items.len());
    for i in 0..k {
        let j = r.random_range(i..items.len());
        items.swap(i, j);
    }
    items.truncate(k);
    items
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub query: ExplanationQuery,
    pub subgroup_breakdown: Vec<SubgroupRow>,
    pub subgroup_reason: Option<String>,
    pub measure_breakdown: MeasureBreakdown,
    pub representation: RepresentationReport,
    pub examples: Vec<Example>,
    pub examples_annotation: Option<String>,
}

/// All four explanation families for one query against one matcher's
/// workload.
pub fn explain(
    query: &ExplanationQuery,
    workload: &Workload,
    groups: &GroupIndex,
    dataset: &Dataset,
    config: &AuditConfig,
) -> Result<Explanation, ExplainError> {
    let key = query.key(groups)?;
    let subgroups = explain_subgroups(query, workload, groups, config)?;
    let counts = group_confusion(workload, key, groups.len())?;
    let measure = explain_measure(&counts, &pooled_counts(workload), query.measure, config, &query.group)?;
    let representation = explain_representation(key, dataset.split(query.split), groups)?;
    let examples = explain_examples(query, workload, groups, &dataset.left, &dataset.right)?;
    Ok(Explanation {
        query: query.clone(),
        subgroup_breakdown: subgroups.children,
        subgroup_reason: subgroups.reason,
        measure_breakdown: measure,
        representation,
        examples: examples.examples,
        examples_annotation: examples.annotation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> AuditConfig {
        AuditConfig::default()
    }

    #[test]
    fn tprp_driver_is_false_negatives() {
        let g = ConfusionCounts::new(5, 0, 5, 10);
        let overall = ConfusionCounts::new(90, 5, 10, 95);
        let m = explain_measure(&g, &overall, Measure::Tprp, &cfg(), &GroupLabel::parse("g")).unwrap();
        assert_eq!(m.driver, Some(Cell::Fn));
        let min = m.counterfactuals.iter().filter_map(|c| c.disparity).fold(f64::INFINITY, f64::min);
        assert_eq!(m.counterfactuals.iter().find(|c| c.cell == Cell::Fn).unwrap().disparity, Some(min));
    }

    #[test]
    fn accuracy_driver_is_false_positives() {
        let g = ConfusionCounts::new(5, 9, 1, 5);
        let overall = ConfusionCounts::new(100, 2, 3, 95);
        let m = explain_measure(&g, &overall, Measure::AccuracyParity, &cfg(), &GroupLabel::parse("g"))
            .unwrap();
        assert_eq!(m.driver, Some(Cell::Fp));
    }

    #[test]
    fn no_gap_no_driver() {
        let g = ConfusionCounts::new(5, 1, 5, 10);
        let m = explain_measure(&g, &g, Measure::Tprp, &cfg(), &GroupLabel::parse("g")).unwrap();
        assert_eq!(m.disparity, Some(0.0));
        assert_eq!(m.driver, None);
    }

    #[test]
    fn undefined_measure_errors() {
        let g = ConfusionCounts::new(0, 1, 0, 10);
        let e = explain_measure(&g, &g, Measure::Tprp, &cfg(), &GroupLabel::parse("g"));
        assert!(matches!(e, Err(ExplainError::UndefinedMeasure { .. })));
    }

    #[test]
    fn sampling_is_distinct_and_bounded() {
        let mut r = rng::stream(1, streams::EXAMPLES);
        let s = sample_without_replacement(&mut r, (0..10).collect(), 4);
        assert_eq!(s.len(), 4);
        assert_eq!(s.iter().collect::<BTreeSet<_>>().len(), 4);
        let mut r = rng::stream(1, streams::EXAMPLES);
        assert_eq!(sample_without_replacement(&mut r, (0..3).collect(), 9).len(), 3);
    }
}
