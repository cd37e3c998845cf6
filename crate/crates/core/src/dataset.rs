//! Entity tables, labeled pair splits and the stratified splitter.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("table `{table}`: duplicate entity id `{id}`")]
    DuplicateEntity { table: String, id: String },
    #[error("table `{table}`: row `{id}` has {found} attributes, schema has {expected}")]
    Arity {
        table: String,
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("{split} split: pair ({left_id}, {right_id}) references unknown {side} id")]
    DanglingReference {
        split: SplitTag,
        left_id: String,
        right_id: String,
        side: &'static str,
    },
    #[error("{split} split: duplicate pair ({left_id}, {right_id})")]
    DuplicatePair {
        split: SplitTag,
        left_id: String,
        right_id: String,
    },
    #[error("cannot split an empty pair list")]
    EmptyPairs,
    #[error("split ratios must be non-negative and sum to 1 (got {0:?})")]
    InvalidRatios([f64; 3]),
}

/// One entity: its id and the attribute values in schema order.
/// `None` marks a null (empty) value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub values: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityTable {
    pub table_id: String,
    /// Attribute names, excluding the leading `id` column.
    pub schema: Vec<String>,
    rows: Vec<Record>,
    index: BTreeMap<String, usize>,
}

impl EntityTable {
    pub fn new(table_id: impl Into<String>, schema: Vec<String>) -> Self {
        Self {
            table_id: table_id.into(),
            schema,
            rows: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, record: Record) -> Result<(), DatasetError> {
        if record.values.len() != self.schema.len() {
            return Err(DatasetError::Arity {
                table: self.table_id.clone(),
                id: record.id,
                expected: self.schema.len(),
                found: record.values.len(),
            });
        }
        if self.index.contains_key(&record.id) {
            return Err(DatasetError::DuplicateEntity {
                table: self.table_id.clone(),
                id: record.id,
            });
        }
        self.index.insert(record.id.clone(), self.rows.len());
        self.rows.push(record);
        Ok(())
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a == name)
    }

    pub fn value(&self, id: &str, attribute: &str) -> Option<&str> {
        let col = self.attribute_index(attribute)?;
        self.get(id)?.values[col].as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Valid, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Valid => "valid",
            SplitTag::Test => "test",
        }
    }
}

impl core::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub left_id: String,
    pub right_id: String,
    /// `true` for a match.
    pub label: bool,
}

impl LabeledPair {
    pub fn new(left_id: impl Into<String>, right_id: impl Into<String>, label: bool) -> Self {
        Self {
            left_id: left_id.into(),
            right_id: right_id.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPairSet {
    pub split: SplitTag,
    pub pairs: Vec<LabeledPair>,
}

impl LabeledPairSet {
    pub fn new(split: SplitTag, pairs: Vec<LabeledPair>) -> Self {
        Self { split, pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn match_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.label).count()
    }
}

/// Two tables plus the train/valid/test splits. Group encodings are kept
/// separately in a [`crate::GroupIndex`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub left: EntityTable,
    pub right: EntityTable,
    pub train: LabeledPairSet,
    pub valid: LabeledPairSet,
    pub test: LabeledPairSet,
}

impl Dataset {
    /// Checks that every pair resolves in both tables and that no split
    /// repeats a pair.
    pub fn new(
        left: EntityTable,
        right: EntityTable,
        train: LabeledPairSet,
        valid: LabeledPairSet,
        test: LabeledPairSet,
    ) -> Result<Self, DatasetError> {
        for set in [&train, &valid, &test] {
            let mut seen = BTreeSet::new();
            for p in &set.pairs {
                for (side, table, id) in [("left", &left, &p.left_id), ("right", &right, &p.right_id)] {
                    if !table.contains(id) {
                        return Err(DatasetError::DanglingReference {
                            split: set.split,
                            left_id: p.left_id.clone(),
                            right_id: p.right_id.clone(),
                            side,
                        });
                    }
                }
                if !seen.insert((&p.left_id, &p.right_id)) {
                    return Err(DatasetError::DuplicatePair {
                        split: set.split,
                        left_id: p.left_id.clone(),
                        right_id: p.right_id.clone(),
                    });
                }
            }
        }
        Ok(Self {
            left,
            right,
            train,
            valid,
            test,
        })
    }

    pub fn split(&self, tag: SplitTag) -> &LabeledPairSet {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Valid => &self.valid,
            SplitTag::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitOutcome {
    pub train: LabeledPairSet,
    pub valid: LabeledPairSet,
    pub test: LabeledPairSet,
    pub warnings: Vec<String>,
}

/// Stratified, seeded split of `all` into train/valid/test.
///
/// Split sizes come from largest-remainder rounding of `n * ratio`; each
/// split then receives `size * matches / n` matches, again rounded by
/// largest remainder, so every split's match count is within one pair of
/// the global match fraction. Within a split, pairs keep their input order.
pub fn split_pairs(
    all: &[LabeledPair],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitOutcome, DatasetError> {
    if all.is_empty() {
        return Err(DatasetError::EmptyPairs);
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || libm::fabs(sum - 1.0) > 1e-9 {
        return Err(DatasetError::InvalidRatios(ratios));
    }

    let n = all.len();
    let sizes = largest_remainder(n, &ratios.map(|r| r * n as f64));
    let (mut matches, mut non_matches): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| all[i].label);
    let m = matches.len();
    let match_targets = sizes.map(|s| s as f64 * m as f64 / n as f64);
    let match_counts = largest_remainder(m, &match_targets);

    let mut rng = rng::stream(seed, rng::streams::SPLIT);
    matches.shuffle(&mut rng);
    non_matches.shuffle(&mut rng);

    let mut assigned: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let (mut mi, mut ni) = (0, 0);
    for s in 0..3 {
        let mc = match_counts[s];
        let nc = sizes[s] - mc;
        assigned[s].extend_from_slice(&matches[mi..mi + mc]);
        assigned[s].extend_from_slice(&non_matches[ni..ni + nc]);
        mi += mc;
        ni += nc;
        assigned[s].sort_unstable();
    }

    let mut warnings = Vec::new();
    if sizes[0] == 0 {
        warnings.push(format!("ratio {} produces an empty train split", ratios[0]));
    }
    let take = |idx: &[usize], tag| {
        LabeledPairSet::new(tag, idx.iter().map(|&i| all[i].clone()).collect())
    };
    Ok(SplitOutcome {
        train: take(&assigned[0], SplitTag::Train),
        valid: take(&assigned[1], SplitTag::Valid),
        test: take(&assigned[2], SplitTag::Test),
        warnings,
    })
}

/// Rounds `targets` (which sum to `total`) to integers summing to `total`,
/// handing the leftover units to the largest fractional parts (earliest
/// index wins ties).
fn largest_remainder(total: usize, targets: &[f64; 3]) -> [usize; 3] {
    let mut out = targets.map(|t| libm::floor(t + 1e-9).max(0.0) as usize);
    let assigned: usize = out.iter().sum();
    let mut leftover = total.saturating_sub(assigned);
    let mut order = [0usize, 1, 2];
    let frac = |i: usize| targets[i] - out[i] as f64;
    order.sort_by(|&a, &b| frac(b).partial_cmp(&frac(a)).unwrap_or(core::cmp::Ordering::Equal));
    let any_positive = targets.iter().any(|&t| t > 0.0);
    for &i in order.iter().cycle() {
        if leftover == 0 || !any_positive {
            break;
        }
        if targets[i] > 0.0 {
            out[i] += 1;
            leftover -= 1;
        }
    }
    // the floor-with-slack can overshoot by rounding noise; pull it back
    let mut excess = out.iter().sum::<usize>().saturating_sub(total);
    for i in (0..3).rev() {
        while excess > 0 && out[i] > 0 {
            out[i] -= 1;
            excess -= 1;
        }
    }
    out
}
