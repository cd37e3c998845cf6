//! Subgroup extraction from sensitive attributes and one-hot group
//! encodings.
//!
//! Values are normalized (trimmed, lower-cased). A missing value maps to the
//! `unknown` subgroup, so every entity has at least one bit set. Subgroup
//! indices follow the lexicographic order of canonical names.
//!
//! With an intersectional spec over several attributes, the universe holds
//! the cross product of observed values (`white-male`, ...) and, as parent
//! subgroups, every atomic value (`white`, `male`, ...). An entity carries
//! the bits of its intersections and of its atomic values.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{EntityTable, Record};

pub const UNKNOWN: &str = "unknown";
pub const DEFAULT_MAX_SUBGROUPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GroupError {
    #[error("no sensitive attributes given")]
    NoAttributes,
    #[error("sensitive attribute `{attribute}` is missing from table `{table}`")]
    MissingAttribute { attribute: String, table: String },
    #[error("set-valued attribute `{0}` needs a non-empty delimiter")]
    EmptyDelimiter(String),
    #[error("intersectional spec yields {count} subgroups, above the cap of {cap}")]
    TooManySubgroups { count: u128, cap: usize },
    #[error("subgroup name `{0}` is produced twice")]
    DuplicateSubgroup(String),
    #[error("unknown subgroup `{0}`")]
    UnknownGroup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttributeKind {
    SingleValued,
    SetValued { delimiter: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveAttribute {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

impl SensitiveAttribute {
    pub fn single(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::SingleValued,
        }
    }

    pub fn set_valued(name: impl Into<String>, delimiter: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: AttributeKind::SetValued {
                delimiter: delimiter.into(),
            },
        }
    }
}

fn default_cap() -> usize {
    DEFAULT_MAX_SUBGROUPS
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveAttributeSpec {
    pub attributes: Vec<SensitiveAttribute>,
    #[serde(default)]
    pub intersectional: bool,
    #[serde(default = "default_cap")]
    pub max_subgroups: usize,
}

impl SensitiveAttributeSpec {
    pub fn new(attributes: Vec<SensitiveAttribute>, intersectional: bool) -> Self {
        Self {
            attributes,
            intersectional,
            max_subgroups: DEFAULT_MAX_SUBGROUPS,
        }
    }

    /// Parses the compact CLI form: comma-separated attribute names, with
    /// `name[<delim>]` marking a set-valued attribute, e.g. `race,sex` or
    /// `citizenships[|]`.
    pub fn parse_compact(text: &str, intersectional: bool) -> Result<Self, GroupError> {
        let mut attributes = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match (part.find('['), part.ends_with(']')) {
                (Some(open), true) => {
                    let name = &part[..open];
                    let delimiter = &part[open + 1..part.len() - 1];
                    attributes.push(SensitiveAttribute::set_valued(name, delimiter));
                }
                _ => attributes.push(SensitiveAttribute::single(part)),
            }
        }
        let spec = Self::new(attributes, intersectional);
        spec.check_shape()?;
        Ok(spec)
    }

    fn check_shape(&self) -> Result<(), GroupError> {
        if self.attributes.is_empty() {
            return Err(GroupError::NoAttributes);
        }
        for a in &self.attributes {
            if let AttributeKind::SetValued { delimiter } = &a.kind {
                if delimiter.is_empty() {
                    return Err(GroupError::EmptyDelimiter(a.name.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self, tables: &[&EntityTable]) -> Result<(), GroupError> {
        self.check_shape()?;
        for a in &self.attributes {
            for t in tables {
                if t.attribute_index(&a.name).is_none() {
                    return Err(GroupError::MissingAttribute {
                        attribute: a.name.clone(),
                        table: t.table_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgroup {
    pub name: String,
    pub index: usize,
    /// Coarser subgroups this one refines (the atomic values of an
    /// intersection). Empty for atomic subgroups.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parents: Vec<String>,
}

/// Fixed-length bit vector; bit `i` set means membership in subgroup `i`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroupEncoding {
    len: usize,
    words: Vec<u64>,
}

impl GroupEncoding {
    pub fn new(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut e = Self::new(len);
        for i in indices {
            e.set(i);
        }
        e
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range for encoding of length {}", self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            core::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + bit)
            })
        })
    }

    pub fn intersects(&self, other: &GroupEncoding) -> bool {
        self.words.iter().zip(&other.words).any(|(a, b)| a & b != 0)
    }
}

/// Printed most-significant index first, so with two subgroups
/// `[female, male]` a male entity prints as `10`.
impl fmt::Display for GroupEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in (0..self.len).rev() {
            f.write_str(if self.contains(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for GroupEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GroupEncoding({self})")
    }
}

impl core::str::FromStr for GroupEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let len = s.len();
        let mut e = GroupEncoding::new(len);
        for (pos, c) in s.chars().enumerate() {
            match c {
                '1' => e.set(len - 1 - pos),
                '0' => {}
                other => return Err(format!("invalid bit `{other}`")),
            }
        }
        Ok(e)
    }
}

impl Serialize for GroupEncoding {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupEncoding {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Single,
    Pairwise,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Single => "single",
            Paradigm::Pairwise => "pairwise",
        }
    }
}

/// A subgroup (single paradigm) or an unordered subgroup pair (pairwise
/// paradigm, stored with the smaller index first).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKey {
    Single(usize),
    Pair(usize, usize),
}

impl GroupKey {
    pub fn pair(a: usize, b: usize) -> Self {
        GroupKey::Pair(a.min(b), a.max(b))
    }

    pub fn paradigm(self) -> Paradigm {
        match self {
            GroupKey::Single(_) => Paradigm::Single,
            GroupKey::Pair(..) => Paradigm::Pairwise,
        }
    }
}

/// Human-readable group reference used in reports: a subgroup name or a
/// sorted pair of names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GroupLabel {
    Single(String),
    Pair([String; 2]),
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupLabel::Single(s) => f.write_str(s),
            GroupLabel::Pair([a, b]) => write!(f, "{a}|{b}"),
        }
    }
}

impl GroupLabel {
    /// Parses `name` or `a|b`.
    pub fn parse(text: &str) -> Self {
        match text.split_once('|') {
            Some((a, b)) => {
                let (a, b) = (a.trim().to_string(), b.trim().to_string());
                if a <= b {
                    GroupLabel::Pair([a, b])
                } else {
                    GroupLabel::Pair([b, a])
                }
            }
            None => GroupLabel::Single(text.trim().to_string()),
        }
    }
}

/// Output of group extraction: the subgroup universe and an encoding for
/// every entity of both tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupIndex {
    pub subgroups: Vec<Subgroup>,
    pub left: BTreeMap<String, GroupEncoding>,
    pub right: BTreeMap<String, GroupEncoding>,
}

impl GroupIndex {
    pub fn len(&self) -> usize {
        self.subgroups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgroups.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.subgroups
            .binary_search_by(|s| s.name.as_str().cmp(name))
            .ok()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.subgroups[index].name
    }

    pub fn key(&self, label: &GroupLabel) -> Result<GroupKey, GroupError> {
        let find = |n: &String| self.index_of(n).ok_or_else(|| GroupError::UnknownGroup(n.clone()));
        Ok(match label {
            GroupLabel::Single(n) => GroupKey::Single(find(n)?),
            GroupLabel::Pair([a, b]) => GroupKey::pair(find(a)?, find(b)?),
        })
    }

    pub fn label(&self, key: GroupKey) -> GroupLabel {
        match key {
            GroupKey::Single(i) => GroupLabel::Single(self.name(i).to_string()),
            GroupKey::Pair(a, b) => {
                GroupLabel::Pair([self.name(a).to_string(), self.name(b).to_string()])
            }
        }
    }

    /// Subgroups whose parent list contains `index`.
    pub fn children(&self, index: usize) -> Vec<usize> {
        let name = self.name(index);
        self.subgroups
            .iter()
            .filter(|s| s.parents.iter().any(|p| p == name))
            .map(|s| s.index)
            .collect()
    }

    pub fn encoding(&self, left_side: bool, id: &str) -> Option<&GroupEncoding> {
        if left_side {
            self.left.get(id)
        } else {
            self.right.get(id)
        }
    }
}

pub fn normalize_value(raw: &str) -> String {
    raw.trim().to_lowercase()
}

/// Normalized value set of one attribute for one record.
fn attribute_values(record: &Record, col: usize, kind: &AttributeKind) -> Vec<String> {
    let mut out: Vec<String> = match record.values[col].as_deref() {
        None => Vec::new(),
        Some(raw) => match kind {
            AttributeKind::SingleValued => vec![normalize_value(raw)],
            AttributeKind::SetValued { delimiter } => {
                raw.split(delimiter.as_str()).map(normalize_value).collect()
            }
        },
    };
    out.retain(|v| !v.is_empty());
    out.sort();
    out.dedup();
    if out.is_empty() {
        out.push(UNKNOWN.to_string());
    }
    out
}

/// Builds the subgroup universe and the encodings of every entity in both
/// tables. The two tables' vocabularies are unioned.
pub fn extract_groups(
    left: &EntityTable,
    right: &EntityTable,
    spec: &SensitiveAttributeSpec,
) -> Result<GroupIndex, GroupError> {
    spec.validate(&[left, right])?;
    let attrs = &spec.attributes;

    // per table, per entity, per attribute: normalized values
    let collect = |table: &EntityTable| -> Vec<(String, Vec<Vec<String>>)> {
        let cols: Vec<usize> = attrs
            .iter()
            .map(|a| table.attribute_index(&a.name).expect("validated"))
            .collect();
        table
            .rows()
            .iter()
            .map(|r| {
                let vals = attrs
                    .iter()
                    .zip(&cols)
                    .map(|(a, &c)| attribute_values(r, c, &a.kind))
                    .collect();
                (r.id.clone(), vals)
            })
            .collect()
    };
    let left_vals = collect(left);
    let right_vals = collect(right);

    let mut observed: Vec<BTreeSet<String>> = vec![BTreeSet::new(); attrs.len()];
    for (_, vals) in left_vals.iter().chain(&right_vals) {
        for (a, vs) in vals.iter().enumerate() {
            observed[a].extend(vs.iter().cloned());
        }
    }

    // a value seen under several attributes is qualified as `attr=value`
    let mut owners: BTreeMap<&str, usize> = BTreeMap::new();
    for set in &observed {
        for v in set {
            *owners.entry(v.as_str()).or_default() += 1;
        }
    }
    let atom_name = |a: usize, v: &str| -> String {
        if owners.get(v).copied().unwrap_or(0) > 1 {
            format!("{}={}", normalize_value(&attrs[a].name), v)
        } else {
            v.to_string()
        }
    };

    let intersectional = spec.intersectional && attrs.len() > 1;
    let mut parents_of: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (a, set) in observed.iter().enumerate() {
        for v in set {
            let name = atom_name(a, v);
            if parents_of.insert(name.clone(), Vec::new()).is_some() {
                return Err(GroupError::DuplicateSubgroup(name));
            }
        }
    }
    if intersectional {
        let count = observed
            .iter()
            .try_fold(1u128, |acc, s| acc.checked_mul(s.len() as u128))
            .unwrap_or(u128::MAX);
        if count > spec.max_subgroups as u128 {
            return Err(GroupError::TooManySubgroups {
                count,
                cap: spec.max_subgroups,
            });
        }
        let per_attr: Vec<Vec<String>> = observed
            .iter()
            .enumerate()
            .map(|(a, s)| s.iter().map(|v| atom_name(a, v)).collect())
            .collect();
        for combo in cross_product(&per_attr) {
            let name = combo.join("-");
            if parents_of.insert(name.clone(), combo).is_some() {
                return Err(GroupError::DuplicateSubgroup(name));
            }
        }
    }

    let subgroups: Vec<Subgroup> = parents_of
        .into_iter()
        .enumerate()
        .map(|(index, (name, parents))| Subgroup {
            name,
            index,
            parents,
        })
        .collect();
    let g = subgroups.len();
    let index_of = |name: &str| {
        subgroups
            .binary_search_by(|s| s.name.as_str().cmp(name))
            .expect("name registered above")
    };

    let encode = |vals: &[Vec<String>]| -> GroupEncoding {
        let atoms: Vec<Vec<String>> = vals
            .iter()
            .enumerate()
            .map(|(a, vs)| vs.iter().map(|v| atom_name(a, v)).collect())
            .collect();
        let mut e = GroupEncoding::new(g);
        for name in atoms.iter().flatten() {
            e.set(index_of(name));
        }
        if intersectional {
            for combo in cross_product(&atoms) {
                e.set(index_of(&combo.join("-")));
            }
        }
        e
    };

    let left_enc = left_vals.iter().map(|(id, v)| (id.clone(), encode(v))).collect();
    let right_enc = right_vals.iter().map(|(id, v)| (id.clone(), encode(v))).collect();
    Ok(GroupIndex {
        subgroups,
        left: left_enc,
        right: right_enc,
    })
}

fn cross_product(lists: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::new()];
    for list in lists {
        out = out
            .iter()
            .flat_map(|prefix| {
                list.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Groups for which a correspondence between entities encoded `left` and
/// `right` is legitimate.
///
/// Single: the union of both entities' subgroups. Pairwise: every unordered
/// pair `{s, s'}` with `s` from one side and `s'` from the other, `s = s'`
/// included.
pub fn legitimate_groups(
    left: &GroupEncoding,
    right: &GroupEncoding,
    paradigm: Paradigm,
) -> BTreeSet<GroupKey> {
    match paradigm {
        Paradigm::Single => left
            .iter_ones()
            .chain(right.iter_ones())
            .map(GroupKey::Single)
            .collect(),
        Paradigm::Pairwise => {
            let r: Vec<usize> = right.iter_ones().collect();
            left.iter_ones()
                .flat_map(|a| r.iter().map(move |&b| GroupKey::pair(a, b)))
                .collect()
        }
    }
}

/// Whether a correspondence is legitimate for `key`, without building the
/// full set.
pub fn is_legitimate(left: &GroupEncoding, right: &GroupEncoding, key: GroupKey) -> bool {
    match key {
        GroupKey::Single(g) => left.contains(g) || right.contains(g),
        GroupKey::Pair(a, b) => {
            (left.contains(a) && right.contains(b)) || (left.contains(b) && right.contains(a))
        }
    }
}
