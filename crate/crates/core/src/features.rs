//! Similarity features for record pairs.
//!
//! Every attribute present in both schemas contributes token Jaccard,
//! normalized edit similarity and an exact-match indicator. Attributes whose
//! non-null values are at least 90% numeric also contribute a numeric
//! closeness `1 - min(1, |a - b| / range)`. A null on either side zeroes all
//! of that attribute's features.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{EntityTable, Record};

const NUMERIC_SHARE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.0.iter().sum::<f64>() / self.0.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedAttribute {
    pub name: String,
    pub left_col: usize,
    pub right_col: usize,
    /// Value range used to scale numeric differences; `None` for text.
    pub numeric_range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub attributes: Vec<AlignedAttribute>,
    pub names: Vec<String>,
}

impl FeatureSchema {
    /// Aligns attributes shared by both tables (left order) and detects
    /// numeric columns over the non-null values of both tables.
    pub fn from_tables(left: &EntityTable, right: &EntityTable) -> Self {
        let mut attributes = Vec::new();
        let mut names = Vec::new();
        for (left_col, name) in left.schema.iter().enumerate() {
            let Some(right_col) = right.attribute_index(name) else {
                continue;
            };
            let values = left
                .rows()
                .iter()
                .filter_map(|r| r.values[left_col].as_deref())
                .chain(right.rows().iter().filter_map(|r| r.values[right_col].as_deref()));
            let numeric_range = numeric_range(values);
            for f in ["jaccard", "edit", "exact"] {
                names.push(format!("{name}:{f}"));
            }
            if numeric_range.is_some() {
                names.push(format!("{name}:numeric"));
            }
            attributes.push(AlignedAttribute {
                name: name.clone(),
                left_col,
                right_col,
                numeric_range,
            });
        }
        Self { attributes, names }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn extract(&self, left: &Record, right: &Record) -> FeatureVector {
        let mut out = Vec::with_capacity(self.len());
        for a in &self.attributes {
            push_attribute_features(
                &mut out,
                left.values[a.left_col].as_deref(),
                right.values[a.right_col].as_deref(),
                a.numeric_range,
            );
        }
        FeatureVector(out)
    }
}

fn numeric_range<'a>(values: impl Iterator<Item = &'a str>) -> Option<f64> {
    let mut total = 0usize;
    let mut parsed = Vec::new();
    for v in values {
        let v = v.trim();
        if v.is_empty() {
            continue;
        }
        total += 1;
        if let Ok(x) = v.parse::<f64>() {
            if x.is_finite() {
                parsed.push(x);
            }
        }
    }
    if total == 0 || (parsed.len() as f64) < NUMERIC_SHARE * total as f64 {
        return None;
    }
    let lo = parsed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = parsed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    Some(if range > 0.0 { range } else { 1.0 })
}

fn present(v: Option<&str>) -> Option<&str> {
    v.map(str::trim).filter(|s| !s.is_empty())
}

/// Features of one aligned attribute; symmetric in its two values.
pub fn push_attribute_features(
    out: &mut Vec<f64>,
    a: Option<&str>,
    b: Option<&str>,
    numeric_range: Option<f64>,
) {
    match (present(a), present(b)) {
        (Some(a), Some(b)) => {
            let (a, b) = (a.to_lowercase(), b.to_lowercase());
            out.push(token_jaccard(&a, &b));
            out.push(edit_similarity(&a, &b));
            out.push(if a == b { 1.0 } else { 0.0 });
            if let Some(range) = numeric_range {
                out.push(match (a.parse::<f64>(), b.parse::<f64>()) {
                    (Ok(x), Ok(y)) if x.is_finite() && y.is_finite() => {
                        1.0 - f64::min(1.0, libm::fabs(x - y) / range)
                    }
                    _ => 0.0,
                });
            }
        }
        _ => {
            let n = if numeric_range.is_some() { 4 } else { 3 };
            out.extend(core::iter::repeat_n(0.0, n));
        }
    }
}

/// `|A ∩ B| / |A ∪ B|` over whitespace tokens; two empty token sets give 1.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<&str> = a.split_whitespace().collect();
    let tb: BTreeSet<&str> = b.split_whitespace().collect();
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// Levenshtein distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - distance / max(len)`; two empty strings give 1.
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}
