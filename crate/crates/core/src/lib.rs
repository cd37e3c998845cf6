//! Group-fairness auditing for entity matching.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure
//! computation: subgroup extraction and one-hot encodings, similarity
//! features and simple matchers, confusion counting under the single and
//! pairwise paradigms, disparity measures, bootstrap hypothesis tests,
//! explanations, and Pareto-frontier ensemble resolution. File formats,
//! sessions, the HTTP service and the CLI live in the `matchaudit` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod audit;
pub mod dataset;
pub mod explain;
pub mod features;
pub mod groups;
pub mod matcher;
pub mod measure;
pub mod resolve;
pub mod rng;
pub mod stats;
pub mod synth;

pub use audit::{
    audit, build_workload, confusion_by_group, group_confusion, overall_value, AuditConfig,
    AuditEntry, AuditError, AuditReport, Correspondence, Workload,
};
pub use dataset::{
    split_pairs, Dataset, DatasetError, EntityTable, LabeledPair, LabeledPairSet, Record,
    SplitOutcome, SplitTag,
};
pub use features::{FeatureSchema, FeatureVector};
pub use groups::{
    extract_groups, legitimate_groups, GroupEncoding, GroupError, GroupIndex, GroupKey,
    GroupLabel, Paradigm, SensitiveAttribute, SensitiveAttributeSpec, Subgroup,
};
pub use matcher::{
    apply_match_threshold, train_matcher, Matcher, MatcherError, MatcherKind, MatcherModel,
    ScoreRow, ScoreTable,
};
pub use measure::{disparity, ConfusionCounts, DisparityMode, Measure, Orientation};
