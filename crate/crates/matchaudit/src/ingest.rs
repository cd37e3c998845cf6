//! Dataset loading from CSV sources and the JSON ingest manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use matchaudit_core::{
    split_pairs, Dataset, EntityTable, LabeledPairSet, ScoreRow, SensitiveAttributeSpec, SplitTag,
};
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

/// The two ingest tasks: train built-in matchers, or only evaluate
/// externally produced scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IngestMode {
    #[default]
    MatchAndEvaluate,
    EvaluateOnly,
}

impl std::str::FromStr for IngestMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "match-and-evaluate" => Ok(IngestMode::MatchAndEvaluate),
            "evaluate-only" => Ok(IngestMode::EvaluateOnly),
            other => Err(Error::validation("invalid_mode", format!("unknown ingest mode `{other}`"))),
        }
    }
}

/// Named CSV content. The name is used in error messages.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Source {
    pub fn new(name: impl Into<String>, bytes: impl Into<Vec<u8>>) -> Self {
        Self {
            name: name.into(),
            bytes: bytes.into(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::new(path.display().to_string(), bytes))
    }
}

#[derive(Debug, Clone)]
pub enum PairSources {
    /// Pre-split pair files; missing train/valid splits are empty.
    Splits {
        train: Option<Source>,
        valid: Option<Source>,
        test: Source,
    },
    /// One labeled pair file split by the stratified splitter.
    Combined {
        pairs: Source,
        ratios: [f64; 3],
        seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub dataset: Dataset,
    pub warnings: Vec<String>,
}

fn check_refs(
    source: &str,
    set: &LabeledPairSet,
    lines: &[u64],
    left: &EntityTable,
    right: &EntityTable,
) -> Result<()> {
    for (p, line) in set.pairs.iter().zip(lines) {
        for (side, table, id) in [("left", left, &p.left_id), ("right", right, &p.right_id)] {
            if !table.contains(id) {
                return Err(Error::validation(
                    "dangling_reference",
                    format!(
                        "{source}:{line}: pair ({}, {}) references unknown {side} id `{id}`",
                        p.left_id, p.right_id
                    ),
                ));
            }
        }
    }
    Ok(())
}

/// Parses both tables and the labeled pairs. Dangling references are
/// reported with the pair file and line.
pub fn load_dataset(left: &Source, right: &Source, pairs: &PairSources) -> Result<LoadedDataset> {
    let left_table = csvio::read_table(&left.name, &left.bytes, "tableA")?;
    let right_table = csvio::read_table(&right.name, &right.bytes, "tableB")?;
    let read = |src: &Source, tag| -> Result<LabeledPairSet> {
        let (set, lines) = csvio::read_pairs(&src.name, &src.bytes, tag)?;
        check_refs(&src.name, &set, &lines, &left_table, &right_table)?;
        Ok(set)
    };
    let mut warnings = Vec::new();
    let [train, valid, test] = match pairs {
        PairSources::Splits { train, valid, test } => {
            let opt = |s: &Option<Source>, tag| -> Result<LabeledPairSet> {
                s.as_ref().map(|s| read(s, tag)).unwrap_or_else(|| Ok(LabeledPairSet::new(tag, Vec::new())))
            };
            [
                opt(train, SplitTag::Train)?,
                opt(valid, SplitTag::Valid)?,
                read(test, SplitTag::Test)?,
            ]
        }
        PairSources::Combined { pairs, ratios, seed } => {
            let all = read(pairs, SplitTag::Test)?;
            let out = split_pairs(&all.pairs, *ratios, *seed)?;
            warnings.extend(out.warnings);
            [out.train, out.valid, out.test]
        }
    };
    if test.is_empty() {
        warnings.push("test split is empty".to_string());
    }
    let dataset = Dataset::new(left_table, right_table, train, valid, test)?;
    Ok(LoadedDataset { dataset, warnings })
}

/// Path form of [`load_dataset`] for the three pre-split pair files.
pub fn load_dataset_paths(left: &Path, right: &Path, pair_paths: [&Path; 3]) -> Result<LoadedDataset> {
    let [train, valid, test] = pair_paths;
    load_dataset(
        &Source::read(left)?,
        &Source::read(right)?,
        &PairSources::Splits {
            train: Some(Source::read(train)?),
            valid: Some(Source::read(valid)?),
            test: Source::read(test)?,
        },
    )
}

pub fn read_scores(source: &Source) -> Result<Vec<ScoreRow>> {
    csvio::read_scores(&source.name, &source.bytes)
}

fn default_ratios() -> [f64; 3] {
    DEFAULT_RATIOS
}

/// Ingest description read from JSON. Relative paths resolve against the
/// manifest's directory. Give either `test` (with optional `train` and
/// `valid`) or `pairs` plus `ratios`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub table_a: PathBuf,
    pub table_b: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<PathBuf>,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default)]
    pub split_seed: u64,
    pub sensitive: SensitiveAttributeSpec,
    #[serde(default)]
    pub mode: IngestMode,
    /// External matcher name to score file.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, PathBuf>,
}

/// Everything needed to ingest, already read into memory.
#[derive(Debug, Clone)]
pub struct IngestInput {
    pub left: Source,
    pub right: Source,
    pub pairs: PairSources,
    pub sensitive: SensitiveAttributeSpec,
    pub mode: IngestMode,
    pub scores: Vec<(String, Source)>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::validation("invalid_manifest", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut m.table_a);
        fix(&mut m.table_b);
        for p in [&mut m.train, &mut m.valid, &mut m.test, &mut m.pairs].into_iter().flatten() {
            fix(p);
        }
        m.scores.values_mut().for_each(fix);
        Ok(m)
    }

    pub fn input(&self) -> Result<IngestInput> {
        let pairs = match (&self.pairs, &self.test) {
            (Some(p), None) => PairSources::Combined {
                pairs: Source::read(p)?,
                ratios: self.ratios,
                seed: self.split_seed,
            },
            (None, Some(t)) => PairSources::Splits {
                train: self.train.as_deref().map(Source::read).transpose()?,
                valid: self.valid.as_deref().map(Source::read).transpose()?,
                test: Source::read(t)?,
            },
            _ => {
                return Err(Error::validation(
                    "invalid_manifest",
                    "give exactly one of `pairs` or `test`",
                ))
            }
        };
        Ok(IngestInput {
            left: Source::read(&self.table_a)?,
            right: Source::read(&self.table_b)?,
            pairs,
            sensitive: self.sensitive.clone(),
            mode: self.mode,
            scores: self
                .scores
                .iter()
                .map(|(n, p)| Ok((n.clone(), Source::read(p)?)))
                .collect::<Result<_>>()?,
        })
    }
}
