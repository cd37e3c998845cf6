//! Generated planted-bias datasets as ingest input or files on disk.

use std::path::Path;

use matchaudit_core::synth::{generate, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};
use crate::ingest::{IngestInput, IngestMode, Manifest, PairSources, Source, DEFAULT_RATIOS};

fn default_ratios() -> [f64; 3] {
    DEFAULT_RATIOS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRequest {
    #[serde(flatten)]
    pub synth: SynthConfig,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
}

impl DemoRequest {
    pub fn new(synth: SynthConfig) -> Self {
        Self {
            synth,
            ratios: DEFAULT_RATIOS,
        }
    }
}

struct DemoFiles {
    table_a: Vec<u8>,
    table_b: Vec<u8>,
    pairs: Vec<u8>,
    sensitive: matchaudit_core::SensitiveAttributeSpec,
}

fn render(config: &SynthConfig) -> Result<DemoFiles> {
    if config.entities_per_group == 0 {
        return Err(Error::validation("invalid_demo", "entities_per_group must be positive"));
    }
    let d = generate(config);
    let (mut a, mut b, mut p) = (Vec::new(), Vec::new(), Vec::new());
    csvio::write_table(&mut a, &d.left)?;
    csvio::write_table(&mut b, &d.right)?;
    csvio::write_pairs(&mut p, &d.pairs)?;
    Ok(DemoFiles {
        table_a: a,
        table_b: b,
        pairs: p,
        sensitive: d.sensitive,
    })
}

/// In-memory ingest input; the pairs are split with `request.synth.seed`.
pub fn demo_input(request: &DemoRequest) -> Result<IngestInput> {
    let f = render(&request.synth)?;
    Ok(IngestInput {
        left: Source::new("tableA.csv", f.table_a),
        right: Source::new("tableB.csv", f.table_b),
        pairs: PairSources::Combined {
            pairs: Source::new("pairs.csv", f.pairs),
            ratios: request.ratios,
            seed: request.synth.seed,
        },
        sensitive: f.sensitive,
        mode: IngestMode::MatchAndEvaluate,
        scores: Vec::new(),
    })
}

/// Writes `tableA.csv`, `tableB.csv`, `pairs.csv` and `manifest.json`
/// into `dir`.
pub fn write_demo(dir: &Path, request: &DemoRequest) -> Result<Manifest> {
    let f = render(&request.synth)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, bytes) in [("tableA.csv", &f.table_a), ("tableB.csv", &f.table_b), ("pairs.csv", &f.pairs)] {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = Manifest {
        table_a: "tableA.csv".into(),
        table_b: "tableB.csv".into(),
        train: None,
        valid: None,
        test: None,
        pairs: Some("pairs.csv".into()),
        ratios: request.ratios,
        split_seed: request.synth.seed,
        sensitive: f.sensitive,
        mode: IngestMode::MatchAndEvaluate,
        scores: Default::default(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
