//! On-disk sessions: the workflow state machine and its artifacts.
//!
//! Layout of a session directory:
//!
//! ```text
//! session.json              state, ingest mode, matcher list, config snapshots
//! sensitive.json            sensitive-attribute spec
//! groups.json               subgroup universe and entity encodings
//! data/{tableA,tableB,train,valid,test}.csv
//! matchers/<id>.json        trained (or external) matcher
//! scores/<id>.csv           test-split scores per matcher
//! artifacts/<kind>-<hash>.json
//! ```
//!
//! Artifacts are keyed by a SHA-256 over the step kind, the request with
//! defaults filled in, and the current matcher scores, so repeating a
//! request returns the stored artifact and never overwrites one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use matchaudit_core::audit::{audit, build_workload, AuditConfig, AuditReport, Workload};
use matchaudit_core::explain::{explain, Explanation, ExplanationQuery};
use matchaudit_core::features::{FeatureSchema, FeatureVector};
use matchaudit_core::matcher::{train_matcher, validate_external_scores, Labeled, Matcher, MatcherKind};
use matchaudit_core::resolve::{audit_strategy, resolve, Resolution, ResolutionConfig};
use matchaudit_core::stats::{multiworkload, MultiWorkloadConfig, MultiWorkloadReport};
use matchaudit_core::{
    extract_groups, Dataset, GroupIndex, LabeledPairSet, Paradigm, ScoreTable,
    SensitiveAttributeSpec, SplitTag,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csvio;
use crate::error::{Error, Result};
use crate::ingest::{load_dataset, read_scores, IngestInput, IngestMode, PairSources, Source};

pub const SESSION_FILE: &str = "session.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Ingested,
    Matched,
    Audited,
    Resolved,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::Ingested => "ingested",
            SessionState::Matched => "matched",
            SessionState::Audited => "audited",
            SessionState::Resolved => "resolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub state: SessionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<IngestMode>,
    /// Matcher ids with scores, sorted.
    #[serde(default)]
    pub matchers: Vec<String>,
    /// Last effective config per step.
    #[serde(default)]
    pub configs: BTreeMap<String, serde_json::Value>,
    /// Artifact file names, in creation order.
    #[serde(default)]
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub pairs: usize,
    pub matches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub session_id: String,
    pub state: SessionState,
    pub mode: IngestMode,
    pub left_rows: usize,
    pub right_rows: usize,
    pub left_schema: Vec<String>,
    pub right_schema: Vec<String>,
    pub splits: BTreeMap<SplitTag, SplitSummary>,
    pub subgroups: Vec<String>,
    pub matchers: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherSummary {
    pub id: String,
    pub kind: String,
    pub validation_f1: Option<f64>,
    pub scored_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub session_id: String,
    pub state: SessionState,
    pub matchers: Vec<MatcherSummary>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub matcher_ids: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

/// Explanation query plus the audit settings the explained value was
/// computed under; the last audit's settings when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainRequest {
    #[serde(flatten)]
    pub query: ExplanationQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AuditConfig>,
}

/// Resolution settings plus the match threshold the workloads are built
/// at; the last audit's threshold when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolveRequest {
    #[serde(flatten)]
    pub config: ResolutionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub match_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRequest {
    pub assignment: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<AuditConfig>,
}

pub struct Session {
    dir: PathBuf,
    meta: SessionMeta,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&text).map_err(|e| Error::Internal(format!("{}: {e}", path.display())))
}

/// File stem for a matcher id (`external:x` becomes `external_x`).
pub fn matcher_file_stem(id: &str) -> String {
    id.replace(':', "_")
}

/// External matcher names become part of file names.
pub fn check_matcher_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::validation(
            "invalid_matcher_name",
            format!("matcher name `{name}` must be 1-64 characters of [A-Za-z0-9._-]"),
        ))
    }
}

fn require(state: SessionState, needed: SessionState, what: &str) -> Result<()> {
    if state < needed {
        Err(Error::OutOfOrder(format!(
            "{what} needs a session in state `{}` or later; session is `{}`",
            needed.as_str(),
            state.as_str()
        )))
    } else {
        Ok(())
    }
}

fn features(schema: &FeatureSchema, dataset: &Dataset, set: &LabeledPairSet) -> Vec<FeatureVector> {
    set.pairs
        .iter()
        .map(|p| {
            // references were checked at ingest
            let l = dataset.left.get(&p.left_id).expect("left id");
            let r = dataset.right.get(&p.right_id).expect("right id");
            schema.extract(l, r)
        })
        .collect()
}

impl Session {
    /// Creates an empty session in `dir`, which must not hold one already.
    pub fn create(dir: &Path) -> Result<Self> {
        if dir.join(SESSION_FILE).exists() {
            return Err(Error::validation(
                "session_exists",
                format!("{} already holds a session", dir.display()),
            ));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let session_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "session".to_string());
        let s = Session {
            dir: dir.to_path_buf(),
            meta: SessionMeta {
                session_id,
                state: SessionState::Created,
                mode: None,
                matchers: Vec::new(),
                configs: BTreeMap::new(),
                artifacts: Vec::new(),
            },
        };
        s.save()?;
        Ok(s)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(SESSION_FILE);
        if !path.exists() {
            return Err(Error::NotFound(format!("session at {}", dir.display())));
        }
        Ok(Session {
            dir: dir.to_path_buf(),
            meta: read_json(&path)?,
        })
    }

    fn save(&self) -> Result<()> {
        write_json(&self.dir.join(SESSION_FILE), &self.meta)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn id(&self) -> &str {
        &self.meta.session_id
    }

    pub fn state(&self) -> SessionState {
        self.meta.state
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn matchers(&self) -> &[String] {
        &self.meta.matchers
    }

    fn advance(&mut self, to: SessionState) {
        self.meta.state = self.meta.state.max(to);
    }

    fn data(&self, name: &str) -> PathBuf {
        self.dir.join("data").join(format!("{name}.csv"))
    }

    fn scores_path(&self, id: &str) -> PathBuf {
        self.dir.join("scores").join(format!("{}.csv", matcher_file_stem(id)))
    }

    fn matcher_path(&self, id: &str) -> PathBuf {
        self.dir.join("matchers").join(format!("{}.json", matcher_file_stem(id)))
    }

    /// Ingests tables, pairs and optional external scores. Evaluate-only
    /// ingests need at least one score file and leave the session matched.
    pub fn ingest(&mut self, input: IngestInput) -> Result<IngestSummary> {
        if self.meta.state != SessionState::Created {
            return Err(Error::OutOfOrder("dataset already ingested".to_string()));
        }
        if input.mode == IngestMode::EvaluateOnly && input.scores.is_empty() {
            return Err(Error::validation(
                "missing_scores",
                "evaluate-only ingest needs at least one score file",
            ));
        }
        let loaded = load_dataset(&input.left, &input.right, &input.pairs)?;
        let dataset = loaded.dataset;
        let mut warnings = loaded.warnings;
        let groups = extract_groups(&dataset.left, &dataset.right, &input.sensitive)?;

        let mut external = Vec::new();
        for (name, src) in &input.scores {
            check_matcher_name(name)?;
            let rows = read_scores(src)?;
            let matcher = Matcher::external(name);
            let (table, w) =
                validate_external_scores(&matcher.id, rows, &dataset.test, &dataset.left, &dataset.right)?;
            warnings.extend(w.into_iter().map(|w| format!("{}: {w}", src.name)));
            external.push((matcher, table));
        }

        for sub in ["data", "matchers", "scores", "artifacts"] {
            let d = self.dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        csvio::write_table(fs::File::create(self.data("tableA"))?, &dataset.left)?;
        csvio::write_table(fs::File::create(self.data("tableB"))?, &dataset.right)?;
        for tag in SplitTag::ALL {
            csvio::write_pairs(fs::File::create(self.data(tag.as_str()))?, &dataset.split(tag).pairs)?;
        }
        write_json(&self.dir.join("sensitive.json"), &input.sensitive)?;
        write_json(&self.dir.join("groups.json"), &groups)?;

        self.meta.mode = Some(input.mode);
        self.advance(SessionState::Ingested);
        for (matcher, table) in &external {
            self.store_scores(matcher, table)?;
        }
        self.meta.configs.insert(
            "ingest".to_string(),
            serde_json::json!({ "mode": input.mode, "sensitive": input.sensitive }),
        );
        self.save()?;

        let splits = SplitTag::ALL
            .into_iter()
            .map(|t| {
                let s = dataset.split(t);
                (t, SplitSummary { pairs: s.len(), matches: s.match_count() })
            })
            .collect();
        Ok(IngestSummary {
            session_id: self.meta.session_id.clone(),
            state: self.meta.state,
            mode: input.mode,
            left_rows: dataset.left.len(),
            right_rows: dataset.right.len(),
            left_schema: dataset.left.schema.clone(),
            right_schema: dataset.right.schema.clone(),
            splits,
            subgroups: groups.subgroups.iter().map(|s| s.name.clone()).collect(),
            matchers: self.meta.matchers.clone(),
            warnings,
        })
    }

    fn store_scores(&mut self, matcher: &Matcher, table: &ScoreTable) -> Result<()> {
        write_json(&self.matcher_path(&matcher.id), matcher)?;
        let mut buf = Vec::new();
        csvio::write_scores(&mut buf, &table.rows)?;
        write_atomic(&self.scores_path(&matcher.id), &buf)?;
        if !self.meta.matchers.contains(&matcher.id) {
            self.meta.matchers.push(matcher.id.clone());
            self.meta.matchers.sort();
        }
        self.advance(SessionState::Matched);
        Ok(())
    }

    pub fn dataset(&self) -> Result<Dataset> {
        require(self.meta.state, SessionState::Ingested, "reading the dataset")?;
        let src = |n: &str| Source::read(&self.data(n));
        let loaded = load_dataset(
            &src("tableA")?,
            &src("tableB")?,
            &PairSources::Splits {
                train: Some(src("train")?),
                valid: Some(src("valid")?),
                test: src("test")?,
            },
        )?;
        Ok(loaded.dataset)
    }

    pub fn groups(&self) -> Result<GroupIndex> {
        require(self.meta.state, SessionState::Ingested, "reading groups")?;
        read_json(&self.dir.join("groups.json"))
    }

    pub fn sensitive(&self) -> Result<SensitiveAttributeSpec> {
        require(self.meta.state, SessionState::Ingested, "reading the sensitive spec")?;
        read_json(&self.dir.join("sensitive.json"))
    }

    pub fn matcher(&self, id: &str) -> Result<Matcher> {
        if !self.meta.matchers.iter().any(|m| m == id) {
            return Err(Error::NotFound(format!("matcher `{id}`")));
        }
        read_json(&self.matcher_path(id))
    }

    pub fn scores(&self, id: &str) -> Result<ScoreTable> {
        if !self.meta.matchers.iter().any(|m| m == id) {
            return Err(Error::NotFound(format!("matcher `{id}`")));
        }
        let path = self.scores_path(id);
        let rows = read_scores(&Source::read(&path)?)?;
        Ok(ScoreTable {
            matcher_id: id.to_string(),
            rows,
        })
    }

    /// Trains built-in matchers on the train split and scores the test
    /// split. `progress` receives the completed fraction.
    pub fn train(&mut self, request: &TrainRequest, progress: &dyn Fn(f64)) -> Result<MatchSummary> {
        let kinds = parse_kinds(&request.matcher_ids)?;
        require(self.meta.state, SessionState::Ingested, "matching")?;
        let dataset = self.dataset()?;
        if dataset.train.is_empty() {
            return Err(Error::validation(
                "empty_train_split",
                "training needs a non-empty train split",
            ));
        }
        let schema = FeatureSchema::from_tables(&dataset.left, &dataset.right);
        if schema.is_empty() {
            return Err(Error::validation(
                "no_shared_attributes",
                "the two tables share no attribute to compare",
            ));
        }
        let labels = |s: &LabeledPairSet| s.pairs.iter().map(|p| p.label).collect::<Vec<_>>();
        let (train_x, valid_x, test_x) = (
            features(&schema, &dataset, &dataset.train),
            features(&schema, &dataset, &dataset.valid),
            features(&schema, &dataset, &dataset.test),
        );
        let (train_y, valid_y) = (labels(&dataset.train), labels(&dataset.valid));
        let mut out = Vec::new();
        for (i, kind) in kinds.iter().enumerate() {
            let m = train_matcher(
                *kind,
                &schema.names,
                Labeled::new(&train_x, &train_y)?,
                Labeled::new(&valid_x, &valid_y)?,
                request.seed,
            )?;
            let scores = m.predict(&dataset.test, &test_x)?;
            self.store_scores(&m, &scores)?;
            out.push(MatcherSummary {
                id: m.id.clone(),
                kind: kind.id().to_string(),
                validation_f1: m.meta.validation_f1,
                scored_pairs: scores.len(),
            });
            progress((i + 1) as f64 / kinds.len() as f64);
        }
        self.meta
            .configs
            .insert("match".to_string(), serde_json::to_value(request)?);
        self.save()?;
        Ok(MatchSummary {
            session_id: self.meta.session_id.clone(),
            state: self.meta.state,
            matchers: out,
            warnings: Vec::new(),
        })
    }

    /// Adds an external matcher's scores for the test split.
    pub fn add_scores(&mut self, name: &str, source: &Source) -> Result<MatchSummary> {
        check_matcher_name(name)?;
        require(self.meta.state, SessionState::Ingested, "adding scores")?;
        let dataset = self.dataset()?;
        let matcher = Matcher::external(name);
        let rows = read_scores(source)?;
        let (table, warnings) =
            validate_external_scores(&matcher.id, rows, &dataset.test, &dataset.left, &dataset.right)?;
        self.store_scores(&matcher, &table)?;
        self.save()?;
        Ok(MatchSummary {
            session_id: self.meta.session_id.clone(),
            state: self.meta.state,
            matchers: vec![MatcherSummary {
                id: matcher.id.clone(),
                kind: "external".to_string(),
                validation_f1: None,
                scored_pairs: table.len(),
            }],
            warnings,
        })
    }

    /// Test-split workloads of every matcher at threshold `tau`.
    pub fn workloads(&self, tau: f64) -> Result<Vec<Workload>> {
        let dataset = self.dataset()?;
        let groups = self.groups()?;
        self.meta
            .matchers
            .iter()
            .map(|id| Ok(build_workload(&self.scores(id)?, &dataset.test, &groups, tau)?))
            .collect()
    }

    fn fingerprint(&self) -> Result<String> {
        let mut h = Sha256::new();
        for id in &self.meta.matchers {
            h.update(id.as_bytes());
            h.update([0]);
            let path = self.scores_path(id);
            h.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
            h.update([0]);
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Returns the stored artifact for (`kind`, `request`, current scores)
    /// or computes and stores it.
    fn cached<Q: Serialize, T: Serialize + DeserializeOwned>(
        &mut self,
        kind: &str,
        request: &Q,
        advance_to: SessionState,
        compute: impl FnOnce(&Self) -> Result<T>,
    ) -> Result<T> {
        let body = serde_json::to_string(request)?;
        let mut h = Sha256::new();
        h.update(kind.as_bytes());
        h.update([0]);
        h.update(body.as_bytes());
        h.update([0]);
        h.update(self.fingerprint()?.as_bytes());
        let name = format!("{kind}-{}.json", &hex::encode(h.finalize())[..16]);
        let path = self.dir.join("artifacts").join(&name);
        let value = if path.exists() {
            read_json(&path)?
        } else {
            let value = compute(self)?;
            write_json(&path, &value)?;
            value
        };
        if !self.meta.artifacts.contains(&name) {
            self.meta.artifacts.push(name);
        }
        self.meta
            .configs
            .insert(kind.to_string(), serde_json::from_str(&body)?);
        self.advance(advance_to);
        self.save()?;
        Ok(value)
    }

    fn last_audit_config(&self) -> AuditConfig {
        self.meta
            .configs
            .get("audit")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default()
    }

    /// Audits every matcher's workload under `config`.
    pub fn audit(&mut self, config: &AuditConfig) -> Result<AuditReport> {
        require(self.meta.state, SessionState::Matched, "audit")?;
        config.validate()?;
        self.cached("audit", config, SessionState::Audited, |s| {
            let groups = s.groups()?;
            let mut report = AuditReport::default();
            for w in s.workloads(config.match_threshold)? {
                report.extend(audit(&w, config, &groups)?);
            }
            Ok(report)
        })
    }

    /// Bootstrap test for every matcher; each matcher uses the same seed.
    pub fn multiworkload(&mut self, config: &MultiWorkloadConfig) -> Result<MultiWorkloadReport> {
        require(self.meta.state, SessionState::Matched, "multi-workload audit")?;
        config.audit.validate()?;
        self.cached("multiworkload", config, SessionState::Audited, |s| {
            let groups = s.groups()?;
            let mut rows = Vec::new();
            for w in s.workloads(config.audit.match_threshold)? {
                rows.extend(multiworkload(&w, config, &groups)?.rows);
            }
            Ok(MultiWorkloadReport { rows })
        })
    }

    pub fn explain(&mut self, request: &ExplainRequest) -> Result<Explanation> {
        require(self.meta.state, SessionState::Audited, "explain")?;
        let request = ExplainRequest {
            query: request.query.clone(),
            config: Some(request.config.clone().unwrap_or_else(|| self.last_audit_config())),
        };
        let config = request.config.clone().expect("filled above");
        config.validate()?;
        let state = self.meta.state;
        self.cached("explain", &request, state, |s| {
            let dataset = s.dataset()?;
            let groups = s.groups()?;
            let id = &request.query.matcher_id;
            let w = build_workload(&s.scores(id)?, &dataset.test, &groups, config.match_threshold)?;
            Ok(explain(&request.query, &w, &groups, &dataset, &config)?)
        })
    }

    pub fn resolve(&mut self, request: &ResolveRequest) -> Result<Resolution> {
        require(self.meta.state, SessionState::Audited, "resolve")?;
        let request = ResolveRequest {
            config: request.config.clone(),
            match_threshold: Some(
                request
                    .match_threshold
                    .unwrap_or_else(|| self.last_audit_config().match_threshold),
            ),
        };
        let tau = request.match_threshold.expect("filled above");
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::validation("invalid_config", "match_threshold must be in [0, 1]"));
        }
        self.cached("resolve", &request, SessionState::Resolved, |s| {
            let groups = s.groups()?;
            Ok(resolve(&s.workloads(tau)?, &groups, &request.config)?)
        })
    }

    /// Re-audits an assignment of groups to matchers.
    pub fn strategy(&mut self, request: &StrategyRequest) -> Result<AuditReport> {
        require(self.meta.state, SessionState::Resolved, "strategy audit")?;
        let config = request.config.clone().unwrap_or_else(|| AuditConfig {
            paradigm: Paradigm::Single,
            ..self.last_audit_config()
        });
        let request = StrategyRequest {
            assignment: request.assignment.clone(),
            config: Some(config.clone()),
        };
        let state = self.meta.state;
        self.cached("strategy", &request, state, |s| {
            let groups = s.groups()?;
            let workloads = s.workloads(config.match_threshold)?;
            Ok(audit_strategy(&request.assignment, &workloads, &groups, &config)?)
        })
    }
}

pub fn parse_kinds(ids: &[String]) -> Result<Vec<MatcherKind>> {
    if ids.is_empty() {
        return Err(Error::validation("no_matchers", "select at least one matcher"));
    }
    let mut kinds = ids
        .iter()
        .map(|s| s.parse::<MatcherKind>().map_err(Error::from))
        .collect::<Result<Vec<_>>>()?;
    kinds.sort();
    kinds.dedup();
    Ok(kinds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub description: String,
}

/// Built-in matchers with their descriptions.
pub fn catalog() -> Vec<CatalogEntry> {
    MatcherKind::ALL
        .iter()
        .map(|k| CatalogEntry {
            id: k.id().to_string(),
            description: k.description().to_string(),
        })
        .collect()
}
