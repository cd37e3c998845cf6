//! Command-line interface. Exit codes: 0 success, 1 caller error, 2
//! internal error.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matchaudit_core::audit::{AuditConfig, AuditReport, DEFAULT_FAIRNESS_THRESHOLD, DEFAULT_MIN_SUPPORT};
use matchaudit_core::explain::{ExplanationQuery, DEFAULT_SAMPLE_SIZE};
use matchaudit_core::resolve::{ResolutionConfig, DEFAULT_CAP};
use matchaudit_core::stats::{MultiWorkloadConfig, DEFAULT_SIGNIFICANCE, DEFAULT_WORKLOADS};
use matchaudit_core::synth::{Profile, SynthConfig};
use matchaudit_core::{DisparityMode, GroupLabel, Measure, Paradigm, SplitTag};
use serde::Serialize;

use crate::csvio;
use crate::demo::{write_demo, DemoRequest};
use crate::error::{Error, Result};
use crate::ingest::{IngestInput, IngestMode, Manifest, PairSources, Source};
use crate::report;
use crate::service::{self, parse_sensitive, ServiceConfig, DEFAULT_MATCH_THRESHOLD};
use crate::session::{ExplainRequest, ResolveRequest, Session, StrategyRequest, TrainRequest};

#[derive(Debug, Parser)]
#[command(name = "matchaudit", version, about = "Group-fairness auditing for entity matching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load tables and labeled pairs into a new session directory
    Ingest(IngestArgs),
    /// Train built-in matchers, or add an external matcher's scores
    Match(MatchArgs),
    /// Per-group fairness audit of every matcher
    Audit(AuditArgs),
    /// Bootstrap hypothesis test over resampled workloads
    Multiworkload(MultiworkloadArgs),
    /// Explain one group's value under one matcher
    Explain(ExplainArgs),
    /// Pareto frontier of per-group matcher assignments
    Resolve(ResolveArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
    /// Write a generated planted-bias dataset and its manifest
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// JSON manifest describing all inputs (replaces the file flags)
    #[arg(long, conflicts_with_all = ["table_a", "table_b", "train", "valid", "test", "pairs", "sensitive"])]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub table_a: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub table_b: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, required_unless_present_any = ["manifest", "pairs"])]
    pub test: Option<PathBuf>,
    /// One labeled pair file to split into train/valid/test
    #[arg(long, conflicts_with_all = ["train", "valid", "test"])]
    pub pairs: Option<PathBuf>,
    /// Split ratios for --pairs
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    /// Sensitive attributes, e.g. `country` or `race,sex`; `name[|]` marks a set-valued attribute
    #[arg(long, required_unless_present = "manifest")]
    pub sensitive: Option<String>,
    #[arg(long)]
    pub intersectional: bool,
    #[arg(long, value_parser = ["match-and-evaluate", "evaluate-only"], default_value = "match-and-evaluate")]
    pub mode: String,
    /// External scores as NAME=FILE (repeatable)
    #[arg(long = "scores", value_name = "NAME=FILE")]
    pub scores: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Built-in matcher ids
    #[arg(long, value_delimiter = ',', required_unless_present = "scores", conflicts_with = "scores")]
    pub matchers: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score file of an external matcher
    #[arg(long, requires = "name")]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ParadigmArg {
    Single,
    Pairwise,
}

impl From<ParadigmArg> for Paradigm {
    fn from(p: ParadigmArg) -> Self {
        match p {
            ParadigmArg::Single => Paradigm::Single,
            ParadigmArg::Pairwise => Paradigm::Pairwise,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Subtraction,
    Division,
}

impl From<ModeArg> for DisparityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Subtraction => DisparityMode::Subtraction,
            ModeArg::Division => DisparityMode::Division,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AuditFlags {
    #[arg(long, value_enum, default_value = "single")]
    pub paradigm: ParadigmArg,
    /// Measure ids; all measures when omitted
    #[arg(long, value_delimiter = ',')]
    pub measures: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_MATCH_THRESHOLD)]
    pub match_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_FAIRNESS_THRESHOLD)]
    pub fairness_threshold: f64,
    #[arg(long, value_enum, default_value = "subtraction")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    pub min_support: u64,
}

impl AuditFlags {
    fn config(&self, unfair_only: bool) -> Result<AuditConfig> {
        let mut c = AuditConfig {
            paradigm: self.paradigm.into(),
            match_threshold: self.match_threshold,
            fairness_threshold: self.fairness_threshold,
            mode: self.mode.into(),
            unfair_only,
            min_support: self.min_support,
            ..AuditConfig::default()
        };
        if !self.measures.is_empty() {
            c.measures = parse_measures(&self.measures)?;
        }
        Ok(c)
    }
}

fn parse_measures(ids: &[String]) -> Result<Vec<Measure>> {
    ids.iter()
        .map(|m| {
            m.parse::<Measure>()
                .map_err(|_| Error::validation("invalid_measure", format!("unknown measure `{m}`")))
        })
        .collect()
}

fn parse_measure(id: &str) -> Result<Measure> {
    Ok(parse_measures(&[id.to_string()])?[0])
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FormatFlags {
    #[arg(long, conflicts_with = "csv")]
    pub json: bool,
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[command(flatten)]
    pub audit: AuditFlags,
    #[arg(long)]
    pub unfair_only: bool,
    #[command(flatten)]
    pub format: FormatFlags,
}

#[derive(Debug, Args)]
pub struct MultiworkloadArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WORKLOADS)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub audit: AuditFlags,
    #[command(flatten)]
    pub format: FormatFlags,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Matcher id; the only matcher when the session has one
    #[arg(long)]
    pub matcher: Option<String>,
    /// Group name, or `a|b` for a pair
    #[arg(long)]
    pub group: String,
    #[arg(long)]
    pub measure: String,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = ["train", "valid", "test"], default_value = "train")]
    pub split: String,
    /// Audit settings; the last audit's when omitted
    #[arg(long)]
    pub paradigm: Option<ParadigmArg>,
    #[arg(long)]
    pub match_threshold: Option<f64>,
    #[arg(long)]
    pub fairness_threshold: Option<f64>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct ResolveArgs {
    #[command(subcommand)]
    pub action: Option<ResolveAction>,
    #[arg(long)]
    pub session: Option<PathBuf>,
    #[arg(long, default_value = "accuracy-parity")]
    pub measure: String,
    #[arg(long, value_enum, default_value = "subtraction")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub target_group: Option<String>,
    /// Groups to assign (default: every group with support)
    #[arg(long, value_delimiter = ',')]
    pub groups: Vec<String>,
    /// Workload threshold; the last audit's when omitted
    #[arg(long)]
    pub match_threshold: Option<f64>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum ResolveAction {
    /// Re-audit an assignment (JSON object: group -> matcher id)
    Apply(ApplyArgs),
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub session: PathBuf,
    #[arg(long)]
    pub assignment: PathBuf,
    #[arg(long)]
    pub match_threshold: Option<f64>,
    #[arg(long)]
    pub fairness_threshold: Option<f64>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[command(flatten)]
    pub format: FormatFlags,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "MATCHAUDIT_BIND", default_value = service::DEFAULT_BIND)]
    pub bind: String,
    #[arg(long, env = "MATCHAUDIT_ROOT", default_value = "sessions")]
    pub root: PathBuf,
    #[arg(long, env = "MATCHAUDIT_CAP", default_value_t = DEFAULT_CAP)]
    pub cap: usize,
    #[arg(long, env = "MATCHAUDIT_MATCH_THRESHOLD", default_value_t = DEFAULT_MATCH_THRESHOLD)]
    pub match_threshold: f64,
    #[arg(long, env = "MATCHAUDIT_FAIRNESS_THRESHOLD", default_value_t = DEFAULT_FAIRNESS_THRESHOLD)]
    pub fairness_threshold: f64,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, value_parser = ["faculty", "compas"], default_value = "faculty")]
    pub profile: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub entities_per_group: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_audit(out: &mut dyn Write, report: &AuditReport, format: FormatFlags) -> Result<()> {
    if format.json {
        print_json(out, report)
    } else if format.csv {
        csvio::write_audit(out, report)
    } else {
        out.write_all(report::audit_table(report, report::use_color()).as_bytes())?;
        Ok(())
    }
}

fn ingest_input(args: &IngestArgs) -> Result<IngestInput> {
    if let Some(m) = &args.manifest {
        return Manifest::load(m)?.input();
    }
    let path = |p: &Option<PathBuf>| p.as_deref().map(Source::read).transpose();
    let pairs = match &args.pairs {
        Some(p) => PairSources::Combined {
            pairs: Source::read(p)?,
            ratios: [args.ratios[0], args.ratios[1], args.ratios[2]],
            seed: args.split_seed,
        },
        None => PairSources::Splits {
            train: path(&args.train)?,
            valid: path(&args.valid)?,
            test: Source::read(args.test.as_deref().expect("required by clap"))?,
        },
    };
    let scores = args
        .scores
        .iter()
        .map(|s| {
            let (name, file) = s.split_once('=').ok_or_else(|| {
                Error::validation("invalid_argument", format!("--scores expects NAME=FILE, got `{s}`"))
            })?;
            Ok((name.to_string(), Source::read(Path::new(file))?))
        })
        .collect::<Result<_>>()?;
    Ok(IngestInput {
        left: Source::read(args.table_a.as_deref().expect("required by clap"))?,
        right: Source::read(args.table_b.as_deref().expect("required by clap"))?,
        pairs,
        sensitive: parse_sensitive(args.sensitive.as_deref().expect("required by clap"), args.intersectional)?,
        mode: args.mode.parse::<IngestMode>()?,
        scores,
    })
}

fn override_audit(
    base: AuditConfig,
    paradigm: Option<ParadigmArg>,
    tau: Option<f64>,
    theta: Option<f64>,
    mode: Option<ModeArg>,
) -> AuditConfig {
    AuditConfig {
        paradigm: paradigm.map(Into::into).unwrap_or(base.paradigm),
        match_threshold: tau.unwrap_or(base.match_threshold),
        fairness_threshold: theta.unwrap_or(base.fairness_threshold),
        mode: mode.map(Into::into).unwrap_or(base.mode),
        ..base
    }
}

fn last_audit(s: &Session) -> AuditConfig {
    s.meta()
        .configs
        .get("audit")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or_default()
}

/// Runs a parsed command, writing results to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let input = ingest_input(&args)?;
            let mut s = Session::create(&args.out)?;
            print_json(out, &s.ingest(input)?)
        }
        Command::Match(args) => {
            let mut s = Session::open(&args.session)?;
            let summary = match (&args.scores, &args.name) {
                (Some(file), Some(name)) => s.add_scores(name, &Source::read(file)?)?,
                _ => s.train(
                    &TrainRequest {
                        matcher_ids: args.matchers.clone(),
                        seed: args.seed,
                    },
                    &|_| {},
                )?,
            };
            print_json(out, &summary)
        }
        Command::Audit(args) => {
            let mut s = Session::open(&args.session)?;
            let report = s.audit(&args.audit.config(args.unfair_only)?)?;
            print_audit(out, &report, args.format)
        }
        Command::Multiworkload(args) => {
            let mut s = Session::open(&args.session)?;
            let config = MultiWorkloadConfig {
                audit: args.audit.config(false)?,
                k: args.k,
                alpha: args.alpha,
                seed: args.seed,
            };
            let report = s.multiworkload(&config)?;
            if args.format.json {
                print_json(out, &report)
            } else if args.format.csv {
                csvio::write_multiworkload(out, &report)
            } else {
                out.write_all(report::multiworkload_table(&report, report::use_color()).as_bytes())?;
                Ok(())
            }
        }
        Command::Explain(args) => {
            let mut s = Session::open(&args.session)?;
            let matcher = match &args.matcher {
                Some(m) => m.clone(),
                None => match s.matchers() {
                    [only] => only.clone(),
                    _ => {
                        return Err(Error::validation(
                            "missing_matcher",
                            "the session has several matchers; pass --matcher",
                        ))
                    }
                },
            };
            let mut query = ExplanationQuery::new(matcher, GroupLabel::parse(&args.group), parse_measure(&args.measure)?);
            query.sample_size = args.samples;
            query.seed = args.seed;
            query.split = match args.split.as_str() {
                "valid" => SplitTag::Valid,
                "test" => SplitTag::Test,
                _ => SplitTag::Train,
            };
            let config = override_audit(
                last_audit(&s),
                args.paradigm,
                args.match_threshold,
                args.fairness_threshold,
                args.mode,
            );
            query.paradigm = config.paradigm;
            print_json(out, &s.explain(&ExplainRequest { query, config: Some(config) })?)
        }
        Command::Resolve(args) => match args.action {
            Some(ResolveAction::Apply(a)) => {
                let mut s = Session::open(&a.session)?;
                let text = std::fs::read_to_string(&a.assignment).map_err(|e| Error::io(&a.assignment, e))?;
                let assignment: BTreeMap<String, String> = serde_json::from_str(&text)
                    .map_err(|e| Error::validation("invalid_assignment", format!("{}: {e}", a.assignment.display())))?;
                let config = override_audit(
                    AuditConfig {
                        paradigm: Paradigm::Single,
                        ..last_audit(&s)
                    },
                    None,
                    a.match_threshold,
                    a.fairness_threshold,
                    a.mode,
                );
                let report = s.strategy(&StrategyRequest {
                    assignment,
                    config: Some(config),
                })?;
                print_audit(out, &report, a.format)
            }
            None => {
                let dir = args
                    .session
                    .ok_or_else(|| Error::validation("invalid_argument", "--session is required"))?;
                let mut s = Session::open(&dir)?;
                let request = ResolveRequest {
                    config: ResolutionConfig {
                        measure: parse_measure(&args.measure)?,
                        mode: args.mode.into(),
                        cap: args.cap,
                        target_group: args.target_group,
                        seed: args.seed,
                        groups: (!args.groups.is_empty()).then_some(args.groups),
                    },
                    match_threshold: args.match_threshold,
                };
                let resolution = s.resolve(&request)?;
                if args.json {
                    print_json(out, &resolution)
                } else {
                    out.write_all(report::frontier_table(&resolution).as_bytes())?;
                    Ok(())
                }
            }
        },
        Command::Serve(args) => {
            let config = ServiceConfig {
                root: args.root,
                cap: args.cap,
                match_threshold: args.match_threshold,
                fairness_threshold: args.fairness_threshold,
            };
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::Internal(e.to_string()))?;
            writeln!(out, "listening on {}", args.bind)?;
            out.flush()?;
            rt.block_on(service::serve(&args.bind, config))
        }
        Command::Demo(args) => {
            let profile: Profile = args
                .profile
                .parse()
                .map_err(|_| Error::validation("invalid_profile", format!("unknown profile `{}`", args.profile)))?;
            let mut synth = SynthConfig::new(profile, args.seed);
            if let Some(n) = args.entities_per_group {
                synth.entities_per_group = n;
            }
            let manifest = write_demo(&args.out, &DemoRequest::new(synth))?;
            print_json(out, &manifest)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Errors go to `err` as `error[code]: message`.
pub fn run_with(args: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            e.exit_code()
        }
    }
}

pub fn run() -> ExitCode {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = run_with(std::env::args(), &mut stdout.lock(), &mut stderr.lock());
    ExitCode::from(code)
}
