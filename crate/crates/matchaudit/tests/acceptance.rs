//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use axum::http::StatusCode;
use matchaudit::cli::run_with;
use matchaudit::service::{router, ServiceConfig};
use matchaudit_core::audit::{audit, build_workload, confusion_by_group, group_confusion, AuditConfig, AuditReport, Correspondence, Workload};
use matchaudit_core::measure::disparity;
use matchaudit_core::resolve::{
    audit_strategy, best_per_group, enumerate_assignments, pareto_indices, resolve, score_assignment,
    PerformanceTable, ResolutionConfig,
};
use matchaudit_core::rng;
use matchaudit_core::stats::test_values;
use matchaudit_core::synth::{expected_tprp_disparity, generate, synthetic_scores, Profile, ScoreModel, SynthConfig};
use matchaudit_core::{
    extract_groups, ConfusionCounts, DisparityMode, GroupEncoding, GroupKey, GroupLabel, LabeledPairSet, Measure,
    Orientation, Paradigm, SplitTag,
};
use rand::Rng;
use serde_json::json;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// confusion counts against a double loop

fn random_encoding(r: &mut impl Rng, g: usize) -> GroupEncoding {
    let mut bits: Vec<usize> = (0..g).filter(|_| r.random_bool(0.3)).collect();
    if bits.is_empty() {
        bits.push(r.random_range(0..g));
    }
    GroupEncoding::from_indices(g, bits)
}

fn oracle_counts(w: &Workload, key: GroupKey) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for x in &w.correspondences {
        let legit = match key {
            GroupKey::Single(a) => x.left.contains(a) || x.right.contains(a),
            GroupKey::Pair(a, b) => (x.left.contains(a) && x.right.contains(b)) || (x.left.contains(b) && x.right.contains(a)),
        };
        if legit {
            match (x.predicted, x.truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

fn confusion_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(2024, 0xACC1);
    let (mut max_n, mut keys_checked) = (0, 0usize);
    for i in 0..200 {
        let g = r.random_range(1..=8);
        let n = if i == 0 { 2000 } else { r.random_range(1..=2000) };
        max_n = max_n.max(n);
        let w = Workload {
            matcher_id: "m".into(),
            match_threshold: 0.5,
            correspondences: (0..n)
                .map(|j| Correspondence {
                    left_id: format!("l{j}"),
                    right_id: format!("r{j}"),
                    left: random_encoding(&mut r, g),
                    right: random_encoding(&mut r, g),
                    predicted: r.random_bool(0.5),
                    truth: r.random_bool(0.4),
                    score: 0.0,
                })
                .collect(),
        };
        for paradigm in [Paradigm::Single, Paradigm::Pairwise] {
            let keys: Vec<GroupKey> = match paradigm {
                Paradigm::Single => (0..g).map(GroupKey::Single).collect(),
                Paradigm::Pairwise => (0..g).flat_map(|a| (a..g).map(move |b| GroupKey::Pair(a, b))).collect(),
            };
            let by_group = confusion_by_group(&w, paradigm);
            for key in keys {
                let want = oracle_counts(&w, key);
                let got = group_confusion(&w, key, g).map_err(|e| e.to_string())?;
                check(got == want, || format!("workload {i} {key:?}: {got:?} != {want:?}"))?;
                let mapped = by_group.get(&key).copied().unwrap_or_default();
                check(mapped == want, || format!("workload {i} {key:?} (by group): {mapped:?} != {want:?}"))?;
                keys_checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1}s (limit 30s)"))?;
    Ok(format!("200 workloads, n <= {max_n}, {keys_checked} group keys, both paradigms, exact, {secs:.2}s"))
}

// ---------------------------------------------------------------------------
// disparity formulas

fn disparity_formulas() -> Outcome {
    let mut r = rng::stream(7, 0xACC2);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let (o, g): (f64, f64) = match i % 10 {
            0 => (0.0, r.random()),
            1 => {
                let x = r.random();
                (x, x)
            }
            _ => (r.random(), r.random()),
        };
        let sub = if o - g > 0.0 { o - g } else { 0.0 };
        let div = if o == 0.0 { None } else if 1.0 - g / o > 0.0 { Some(1.0 - g / o) } else { Some(0.0) };
        let got_sub = disparity(o, g, DisparityMode::Subtraction).ok_or("subtraction undefined")?;
        worst = worst.max((got_sub - sub).abs());
        let got_div = disparity(o, g, DisparityMode::Division);
        check(got_div.is_some() == div.is_some(), || format!("division definedness at o={o}, g={g}"))?;
        if let (Some(a), Some(b)) = (got_div, div) {
            worst = worst.max((a - b).abs());
        }
        if g >= o {
            check(got_sub == 0.0 && got_div.unwrap_or(0.0) == 0.0, || format!("not one-sided at o={o}, g={g}"))?;
        }
        check(got_sub >= 0.0 && got_div.unwrap_or(0.0) >= 0.0, || "negative disparity".into())?;
        // lower-is-better measures compare 1 - value
        for mode in [DisparityMode::Subtraction, DisparityMode::Division] {
            let higher = Measure::Tprp.disparity(o, g, mode);
            check(higher == disparity(o, g, mode), || "higher-better measure differs".into())?;
            let lower = Measure::Fprp.disparity(o, g, mode);
            let want = disparity(1.0 - o, 1.0 - g, mode);
            check(lower == want, || format!("lower-better measure at o={o}, g={g}: {lower:?} != {want:?}"))?;
        }
    }
    check(worst <= 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("10000 pairs, max abs error {worst:e}, one-sided and clamped"))
}

// ---------------------------------------------------------------------------
// planted bias

fn planted_bias() -> Outcome {
    let config = AuditConfig {
        measures: vec![Measure::Tprp],
        match_threshold: 0.5,
        fairness_threshold: 0.2,
        mode: DisparityMode::Subtraction,
        ..AuditConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut synth = SynthConfig::new(Profile::Faculty, seed);
        synth.entities_per_group = 2000;
        let d = generate(&synth);
        let groups = extract_groups(&d.left, &d.right, &d.sensitive).map_err(|e| e.to_string())?;
        let model = ScoreModel::planted_on(&d.planted);
        let scores = synthetic_scores("synthetic", &d.pairs, &groups, &model, seed);
        let pairs = LabeledPairSet::new(SplitTag::Test, d.pairs.clone());
        let w = build_workload(&scores, &pairs, &groups, 0.5).map_err(|e| e.to_string())?;
        let report = audit(&w, &config, &groups).map_err(|e| e.to_string())?;
        let flagged: Vec<String> = report.unfair().map(|e| e.group.to_string()).collect();
        check(flagged == [d.planted.clone()], || format!("seed {seed}: flagged {flagged:?}, planted {}", d.planted))?;
        let got = report
            .find("synthetic", Measure::Tprp, &GroupLabel::Single(d.planted.clone()))
            .and_then(|e| e.disparity)
            .ok_or("planted group has no disparity")?;
        let want = expected_tprp_disparity(&d.pairs, &groups, &model, &d.planted, 0.5).ok_or("no expectation")?;
        worst = worst.max((got - want).abs());
        check((got - want).abs() <= 0.05, || format!("seed {seed}: disparity {got:.4}, expected {want:.4}"))?;
    }
    Ok(format!("20 seeds, only the planted group flagged on tprp, max |observed - expected| = {worst:.4} (<= 0.05)"))
}

// ---------------------------------------------------------------------------
// hypothesis-test calibration

fn calibration() -> Outcome {
    let (alpha, theta, k, trials) = (0.05, 0.2, 30, 1000);
    let mut r = rng::stream(11, 0xACC4);
    let mut rejected = 0;
    for _ in 0..trials {
        let values: Vec<f64> = (0..k).map(|_| theta + 0.05 * rng::standard_normal(&mut r)).collect();
        if test_values(&values, theta, alpha).map_err(|e| e.to_string())?.reject_null {
            rejected += 1;
        }
    }
    let rate = rejected as f64 / trials as f64;
    check((rate - alpha).abs() <= 0.02, || format!("rejection rate {rate} outside {alpha} +- 0.02"))?;

    // mean 0.5, sample sd exactly 0.05, k = 30
    let d = 0.05 * ((k as f64 - 1.0) / k as f64).sqrt();
    let values: Vec<f64> = (0..k).map(|i| if i % 2 == 0 { 0.5 + d } else { 0.5 - d }).collect();
    let t = test_values(&values, 0.2, alpha).map_err(|e| e.to_string())?;
    let z = t.z_statistic.ok_or("no z")?;
    check((z - 32.86).abs() <= 1e-2, || format!("worked example z = {z}"))?;
    Ok(format!("rejection rate {rate:.3} over {trials} fair populations (k={k}); worked example z = {z:.3}"))
}

// ---------------------------------------------------------------------------
// Pareto correctness

fn oracle_score(a: &[usize], t: &PerformanceTable, mode: DisparityMode) -> (f64, f64) {
    let o = t.measure.orientation();
    let v: Vec<f64> = a.iter().enumerate().map(|(g, &m)| t.values[g][m].unwrap()).collect();
    let worst = match o {
        Orientation::HigherBetter => v.iter().copied().fold(f64::INFINITY, f64::min),
        Orientation::LowerBetter => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    if v.iter().all(|&x| x == v[0]) {
        return (0.0, worst);
    }
    let total: u64 = t.supports.iter().sum();
    let mean = v.iter().zip(&t.supports).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64;
    let f = v
        .iter()
        .map(|&x| {
            let (ref_v, x) = match o {
                Orientation::HigherBetter => (mean, x),
                Orientation::LowerBetter => (1.0 - mean, 1.0 - x),
            };
            match mode {
                DisparityMode::Subtraction => (ref_v - x).max(0.0),
                DisparityMode::Division if ref_v == 0.0 => 0.0,
                DisparityMode::Division => (1.0 - x / ref_v).max(0.0),
            }
        })
        .fold(0.0, f64::max)
        .min(1.0);
    (f, worst)
}

fn all_maps(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..k {
        out = out.into_iter().flat_map(|p| (0..m).map(move |x| [p.clone(), vec![x]].concat())).collect();
    }
    out
}

fn pareto_correctness() -> Outcome {
    let mut r = rng::stream(5, 0xACC5);
    let mut spaces = Vec::new();
    for k in 1..=8usize {
        for m in 1..=256usize {
            let size = (m as u128).pow(k as u32);
            if size > 256 || (m == 1 && k > 8) {
                continue;
            }
            spaces.push((m, k));
        }
    }
    let mut cases = 0;
    for &(m, k) in &spaces {
        for trial in 0..4 {
            for measure in [Measure::Ppvp, Measure::Fprp] {
                for mode in [DisparityMode::Subtraction, DisparityMode::Division] {
                    // even trials use a coarse grid so ties occur
                    let values: Vec<Vec<Option<f64>>> = (0..k)
                        .map(|_| {
                            (0..m)
                                .map(|_| {
                                    Some(if trial % 2 == 0 { r.random_range(0..=4) as f64 / 4.0 } else { r.random::<f64>() })
                                })
                                .collect()
                        })
                        .collect();
                    let table = PerformanceTable {
                        measure,
                        groups: (0..k).map(|g| format!("g{g}")).collect(),
                        matchers: (0..m).map(|i| format!("m{i:03}")).collect(),
                        counts: vec![vec![ConfusionCounts::default(); m]; k],
                        values,
                        supports: (0..k).map(|_| r.random_range(1..100)).collect(),
                    };
                    let cfg = ResolutionConfig { measure, mode, ..Default::default() };
                    let best = best_per_group(&table).map_err(|e| e.to_string())?;
                    let (space, sampled) =
                        enumerate_assignments(&table.allowed(), m, &best, 100_000, 0).map_err(|e| e.to_string())?;
                    let full = all_maps(m, k);
                    let got_set: BTreeSet<&Vec<usize>> = space.iter().collect();
                    check(!sampled && got_set == full.iter().collect(), || format!("m={m} k={k}: enumeration incomplete"))?;
                    let scores: Vec<_> =
                        space.iter().map(|a| score_assignment(a, &table, &cfg)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
                    let o = measure.orientation();
                    let mut fa = Vec::new();
                    for (a, s) in space.iter().zip(&scores) {
                        let (f, w) = oracle_score(a, &table, mode);
                        check((f - s.unfairness).abs() <= 1e-12 && w == s.worst_performance, || {
                            format!("m={m} k={k} {a:?}: ({}, {}) vs oracle ({f}, {w})", s.unfairness, s.worst_performance)
                        })?;
                        fa.push((s.unfairness, s.worst_performance));
                    }
                    let better = |x: f64, y: f64| match o {
                        Orientation::HigherBetter => x > y,
                        Orientation::LowerBetter => x < y,
                    };
                    // O(n^2) non-dominated set, one assignment per (F, A)
                    let n = space.len();
                    let mut expected: BTreeMap<(u64, u64), &Vec<usize>> = BTreeMap::new();
                    for q in 0..n {
                        let dominated = (0..n).any(|p| {
                            fa[p].0 <= fa[q].0
                                && !better(fa[q].1, fa[p].1)
                                && (fa[p].0 < fa[q].0 || better(fa[p].1, fa[q].1))
                        });
                        if !dominated {
                            let key = (fa[q].0.to_bits(), fa[q].1.to_bits());
                            let e = expected.entry(key).or_insert(&space[q]);
                            if space[q] < **e {
                                *e = &space[q];
                            }
                        }
                    }
                    let frontier = pareto_indices(&scores, o);
                    let got: BTreeSet<&Vec<usize>> = frontier.iter().map(|&i| &space[i]).collect();
                    let want: BTreeSet<&Vec<usize>> = expected.values().copied().collect();
                    check(got == want, || format!("m={m} k={k} {measure} {mode:?}: frontier {got:?} != {want:?}"))?;
                    check(frontier.windows(2).all(|w| fa[w[0]].0 <= fa[w[1]].0), || "frontier not sorted by F".into())?;
                    let a_best = oracle_score(&best, &table, mode).1;
                    check(fa.iter().all(|&(_, a)| !better(a, a_best)), || format!("m={m} k={k}: best_per_group not optimal"))?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{} spaces with m^k <= 256, {cases} tables, frontier == brute force, best_per_group optimal", spaces.len()))
}

// ---------------------------------------------------------------------------
// resolution efficacy

fn efficacy_once(seed: u64) -> Result<(ResolutionSummary, String), String> {
    let mut synth = SynthConfig::new(Profile::Faculty, seed);
    synth.entities_per_group = 300;
    let d = generate(&synth);
    let groups = extract_groups(&d.left, &d.right, &d.sensitive).map_err(|e| e.to_string())?;
    let pairs = LabeledPairSet::new(SplitTag::Test, d.pairs.clone());
    let x_model = ScoreModel::planted_on(&d.planted);
    let y_model = ScoreModel { match_mean: 0.6, ..ScoreModel::default() };
    let workloads = [
        build_workload(&synthetic_scores("x", &d.pairs, &groups, &x_model, seed), &pairs, &groups, 0.5),
        build_workload(&synthetic_scores("y", &d.pairs, &groups, &y_model, seed + 1000), &pairs, &groups, 0.5),
    ]
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(|e| e.to_string())?;
    let config = AuditConfig { measures: vec![Measure::Tprp], ..AuditConfig::default() };
    let label = GroupLabel::Single(d.planted.clone());
    let flagged = |r: &AuditReport, m: &str| r.find(m, Measure::Tprp, &label).is_some_and(|e| e.unfair);

    let x_report = audit(&workloads[0], &config, &groups).map_err(|e| e.to_string())?;
    let y_report = audit(&workloads[1], &config, &groups).map_err(|e| e.to_string())?;
    check(flagged(&x_report, "x"), || format!("seed {seed}: X not unfair on {}", d.planted))?;
    check(y_report.unfair().next().is_none(), || format!("seed {seed}: Y is not fair"))?;

    let rc = ResolutionConfig { measure: Measure::Tprp, target_group: Some(d.planted.clone()), seed, ..Default::default() };
    let resolution = resolve(&workloads, &groups, &rc).map_err(|e| e.to_string())?;
    let mut clearing = Vec::new();
    for p in resolution.frontier() {
        let r = audit_strategy(&p.assignment, &workloads, &groups, &config).map_err(|e| e.to_string())?;
        if !flagged(&r, "ensemble") {
            clearing.push((p.unfairness, p.worst_performance, p.assignment.clone(), r));
        }
    }
    let first = clearing.first().ok_or_else(|| format!("seed {seed}: no frontier point clears {}", d.planted))?;
    let summary = ResolutionSummary { resolution: serde_json::to_string(&resolution).unwrap(), strategy: first.3.clone() };
    Ok((summary, format!("F={:.3} A={:.3} {:?}", first.0, first.1, first.2)))
}

#[derive(PartialEq)]
struct ResolutionSummary {
    resolution: String,
    strategy: AuditReport,
}

fn resolution_efficacy() -> Outcome {
    let mut example = String::new();
    for seed in 0..5 {
        let (a, text) = efficacy_once(seed)?;
        let (b, _) = efficacy_once(seed)?;
        check(a == b, || format!("seed {seed}: resolution differs between runs"))?;
        if seed == 0 {
            example = text;
        }
    }
    Ok(format!("5 seeds; X unfair on cn, Y fair; clearing frontier point found and stable, e.g. {example}"))
}

// ---------------------------------------------------------------------------
// CLI/HTTP parity and determinism

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("matchaudit").chain(args.iter().copied()).map(String::from);
    match run_with(argv, &mut out, &mut err) {
        0 => Ok(String::from_utf8(out).unwrap()),
        c => Err(format!("{args:?} exited {c}: {}", String::from_utf8_lossy(&err))),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline(root: &Path) -> Result<PathBuf, String> {
    let data = root.join("data");
    let session = root.join("session");
    cli(&["demo", "--profile", "compas", "--seed", "3", "--entities-per-group", "60", "--out", s(&data)])?;
    cli(&["ingest", "--manifest", s(&data.join("manifest.json")), "--out", s(&session)])?;
    cli(&["match", "--session", s(&session), "--matchers", "threshold,logistic,naive-bayes,decision-stump", "--seed", "9"])?;
    Ok(session)
}

fn parity() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let session = pipeline(root.path())?;
    let app = router(ServiceConfig::new(root.path()));
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for paradigm in ["single", "pairwise"] {
        for mode in ["subtraction", "division"] {
            for theta in ["0.1", "0.2"] {
                // fresh computation on each path
                std::fs::remove_dir_all(session.join("artifacts")).map_err(|e| e.to_string())?;
                std::fs::create_dir(session.join("artifacts")).map_err(|e| e.to_string())?;
                let body = json!({"paradigm": paradigm, "mode": mode, "fairness_threshold": theta.parse::<f64>().unwrap(), "match_threshold": 0.5});
                let (status, bytes) = rt.block_on(common::call_raw(&app, "POST", "/sessions/session/audit", Some(body)));
                check(status == StatusCode::OK, || format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes)))?;
                let http: AuditReport = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
                std::fs::remove_dir_all(session.join("artifacts")).map_err(|e| e.to_string())?;
                std::fs::create_dir(session.join("artifacts")).map_err(|e| e.to_string())?;
                let out = cli(&["audit", "--session", s(&session), "--paradigm", paradigm, "--mode", mode, "--fairness-threshold", theta, "--json"])?;
                let local: AuditReport = serde_json::from_str(&out).map_err(|e| e.to_string())?;
                check(!http.entries.is_empty() && http == local, || format!("{paradigm}/{mode}/{theta}: reports differ"))?;
                compared += http.entries.len();
            }
        }
    }
    Ok(format!("8 audit configs, {compared} entries identical between CLI and HTTP"))
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut trees = Vec::new();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let session = pipeline(root.path())?;
        let audited = cli(&["audit", "--session", s(&session), "--json"])?;
        let mw = cli(&["multiworkload", "--session", s(&session), "--k", "20", "--seed", "4", "--json"])?;
        let res = cli(&["resolve", "--session", s(&session), "--measure", "tprp", "--cap", "50", "--seed", "2", "--json"])?;
        outputs.push((audited, mw, res));
        trees.push(tree(root.path()));
    }
    check(outputs[0] == outputs[1], || "command output differs between runs".into())?;
    let (a, b) = (&trees[0], &trees[1]);
    check(a.keys().eq(b.keys()), || "file sets differ".into())?;
    for (k, v) in a {
        check(&b[k] == v, || format!("{} differs", k.display()))?;
    }
    Ok(format!("ingest, train 4 matchers, audit, multiworkload, resolve: {} files bit-identical across runs", a.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("confusion-oracle", confusion_oracle),
        ("disparity-formulas", disparity_formulas),
        ("planted-bias", planted_bias),
        ("test-calibration", calibration),
        ("pareto-correctness", pareto_correctness),
        ("resolution-efficacy", resolution_efficacy),
        ("cli-http-parity", parity),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{}] {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{}] {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
