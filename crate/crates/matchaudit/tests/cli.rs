mod common;

use std::path::Path;
use std::process::Command;

use matchaudit::cli::run_with;
use matchaudit_core::audit::AuditReport;
use matchaudit_core::Measure;

fn run(args: &[&str]) -> (u8, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("matchaudit").chain(args.iter().copied()).map(String::from);
    let code = run_with(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "{args:?}: {err}");
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn planted_session(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    let session = dir.join("s");
    ok(&["demo", "--profile", "faculty", "--seed", "1", "--out", p(&data)]);
    ok(&["ingest", "--manifest", p(&data.join("manifest.json")), "--out", p(&session)]);
    ok(&["match", "--session", p(&session), "--matchers", "logistic,naive-bayes", "--seed", "1"]);
    session
}

fn boundary_session(dir: &Path) -> std::path::PathBuf {
    common::write_boundary(dir);
    let session = dir.join("s");
    ok(&[
        "ingest",
        "--table-a",
        p(&dir.join("tableA.csv")),
        "--table-b",
        p(&dir.join("tableB.csv")),
        "--test",
        p(&dir.join("test.csv")),
        "--sensitive",
        "grp",
        "--mode",
        "evaluate-only",
        "--scores",
        &format!("ext={}", p(&dir.join("ext.csv"))),
        "--out",
        p(&session),
    ]);
    session
}

#[test]
fn planted_group_has_an_unfair_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = planted_session(dir.path());
    let csv = ok(&["audit", "--session", p(&s), "--measures", "tprp", "--csv"]);
    let unfair: Vec<&str> = csv.lines().filter(|l| l.contains(",true,")).collect();
    assert_eq!(unfair.len(), 1, "{csv}");
    assert!(unfair[0].starts_with("logistic,single,tprp,cn,"), "{}", unfair[0]);

    let table = ok(&["audit", "--session", p(&s), "--measures", "tprp", "--unfair-only"]);
    assert_eq!(table.lines().count(), 2, "{table}");
    assert!(!table.contains('\x1b'), "color on a non-terminal");
}

#[test]
fn disparity_at_threshold_is_not_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let s = boundary_session(dir.path());
    let json = ok(&["audit", "--session", p(&s), "--measures", "tprp", "--fairness-threshold", "0.2", "--json"]);
    let r: AuditReport = serde_json::from_str(&json).unwrap();
    let a = &r.entries[0];
    assert_eq!(a.group.to_string(), "a");
    assert_eq!(a.disparity, Some(0.2));
    assert!(!a.unfair);
    let json = ok(&["audit", "--session", p(&s), "--measures", "tprp", "--fairness-threshold", "0.19", "--json"]);
    let r: AuditReport = serde_json::from_str(&json).unwrap();
    assert!(r.entries[0].unfair);
}

#[test]
fn json_and_csv_carry_identical_values() {
    let dir = tempfile::tempdir().unwrap();
    let s = planted_session(dir.path());
    for paradigm in ["single", "pairwise"] {
        let json = ok(&["audit", "--session", p(&s), "--paradigm", paradigm, "--json"]);
        let csv = ok(&["audit", "--session", p(&s), "--paradigm", paradigm, "--csv"]);
        let report: AuditReport = serde_json::from_str(&json).unwrap();
        let mut rdr = csv::Reader::from_reader(csv.as_bytes());
        assert_eq!(
            rdr.headers().unwrap().iter().collect::<Vec<_>>(),
            matchaudit::csvio::AUDIT_COLUMNS
        );
        let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
        assert_eq!(rows.len(), report.entries.len());
        let num = |s: &str| (!s.is_empty()).then(|| s.parse::<f64>().unwrap());
        for (e, r) in report.entries.iter().zip(&rows) {
            assert_eq!(r[0], e.matcher);
            assert_eq!(r[1], *e.paradigm.as_str());
            assert_eq!(r[2].parse::<Measure>().unwrap(), e.measure);
            assert_eq!(r[3], e.group.to_string());
            assert_eq!(num(&r[4]), e.group_value);
            assert_eq!(num(&r[5]), e.overall_value);
            assert_eq!(num(&r[6]), e.disparity);
            assert_eq!(r[8].parse::<bool>().unwrap(), e.unfair);
            let counts: Vec<u64> = (9..13).map(|i| r[i].parse().unwrap()).collect();
            assert_eq!(counts, [e.support.tp, e.support.fp, e.support.fn_, e.support.tn]);
        }
    }
}

#[test]
fn resolve_apply_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let s = planted_session(dir.path());
    let (code, _, err) = run(&["resolve", "--session", p(&s), "--measure", "tprp"]);
    assert_eq!(code, 1);
    assert!(err.contains("out_of_order"), "{err}");

    ok(&["audit", "--session", p(&s), "--measures", "tprp"]);
    let explained = ok(&["explain", "--session", p(&s), "--matcher", "logistic", "--group", "cn", "--measure", "tprp"]);
    let v: serde_json::Value = serde_json::from_str(&explained).unwrap();
    assert_eq!(v["measure_breakdown"]["driver"], "fn");

    let table = ok(&["resolve", "--session", p(&s), "--measure", "tprp", "--target-group", "cn"]);
    assert!(table.contains("cn=naive-bayes"), "{table}");
    let assignment = dir.path().join("assignment.json");
    std::fs::write(&assignment, r#"{"cn": "naive-bayes", "de": "logistic", "us": "logistic"}"#).unwrap();
    let csv = ok(&["resolve", "apply", "--session", p(&s), "--assignment", p(&assignment), "--csv"]);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("ensemble,single,")));
    assert!(!csv.contains(",true,"), "{csv}");

    std::fs::write(&assignment, r#"{"cn": "nobody"}"#).unwrap();
    let (code, _, err) = run(&["resolve", "apply", "--session", p(&s), "--assignment", p(&assignment)]);
    assert_eq!(code, 1, "{err}");
}

#[test]
fn multiworkload_flags_planted_group() {
    let dir = tempfile::tempdir().unwrap();
    let s = planted_session(dir.path());
    let csv = ok(&["multiworkload", "--session", p(&s), "--k", "30", "--seed", "5", "--measures", "tprp", "--csv"]);
    let rejected: Vec<&str> = csv.lines().filter(|l| l.contains(",true,")).collect();
    assert_eq!(rejected.len(), 1, "{csv}");
    assert!(rejected[0].starts_with("logistic,tprp,cn,30,"));
}

#[test]
fn exit_codes() {
    let bin = env!("CARGO_BIN_EXE_matchaudit");
    let code = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code().unwrap();
    let dir = tempfile::tempdir().unwrap();

    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["audit", "--bogus"]), 1);
    assert_eq!(code(&["audit", "--session", p(&dir.path().join("none"))]), 1);

    let s = boundary_session(dir.path());
    assert_eq!(code(&["audit", "--session", p(&s), "--measures", "nope"]), 1);
    assert_eq!(code(&["audit", "--session", p(&s), "--fairness-threshold", "2"]), 1);
    assert_eq!(code(&["audit", "--session", p(&s)]), 0);

    std::fs::write(s.join("groups.json"), "{ not json").unwrap();
    assert_eq!(code(&["audit", "--session", p(&s), "--fairness-threshold", "0.3"]), 2);
}

#[test]
fn ingest_errors_report_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    common::write_boundary(dir.path());
    std::fs::write(dir.path().join("bad.csv"), "ltable_id,rtable_id,label\na0,b0,1\na0,b42,0\n").unwrap();
    let (code, _, err) = run(&[
        "ingest",
        "--table-a",
        p(&dir.path().join("tableA.csv")),
        "--table-b",
        p(&dir.path().join("tableB.csv")),
        "--test",
        p(&dir.path().join("bad.csv")),
        "--sensitive",
        "grp",
        "--out",
        p(&dir.path().join("s")),
    ]);
    assert_eq!(code, 1);
    assert!(err.contains("error[dangling_reference]"), "{err}");
    assert!(err.contains("bad.csv:3:"), "{err}");
}
