mod common;

use axum::http::StatusCode;
use common::*;
use matchaudit::service::{router, ErrorResponse, JobStatus, MatcherCatalog, ServiceConfig, SessionCreated};
use matchaudit::session::{IngestSummary, SessionMeta};
use matchaudit_core::audit::AuditReport;
use matchaudit_core::explain::Explanation;
use matchaudit_core::resolve::Resolution;
use matchaudit_core::stats::MultiWorkloadReport;
use matchaudit_core::{GroupLabel, Measure};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

fn app(root: &std::path::Path) -> axum::Router {
    router(ServiceConfig::new(root))
}

/// Decodes into the typed response and checks that re-encoding gives the
/// same JSON value.
fn roundtrip<T: DeserializeOwned + serde::Serialize>(v: &Value) -> T {
    let t: T = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(&serde_json::to_value(&t).unwrap(), v);
    t
}

async fn new_session(app: &axum::Router) -> String {
    let (s, v) = call(app, "POST", "/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    roundtrip::<SessionCreated>(&v).session_id
}

fn unfair_groups(report: &AuditReport, matcher: &str, measure: Measure) -> Vec<String> {
    report
        .entries
        .iter()
        .filter(|e| e.matcher == matcher && e.measure == measure && e.unfair)
        .map(|e| e.group.to_string())
        .collect()
}

#[tokio::test(flavor = "multi_thread")]
async fn synthetic_walkthrough() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());

    let (s, v) = call(&app, "POST", "/demo/datasets", Some(json!({"profile": "faculty", "seed": 1}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let summary: IngestSummary = roundtrip(&v);
    assert_eq!(summary.subgroups, ["cn", "de", "us"]);
    let id = summary.session_id;

    let (s, v) = call(&app, "GET", &format!("/sessions/{id}/matchers"), None).await;
    assert_eq!(s, StatusCode::OK);
    let catalog: MatcherCatalog = roundtrip(&v);
    assert_eq!(catalog.builtin.len(), 4);
    assert!(catalog.builtin.iter().all(|c| !c.description.is_empty()));

    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/match"),
        Some(json!({"matcher_ids": ["logistic", "naive-bayes"], "seed": 1})),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job = wait_job(&app, v["job_id"].as_str().unwrap()).await;
    let job: JobStatus = roundtrip(&job);
    assert_eq!(job.progress, 1.0);
    assert_eq!(job.result.unwrap().matchers.len(), 2);

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/audit"), Some(json!({"measures": ["tprp"]}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let report: AuditReport = roundtrip(&v);
    assert_eq!(unfair_groups(&report, "logistic", Measure::Tprp), ["cn"]);
    assert!(unfair_groups(&report, "naive-bayes", Measure::Tprp).is_empty());

    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/explain"),
        Some(json!({"matcher_id": "logistic", "group": "cn", "measure": "tprp"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let e: Explanation = serde_json::from_value(v).unwrap();
    let entry = report.find("logistic", Measure::Tprp, &GroupLabel::Single("cn".into())).unwrap();
    assert_eq!(e.measure_breakdown.disparity, entry.disparity);

    let (s, v) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/resolve"),
        Some(json!({"measure": "tprp", "target_group": "cn"})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let resolution: Resolution = serde_json::from_value(v).unwrap();
    assert_eq!(resolution.space.enumerated, 8);

    // a frontier point whose strategy re-audit clears cn
    let mut cleared = false;
    for p in resolution.frontier() {
        let (s, v) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/resolve/strategy"),
            Some(json!({"assignment": p.assignment, "config": {"measures": ["tprp"]}})),
        )
        .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        let r: AuditReport = roundtrip(&v);
        if p.assignment["cn"] == "naive-bayes" {
            assert!(unfair_groups(&r, "ensemble", Measure::Tprp).is_empty());
            cleared = true;
        }
    }
    assert!(cleared, "no frontier point assigns cn to naive-bayes");

    let (s, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let meta: SessionMeta = roundtrip(&v);
    assert_eq!(meta.state.as_str(), "resolved");
}

#[tokio::test]
async fn out_of_order_and_unknown() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());
    let id = new_session(&app).await;

    for path in ["audit", "audit/multiworkload", "explain", "resolve", "resolve/strategy"] {
        let body = match path {
            "explain" => json!({"matcher_id": "x", "group": "a", "measure": "tprp"}),
            "resolve/strategy" => json!({"assignment": {"a": "x"}}),
            _ => json!({}),
        };
        let (s, v) = call(&app, "POST", &format!("/sessions/{id}/{path}"), Some(body)).await;
        assert_eq!(s, StatusCode::CONFLICT, "{path}: {v}");
        let e: ErrorResponse = serde_json::from_value(v).unwrap();
        assert_eq!(e.error.code, "out_of_order");
    }
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/match"), Some(json!({"matcher_ids": ["logistic"]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let (s, v) = call(&app, "POST", "/sessions/nope/audit", Some(json!({}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
    let (s, _) = call(&app, "GET", "/jobs/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/sessions/..%2F..%2Fetc/matchers", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/match"), Some(json!({"matcher_ids": ["magic"]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "matcher_error");
}

#[tokio::test]
async fn evaluate_only_upload() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());
    let id = new_session(&app).await;
    let f = boundary_fixture();
    let body = multipart(&[
        ("table_a", PartBody::File("tableA.csv", f.table_a.as_bytes())),
        ("table_b", PartBody::File("tableB.csv", f.table_b.as_bytes())),
        ("test", PartBody::File("test.csv", f.test.as_bytes())),
        ("sensitive", PartBody::Text("grp")),
        ("mode", PartBody::Text("evaluate-only")),
        ("scores", PartBody::File("myMatcher.csv", f.scores.as_bytes())),
    ]);
    let (s, v) = upload(&app, &id, body).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let summary: IngestSummary = roundtrip(&v);
    assert_eq!(summary.matchers, ["external:myMatcher"]);
    assert_eq!(summary.state.as_str(), "matched");

    // audit is now allowed; the boundary group is not flagged at 0.2
    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/audit"), Some(json!({"measures": ["tprp"]}))).await;
    assert_eq!(s, StatusCode::OK);
    let r: AuditReport = roundtrip(&v);
    let a = r.find("external:myMatcher", Measure::Tprp, &GroupLabel::Single("a".into())).unwrap();
    assert_eq!(a.disparity, Some(0.2));
    assert!(!a.unfair);

    // second upload into the same session is out of order
    let (s, _) = upload(
        &app,
        &id,
        multipart(&[
            ("table_a", PartBody::File("tableA.csv", f.table_a.as_bytes())),
            ("table_b", PartBody::File("tableB.csv", f.table_b.as_bytes())),
            ("test", PartBody::File("test.csv", f.test.as_bytes())),
            ("sensitive", PartBody::Text("grp")),
        ]),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn upload_validation_errors() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());
    let f = boundary_fixture();

    let id = new_session(&app).await;
    let (s, v) = upload(&app, &id, multipart(&[("table_a", PartBody::File("a.csv", f.table_a.as_bytes()))])).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "missing_part");

    let dangling = format!("{}a99,b1,1\n", f.test);
    let (s, v) = upload(
        &app,
        &id,
        multipart(&[
            ("table_a", PartBody::File("tableA.csv", f.table_a.as_bytes())),
            ("table_b", PartBody::File("tableB.csv", f.table_b.as_bytes())),
            ("test", PartBody::File("test.csv", dangling.as_bytes())),
            ("sensitive", PartBody::Text("grp")),
        ]),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "dangling_reference");
    assert!(v["error"]["message"].as_str().unwrap().starts_with("test.csv:22:"), "{v}");

    // evaluate-only with a score file missing a test pair
    let short: String = f.scores.lines().take(20).map(|l| format!("{l}\n")).collect();
    let (s, v) = upload(
        &app,
        &id,
        multipart(&[
            ("table_a", PartBody::File("tableA.csv", f.table_a.as_bytes())),
            ("table_b", PartBody::File("tableB.csv", f.table_b.as_bytes())),
            ("test", PartBody::File("test.csv", f.test.as_bytes())),
            ("sensitive", PartBody::Text("grp")),
            ("mode", PartBody::Text("evaluate-only")),
            ("scores", PartBody::File("m.csv", short.as_bytes())),
        ]),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("a19"), "{v}");

    let (s, v) = call(&app, "POST", "/demo/datasets", Some(json!({"profile": "nope"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_request");
    let (s, _) = call_raw(&app, "POST", "/demo/datasets", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn repeated_posts_return_cached_artifacts() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());
    let id = new_session(&app).await;
    let f = boundary_fixture();
    let (s, _) = upload(
        &app,
        &id,
        multipart(&[
            ("table_a", PartBody::File("tableA.csv", f.table_a.as_bytes())),
            ("table_b", PartBody::File("tableB.csv", f.table_b.as_bytes())),
            ("test", PartBody::File("test.csv", f.test.as_bytes())),
            ("sensitive", PartBody::Text("grp")),
            ("mode", PartBody::Text("evaluate-only")),
            ("scores", PartBody::File("ext.csv", f.scores.as_bytes())),
        ]),
    )
    .await;
    assert_eq!(s, StatusCode::OK);

    let uri = format!("/sessions/{id}/audit");
    let (_, first) = call_raw(&app, "POST", &uri, Some(json!({"measures": ["tprp"]}))).await;
    let artifacts = std::fs::read_dir(root.path().join(&id).join("artifacts")).unwrap().count();
    let (_, second) = call_raw(&app, "POST", &uri, Some(json!({"measures": ["tprp"]}))).await;
    // explicit defaults hash to the same artifact
    let (_, third) = call_raw(
        &app,
        "POST",
        &uri,
        Some(json!({"measures": ["tprp"], "match_threshold": 0.5, "fairness_threshold": 0.2})),
    )
    .await;
    assert_eq!(first, second);
    assert_eq!(first, third);
    assert_eq!(std::fs::read_dir(root.path().join(&id).join("artifacts")).unwrap().count(), artifacts);

    // GET does not change the session
    let meta = std::fs::read(root.path().join(&id).join("session.json")).unwrap();
    call(&app, "GET", &format!("/sessions/{id}"), None).await;
    call(&app, "GET", &format!("/sessions/{id}/matchers"), None).await;
    assert_eq!(std::fs::read(root.path().join(&id).join("session.json")).unwrap(), meta);

    let (s, v) = call(&app, "POST", &format!("/sessions/{id}/audit/multiworkload"), Some(json!({"k": 10, "seed": 3}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let m: MultiWorkloadReport = roundtrip(&v);
    assert!(m.rows.iter().all(|r| r.k + r.undefined == 10));
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_are_isolated() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());
    let (a, b) = tokio::join!(
        call(&app, "POST", "/demo/datasets", Some(json!({"profile": "faculty", "seed": 2, "entities_per_group": 20}))),
        call(&app, "POST", "/demo/datasets", Some(json!({"profile": "compas", "seed": 2, "entities_per_group": 20}))),
    );
    let (a, b) = (a.1["session_id"].as_str().unwrap().to_string(), b.1["session_id"].as_str().unwrap().to_string());
    assert_ne!(a, b);
    let (_, job) = call(&app, "POST", &format!("/sessions/{a}/match"), Some(json!({"matcher_ids": ["threshold"]}))).await;
    wait_job(&app, job["job_id"].as_str().unwrap()).await;
    let (_, ma) = call(&app, "GET", &format!("/sessions/{a}/matchers"), None).await;
    let (_, mb) = call(&app, "GET", &format!("/sessions/{b}/matchers"), None).await;
    assert_eq!(ma["session"], json!(["threshold"]));
    assert_eq!(mb["session"], json!([]));
    let (s, _) = call(&app, "POST", &format!("/sessions/{b}/audit"), Some(json!({}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn spec_document_lists_every_route() {
    let root = tempfile::tempdir().unwrap();
    let app = app(root.path());
    let (s, v) = call(&app, "GET", "/spec", None).await;
    assert_eq!(s, StatusCode::OK);
    for p in [
        "/sessions",
        "/sessions/{id}/dataset",
        "/sessions/{id}/matchers",
        "/sessions/{id}/match",
        "/jobs/{id}",
        "/sessions/{id}/audit",
        "/sessions/{id}/audit/multiworkload",
        "/sessions/{id}/explain",
        "/sessions/{id}/resolve",
        "/sessions/{id}/resolve/strategy",
        "/demo/datasets",
    ] {
        assert!(v["paths"].get(p).is_some(), "{p}");
    }
}
