#![allow(dead_code)]

use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const BOUNDARY: &str = "----matchaudit-test-boundary";

/// Two groups of ten true matches each; group `a` has 3 true positives and
/// group `b` 7 at threshold 0.5, so TPRP disparity of `a` is exactly 0.2.
pub struct BoundaryFixture {
    pub table_a: String,
    pub table_b: String,
    pub test: String,
    pub scores: String,
}

pub fn boundary_fixture() -> BoundaryFixture {
    let mut table_a = String::from("id,name,grp\n");
    let mut table_b = String::from("id,name,grp\n");
    let mut test = String::from("ltable_id,rtable_id,label\n");
    let mut scores = String::from("ltable_id,rtable_id,score\n");
    for i in 0..20 {
        let g = if i < 10 { "a" } else { "b" };
        table_a.push_str(&format!("a{i},person {i},{g}\n"));
        table_b.push_str(&format!("b{i},person {i},{g}\n"));
        test.push_str(&format!("a{i},b{i},1\n"));
        let hit = if i < 10 { i < 3 } else { i < 17 };
        scores.push_str(&format!("a{i},b{i},{}\n", if hit { 0.9 } else { 0.1 }));
    }
    BoundaryFixture {
        table_a,
        table_b,
        test,
        scores,
    }
}

pub fn write_boundary(dir: &Path) -> BoundaryFixture {
    let f = boundary_fixture();
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("tableA.csv"), &f.table_a).unwrap();
    std::fs::write(dir.join("tableB.csv"), &f.table_b).unwrap();
    std::fs::write(dir.join("test.csv"), &f.test).unwrap();
    std::fs::write(dir.join("ext.csv"), &f.scores).unwrap();
    f
}

pub enum PartBody<'a> {
    Text(&'a str),
    File(&'a str, &'a [u8]),
}

pub fn multipart(parts: &[(&str, PartBody<'_>)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, body) in parts {
        out.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match body {
            PartBody::Text(t) => {
                out.extend_from_slice(format!("Content-Disposition: form-data; name=\"{name}\"\r\n\r\n").as_bytes());
                out.extend_from_slice(t.as_bytes());
            }
            PartBody::File(file, bytes) => {
                out.extend_from_slice(
                    format!(
                        "Content-Disposition: form-data; name=\"{name}\"; filename=\"{file}\"\r\nContent-Type: text/csv\r\n\r\n"
                    )
                    .as_bytes(),
                );
                out.extend_from_slice(bytes);
            }
        }
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    out
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: {e}: {}", String::from_utf8_lossy(&bytes)))
    };
    (status, v)
}

pub async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn upload(app: &Router, session: &str, body: Vec<u8>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(format!("/sessions/{session}/dataset"))
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

/// Polls a job until it reaches a terminal state.
pub async fn wait_job(app: &Router, job: &str) -> Value {
    for _ in 0..600 {
        let (status, v) = call(app, "GET", &format!("/jobs/{job}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(std::time::Duration::from_millis(50)).await;
    }
    panic!("job {job} did not finish");
}
