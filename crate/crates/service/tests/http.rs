use std::path::Path;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;
use tutorbench_core::corpus::Speaker;
use tutorbench_core::generation::{CandidateReply, Provenance};
use tutorbench_core::pipeline::{PipelineConfig, PoolFile, POOL_FILE};
use tutorbench_core::records::{ContextTurn, ItemRecord};
use tutorbench_service::{router, AppState};

const TOKEN: &str = "s3cret";
const AGENTS: [&str; 3] = ["ref-agent", "bot-b", "bot-c"];

fn write_pool(dir: &Path, n: usize) {
    let mut pool = PoolFile::default();
    for i in 0..n {
        let item_id = format!("item-{i:02}");
        pool.items.push(ItemRecord {
            item_id: item_id.clone(),
            dialogue_id: format!("d{i}"),
            context: vec![ContextTurn {
                speaker: Speaker::Teacher,
                text: format!("How would you say sentence {i}?"),
            }],
            student_utterance: format!("I think it is number {i}"),
            reference_teacher_reply: format!("Good, number {i}."),
            labels: vec!["eliciting".into()],
        });
        for (k, agent) in AGENTS.iter().enumerate() {
            pool.replies.push(CandidateReply {
                item_id: item_id.clone(),
                agent: agent.to_string(),
                text: format!("reply variant {k} on {i}"),
                provenance: if k == 0 { Provenance::Reference } else { Provenance::Generated },
                uptake_score: None,
                perplexity: None,
            });
        }
    }
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join(POOL_FILE), pool.to_jsonl()).unwrap();
}

fn config(root: &Path, store: bool) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed: 11,
        ..PipelineConfig::default()
    };
    cfg.paths.out_dir = root.join("out");
    cfg.survey.logical_clock = true;
    cfg.survey.fsync = false;
    if store {
        cfg.survey.store_dir = Some(root.join("store"));
    }
    cfg
}

fn app(cfg: PipelineConfig) -> Router {
    router(Arc::new(AppState::new(cfg, Some(TOKEN.into())).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(v) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, bytes.to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn start(app: &Router, evaluator: &str) -> String {
    let (s, v) = call_json(app, Method::POST, "/sessions", Some(json!({ "evaluator_id": evaluator }))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let id = v["session_id"].as_str().unwrap().to_string();
    let (s, _) = call_json(app, Method::POST, &format!("/sessions/{id}/consent"), Some(json!({ "given": true }))).await;
    assert_eq!(s, StatusCode::OK);
    id
}

async fn answer_all(app: &Router, id: &str) -> usize {
    let mut submitted = 0;
    loop {
        let (s, task) = call_json(app, Method::GET, &format!("/sessions/{id}/task"), None).await;
        if s == StatusCode::GONE {
            return submitted;
        }
        assert_eq!(s, StatusCode::OK, "{task}");
        let idx = task["task_index"].as_u64().unwrap();
        for q in task["questions"].as_array().unwrap() {
            let body = json!({ "task_index": idx, "ability": q["ability"], "choice": "left" });
            let (s, v) = call_json(app, Method::POST, &format!("/sessions/{id}/judgments"), Some(body)).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            submitted += 1;
        }
    }
}

#[tokio::test]
async fn health_reports_pool() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = app(config(dir.path(), false));
    let (s, v) = call_json(&app, Method::GET, "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["pool_items"], 20);
    assert_eq!(v["sessions"], 0);
}

#[tokio::test]
async fn without_pool_survey_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(config(dir.path(), false));
    let (s, v) = call_json(&app, Method::POST, "/sessions", Some(json!({ "evaluator_id": "e" }))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "no_pool");

    write_pool(&dir.path().join("out"), 16);
    let (s, _) = call(&app, Method::POST, "/admin/reload", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call_json(&app, Method::POST, "/sessions", Some(json!({ "evaluator_id": "e" }))).await;
    assert_eq!(s, StatusCode::CREATED);
}

#[tokio::test]
async fn consent_gates_judgments() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = app(config(dir.path(), false));
    let (_, v) = call_json(&app, Method::POST, "/sessions", Some(json!({ "evaluator_id": "r1" }))).await;
    let id = v["session_id"].as_str().unwrap();
    assert_eq!(v["consent_given"], false);
    assert_eq!(v["total_tasks"], 16);

    let body = json!({ "task_index": 0, "ability": "help_student", "choice": "left" });
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/judgments"), Some(body)).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(v["error"], "consent_missing");
}

#[tokio::test]
async fn out_of_order_reports_expected_index() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = app(config(dir.path(), false));
    let id = start(&app, "r1").await;
    let body = json!({ "task_index": 3, "ability": "help_student", "choice": "B" });
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/judgments"), Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "out_of_order");
    assert_eq!(v["expected_task_index"], 0);
}

#[tokio::test]
async fn unknown_session_and_bad_body() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = app(config(dir.path(), false));
    let (s, v) = call_json(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "session_not_found");
    let (s, v) = call_json(&app, Method::POST, "/sessions", Some(json!({ "who": "x" }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");
    let (s, v) = call_json(&app, Method::POST, "/sessions", Some(json!({ "evaluator_id": "" }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "invalid_request");
}

#[tokio::test]
async fn full_session_exports_without_leaking_agents() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = app(config(dir.path(), false));
    let id = start(&app, "r1").await;

    let mut seen = Vec::new();
    loop {
        let (s, raw) = call(&app, Method::GET, &format!("/sessions/{id}/task"), None, None).await;
        if s == StatusCode::GONE {
            break;
        }
        seen.push(String::from_utf8(raw.clone()).unwrap());
        let task: Value = serde_json::from_slice(&raw).unwrap();
        let idx = task["task_index"].as_u64().unwrap();
        for q in task["questions"].as_array().unwrap() {
            let body = json!({ "task_index": idx, "ability": q["ability"], "choice": "tie" });
            let (s, raw) = call(&app, Method::POST, &format!("/sessions/{id}/judgments"), Some(body), None).await;
            assert_eq!(s, StatusCode::OK);
            seen.push(String::from_utf8(raw).unwrap());
        }
    }
    assert_eq!(seen.len(), 16 * 4);
    for payload in &seen {
        assert!(!payload.contains("\"agent\""), "{payload}");
        for agent in AGENTS.iter().chain(&["calibration-foil"]) {
            assert!(!payload.contains(agent), "agent {agent} leaked in {payload}");
        }
    }

    let (s, _) = call(&app, Method::GET, "/export/judgments", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = call(&app, Method::GET, "/export/judgments", None, Some("wrong")).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    let (s, raw) = call(&app, Method::GET, "/export/judgments", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    let lines: Vec<Value> = std::str::from_utf8(&raw)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 45);
    assert!(lines.iter().all(|l| l["evaluator_id"] == "r1"));
    let (_, raw) = call(&app, Method::GET, "/export/judgments?set=calibration", None, Some(TOKEN)).await;
    assert_eq!(std::str::from_utf8(&raw).unwrap().lines().count(), 3);

    let (s, raw) = call(&app, Method::GET, "/export/calibration-agreement", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::OK);
    let agreement: Value = serde_json::from_slice(&raw).unwrap();
    assert_eq!(agreement.as_array().unwrap().len(), 3);

    let body = json!({ "task_index": 15, "ability": "help_student", "choice": "left" });
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/judgments"), Some(body)).await;
    assert_eq!(s, StatusCode::GONE);
    assert_eq!(v["error"], "session_complete");
}

#[tokio::test]
async fn operator_routes_disabled_without_token() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = router(Arc::new(AppState::new(config(dir.path(), false), None).unwrap()));
    let (s, raw) = call(&app, Method::GET, "/export/judgments", None, Some("anything")).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let v: Value = serde_json::from_slice(&raw).unwrap();
    assert_eq!(v["error"], "operator_disabled");
}

#[tokio::test]
async fn judgments_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let first = app(config(dir.path(), true));
    let a = start(&first, "r1").await;
    assert_eq!(answer_all(&first, &a).await, 48);
    let b = start(&first, "r2").await;
    let body = json!({ "task_index": 0, "ability": "speak_like_teacher", "choice": "right" });
    let (s, _) = call_json(&first, Method::POST, &format!("/sessions/{b}/judgments"), Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    let (_, before) = call(&first, Method::GET, "/export/judgments", None, Some(TOKEN)).await;
    drop(first);

    let second = app(config(dir.path(), true));
    let (_, after) = call(&second, Method::GET, "/export/judgments", None, Some(TOKEN)).await;
    assert_eq!(before, after);
    let (_, v) = call_json(&second, Method::GET, &format!("/sessions/{b}"), None).await;
    assert_eq!(v["cursor"], 0);
    assert_eq!(v["task"]["answered"]["speak_like_teacher"], "right");
    let (_, h) = call_json(&second, Method::GET, "/healthz", None).await;
    assert_eq!(h["sessions"], 2);
}

#[tokio::test]
async fn pipeline_routes_need_token_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let app = app(config(dir.path(), false));
    let (s, _) = call(&app, Method::POST, "/v1/fit", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, raw) = call(&app, Method::POST, "/v1/simulate", Some(json!({ "bogus": 1 })), Some(TOKEN)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&raw));
    let (s, raw) = call(&app, Method::POST, "/v1/prepare", None, Some(TOKEN)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&raw));
}

#[tokio::test]
async fn serves_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    write_pool(&dir.path().join("out"), 20);
    let state = Arc::new(AppState::new(config(dir.path(), false), Some(TOKEN.into())).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(tutorbench_service::serve(listener, state, async {
        let _ = rx.await;
    }));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    assert!(buf.contains("\"pool_items\":20"));
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}
