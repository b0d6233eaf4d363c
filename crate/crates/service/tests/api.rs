use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use factgraph::generation::HttpGenerator;
use factgraph::http::HttpConfig;
use factgraph::pipeline::{Clients, Engine, EngineConfig, RuleOptions, Rules};
use factgraph_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(clients: Clients, ratings: &std::path::Path) -> Arc<AppState> {
    let rules = Arc::new(Rules::bundled(RuleOptions::default()).unwrap());
    Arc::new(AppState::new(Engine::new(rules, EngineConfig::default(), clients), ratings.to_path_buf()))
}

fn app(dir: &tempfile::TempDir) -> Arc<AppState> {
    app_with(Clients::deterministic(), &dir.path().join("ratings.jsonl"))
}

async fn call(app: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = router(app.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

async fn create(app: &Arc<AppState>, mode: &str, seed: u64) -> String {
    let (s, v) = call(app, "POST", "/v1/sessions", Some(json!({"mode": mode, "seed": seed}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    for uri in ["/healthz", "/v1/healthz"] {
        let (s, v) = call(&a, "GET", uri, None).await;
        assert_eq!((s, v), (StatusCode::OK, json!("ok")));
    }
}

#[tokio::test]
async fn session_creation() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let id = create(&a, "relevance_logic", 7).await;
    assert_eq!(id.len(), 32);
    assert!(id.chars().all(|c| c.is_ascii_hexdigit()));
    let (s, _) = call(&a, "POST", "/v1/sessions", Some(json!({"mode": "everything"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let bad_kb = json!({"mode": "relevance", "kb": {"nodes": [{"id": "x", "kind": "person"}, {"id": "x", "kind": "person"}]}});
    assert_eq!(call(&a, "POST", "/v1/sessions", Some(bad_kb)).await.0, StatusCode::BAD_REQUEST);
    let (s, v) = call(&a, "POST", "/v1/sessions", Some(json!({"mode": "no_facts"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(v["seed"].is_u64());
}

#[tokio::test]
async fn state_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let id = create(&a, "relevance", 3).await;
    let (s, v) = call(&a, "GET", &format!("/v1/sessions/{id}/state"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["state"]["turns"].as_array().unwrap().is_empty());
    assert!(!v["state"]["kb"]["nodes"].as_array().unwrap().is_empty());
    for u in ["Hello", "Which rooms are there?"] {
        let (s, _) = call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"utterance": u}))).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, v) = call(&a, "GET", &format!("/v1/sessions/{id}/state"), None).await;
    let turns = v["state"]["turns"].as_array().unwrap();
    assert_eq!(turns.iter().filter(|t| t["speaker"] == "user").count(), 2);
    assert_eq!(turns.len(), 4);
    assert_eq!(call(&a, "GET", "/v1/sessions/nope/state", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn turns_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let (s, _) = call(&a, "POST", "/v1/sessions/missing/turns", Some(json!({"utterance": "hi"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let id = create(&a, "no_facts", 7).await;
    let (s, v) = call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"utterance": "What events do I have today?"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["facts"].as_array().unwrap().is_empty());
    assert!(!v["response"].as_str().unwrap().is_empty());

    let (s, _) = call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"utterance": "   "}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"text": "hi"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = create(&a, "all_facts", 7).await;
    let (_, v) = call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"utterance": "Hello"}))).await;
    let facts = v["facts"].as_array().unwrap();
    assert!(facts.len() > 10);
    assert!(facts.iter().all(|f| f["prob"].is_null()));
}

#[tokio::test]
async fn events_today_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let id = create(&a, "relevance_logic", 7).await;
    let (_, st) = call(&a, "GET", &format!("/v1/sessions/{id}/state"), None).await;
    let nodes = st["state"]["kb"]["nodes"].as_array().unwrap().clone();
    let edges = st["state"]["kb"]["edges"].as_array().unwrap().clone();
    let today = st["state"]["now"]["date"].clone();
    let event = nodes.iter().find(|n| n["kind"] == "event" && n["attrs"]["date"]["value"] == today).unwrap();
    let person = edges.iter().find(|e| e["label"] == "attendee" && e["src"] == event["id"]).unwrap()["dst"].clone();
    let name = nodes.iter().find(|n| n["id"] == person).unwrap()["attrs"]["name"]["value"].as_str().unwrap().to_string();

    let turns = format!("/v1/sessions/{id}/turns");
    call(&a, "POST", &turns, Some(json!({"utterance": format!("Hi, this is {name}.")}))).await;
    let (s, v) = call(&a, "POST", &turns, Some(json!({"utterance": "What events do I have today?"}))).await;
    assert_eq!(s, StatusCode::OK);
    let wanted = format!("attending_today({},{})", event["id"].as_str().unwrap(), person.as_str().unwrap());
    assert!(v["facts"].as_array().unwrap().iter().any(|f| f["source_atom"] == wanted.as_str() && f["derived"] == true), "{v}");
    assert!(!v["links"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn ratings_are_appended() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let id = create(&a, "relevance", 1).await;
    let uri = format!("/v1/sessions/{id}/rating");
    let (s, _) = call(&a, "POST", &uri, Some(json!({"ratings": {"relevant": 4, "consistent": 5}}))).await;
    assert_eq!(s, StatusCode::CREATED);
    let (s, _) = call(&a, "POST", &uri, Some(json!({"ratings": {"relevant": 2}, "comment": "slow"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(call(&a, "POST", &uri, Some(json!({"ratings": {"relevant": 6}}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&a, "POST", &uri, Some(json!({"ratings": {}}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&a, "POST", "/v1/sessions/zzz/rating", Some(json!({"ratings": {"a": 1}}))).await.0, StatusCode::NOT_FOUND);
    let text = std::fs::read_to_string(dir.path().join("ratings.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["ratings"], json!({"consistent": 5, "relevant": 4}));
    assert_eq!(lines[1]["comment"], "slow");
}

#[tokio::test]
async fn concurrent_turns_serialize() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let id = create(&a, "relevance_logic", 2).await;
    let uri = format!("/v1/sessions/{id}/turns");
    let mut handles = Vec::new();
    for i in 0..6 {
        let a = a.clone();
        let uri = uri.clone();
        handles.push(tokio::spawn(async move { call(&a, "POST", &uri, Some(json!({"utterance": format!("message {i}")}))).await }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap().0, StatusCode::OK);
    }
    let (_, v) = call(&a, "GET", &format!("/v1/sessions/{id}/state"), None).await;
    let speakers: Vec<&str> = v["state"]["turns"].as_array().unwrap().iter().map(|t| t["speaker"].as_str().unwrap()).collect();
    assert_eq!(speakers.len(), 12);
    for pair in speakers.chunks(2) {
        assert_eq!(pair, ["user", "system"]);
    }
}

#[tokio::test]
async fn replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = app(&dir);
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let id = create(&a, "all_facts", 11).await;
        let mut out = Vec::new();
        for u in ["Hi, who is in the Design team?", "What events do I have today?", "Thanks"] {
            out.push(call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"utterance": u}))).await.1.to_string());
        }
        bodies.push(out);
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn generator_failure_is_502() {
    let dir = tempfile::tempdir().unwrap();
    let mut clients = Clients::deterministic();
    let cfg = HttpConfig { timeout_ms: 500, retries: 0, backoff_ms: 0 };
    clients.generator = Arc::new(HttpGenerator::new("http://127.0.0.1:9/generate", cfg).unwrap());
    let a = app_with(clients, &dir.path().join("r.jsonl"));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let (status, body) = rt.block_on(async {
        let id = create(&a, "relevance", 1).await;
        call(&a, "POST", &format!("/v1/sessions/{id}/turns"), Some(json!({"utterance": "hello"}))).await
    });
    drop(rt);
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{body}");
    assert!(body["error"].as_str().unwrap().contains("generator"));
}
