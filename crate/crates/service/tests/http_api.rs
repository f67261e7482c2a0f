use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use treewalk_core::eval::ControllabilityAudit;
use treewalk_core::fixtures::mini_domain;
use treewalk_core::graph::DialogGraph;
use treewalk_core::nlu::{BackendError, Decision, IntentCandidate, LexicalNlu, ModeLabel, Nlu, NluError};
use treewalk_core::planner::GoalSet;
use treewalk_core::policy::PolicyConfig;
use treewalk_service::server::{router, AppState};

const START: &str = "What topic do you have questions about?";

fn app_with(nlu: Arc<dyn Nlu + Send + Sync>, idle: Duration) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(mini_domain(), nlu, PolicyConfig::default(), idle));
    (router(Arc::clone(&state)), state)
}

fn app() -> Router {
    app_with(Arc::new(LexicalNlu::default()), Duration::from_secs(1800)).0
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn create(app: &Router) -> (String, Value) {
    let (status, body) = call(app, "POST", "/api/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    (body["session_id"].as_str().unwrap().to_string(), body)
}

async fn say(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/api/sessions/{id}/messages"), Some(json!({ "text": text }))).await
}

#[tokio::test]
async fn health_and_meta() {
    let app = app();
    assert_eq!(call(&app, "GET", "/healthz", None).await.0, StatusCode::OK);
    let (status, meta) = call(&app, "GET", "/api/graph/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(meta["node_count"], 22);
    assert_eq!(meta["tree_depth"], 6);
    assert_eq!(meta["name"], "travel-reimbursement-mini");
}

#[tokio::test]
async fn new_session_shows_start_node() {
    let app = app();
    let (_, body) = create(&app).await;
    let msgs = body["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0]["node_id"], "n0");
    assert!(msgs[0]["text"].as_str().unwrap().starts_with(START));
    assert_eq!(msgs[0]["suggestions"], json!(["Travel booking", "Daily allowance", "Research semester"]));
}

#[tokio::test]
async fn clarification_dialog() {
    let app = app();
    let (id, _) = create(&app).await;
    let (status, r) = say(&app, &id, "Travel booking").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["messages"][0]["text"], "What type of transportation would you like?");
    assert_eq!(r["messages"][0]["suggestions"], json!(["Train", "Plane", "Own car"]));
    assert_eq!(r["awaiting"], "intent");
    assert_eq!(r["done"], false);

    let (status, r) = say(&app, &id, "Train").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r["messages"], json!([{
        "node_id": "n2",
        "text": "Seat reservations are allowed for train travel.",
        "suggestions": []
    }]));
    assert_eq!(r["done"], true);
    assert_eq!(r["awaiting"], "none");
    assert_eq!(r["degraded"], false);

    let (status, _) = say(&app, &id, "And planes?").await;
    assert_eq!(status, StatusCode::CONFLICT);

    let (status, s) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["done"], true);
    assert_eq!(s["dialog_length"], 5);
    let authors: Vec<&str> = s["transcript"].as_array().unwrap().iter().map(|l| l["author"].as_str().unwrap()).collect();
    assert_eq!(authors, ["system", "user", "system", "user", "system"]);
}

#[tokio::test]
async fn variable_prompt_and_template() {
    let app = app();
    let (id, _) = create(&app).await;
    let (_, r) = say(&app, &id, "Daily allowance").await;
    assert_eq!(r["messages"][0]["text"], "Which country are you traveling to?");
    assert_eq!(r["awaiting"], "variable");
    let (_, r) = say(&app, &id, "Spain").await;
    let texts: Vec<&str> = r["messages"].as_array().unwrap().iter().map(|m| m["text"].as_str().unwrap()).collect();
    assert!(texts.iter().any(|t| t.contains("Spain")), "{texts:?}");
}

#[tokio::test]
async fn error_statuses() {
    let app = app();
    assert_eq!(say(&app, "nope", "hi").await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/sessions/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "DELETE", "/api/sessions/nope", None).await.0, StatusCode::NOT_FOUND);
    let (id, _) = create(&app).await;
    let (status, body) = say(&app, &id, "   ").await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].is_string());
    assert_eq!(call(&app, "DELETE", &format!("/api/sessions/{id}"), None).await.0, StatusCode::NO_CONTENT);
    assert_eq!(call(&app, "GET", &format!("/api/sessions/{id}"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn idle_sessions_expire() {
    let (app, state) = app_with(Arc::new(LexicalNlu::default()), Duration::from_millis(50));
    let (a, _) = create(&app).await;
    let (b, _) = create(&app).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(say(&app, &a, "Travel booking").await.0, StatusCode::NOT_FOUND);
    assert_eq!(state.sweep_expired(), 1);
    assert_eq!(state.session_count(), 0);
    assert_eq!(call(&app, "GET", &format!("/api/sessions/{b}"), None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn retried_message_is_applied_once() {
    let app = app();
    let (id, _) = create(&app).await;
    let uri = format!("/api/sessions/{id}/messages");
    let body = json!({"text": "Travel booking", "message_id": "m-1"});
    let first = call(&app, "POST", &uri, Some(body.clone())).await;
    let again = call(&app, "POST", &uri, Some(body)).await;
    assert_eq!(first, again);
    let (_, s) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(s["dialog_length"], 3);
    assert_eq!(s["current"], "n1");
}

/// Fails every call, like an unreachable model.
struct Down;

impl Nlu for Down {
    fn classify_mode(&self, _: &str) -> Result<Decision<ModeLabel>, NluError> {
        Err(NluError::Backend(BackendError::Unavailable("connection refused".into())))
    }
    fn classify_intent(&self, _: &str, _: &[IntentCandidate<'_>]) -> Result<Decision<usize>, NluError> {
        Err(NluError::Backend(BackendError::Unavailable("connection refused".into())))
    }
    fn filter_goals(&self, _: &str, _: &DialogGraph) -> Result<Decision<GoalSet>, NluError> {
        Err(NluError::Backend(BackendError::Unavailable("connection refused".into())))
    }
}

#[tokio::test]
async fn backend_outage_is_503_and_leaves_session_intact() {
    let (app, _) = app_with(Arc::new(Down), Duration::from_secs(60));
    let (id, _) = create(&app).await;
    assert_eq!(say(&app, &id, "Travel booking").await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (_, s) = call(&app, "GET", &format!("/api/sessions/{id}"), None).await;
    assert_eq!(s["dialog_length"], 1);
    assert_eq!(s["mode"], Value::Null);
    assert_eq!(s["transcript"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn sessions_are_isolated() {
    let scripts = [
        vec!["Travel booking", "Own car"],
        vec!["Research semester", "200", "No", "Alone"],
    ];
    let app_serial = app();
    let mut serial = Vec::new();
    for script in &scripts {
        let (id, _) = create(&app_serial).await;
        for t in script {
            say(&app_serial, &id, t).await;
        }
        serial.push(call(&app_serial, "GET", &format!("/api/sessions/{id}"), None).await.1["transcript"].clone());
    }

    let app = app();
    let (a, _) = create(&app).await;
    let (b, _) = create(&app).await;
    let ids = [a, b];
    for step in 0..4 {
        let mut pending = Vec::new();
        for (i, script) in scripts.iter().enumerate() {
            if let Some(t) = script.get(step) {
                let (app, id, t) = (app.clone(), ids[i].clone(), t.to_string());
                pending.push(tokio::spawn(async move { say(&app, &id, &t).await }));
            }
        }
        for p in pending {
            assert_eq!(p.await.unwrap().0, StatusCode::OK);
        }
    }
    for (i, id) in ids.iter().enumerate() {
        let t = call(&app, "GET", &format!("/api/sessions/{id}"), None).await.1["transcript"].clone();
        assert_eq!(t, serial[i]);
    }
}

#[tokio::test]
async fn every_message_is_authored_text() {
    let graph = mini_domain();
    let mut audit = ControllabilityAudit::new(&graph);
    let app = app();
    let utterances = [
        "How much do I get per kilometer with my own car?",
        "Daily allowance",
        "France",
        "Yes",
        "What about the weather?",
        "Research semester",
        "20",
        "No",
        "With family",
    ];
    let (mut id, mut created) = create(&app).await;
    let mut seen = created["messages"].as_array().unwrap().clone();
    for u in utterances {
        let (status, r) = say(&app, &id, u).await;
        if status == StatusCode::CONFLICT || r["done"] == true {
            seen.extend(r["messages"].as_array().cloned().unwrap_or_default());
            (id, created) = create(&app).await;
            seen.extend(created["messages"].as_array().unwrap().clone());
            continue;
        }
        seen.extend(r["messages"].as_array().cloned().unwrap_or_default());
    }
    assert!(seen.len() > 5);
    for m in seen {
        let node = m["node_id"].as_str().unwrap().into();
        assert_eq!(audit.check(&node, m["text"].as_str()), None, "{m}");
    }
}
