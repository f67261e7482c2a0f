//! HTTP session API.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use treewalk_core::graph::{tree_depth, DialogGraph, NodeId};
use treewalk_core::nlu::{ModeLabel, NluError};
use treewalk_core::planner::GoalSet;
use treewalk_core::policy::{
    handle_user_input, start_session, Awaiting, DialogState, LogEntry, PolicyConfig, PolicyError, SystemAction,
};

use crate::backends::SharedNlu;

/// Shared, read-only after construction apart from the session table.
pub struct AppState {
    graph: Arc<DialogGraph>,
    nlu: SharedNlu,
    policy: PolicyConfig,
    idle: Duration,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SessionRecord>>>>,
}

pub struct SessionRecord {
    pub id: String,
    pub state: DialogState,
    pub created: Instant,
    pub last_active: Instant,
    /// Replies by client message id, for retried posts.
    replies: HashMap<String, MessageReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub node_id: NodeId,
    pub text: String,
    pub suggestions: Vec<String>,
}

impl Message {
    fn from_action(a: &SystemAction) -> Option<Message> {
        a.is_ask().then(|| Message {
            node_id: a.node.clone(),
            text: a.rendered_text.clone().unwrap_or_default(),
            suggestions: a.suggestions.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
    #[serde(default)]
    pub message_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub messages: Vec<Message>,
    pub done: bool,
    pub degraded: bool,
    pub awaiting: Awaiting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub author: Author,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub node_id: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub current: NodeId,
    pub mode: Option<ModeLabel>,
    pub goals: GoalSet,
    pub awaiting: Awaiting,
    pub done: bool,
    pub dialog_length: usize,
    /// Suggestions of the latest system message.
    pub suggestions: Vec<String>,
    pub transcript: Vec<TranscriptLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub node_count: usize,
    pub tree_depth: usize,
    pub name: Option<String>,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}"))
}

impl From<PolicyError> for ApiError {
    fn from(e: PolicyError) -> Self {
        let status = match &e {
            PolicyError::Done | PolicyError::NotAwaitingInput => StatusCode::CONFLICT,
            PolicyError::Nlu(NluError::Backend(_) | NluError::Retrieval(_)) => StatusCode::SERVICE_UNAVAILABLE,
            PolicyError::Nlu(NluError::MissingInput(_)) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.to_string())
    }
}

impl AppState {
    pub fn new(graph: DialogGraph, nlu: SharedNlu, policy: PolicyConfig, idle: Duration) -> Self {
        AppState {
            graph: Arc::new(graph),
            nlu,
            policy,
            idle,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &DialogGraph {
        &self.graph
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn sweep_expired(&self) -> usize {
        let now = Instant::now();
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, s| match s.try_lock() {
            Ok(rec) => now.duration_since(rec.last_active) <= self.idle,
            // busy sessions are active by definition
            Err(_) => true,
        });
        before - sessions.len()
    }

    async fn session(&self, id: &str) -> Result<tokio::sync::OwnedMutexGuard<SessionRecord>, ApiError> {
        let handle = self.sessions.lock().unwrap().get(id).cloned().ok_or_else(|| not_found(id))?;
        let rec = handle.lock_owned().await;
        if rec.last_active.elapsed() > self.idle {
            self.sessions.lock().unwrap().remove(id);
            return Err(not_found(id));
        }
        Ok(rec)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/graph/meta", get(graph_meta))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session).delete(delete_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .with_state(state)
}

async fn graph_meta(State(app): State<Arc<AppState>>) -> Json<GraphMeta> {
    Json(GraphMeta {
        node_count: app.graph.len(),
        tree_depth: tree_depth(&app.graph),
        name: app.graph.name().map(str::to_string),
    })
}

async fn create_session(State(app): State<Arc<AppState>>) -> (StatusCode, Json<CreatedSession>) {
    let (state, action) = start_session(&app.graph, &app.policy);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let now = Instant::now();
    let rec = SessionRecord {
        id: id.clone(),
        state,
        created: now,
        last_active: now,
        replies: HashMap::new(),
    };
    app.sessions
        .lock()
        .unwrap()
        .insert(id.clone(), Arc::new(tokio::sync::Mutex::new(rec)));
    tracing::info!(session = %id, "session created");
    (
        StatusCode::CREATED,
        Json(CreatedSession {
            session_id: id,
            messages: Message::from_action(&action).into_iter().collect(),
        }),
    )
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<MessageRequest>,
) -> Result<Json<MessageReply>, ApiError> {
    let mut rec = app.session(&id).await?;
    rec.last_active = Instant::now();
    if let Some(reply) = req.message_id.as_ref().and_then(|m| rec.replies.get(m)) {
        return Ok(Json(reply.clone()));
    }
    if rec.state.done {
        return Err(PolicyError::Done.into());
    }
    if req.text.trim().is_empty() {
        return Err(PolicyError::EmptyInput.into());
    }

    // work on a copy so a failed backend call leaves the session untouched
    let mut working = rec.state.clone();
    let (graph, nlu, policy) = (Arc::clone(&app.graph), Arc::clone(&app.nlu), app.policy.clone());
    let text = req.text.clone();
    let (working, result) = tokio::task::spawn_blocking(move || {
        let r = handle_user_input(&mut working, &graph, &text, &*nlu, &policy);
        (working, r)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let turn = result.inspect_err(|e| tracing::warn!(session = %id, error = %e, "turn failed"))?;
    rec.state = working;
    rec.last_active = Instant::now();
    let reply = MessageReply {
        messages: turn.actions.iter().filter_map(Message::from_action).collect(),
        done: turn.done,
        degraded: turn.degraded(),
        awaiting: turn.awaiting,
    };
    if let Some(m) = req.message_id {
        rec.replies.insert(m, reply.clone());
    }
    Ok(Json(reply))
}

fn summary(rec: &SessionRecord) -> SessionSummary {
    let s = &rec.state;
    let mut suggestions = Vec::new();
    let transcript = s
        .action_log
        .iter()
        .filter_map(|e| match e {
            LogEntry::Action(a) if a.is_ask() => {
                suggestions.clone_from(&a.suggestions);
                Some(TranscriptLine {
                    author: Author::System,
                    text: a.rendered_text.clone().unwrap_or_default(),
                    node_id: Some(a.node.clone()),
                })
            }
            LogEntry::UserInput { text } => Some(TranscriptLine {
                author: Author::User,
                text: text.clone(),
                node_id: None,
            }),
            _ => None,
        })
        .collect();
    SessionSummary {
        session_id: rec.id.clone(),
        current: s.current.clone(),
        mode: s.mode,
        goals: s.goals.clone(),
        awaiting: s.awaiting,
        done: s.done,
        dialog_length: s.dialog_length(),
        suggestions: if s.awaiting == Awaiting::None { Vec::new() } else { suggestions },
        transcript,
    }
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSummary>, ApiError> {
    let rec = app.session(&id).await?;
    Ok(Json(summary(&rec)))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match app.sessions.lock().unwrap().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(not_found(&id)),
    }
}

/// Periodically drops expired sessions.
pub async fn sweep_loop(app: Arc<AppState>, every: Duration) {
    let mut tick = tokio::time::interval(every);
    loop {
        tick.tick().await;
        let n = app.sweep_expired();
        if n > 0 {
            tracing::info!(expired = n, "sessions expired");
        }
    }
}
