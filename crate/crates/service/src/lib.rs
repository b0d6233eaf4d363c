//! HTTP chat-session API over the factgraph pipeline. All routes live under
//! `/v1`.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use factgraph::dataset::{KbSpec, Now};
use factgraph::fixture::{fixture_now, generate_kb, FixtureSize};
use factgraph::kg::{DialogueState, KnowledgeGraph};
use factgraph::pipeline::{Engine, Mode, Session};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::io::AsyncWriteExt;
use tokio::sync::{Mutex, RwLock};

pub use config::ServiceConfig;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] factgraph::error::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    engine: Arc<Engine>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    ratings_path: PathBuf,
    ratings_lock: Mutex<()>,
}

impl AppState {
    pub fn new(engine: Engine, ratings_path: PathBuf) -> Self {
        AppState { engine: Arc::new(engine), sessions: RwLock::default(), ratings_path, ratings_lock: Mutex::new(()) }
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let engine = Engine::new(Arc::new(config.load_rules()?), config.engine.clone(), config.clients()?);
        Ok(Self::new(engine, config.ratings_path.clone()))
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

impl From<factgraph::error::Error> for ApiError {
    fn from(e: factgraph::error::Error) -> Self {
        use factgraph::error::Error as E;
        let status = match &e {
            E::Http { .. } | E::Unsupported(_) => StatusCode::BAD_GATEWAY,
            E::QueryTooHard { .. } | E::UnboundBuiltin { .. } | E::UnknownPredicate(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::EmptyUtterance | E::SpanOutOfRange { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/turns", post(post_turn))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/rating", post(post_rating));
    Router::new().route("/healthz", get(healthz)).nest("/v1", v1).with_state(state)
}

async fn healthz() -> &'static str {
    "ok"
}

#[derive(Deserialize)]
struct CreateSession {
    mode: String,
    kb: Option<KbSpec>,
    seed: Option<u64>,
    now: Option<Now>,
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    mode: Mode,
    seed: u64,
}

fn parse_body<T: serde::de::DeserializeOwned>(body: Value) -> Result<T, ApiError> {
    serde_json::from_value(body).map_err(|e| bad_request(format!("invalid request body: {e}")))
}

async fn create_session(State(app): State<Arc<AppState>>, Json(body): Json<Value>) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateSession = parse_body(body)?;
    let mode: Mode = req.mode.parse().map_err(bad_request)?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let now = req.now.unwrap_or_else(fixture_now);
    let graph = match &req.kb {
        Some(kb) => KnowledgeGraph::from_spec(kb).map_err(|e| bad_request(format!("invalid kb: {e}")))?,
        None => generate_kb(seed, &now, FixtureSize::default()).map_err(|e| bad_request(e.to_string()))?,
    };
    let state = DialogueState::new(graph, now).map_err(|e| bad_request(format!("invalid kb: {e}")))?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    app.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(Session::new(state, mode, seed))));
    log::info!("session {id} created, mode {mode}, seed {seed}");
    Ok((StatusCode::CREATED, Json(Created { session_id: id, mode, seed })))
}

async fn session(app: &AppState, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
    app.sessions
        .read()
        .await
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
}

#[derive(Deserialize)]
struct TurnRequest {
    utterance: String,
}

async fn post_turn(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<Value>) -> Result<Response, ApiError> {
    let req: TurnRequest = parse_body(body)?;
    let session = session(&app, &id).await?;
    // held across the blocking pipeline run, so turns of one session queue up
    let mut guard = session.lock_owned().await;
    let engine = app.engine.clone();
    let result = tokio::task::spawn_blocking(move || engine.respond(&mut guard, &req.utterance))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(result).into_response())
}

async fn get_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = session(&app, &id).await?;
    let guard = session.lock().await;
    Ok(Json(json!({ "mode": guard.mode, "seed": guard.seed, "state": &guard.state })).into_response())
}

#[derive(Deserialize)]
struct RatingRequest {
    ratings: BTreeMap<String, u8>,
    #[serde(default)]
    comment: Option<String>,
}

async fn post_rating(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<Value>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: RatingRequest = parse_body(body)?;
    if req.ratings.is_empty() {
        return Err(bad_request("at least one rating is required"));
    }
    if let Some((k, v)) = req.ratings.iter().find(|(_, v)| !(1..=5).contains(*v)) {
        return Err(bad_request(format!("rating {k}={v} outside 1..=5")));
    }
    let session = session(&app, &id).await?;
    let (mode, seed, turns) = {
        let g = session.lock().await;
        (g.mode, g.seed, g.state.turns().len())
    };
    let record = json!({
        "session_id": id,
        "mode": mode,
        "seed": seed,
        "turns": turns,
        "ratings": req.ratings,
        "comment": req.comment,
        "recorded_at": chrono::Utc::now().to_rfc3339(),
    });
    let mut line = record.to_string();
    line.push('\n');
    let _g = app.ratings_lock.lock().await;
    let mut f = tokio::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&app.ratings_path)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("ratings file: {e}")))?;
    f.write_all(line.as_bytes())
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("ratings file: {e}")))?;
    Ok((StatusCode::CREATED, Json(record)))
}

/// Serves `app` on `host:port` until ctrl-c.
pub async fn serve(app: Arc<AppState>, host: &str, port: u16) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Builds the app from `config` and runs the server on a fresh runtime. The
/// HTTP clients are blocking, so they are created and dropped outside it.
pub fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    let app = Arc::new(AppState::from_config(&config)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let result = rt.block_on(serve(app.clone(), &config.host, config.port));
    drop(rt);
    drop(app);
    result
}
