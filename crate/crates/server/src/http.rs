//! HTTP and SSE routes over a [`SessionStore`].

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use ipdlab::game::{Action, MatchRecord};
use ipdlab::metrics::{adaptation_report, AdaptationReport, DEFAULT_EPSILON, DEFAULT_WINDOW};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio_stream::wrappers::BroadcastStream;
use tower_http::services::ServeDir;

use crate::store::{ServiceError, SessionConfig, SessionStore, SessionView, HUMAN_ID};

const PLACEHOLDER_INDEX: &str = include_str!("../assets/index.html");

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Config(_) => StatusCode::BAD_REQUEST,
            ServiceError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::WrongRound { .. } | ServiceError::SessionFinished | ServiceError::SessionStillActive => {
                StatusCode::CONFLICT
            }
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({"code": self.code(), "message": self.to_string()}))).into_response()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveRequest {
    pub round: u32,
    pub action: Action,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbortRequest {
    #[serde(default)]
    pub reason: Option<String>,
}

/// Summary of a finished or aborted session.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionReport {
    pub record: MatchRecord,
    pub human_cooperation_rate: Option<f64>,
    pub opponent_cooperation_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptation: Option<AdaptationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptation_error: Option<String>,
}

impl SessionReport {
    pub fn from_record(record: MatchRecord) -> Self {
        let n = record.rounds.len();
        let rate = |f: fn(&ipdlab::game::RoundOutcome) -> Action| {
            (n > 0).then(|| record.rounds.iter().filter(|r| f(r).is_cooperate()).count() as f64 / n as f64)
        };
        let human = rate(|r| r.action_a);
        let opponent = rate(|r| r.action_b);
        let (adaptation, adaptation_error) = if record.metadata.contains_key(ipdlab::game::META_SWITCH_ROUND) {
            match adaptation_report(std::slice::from_ref(&record), HUMAN_ID, DEFAULT_WINDOW, DEFAULT_EPSILON) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            }
        } else {
            (None, None)
        };
        SessionReport {
            record,
            human_cooperation_rate: human,
            opponent_cooperation_rate: opponent,
            adaptation,
            adaptation_error,
        }
    }
}

/// Router options.
#[derive(Clone, Debug, Default)]
pub struct ServerOptions {
    /// Directory of web UI assets; an embedded placeholder is served when absent.
    pub static_dir: Option<PathBuf>,
}

type Shared = Arc<SessionStore>;

/// Runs store calls off the async runtime: opponents may be external
/// agents that block on network or subprocess I/O.
async fn blocking<T: Send + 'static>(
    store: Shared,
    f: impl FnOnce(&SessionStore) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

async fn create(State(store): State<Shared>, Json(cfg): Json<SessionConfig>) -> Result<Response, ServiceError> {
    let view = blocking(store, move |s| s.create(cfg)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn submit(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<MoveRequest>,
) -> Result<Response, ServiceError> {
    let resp = blocking(store, move |s| s.submit_move(&id, req.round, req.action)).await?;
    Ok(Json(resp).into_response())
}

async fn view(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ServiceError> {
    Ok(Json(blocking(store, move |s| s.view(&id)).await?))
}

async fn finalize(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<MatchRecord>, ServiceError> {
    Ok(Json(blocking(store, move |s| s.finalize(&id)).await?))
}

async fn report(State(store): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionReport>, ServiceError> {
    let record = blocking(store, move |s| s.finalize(&id)).await?;
    Ok(Json(SessionReport::from_record(record)))
}

async fn abort(
    State(store): State<Shared>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> Result<Json<SessionView>, ServiceError> {
    // the body is optional
    let req: AbortRequest = if body.iter().all(u8::is_ascii_whitespace) {
        AbortRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ServiceError::Config(e.to_string()))?
    };
    let reason = req.reason.unwrap_or_else(|| "participant_quit".into());
    Ok(Json(blocking(store, move |s| s.abort(&id, &reason)).await?))
}

fn view_event(view: &SessionView) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event("view")
        .json_data(view)
        .unwrap_or_else(|_| Event::default().event("error")))
}

async fn events(
    State(store): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    let (current, rx) = store.subscribe(&id)?;
    let first = futures::stream::once(async move { view_event(&current) });
    // lagged receivers just skip to the next snapshot
    let rest = BroadcastStream::new(rx).filter_map(|item| async move { item.ok().map(|v| view_event(&v)) });
    Ok(Sse::new(first.chain(rest)).keep_alive(KeepAlive::default()))
}

async fn healthz(State(store): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "sessions": store.len()}))
}

async fn placeholder_index() -> Html<&'static str> {
    Html(PLACEHOLDER_INDEX)
}

pub fn router(store: Arc<SessionStore>, opts: &ServerOptions) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(view))
        .route("/sessions/{id}/moves", post(submit))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/abort", post(abort))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/events", get(events))
        .route("/healthz", get(healthz))
        .with_state(store);
    match &opts.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    }
}

/// Binds `addr` and serves until ctrl-c. Idle sessions are swept once a
/// minute.
pub async fn serve(store: Arc<SessionStore>, addr: &str, opts: ServerOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    let sweeper = store.clone();
    let sweep = tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let s = sweeper.clone();
            let _ = tokio::task::spawn_blocking(move || s.sweep_idle()).await;
        }
    });
    let result = axum::serve(listener, router(store, &opts))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweep.abort();
    result
}
