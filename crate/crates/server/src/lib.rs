//! HTTP and server-sent-events front end for convograph sessions.
//!
//! | method | path                              | body / query              |
//! |--------|-----------------------------------|---------------------------|
//! | GET    | `/health`                         |                           |
//! | GET    | `/sessions`                       |                           |
//! | POST   | `/sessions`                       | `{"title"?}`              |
//! | POST   | `/sessions/load`                  | `{"path"}`                |
//! | GET    | `/sessions/{id}/graph`            |                           |
//! | POST   | `/sessions/{id}/actions`          | an `Action`               |
//! | GET    | `/sessions/{id}/affordances`      | `?selected=n1,n2`         |
//! | GET    | `/sessions/{id}/interventions`    |                           |
//! | GET    | `/sessions/{id}/events`           | `?after=seq`, SSE         |

pub mod config;
mod error;
mod session;

use std::collections::VecDeque;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use convograph_core::gateway::ChatGateway;
use convograph_core::orchestrator::{selection_affordances, AgentEvent, SessionConfig};
use convograph_core::templates::TemplateSet;
use convograph_core::{Action, NodeId};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;

pub use error::ApiError;
pub use session::{EventFeed, PendingIntervention, Registry, Session};

#[derive(Clone)]
pub struct AppState {
    registry: Arc<Registry>,
}

impl AppState {
    pub fn new(
        gateway: Arc<dyn ChatGateway>,
        config: SessionConfig,
        templates: TemplateSet,
        data_dir: PathBuf,
    ) -> std::io::Result<Self> {
        Ok(Self {
            registry: Arc::new(Registry::new(gateway, config, templates, data_dir)?),
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/load", post(load_session))
        .route("/sessions/{id}/graph", get(get_graph))
        .route("/sessions/{id}/actions", post(post_action))
        .route("/sessions/{id}/affordances", get(get_affordances))
        .route("/sessions/{id}/interventions", get(get_interventions))
        .route("/sessions/{id}/events", get(event_stream))
        .with_state(state)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn health() -> impl IntoResponse {
    Json(json!({"status": "ok"}))
}

async fn list_sessions(State(state): State<AppState>) -> impl IntoResponse {
    Json(json!({"sessions": state.registry.ids()}))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    title: Option<String>,
}

async fn create_session(
    State(state): State<AppState>,
    raw: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let request: CreateRequest = if raw.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&raw).map_err(|e| ApiError::bad_request(e.to_string()))?
    };
    let title = request.title.unwrap_or_default();
    let session = state.registry.create(&title)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": session.id, "graph": session.document()})),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoadRequest {
    path: PathBuf,
}

async fn load_session(
    State(state): State<AppState>,
    payload: Result<Json<LoadRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let request = body(payload)?;
    let (session, created) = state.registry.load(&request.path).await?;
    let status = if created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((
        status,
        Json(json!({"session_id": session.id, "graph": session.document()})),
    ))
}

async fn get_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(state.registry.get(&id)?.document()))
}

async fn post_action(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Action>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let session = state.registry.get(&id)?;
    let action = body(payload)?;
    Ok(Json(session.apply(action).await?))
}

#[derive(Debug, Deserialize)]
struct SelectionQuery {
    #[serde(default)]
    selected: String,
}

async fn get_affordances(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<SelectionQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let session = state.registry.get(&id)?;
    let selected = query
        .selected
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<NodeId>()
                .map_err(|_| ApiError::bad_request(format!("bad node id {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let affordances = selection_affordances(&session.graph(), &selected)?;
    Ok(Json(json!({"affordances": affordances})))
}

async fn get_interventions(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let session = state.registry.get(&id)?;
    Ok(Json(json!({"pending": session.pending_interventions()})))
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    after: Option<u64>,
}

fn sse_event(event: &AgentEvent) -> Event {
    Event::default()
        .id(event.seq.to_string())
        .event(event.kind.as_str())
        .data(serde_json::to_string(event).expect("events serialize"))
}

/// Streams every event with seq above the resume point, then follows the
/// session live. The resume point is `Last-Event-ID`, else `?after=`, else 0.
async fn event_stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<StreamQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let session = state.registry.get(&id)?;
    let after = match headers.get("last-event-id") {
        Some(value) => value
            .to_str()
            .ok()
            .and_then(|v| v.trim().parse::<u64>().ok())
            .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be an event seq"))?,
        None => query.after.unwrap_or(0),
    };
    let feed = session.feed();
    let rx = feed.subscribe();
    let stream = futures::stream::unfold(
        (feed, rx, after, VecDeque::<AgentEvent>::new()),
        |(feed, mut rx, mut last, mut buffered)| async move {
            loop {
                if let Some(event) = buffered.pop_front() {
                    last = event.seq;
                    return Some((Ok(sse_event(&event)), (feed, rx, last, buffered)));
                }
                rx.borrow_and_update();
                buffered.extend(feed.after(last));
                if buffered.is_empty() && rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
