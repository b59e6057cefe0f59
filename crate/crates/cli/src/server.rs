//! HTTP façade over garden workers. Every mutation becomes one orchestrator
//! command; reads come from the worker's published snapshot.

use std::collections::HashMap;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use gardener_core::engine::Workspace;
use gardener_core::garden::{Mode, NodeId};
use gardener_core::orchestrator::{GardenHandle, Orchestrator, OrchestratorError, UserEdit};
use gardener_core::persistence::PersistenceError;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{GardenSettings, Settings};

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        use OrchestratorError as E;
        let status = match &e {
            E::UnknownNode(_) | E::Persistence(PersistenceError::UnknownBackup(_)) => StatusCode::NOT_FOUND,
            E::MalformedEdit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::InvalidTarget(_) | E::KindViolation(_) | E::Precondition(_) | E::SnapshotMissing(_) | E::Garden(_) => {
                StatusCode::CONFLICT
            }
            E::Persistence(PersistenceError::Garden(_) | PersistenceError::ConflictingIds { .. }) => {
                StatusCode::CONFLICT
            }
            E::WorkerGone => StatusCode::SERVICE_UNAVAILABLE,
            E::Engine(_) => StatusCode::BAD_GATEWAY,
            E::Persistence(_) | E::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Gardens under one root directory, each at `<root>/<garden-id>/`.
pub struct AppState {
    root: PathBuf,
    settings: Settings,
    gardens: Mutex<HashMap<String, Arc<GardenHandle>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>, settings: Settings) -> Arc<Self> {
        Arc::new(Self { root: root.into(), settings, gardens: Mutex::new(HashMap::new()) })
    }

    fn workspace(&self, id: &str) -> ApiResult<Workspace> {
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(ApiError::unprocessable(format!("invalid garden id {id:?}")));
        }
        Ok(Workspace::new(self.root.join(id)))
    }

    /// Running worker for `id`, reopening it from disk if needed.
    fn garden(&self, id: &str) -> ApiResult<Arc<GardenHandle>> {
        let workspace = self.workspace(id)?;
        let mut gardens = self.gardens.lock().unwrap();
        if let Some(handle) = gardens.get(id) {
            return Ok(Arc::clone(handle));
        }
        if !workspace.events_file().is_file() {
            return Err(ApiError::not_found(format!("unknown garden {id}")));
        }
        let services = self.settings.services(&workspace).map_err(ApiError::internal)?;
        let orch = Orchestrator::open(workspace, services)?;
        let handle = Arc::new(GardenHandle::spawn(orch));
        gardens.insert(id.to_string(), Arc::clone(&handle));
        Ok(handle)
    }

    fn create(&self, id: &str, overrides: &GardenSettings) -> ApiResult<Arc<GardenHandle>> {
        let workspace = self.workspace(id)?;
        let mut gardens = self.gardens.lock().unwrap();
        if gardens.contains_key(id) || workspace.events_file().is_file() {
            return Err(ApiError::new(StatusCode::CONFLICT, format!("garden {id} already exists")));
        }
        let mut settings = self.settings.clone();
        let g = &mut settings.garden;
        g.max_depth = overrides.max_depth.or(g.max_depth);
        g.max_branching = overrides.max_branching.or(g.max_branching);
        g.max_code_attempts = overrides.max_code_attempts.or(g.max_code_attempts);
        g.submodules = overrides.submodules.clone().or(g.submodules.take());
        let services = settings.services(&workspace).map_err(ApiError::internal)?;
        let orch = Orchestrator::create(workspace, id, settings.garden_config(), services)?;
        let handle = Arc::new(GardenHandle::spawn(orch));
        gardens.insert(id.to_string(), Arc::clone(&handle));
        Ok(handle)
    }
}

/// Runs a blocking handle call off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

fn view_of(handle: &GardenHandle) -> ApiResult<Value> {
    let view = handle.view().ok_or_else(|| ApiError::not_found("garden has no document yet"))?;
    serde_json::to_value(view).map_err(ApiError::internal)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    id: String,
    #[serde(default)]
    config: GardenSettings,
}

async fn create_garden(State(app): State<Arc<AppState>>, Json(body): Json<CreateBody>) -> ApiResult<Response> {
    let view = blocking(move || {
        let handle = app.create(&body.id, &body.config)?;
        view_of(&handle)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_garden(State(app): State<Arc<AppState>>, Path(g): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || view_of(&*app.garden(&g)?)).await.map(Json)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedBody {
    text: String,
}

async fn seed(
    State(app): State<Arc<AppState>>,
    Path(g): Path<String>,
    Json(body): Json<SeedBody>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let id = app.garden(&g)?.seed(&body.text)?;
        Ok(Json(json!({ "node_id": id })))
    })
    .await
}

async fn get_node(State(app): State<Arc<AppState>>, Path((g, id)): Path<(String, u64)>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let detail = app.garden(&g)?.node(NodeId(id)).ok_or_else(|| ApiError::not_found(format!("unknown node n{id}")))?;
        serde_json::to_value(detail).map(Json).map_err(ApiError::internal)
    })
    .await
}

#[derive(Deserialize)]
struct StepQuery {
    units: Option<usize>,
}

async fn step(
    State(app): State<Arc<AppState>>,
    Path(g): Path<String>,
    Query(q): Query<StepQuery>,
) -> ApiResult<Json<Value>> {
    let units = q.units.unwrap_or(1);
    if units == 0 {
        return Err(ApiError::unprocessable("units must be positive"));
    }
    blocking(move || {
        let outcomes = app.garden(&g)?.step(units)?;
        Ok(Json(json!({ "outcomes": outcomes })))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeBody {
    mode: String,
}

fn parse_mode(text: &str) -> ApiResult<Mode> {
    match text {
        "play" => Ok(Mode::Play),
        "pause" | "paused" => Ok(Mode::Paused),
        "step" => Ok(Mode::Step),
        other => Err(ApiError::unprocessable(format!("unknown mode {other:?}; expected play, pause or step"))),
    }
}

async fn set_mode(
    State(app): State<Arc<AppState>>,
    Path(g): Path<String>,
    Json(body): Json<ModeBody>,
) -> ApiResult<Json<Value>> {
    let mode = parse_mode(&body.mode)?;
    blocking(move || {
        app.garden(&g)?.set_mode(mode)?;
        Ok(Json(json!({ "mode": mode })))
    })
    .await
}

/// Exactly one of `is_leaf`, `text` or `feedback`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePatch {
    pub is_leaf: Option<bool>,
    /// Submodule for a node becoming a leaf.
    pub submodule: Option<String>,
    pub text: Option<String>,
    pub feedback: Option<String>,
}

impl NodePatch {
    pub fn into_edit(self, target: NodeId) -> ApiResult<UserEdit> {
        match (self.is_leaf, self.text, self.feedback) {
            (Some(is_leaf), None, None) => Ok(UserEdit::ToggleLeaf { target, is_leaf, submodule: self.submodule }),
            (None, Some(text), None) if self.submodule.is_none() => Ok(UserEdit::EditNodeText { target, text }),
            (None, None, Some(feedback)) if self.submodule.is_none() => Ok(UserEdit::EditFeedback { target, feedback }),
            _ => Err(ApiError::unprocessable("patch exactly one of is_leaf, text or feedback")),
        }
    }
}

async fn patch_node(
    State(app): State<Arc<AppState>>,
    Path((g, id)): Path<(String, u64)>,
    Json(patch): Json<NodePatch>,
) -> ApiResult<Json<Value>> {
    let edit = patch.into_edit(NodeId(id))?;
    blocking(move || {
        let outcome = app.garden(&g)?.edit(edit)?;
        serde_json::to_value(outcome).map(Json).map_err(ApiError::internal)
    })
    .await
}

async fn compile_and_run(
    State(app): State<Arc<AppState>>,
    Path((g, id)): Path<(String, u64)>,
) -> ApiResult<Json<Value>> {
    blocking(move || {
        let outcome = app.garden(&g)?.edit(UserEdit::CompileAndRunAt { target: NodeId(id) })?;
        serde_json::to_value(outcome).map(Json).map_err(ApiError::internal)
    })
    .await
}

#[derive(Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

async fn events(
    State(app): State<Arc<AppState>>,
    Path(g): Path<String>,
    Query(q): Query<EventsQuery>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let handle = blocking(move || app.garden(&g)).await?;
    let batches = stream::unfold((handle, q.from.unwrap_or(0)), |(handle, from)| async move {
        let waiter = Arc::clone(&handle);
        let batch = tokio::task::spawn_blocking(move || waiter.wait_events(from, Duration::from_secs(15)))
            .await
            .unwrap_or_default();
        if batch.is_empty() {
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        let next = batch.last().map_or(from, |e| e.seq + 1);
        Some((batch, (handle, next)))
    });
    let events = batches.flat_map(|batch| {
        stream::iter(batch.into_iter().map(|event| {
            let data = serde_json::to_string(&event).expect("events serialize");
            Ok(Event::default().id(event.seq.to_string()).event("garden_event").data(data))
        }))
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/gardens", post(create_garden))
        .route("/gardens/{g}", get(get_garden))
        .route("/gardens/{g}/seed", post(seed))
        .route("/gardens/{g}/step", post(step))
        .route("/gardens/{g}/mode", post(set_mode))
        .route("/gardens/{g}/nodes/{id}", get(get_node).patch(patch_node))
        .route("/gardens/{g}/nodes/{id}/compile-and-run", post(compile_and_run))
        .route("/gardens/{g}/events", get(events))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving gardens on http://{}", listener.local_addr()?);
    serve_on(state, listener).await
}

pub async fn serve_on(state: Arc<AppState>, listener: tokio::net::TcpListener) -> anyhow::Result<()> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patches_map_to_one_edit() {
        let target = NodeId(4);
        let leaf = NodePatch { is_leaf: Some(true), submodule: Some("code_generator".into()), ..Default::default() };
        assert_eq!(
            leaf.into_edit(target).unwrap(),
            UserEdit::ToggleLeaf { target, is_leaf: true, submodule: Some("code_generator".into()) }
        );
        let both = NodePatch { is_leaf: Some(false), text: Some("x".into()), ..Default::default() };
        assert_eq!(both.into_edit(target).unwrap_err().status, StatusCode::UNPROCESSABLE_ENTITY);
        assert!(NodePatch::default().into_edit(target).is_err());
    }

    #[test]
    fn error_statuses() {
        let status = |e: OrchestratorError| ApiError::from(e).status;
        assert_eq!(status(OrchestratorError::UnknownNode(NodeId(1))), StatusCode::NOT_FOUND);
        assert_eq!(status(OrchestratorError::Precondition("x".into())), StatusCode::CONFLICT);
        assert_eq!(status(OrchestratorError::KindViolation("x".into())), StatusCode::CONFLICT);
        assert_eq!(status(OrchestratorError::MalformedEdit("x".into())), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(parse_mode("pause").unwrap(), Mode::Paused);
        assert!(parse_mode("fast").is_err());
    }
}
