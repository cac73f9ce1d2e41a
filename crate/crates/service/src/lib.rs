//! HTTP front end for a loaded play index.
//!
//! Routes:
//!
//! * `POST /query` ranks indexed plays against a query play.
//! * `GET /plays/{id}` returns a stored play.
//! * `GET /index/stats` summarizes the loaded index.
//! * `POST /index/load` loads an index directory and swaps it in.
//!
//! The index is immutable once loaded. A reload builds the new index off to
//! the side and replaces the shared handle in one step, so requests already
//! running finish against the index they started with.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use playtree::model::{AgentSelection, GameId, Play, PlayId, TeamPerms};
use playtree::retrieval::{IndexStats, PlayIndex, Query, RetrievalError};
use playtree::Method;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Coordinate type served over the wire.
pub type Coord = f32;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("no index loaded")]
    NotLoaded,
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::NotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<RetrievalError> for ServiceError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::NoWindow(_)
            | RetrievalError::QueryShape { .. }
            | RetrievalError::EmptySelection
            | RetrievalError::ZeroK
            | RetrievalError::BadBoost(_)
            | RetrievalError::NoBaseline
            | RetrievalError::Model(_) => ServiceError::BadRequest(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody { error: self.to_string() };
        (self.status(), json_bytes(&body)).into_response()
    }
}

fn json_bytes<V: Serialize>(value: &V) -> Response {
    match serde_json::to_vec(value) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "application/json")], bytes).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

/// A play on the wire. Each entry of `frames` holds offense `(x, y)` pairs,
/// then defense pairs, then the ball `(x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePlay {
    #[serde(default = "query_id")]
    pub play_id: String,
    #[serde(default)]
    pub game_id: String,
    #[serde(default)]
    pub start_time: f64,
    pub window_seconds: u32,
    pub sample_rate_hz: f64,
    pub players_per_team: usize,
    pub frames: Vec<Vec<Coord>>,
}

fn query_id() -> String {
    "query".into()
}

impl From<&Play<Coord>> for WirePlay {
    fn from(play: &Play<Coord>) -> Self {
        let width = play.frame_width();
        WirePlay {
            play_id: play.play_id.0.clone(),
            game_id: play.game_id.0.clone(),
            start_time: play.start_time,
            window_seconds: play.window_seconds,
            sample_rate_hz: play.sample_rate_hz,
            players_per_team: play.players_per_team,
            frames: play.coords().chunks(width).map(<[Coord]>::to_vec).collect(),
        }
    }
}

impl TryFrom<WirePlay> for Play<Coord> {
    type Error = ServiceError;

    fn try_from(w: WirePlay) -> Result<Self, ServiceError> {
        let width = playtree::model::frame_width(w.players_per_team);
        if let Some((i, f)) = w.frames.iter().enumerate().find(|(_, f)| f.len() != width) {
            return Err(ServiceError::BadRequest(format!(
                "frame {i} has {} values; {} players per team need {width}",
                f.len(),
                w.players_per_team
            )));
        }
        let coords: Vec<Coord> = w.frames.into_iter().flatten().collect();
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(ServiceError::BadRequest("coordinates must be finite".into()));
        }
        Play::from_coords(
            PlayId(w.play_id),
            GameId(w.game_id),
            w.start_time,
            w.window_seconds,
            w.sample_rate_hz,
            w.players_per_team,
            coords,
        )
        .map_err(|e| ServiceError::BadRequest(e.to_string()))
    }
}

/// Body of `POST /query`. `selected` and `present` use the query play's own
/// agent indices (offense `0..M`, defense `M..2M`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub play: WirePlay,
    pub selected: AgentSelection,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub boosts: BTreeMap<String, f64>,
    #[serde(default)]
    pub present: Option<AgentSelection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResult {
    pub rank: usize,
    pub play_id: String,
    pub distance: Coord,
    pub score: Coord,
    pub correspondence: TeamPerms,
    pub query_order: TeamPerms,
    /// The candidate with agents reordered so agent `i` plays the part of the
    /// query's agent `i`.
    pub trajectory: WirePlay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub window_seconds: u32,
    pub method: Method,
    pub k: usize,
    pub keys: Vec<usize>,
    pub candidates: usize,
    pub query_perms: TeamPerms,
    pub results: Vec<WireResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRequest {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadResponse {
    pub path: PathBuf,
    pub plays: usize,
    pub stats: IndexStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    pub default_k: usize,
    pub default_method: Method,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            default_k: 10,
            default_method: Method::Tree,
        }
    }
}

struct Shared {
    config: ServiceConfig,
    index: RwLock<Option<Arc<PlayIndex<Coord>>>>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            shared: Arc::new(Shared {
                config,
                index: RwLock::new(None),
            }),
        }
    }

    pub fn with_index(config: ServiceConfig, index: PlayIndex<Coord>) -> Self {
        let state = Self::new(config);
        state.swap(index);
        state
    }

    pub fn config(&self) -> ServiceConfig {
        self.shared.config
    }

    pub fn current(&self) -> Option<Arc<PlayIndex<Coord>>> {
        self.shared.index.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn swap(&self, index: PlayIndex<Coord>) {
        *self.shared.index.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(index));
    }

    /// Loads an index directory and swaps it in; the old index stays live
    /// until loading succeeds.
    pub fn load(&self, dir: &Path) -> Result<Arc<PlayIndex<Coord>>, ServiceError> {
        let index = PlayIndex::<Coord>::load_dir(dir).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", dir.display())))?;
        self.swap(index);
        tracing::info!(path = %dir.display(), "index loaded");
        self.current().ok_or(ServiceError::NotLoaded)
    }

    fn loaded(&self) -> Result<Arc<PlayIndex<Coord>>, ServiceError> {
        self.current().ok_or(ServiceError::NotLoaded)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/query", post(submit_query))
        .route("/plays/:id", get(get_play))
        .route("/index/stats", get(index_stats))
        .route("/index/load", post(load_index))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn parse_body<V: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<V, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

/// Runs a query against an index. Shared by the HTTP handler and the CLI.
pub fn run_query(index: &PlayIndex<Coord>, request: QueryRequest, config: ServiceConfig) -> Result<QueryResponse, ServiceError> {
    let play = Play::try_from(request.play)?;
    let window_seconds = play.window_seconds;
    let k = request.k.unwrap_or(config.default_k);
    let method = request.method.unwrap_or(config.default_method);
    let query = Query {
        play,
        selected: request.selected,
        k,
        method,
        boosts: request.boosts.into_iter().map(|(id, b)| (PlayId(id), b)).collect(),
        present: request.present,
    };
    let outcome = index.query_detailed(&query)?;
    let results = outcome
        .results
        .into_iter()
        .map(|r| {
            let raw = index
                .play(&r.play_id)
                .ok_or_else(|| ServiceError::Internal(format!("{} missing from the store", r.play_id)))?;
            let ordered = raw.permuted_both(&r.query_order).map_err(|e| ServiceError::Internal(e.to_string()))?;
            Ok(WireResult {
                rank: r.rank,
                play_id: r.play_id.0,
                distance: r.distance,
                score: r.score,
                correspondence: r.correspondence,
                query_order: r.query_order,
                trajectory: WirePlay::from(&ordered),
            })
        })
        .collect::<Result<Vec<_>, ServiceError>>()?;
    Ok(QueryResponse {
        window_seconds,
        method,
        k,
        keys: outcome.keys,
        candidates: outcome.candidates,
        query_perms: outcome.query_perms,
        results,
    })
}

async fn submit_query(State(state): State<AppState>, body: Bytes) -> Result<Response, ServiceError> {
    let index = state.loaded()?;
    let request: QueryRequest = parse_body(&body)?;
    let config = state.config();
    let response = tokio::task::spawn_blocking(move || run_query(&index, request, config))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(json_bytes(&response))
}

async fn get_play(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let index = state.loaded()?;
    let play = index
        .play(&PlayId(id.clone()))
        .ok_or_else(|| ServiceError::NotFound(format!("unknown play {id}")))?;
    Ok(json_bytes(&WirePlay::from(play)))
}

async fn index_stats(State(state): State<AppState>) -> Result<Response, ServiceError> {
    Ok(json_bytes(&state.loaded()?.stats()))
}

async fn load_index(State(state): State<AppState>, body: Bytes) -> Result<Response, ServiceError> {
    let request: LoadRequest = parse_body(&body)?;
    let path = request.path.clone();
    let loader = state.clone();
    let index = tokio::task::spawn_blocking(move || loader.load(&request.path))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(json_bytes(&LoadResponse {
        path,
        plays: index.store().len(),
        stats: index.stats(),
    }))
}
