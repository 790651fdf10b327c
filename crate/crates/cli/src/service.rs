//! JSON-over-HTTP session API.
//!
//! | method | path                    | success |
//! |--------|-------------------------|---------|
//! | POST   | `/sessions`             | 201     |
//! | POST   | `/sessions/{id}/click`  | 200     |
//! | POST   | `/sessions/{id}/found`  | 200     |
//! | POST   | `/sessions/{id}/abandon`| 200     |
//! | GET    | `/sessions/{id}`        | 200     |
//! | GET    | `/health`               | 200     |
//! | GET    | `/thumbs/{id}.svg`      | 200     |
//!
//! Errors come back as `{"error": "..."}` with 400 (bad query), 404 (unknown
//! session), 409 (session finished, or a stale `iteration`), 422 (item not on
//! screen) or 503 (no catalog).

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mindseek::catalog::{Catalog, SimilarityProvider};
use mindseek::{Method, Session, SessionConfig, Status};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;

use crate::config::ServiceConfig;
use crate::store::{Event, ResultRow, Store, Transcript};

const PROVIDER_CACHE: usize = 16;

type Query = BTreeMap<String, String>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }
}

impl From<mindseek::Error> for ApiError {
    fn from(e: mindseek::Error) -> Self {
        use mindseek::Error as E;
        let status = match e {
            E::NotDisplayed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::NotRunning(_) => StatusCode::CONFLICT,
            E::SubsetTooSmall { .. } | E::UnknownAttribute(_) | E::InvalidParameter(_) | E::OutOfRange { .. } | E::EmptyCatalog => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        tracing::error!("{e:#}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigOverrides {
    pub n_display: Option<usize>,
    pub max_iters: Option<usize>,
    pub method: Option<Method>,
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CreateRequest {
    /// Attribute filter, e.g. `{"category": "skirt"}`.
    pub tags: BTreeMap<String, String>,
    pub config: ConfigOverrides,
    /// Game mode: the item the player is looking for. Kept server-side.
    pub target: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickRequest {
    pub item: usize,
    /// Iteration the client saw; a mismatch means the click is stale.
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDescriptor {
    pub id: usize,
    pub tags: BTreeMap<String, String>,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: Status,
    pub iteration: usize,
    pub display: Vec<ItemDescriptor>,
    pub weights: Vec<f64>,
    pub channels: Vec<String>,
    /// Revealed once the system has shown the game target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub display: Vec<usize>,
    pub click: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDetail {
    #[serde(flatten)]
    pub view: SessionView,
    pub history: Vec<Round>,
    pub tags: BTreeMap<String, String>,
    pub method: Method,
    pub seed: u64,
    pub created_at: u64,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub session_id: String,
    pub status: Status,
    pub iteration: usize,
}

struct LiveSession {
    id: String,
    session: Session,
    target: Option<usize>,
    tags: BTreeMap<String, String>,
    created_at: u64,
    updated_at: u64,
}

struct Slot {
    session: Arc<AsyncMutex<LiveSession>>,
    touched: Instant,
}

pub struct AppState {
    catalog: Option<Arc<Catalog>>,
    config: ServiceConfig,
    store: Store,
    live: Mutex<HashMap<String, Slot>>,
    providers: Mutex<Vec<(Query, Arc<SimilarityProvider>)>>,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl AppState {
    pub fn new(catalog: Option<Catalog>, config: ServiceConfig, store: Store) -> Self {
        AppState { catalog: catalog.map(Arc::new), config, store, live: Mutex::new(HashMap::new()), providers: Mutex::new(Vec::new()) }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Sessions currently held in memory.
    pub fn live_sessions(&self) -> usize {
        self.live.lock().unwrap().len()
    }

    fn catalog(&self) -> ApiResult<&Arc<Catalog>> {
        self.catalog.as_ref().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "catalog not loaded"))
    }

    fn provider(&self, tags: &BTreeMap<String, String>) -> ApiResult<Arc<SimilarityProvider>> {
        if let Some((_, p)) = self.providers.lock().unwrap().iter().find(|(k, _)| k == tags) {
            return Ok(p.clone());
        }
        let catalog = self.catalog()?;
        let subset = catalog.filter(tags)?;
        let provider = Arc::new(SimilarityProvider::new(catalog, &subset)?);
        let mut cache = self.providers.lock().unwrap();
        if let Some((_, p)) = cache.iter().find(|(k, _)| k == tags) {
            return Ok(p.clone());
        }
        if cache.len() >= PROVIDER_CACHE {
            cache.remove(0);
        }
        cache.push((tags.clone(), provider.clone()));
        Ok(provider)
    }

    /// The in-memory session for `id`, rebuilt from the log when it was
    /// evicted or the process restarted.
    fn session(&self, id: &str) -> ApiResult<Arc<AsyncMutex<LiveSession>>> {
        if let Some(slot) = self.live.lock().unwrap().get_mut(id) {
            slot.touched = Instant::now();
            return Ok(slot.session.clone());
        }
        let transcript = self.store.transcript(id).ok_or_else(|| ApiError::not_found(id))?;
        let rebuilt = self.rebuild(&transcript)?;
        let mut live = self.live.lock().unwrap();
        let slot = live.entry(id.to_string()).or_insert_with(|| Slot { session: Arc::new(AsyncMutex::new(rebuilt)), touched: Instant::now() });
        slot.touched = Instant::now();
        Ok(slot.session.clone())
    }

    fn rebuild(&self, transcript: &Transcript) -> ApiResult<LiveSession> {
        let provider = self.provider(&transcript.query)?;
        let session = Session::replay(provider, &transcript.snapshot())?;
        Ok(LiveSession {
            id: transcript.id.clone(),
            session,
            target: transcript.target,
            tags: transcript.query.clone(),
            created_at: transcript.created_at,
            updated_at: transcript.updated_at,
        })
    }

    /// Drops sessions idle for longer than the TTL; their state stays in the
    /// log. Returns how many were dropped.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let ttl = self.config.ttl();
        let mut live = self.live.lock().unwrap();
        let before = live.len();
        live.retain(|_, slot| now.saturating_duration_since(slot.touched) < ttl || Arc::strong_count(&slot.session) > 1);
        before - live.len()
    }

    fn view(&self, live: &LiveSession) -> SessionView {
        let catalog = self.catalog.as_ref().expect("sessions exist only with a catalog");
        let session = &live.session;
        SessionView {
            session_id: live.id.clone(),
            status: session.status(),
            iteration: session.iteration(),
            display: session.display().iter().map(|&id| descriptor(catalog, id)).collect(),
            weights: session.weights(),
            channels: session.provider().channel_names().to_vec(),
            target: live.target.filter(|_| session.status() == Status::ApprovedBySystem),
        }
    }

    fn finish(&self, live: &mut LiveSession, status: Status) -> anyhow::Result<()> {
        match status {
            Status::ApprovedBySystem => live.session.mark_approved_by_system()?,
            Status::ApprovedByUser => live.session.mark_found()?,
            Status::Abandoned => live.session.mark_abandoned()?,
            Status::Running => unreachable!("finish with a running status"),
        }
        let at = now_millis();
        live.updated_at = at;
        let session = &live.session;
        let weights = session.weights();
        self.store.append(&Event::Finished { id: live.id.clone(), at, status, iterations: session.iteration(), weights: weights.clone() })?;
        self.store.record_result(&ResultRow {
            session_id: live.id.clone(),
            method: session.config().method,
            target: live.target,
            status,
            iterations: session.iteration(),
            weights,
            finished_at: at,
        })
    }

    fn detect_target(&self, live: &mut LiveSession) -> anyhow::Result<()> {
        if live.target.is_some_and(|t| live.session.display().contains(&t)) {
            self.finish(live, Status::ApprovedBySystem)?;
        }
        Ok(())
    }

    fn create(&self, request: CreateRequest) -> ApiResult<SessionView> {
        self.catalog()?;
        let provider = self.provider(&request.tags)?;
        if let Some(t) = request.target {
            if provider.local_index(t).is_none() {
                return Err(ApiError::new(StatusCode::BAD_REQUEST, format!("target {t} is not in the filtered subset")));
            }
        }
        let overrides = request.config;
        let base = self.config.session_config();
        let config = SessionConfig {
            n_display: overrides.n_display.unwrap_or(base.n_display),
            max_iters: overrides.max_iters.unwrap_or(base.max_iters),
            method: overrides.method.unwrap_or(base.method),
            ..base
        };
        let token = uuid::Uuid::new_v4();
        let seed = overrides.seed.unwrap_or_else(|| token.as_u64_pair().1);
        let session = Session::new(provider, config.clone(), seed)?;
        let id = token.simple().to_string();
        let at = now_millis();
        self.store.append(&Event::Created { id: id.clone(), at, query: request.tags.clone(), config, seed, target: request.target })?;
        let mut live = LiveSession { id: id.clone(), session, target: request.target, tags: request.tags, created_at: at, updated_at: at };
        self.detect_target(&mut live)?;
        let view = self.view(&live);
        self.live.lock().unwrap().insert(id, Slot { session: Arc::new(AsyncMutex::new(live)), touched: Instant::now() });
        Ok(view)
    }

    fn click(&self, live: &mut LiveSession, request: &ClickRequest) -> ApiResult<SessionView> {
        let status = live.session.status();
        if status.is_terminal() {
            return Err(mindseek::Error::NotRunning(status).into());
        }
        if let Some(seen) = request.iteration {
            if seen != live.session.iteration() {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("click was made on iteration {seen}, the session is at {}", live.session.iteration()),
                ));
            }
        }
        let shown = live.session.display().to_vec();
        live.session.submit_click(request.item)?;
        let at = now_millis();
        live.updated_at = at;
        self.store.append(&Event::Clicked { id: live.id.clone(), at, display: shown, click: request.item })?;
        self.detect_target(live)?;
        Ok(self.view(live))
    }

    fn end(&self, live: &mut LiveSession, status: Status) -> ApiResult<StatusView> {
        let current = live.session.status();
        if current.is_terminal() {
            return Err(mindseek::Error::NotRunning(current).into());
        }
        self.finish(live, status)?;
        Ok(StatusView { session_id: live.id.clone(), status, iteration: live.session.iteration() })
    }

    fn detail(&self, live: &LiveSession) -> SessionDetail {
        SessionDetail {
            view: self.view(live),
            history: live.session.history().iter().map(|f| Round { display: f.display.clone(), click: f.click }).collect(),
            tags: live.tags.clone(),
            method: live.session.config().method,
            seed: live.session.seed(),
            created_at: live.created_at,
            updated_at: live.updated_at,
        }
    }
}

fn descriptor(catalog: &Catalog, id: usize) -> ItemDescriptor {
    let tags = catalog.item(id).map(|item| item.tags.clone()).unwrap_or_default();
    ItemDescriptor { id, tags, thumbnail: format!("/thumbs/{id}.svg") }
}

/// Runs `f` on the blocking pool with exclusive access to session `id`.
async fn with_session<T, F>(state: Arc<AppState>, id: String, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState, &mut LiveSession) -> ApiResult<T> + Send + 'static,
{
    let cell = {
        let state = state.clone();
        tokio::task::spawn_blocking(move || state.session(&id)).await.map_err(join_error)??
    };
    let mut guard = cell.lock_owned().await;
    tokio::task::spawn_blocking(move || f(&state, &mut guard)).await.map_err(join_error)?
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::from(anyhow::anyhow!("worker task failed: {e}"))
}

async fn create_session(State(state): State<Arc<AppState>>, Json(request): Json<CreateRequest>) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let view = tokio::task::spawn_blocking(move || state.create(request)).await.map_err(join_error)??;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn click(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(request): Json<ClickRequest>) -> ApiResult<Json<SessionView>> {
    with_session(state, id, move |s, live| s.click(live, &request)).await.map(Json)
}

async fn found(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StatusView>> {
    with_session(state, id, |s, live| s.end(live, Status::ApprovedByUser)).await.map(Json)
}

async fn abandon(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<StatusView>> {
    with_session(state, id, |s, live| s.end(live, Status::Abandoned)).await.map(Json)
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionDetail>> {
    with_session(state, id, |s, live| Ok(s.detail(live))).await.map(Json)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match &state.catalog {
        Some(catalog) => Json(serde_json::json!({
            "status": "ok",
            "items": catalog.len(),
            "channels": catalog.channels().iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
            "live_sessions": state.live_sessions(),
        }))
        .into_response(),
        None => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "catalog not loaded").into_response(),
    }
}

async fn thumbnail(State(state): State<Arc<AppState>>, Path(file): Path<String>) -> ApiResult<Response> {
    let catalog = state.catalog()?;
    let item = file
        .strip_suffix(".svg")
        .and_then(|id| id.parse::<usize>().ok())
        .and_then(|id| catalog.item(id))
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no thumbnail {file}")))?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml"), (header::CACHE_CONTROL, "public, max-age=86400")], swatch_svg(&item.features)).into_response())
}

/// Maps a feature value to `[0, 1)`.
fn squash(x: f64) -> f64 {
    0.5 + 0.5 * (x / 3.0).tanh()
}

fn rgb(v: &[f64]) -> String {
    let channel = |i: usize| (255.0 * squash(v.get(i).copied().unwrap_or(0.0))).round() as u8;
    format!("#{:02x}{:02x}{:02x}", channel(0), channel(1), channel(2))
}

/// Placeholder image drawn from an item's feature vectors: the first channel
/// sets the background, the second a disc, the third a stripe pattern.
pub fn swatch_svg(features: &[Vec<f64>]) -> String {
    let empty = Vec::new();
    let (a, b, c) = (&features[0], features.get(1).unwrap_or(&empty), features.get(2).unwrap_or(&empty));
    let mut svg = String::from(r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 96 96" width="96" height="96">"#);
    svg.push_str(&format!(r#"<rect width="96" height="96" fill="{}"/>"#, rgb(a)));
    if !c.is_empty() {
        let stripes = 2 + (squash(c[0]) * 6.0) as usize;
        let angle = (squash(c.get(1).copied().unwrap_or(0.0)) * 180.0).round();
        svg.push_str(&format!(r#"<g transform="rotate({angle} 48 48)" fill="{}" opacity="0.45">"#, rgb(&c[c.len().min(1)..])));
        let step = 144.0 / stripes as f64;
        for s in 0..stripes {
            svg.push_str(&format!(r#"<rect x="{:.1}" y="-24" width="{:.1}" height="144"/>"#, -24.0 + s as f64 * step, step / 2.0));
        }
        svg.push_str("</g>");
    }
    if !b.is_empty() {
        let radius = 12.0 + 24.0 * squash(b.get(3).copied().unwrap_or(b[0]));
        svg.push_str(&format!(r#"<circle cx="48" cy="48" r="{radius:.1}" fill="{}"/>"#, rgb(b)));
    }
    svg.push_str("</svg>");
    svg
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/click", post(click))
        .route("/sessions/{id}/found", post(found))
        .route("/sessions/{id}/abandon", post(abandon))
        .route("/thumbs/{file}", get(thumbnail))
        .with_state(state)
}

/// Loads the catalog, opens the store, and serves until `shutdown`
/// resolves. Persistence is flushed before returning.
pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let catalog = Catalog::load(&config.catalog).with_context(|| format!("loading catalog {}", config.catalog.display()))?;
    let store = match &config.data_dir {
        Some(dir) => Store::open(dir)?,
        None => Store::ephemeral(),
    };
    let address = format!("{}:{}", config.host, config.port);
    let listener = tokio::net::TcpListener::bind(&address).await.with_context(|| format!("binding {address}"))?;
    tracing::info!("serving {} items on http://{}", catalog.len(), listener.local_addr()?);

    let sweep = (config.ttl() / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    let state = Arc::new(AppState::new(Some(catalog), config, store));
    let evictor = {
        let state = state.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(sweep);
            loop {
                tick.tick().await;
                let dropped = state.evict_idle(Instant::now());
                if dropped > 0 {
                    tracing::debug!("evicted {dropped} idle sessions");
                }
            }
        })
    };
    axum::serve(listener, router(state.clone())).with_graceful_shutdown(shutdown).await?;
    evictor.abort();
    state.store.sync()?;
    tracing::info!("shut down cleanly");
    Ok(())
}
