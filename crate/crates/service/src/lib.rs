//! HTTP facade over point reading: upload a screenshot once, then read any
//! number of points against its layout tree.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use tol_core::ashl::{extract_record, oracle_detections, parse_view_hierarchy};
use tol_core::config::{Config, ConfigError};
use tol_core::describer::{describe_point, ChatClient, PipelineError, Regions, Stage};
use tol_core::geometry::{to_pixel, PointNorm, PointPx, Rect};
use tol_core::hierarchy::{build_tree, DetectionFile, ScoredRegion, TreeSummary};
use tol_core::lens::TargetPath;
use tol_core::HierarchicalLayoutTree;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
    #[error("server stopped: {0}")]
    Serve(std::io::Error),
}

/// JSON error body with the status it was sent with.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            error: error.into(),
            stage: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Tree => "tree",
        Stage::Path => "path",
        Stage::Render => "render",
        Stage::Describe => "describe",
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Tree(_) | PipelineError::Path(_) => StatusCode::UNPROCESSABLE_ENTITY,
            PipelineError::Render(_) => StatusCode::INTERNAL_SERVER_ERROR,
            PipelineError::Describe(_) => StatusCode::BAD_GATEWAY,
        };
        let mut api = ApiError::new(status, e.to_string());
        api.stage = Some(stage_name(e.stage()).into());
        api
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReadResponse {
    pub point: PointPx,
    pub content: String,
    pub layout: String,
    pub parse_ok: bool,
    pub path: TargetPath,
    pub lens1_url: String,
    pub lens2_url: String,
}

struct CachedRead {
    response: ReadResponse,
    pngs: [Vec<u8>; 2],
}

pub struct Session {
    pub id: String,
    pub image: Arc<RgbImage>,
    pub tree: HierarchicalLayoutTree,
    last_used: Mutex<Instant>,
    cache: Mutex<HashMap<PointPx, Arc<CachedRead>>>,
}

impl Session {
    fn touch(&self) {
        *self.last_used.lock().unwrap_or_else(|e| e.into_inner()) = Instant::now();
    }

    fn idle_for(&self, now: Instant) -> Duration {
        now.saturating_duration_since(*self.last_used.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn cached(&self, p: PointPx) -> Option<Arc<CachedRead>> {
        self.cache
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&p)
            .cloned()
    }
}

struct Backend {
    config: Arc<Config>,
    client: Arc<dyn ChatClient>,
}

pub struct AppState {
    backend: RwLock<Backend>,
    config_path: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    next_session: AtomicU64,
    tree_builds: AtomicUsize,
    model_calls: AtomicUsize,
}

impl AppState {
    pub fn new(config: Config, config_path: Option<PathBuf>) -> Result<Arc<Self>, ServiceError> {
        config.validate()?;
        let client: Arc<dyn ChatClient> = Arc::from(config.model.client()?);
        Ok(Self::with_client(config, config_path, client))
    }

    /// Uses `client` instead of the one described by the config.
    pub fn with_client(
        config: Config,
        config_path: Option<PathBuf>,
        client: Arc<dyn ChatClient>,
    ) -> Arc<Self> {
        Arc::new(Self {
            backend: RwLock::new(Backend {
                config: Arc::new(config),
                client,
            }),
            config_path,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            tree_builds: AtomicUsize::new(0),
            model_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> Arc<Config> {
        self.backend
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .config
            .clone()
    }

    fn client(&self) -> Arc<dyn ChatClient> {
        self.backend
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .client
            .clone()
    }

    pub fn tree_builds(&self) -> usize {
        self.tree_builds.load(Ordering::SeqCst)
    }

    /// Pipeline runs, excluding cache hits.
    pub fn model_calls(&self) -> usize {
        self.model_calls.load(Ordering::SeqCst)
    }

    pub fn session_count(&self) -> usize {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    pub fn reload(&self, config: Config) -> Result<String, ConfigError> {
        config.validate()?;
        let client: Arc<dyn ChatClient> = Arc::from(config.model.client()?);
        let name = client.backend();
        *self.backend.write().unwrap_or_else(|e| e.into_inner()) = Backend {
            config: Arc::new(config),
            client,
        };
        Ok(name)
    }

    /// Drops sessions idle for longer than the configured TTL.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let ttl = Duration::from_secs(self.config().server.session_ttl_secs);
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        let before = sessions.len();
        sessions.retain(|_, s| s.idle_for(now) <= ttl);
        before - sessions.len()
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.evict_expired(Instant::now());
        let s = self
            .sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
        s.touch();
        Ok(s)
    }

    fn insert_session(
        &self,
        image: RgbImage,
        tree: HierarchicalLayoutTree,
    ) -> Result<Arc<Session>, ApiError> {
        self.evict_expired(Instant::now());
        let max = self.config().server.max_sessions;
        let mut sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        if sessions.len() >= max {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                format!("session limit {max} reached"),
            ));
        }
        let n = self.next_session.fetch_add(1, Ordering::SeqCst);
        let salt = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.subsec_nanos())
            .unwrap_or(0);
        let id = format!("s{n:06}-{salt:08x}");
        let session = Arc::new(Session {
            id: id.clone(),
            image: Arc::new(image),
            tree,
            last_used: Mutex::new(Instant::now()),
            cache: Mutex::new(HashMap::new()),
        });
        sessions.insert(id, session.clone());
        Ok(session)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Health {
    pub status: String,
    pub model_backend: String,
    pub sessions: usize,
    pub tree_builds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SessionCreated {
    pub session_id: String,
    pub screen: [u32; 2],
    pub tree: TreeSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReadRequest {
    pub point: [f64; 2],
    #[serde(default)]
    pub normalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Reloaded {
    pub model_backend: String,
}

pub fn router(state: Arc<AppState>) -> Router {
    let cfg = state.config();
    let cors = if cfg.server.cors_origin == "*" {
        CorsLayer::new().allow_origin(Any)
    } else {
        match HeaderValue::from_str(&cfg.server.cors_origin) {
            Ok(origin) => CorsLayer::new().allow_origin(origin),
            Err(_) => CorsLayer::new(),
        }
    }
    .allow_methods(Any)
    .allow_headers(Any);
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/tree", get(session_tree))
        .route("/sessions/{id}/read", post(read_point))
        .route("/sessions/{id}/lenses/{x}/{y}/{name}", get(lens_image))
        .route("/config/reload", post(reload_config))
        .layer(DefaultBodyLimit::max(cfg.server.max_upload_bytes))
        .layer(cors)
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_backend: state.client().backend(),
        sessions: state.session_count(),
        tree_builds: state.tree_builds(),
    })
}

fn unprocessable(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
}

/// Picks the tree's regions: explicit detections win over a view hierarchy;
/// neither gives a root-only tree.
fn regions_from_uploads(
    detections: Option<&[u8]>,
    hierarchy: Option<&[u8]>,
    cfg: &Config,
) -> Result<Vec<ScoredRegion>, ApiError> {
    if let Some(bytes) = detections {
        return DetectionFile::from_json(bytes)
            .map(|f| f.detections)
            .map_err(unprocessable);
    }
    if let Some(bytes) = hierarchy {
        let vh = parse_view_hierarchy(bytes).map_err(unprocessable)?;
        let record = extract_record(&vh, vh.image.as_deref().unwrap_or("upload"), &cfg.ashl())
            .map_err(unprocessable)?;
        return Ok(oracle_detections(&record));
    }
    Ok(Vec::new())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    mut multipart: Multipart,
) -> Result<Json<SessionCreated>, ApiError> {
    let mut image_bytes = None;
    let mut detections = None;
    let mut hierarchy = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let data = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        match name.as_str() {
            "image" => image_bytes = Some(data),
            "detections" => detections = Some(data),
            "hierarchy" => hierarchy = Some(data),
            _ => {}
        }
    }
    let image_bytes =
        image_bytes.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing image field"))?;
    let cfg = state.config();
    let st = state.clone();
    tokio::task::spawn_blocking(move || {
        let image = image::load_from_memory_with_format(&image_bytes, image::ImageFormat::Png)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("undecodable PNG: {e}")))?
            .to_rgb8();
        let regions = regions_from_uploads(detections.as_deref(), hierarchy.as_deref(), &cfg)?;
        let screen = Rect::screen(image.width(), image.height())
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let tree = build_tree(screen, &regions, &cfg.tree()).map_err(unprocessable)?;
        st.tree_builds.fetch_add(1, Ordering::SeqCst);
        let summary = tree.summary();
        let screen = [image.width(), image.height()];
        let session = st.insert_session(image, tree)?;
        Ok(Json(SessionCreated {
            session_id: session.id.clone(),
            screen,
            tree: summary,
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn session_tree(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<HierarchicalLayoutTree>, ApiError> {
    Ok(Json(state.session(&id)?.tree.clone()))
}

fn resolve_point(req: &ReadRequest, img: &RgbImage) -> Result<PointPx, ApiError> {
    let [x, y] = req.point;
    let out_of_bounds = || {
        unprocessable(format!(
            "point ({x}, {y}) is outside the {}x{} screenshot",
            img.width(),
            img.height()
        ))
    };
    if req.normalized {
        let p = PointNorm::new(x, y).map_err(|_| out_of_bounds())?;
        to_pixel(p, img.width(), img.height()).map_err(|_| out_of_bounds())
    } else {
        if x.fract() != 0.0 || y.fract() != 0.0 {
            return Err(unprocessable("pixel coordinates must be integers"));
        }
        if x < 0.0 || y < 0.0 || x >= f64::from(img.width()) || y >= f64::from(img.height()) {
            return Err(out_of_bounds());
        }
        PointPx::new(x as i64, y as i64).map_err(|_| out_of_bounds())
    }
}

async fn read_point(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ReadRequest>,
) -> Result<Json<ReadResponse>, ApiError> {
    let session = state.session(&id)?;
    let p = resolve_point(&req, &session.image)?;
    if let Some(hit) = session.cached(p) {
        return Ok(Json(hit.response.clone()));
    }
    let cfg = state.config();
    let client = state.client();
    let st = state.clone();
    let entry = tokio::task::spawn_blocking(move || -> Result<Arc<CachedRead>, ApiError> {
        st.model_calls.fetch_add(1, Ordering::SeqCst);
        let reading = describe_point(
            &session.image,
            Regions::Tree(&session.tree),
            p,
            client.as_ref(),
            &cfg.reader(),
        )?;
        let pngs = reading.lenses.to_png().map_err(|e| {
            let mut api = ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
            api.stage = Some("render".into());
            api
        })?;
        let base = format!("/sessions/{}/lenses/{}/{}", session.id, p.x, p.y);
        let response = ReadResponse {
            point: p,
            content: reading.description.content,
            layout: reading.description.layout,
            parse_ok: reading.description.parse_ok,
            path: reading.path,
            lens1_url: format!("{base}/lens1.png"),
            lens2_url: format!("{base}/lens2.png"),
        };
        let fresh = Arc::new(CachedRead { response, pngs });
        let mut cache = session.cache.lock().unwrap_or_else(|e| e.into_inner());
        Ok(cache.entry(p).or_insert(fresh).clone())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(entry.response.clone()))
}

async fn lens_image(
    State(state): State<Arc<AppState>>,
    Path((id, x, y, name)): Path<(String, i64, i64, String)>,
) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let slot = match name.as_str() {
        "lens1.png" => 0,
        "lens2.png" => 1,
        _ => {
            return Err(ApiError::new(
                StatusCode::NOT_FOUND,
                format!("no lens {name}"),
            ))
        }
    };
    let missing = || {
        ApiError::new(
            StatusCode::NOT_FOUND,
            format!("point ({x}, {y}) has not been read"),
        )
    };
    let p = PointPx::new(x, y).map_err(|_| missing())?;
    let hit = session.cached(p).ok_or_else(missing)?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "max-age=3600"),
        ],
        hit.pngs[slot].clone(),
    )
        .into_response())
}

/// A TOML body replaces the config; an empty body re-reads the config file.
async fn reload_config(
    State(state): State<Arc<AppState>>,
    body: String,
) -> Result<Json<Reloaded>, ApiError> {
    let config = if body.trim().is_empty() {
        let path = state.config_path.clone().ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "no config file to reload and empty body",
            )
        })?;
        Config::load(&path).map_err(unprocessable)?
    } else {
        Config::from_toml_str(&body).map_err(unprocessable)?
    };
    let name = state.reload(config).map_err(unprocessable)?;
    Ok(Json(Reloaded {
        model_backend: name,
    }))
}

/// Binds the configured address and serves until the task is cancelled,
/// sweeping expired sessions once a minute.
pub async fn serve(state: Arc<AppState>) -> Result<(), ServiceError> {
    let addr = state.config().server.bind;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr, source })?;
    tracing::info!(%addr, backend = %state.client().backend(), "listening");
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let n = sweeper.evict_expired(Instant::now());
            if n > 0 {
                tracing::info!(evicted = n, "expired sessions removed");
            }
        }
    });
    axum::serve(listener, router(state))
        .await
        .map_err(ServiceError::Serve)
}
