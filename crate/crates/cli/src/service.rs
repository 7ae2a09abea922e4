//! HTTP/JSON session service: load a shape once, solve weights per handle
//! set, answer deformation queries against the cached weights.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use lapdeform_core::geom::{load_point_cloud, load_tet_mesh, parse_xyz, surface_of, CloudFormat};
use lapdeform_core::lapnet::{load_model, predict};
use lapdeform_core::pcl::{knn_graph_laplacian, Bandwidth};
use lapdeform_core::{
    deformation_energy, fem_energy, inverse_mass, lbs_deform, solve_bbw, BbwOptions,
    DeformationRequest, Error, HandleSet, PointCloud, SparseSymMatrix, SurfaceMesh, Vec3,
    WeightMatrix,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

/// Error response `{"error": kind, "message": text}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind: kind.into(),
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "UnknownSession", format!("no session '{id}'"))
    }

    fn bad_json(e: serde_json::Error) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "JsonError", e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                StatusCode::NOT_FOUND
            }
            Error::IndexMisalignment { .. }
            | Error::InvalidHandles(_)
            | Error::TooManyHandles { .. }
            | Error::DimensionMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            e if e.is_numerical() => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.kind, "message": self.message });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeSource {
    /// Inline xyz text.
    Xyz(String),
    /// Cloud file on the server (xyz, ply or node).
    Path(PathBuf),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySpec {
    Fem { node: PathBuf, ele: PathBuf },
    Learned {
        model: PathBuf,
        #[serde(default = "default_pair_k")]
        k: usize,
    },
    Baseline { k: usize },
}

fn default_pair_k() -> usize {
    32
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub shape: ShapeSource,
    pub energy: EnergySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyTag {
    Fem,
    Learned,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightStats {
    pub min_row_sum_pre_norm: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Default)]
struct Mutable {
    handles: Option<HandleSet>,
    weights: Option<Arc<WeightMatrix>>,
    stats: Option<WeightStats>,
    revision: u64,
}

pub struct Session {
    id: String,
    cloud: PointCloud,
    surface: Option<SurfaceMesh>,
    energy: EnergyTag,
    a: Arc<SparseSymMatrix>,
    solving: AtomicBool,
    state: tokio::sync::RwLock<Mutable>,
}

/// Clears the in-flight flag when the solve ends, however it ends.
struct SolveGuard<'a>(&'a AtomicBool);

impl<'a> SolveGuard<'a> {
    fn acquire(flag: &'a AtomicBool) -> Option<Self> {
        flag.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .ok()
            .map(|_| Self(flag))
    }
}

impl Drop for SolveGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    bbw: BbwOptions,
}

impl AppState {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Whether a weight solve is running for session `id`.
    pub fn is_solving(&self, id: &str) -> Option<bool> {
        self.session(id).ok().map(|s| s.solving.load(Ordering::Acquire))
    }
}

fn bbox_json(cloud: &PointCloud) -> serde_json::Value {
    let (lo, hi) = cloud.bbox();
    json!({ "min": lo, "max": hi })
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn build_session(id: String, req: CreateSession) -> Result<Session, Error> {
    let cloud = match &req.shape {
        ShapeSource::Xyz(text) => parse_xyz(text)?,
        ShapeSource::Path(p) => load_point_cloud(p, CloudFormat::from_path(p))?,
    };
    let (a, surface, energy) = match &req.energy {
        EnergySpec::Fem { node, ele } => {
            let mesh = load_tet_mesh(node, ele)?;
            if mesh.num_vertices() != cloud.len() {
                return Err(Error::IndexMisalignment {
                    cloud: cloud.len(),
                    mesh: mesh.num_vertices(),
                });
            }
            (fem_energy(&mesh)?.2, Some(surface_of(&mesh)), EnergyTag::Fem)
        }
        EnergySpec::Learned { model, k } => {
            if !model.exists() {
                return Err(io_error(model, std::io::ErrorKind::NotFound.into()));
            }
            let params = load_model(model)?;
            let pred = predict(&cloud, &params, *k)?;
            let a = deformation_energy(&pred.laplacian, &pred.inv_mass)?;
            (a, None, EnergyTag::Learned)
        }
        EnergySpec::Baseline { k } => {
            let (l, m) = knn_graph_laplacian(&cloud, *k, Bandwidth::Auto)?;
            let a = deformation_energy(&l, &inverse_mass(&m)?)?;
            (a, None, EnergyTag::Baseline)
        }
    };
    Ok(Session {
        id,
        cloud,
        surface,
        energy,
        a: Arc::new(a),
        solving: AtomicBool::new(false),
        state: tokio::sync::RwLock::new(Mutable::default()),
    })
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req: CreateSession = serde_json::from_slice(&body).map_err(ApiError::bad_json)?;
    let id = format!("s{}", app.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    let sid = id.clone();
    let session = tokio::task::spawn_blocking(move || build_session(sid, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
    let body = json!({
        "session_id": id,
        "n": session.cloud.len(),
        "bbox": bbox_json(&session.cloud),
        "revision": 0,
    });
    app.sessions
        .write()
        .expect("session table")
        .insert(id, Arc::new(session));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let st = s.state.read().await;
    let handles: Option<Vec<&[usize]>> = st.handles.as_ref().map(|h| h.iter().collect());
    Ok(Json(json!({
        "session_id": s.id,
        "n": s.cloud.len(),
        "m": handles.as_ref().map_or(0, Vec::len),
        "handles": handles,
        "energy": s.energy,
        "bbox": bbox_json(&s.cloud),
        "has_surface": s.surface.is_some(),
        "weight_stats": st.stats,
        "revision": st.revision,
    })))
}

async fn get_surface(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let st = s.state.read().await;
    let empty: Vec<[usize; 3]> = Vec::new();
    let (vertices, triangles): (&[Vec3], &[[usize; 3]]) = match &s.surface {
        Some(m) => (&m.vertices, &m.triangles),
        None => (s.cloud.positions(), &empty),
    };
    Ok(Json(json!({
        "vertices": vertices,
        "triangles": triangles,
        "revision": st.revision,
    })))
}

#[derive(Deserialize)]
struct HandleBody {
    handles: Vec<HandleEntry>,
}

#[derive(Deserialize)]
struct HandleEntry {
    vertices: Vec<usize>,
}

async fn put_handles(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let raw: HandleBody = serde_json::from_slice(&body).map_err(ApiError::bad_json)?;
    let handles = HandleSet::new(
        raw.handles.into_iter().map(|h| h.vertices).collect(),
        s.cloud.len(),
    )?;
    let _guard = SolveGuard::acquire(&s.solving).ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "SolveInFlight", "a weight solve is already running")
    })?;
    let mut st = s.state.write().await;
    if st.handles.as_ref() != Some(&handles) {
        let a = s.a.clone();
        let opts = app.bbw;
        let h = handles.clone();
        let (w, report) = tokio::task::spawn_blocking(move || solve_bbw(&a, &h, &opts))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))??;
        st.stats = Some(WeightStats {
            min_row_sum_pre_norm: report.min_row_sum_pre_norm,
            iterations: report.total_iterations(),
            kkt_residual: report.max_kkt_residual(),
        });
        st.handles = Some(handles);
        st.weights = Some(Arc::new(w));
        st.revision += 1;
    }
    Ok(Json(json!({
        "m": st.handles.as_ref().map_or(0, HandleSet::len),
        "weight_stats": st.stats,
        "revision": st.revision,
    })))
}

async fn deform(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let text = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "ParseError", e.to_string()))?;
    let req = DeformationRequest::from_json(text)?;
    let st = s.state.read().await;
    let w = st.weights.as_ref().ok_or_else(|| {
        ApiError::new(StatusCode::CONFLICT, "NoHandles", "set handles before deforming")
    })?;
    let out = lbs_deform(&s.cloud, w, &req)?;
    Ok(Json(json!({
        "positions": out.positions(),
        "revision": st.revision,
    })))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "wasm" => "application/wasm",
        "xyz" | "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// File under `root` for the URL tail `rel`; `None` for anything that
/// tries to leave `root`.
fn static_path(root: &Path, rel: &str) -> Option<PathBuf> {
    let mut path = root.to_path_buf();
    for part in rel.split('/').filter(|p| !p.is_empty()) {
        if part == ".." || part == "." || part.contains('\\') {
            return None;
        }
        path.push(part);
    }
    if path.is_dir() {
        path.push("index.html");
    }
    Some(path)
}

async fn static_file(root: Arc<PathBuf>, rel: String) -> Response {
    let Some(path) = static_path(&root, &rel) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

/// Routes, CORS, and the optional static bundle under `/app`.
pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/surface", get(get_surface))
        .route("/sessions/{id}/handles", put(put_handles))
        .route("/sessions/{id}/deform", post(deform))
        .with_state(state);
    if let Some(dir) = static_dir {
        let root = Arc::new(dir.to_path_buf());
        let index = root.clone();
        app = app
            .route("/app", get(move || static_file(index.clone(), String::new())))
            .route(
                "/app/{*path}",
                get(move |UrlPath(rel): UrlPath<String>| static_file(root.clone(), rel)),
            );
    }
    app.layer(CorsLayer::permissive())
}

pub async fn serve(addr: &str, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(), static_dir.as_deref())).await
}
