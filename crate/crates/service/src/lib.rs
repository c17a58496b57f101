//! HTTP front end for refining a deformation rig.
//!
//! One [`ServiceState`] owns the session, the loaded volume and the most recent skeleton.
//! Mutations take the write lock, so they are applied one at a time and every response that
//! follows sees them. Each mutation bumps a version counter, returned in the `x-rig-version`
//! header of every response and in mutation bodies.
//!
//! | route | effect |
//! |---|---|
//! | `GET /rig` | rig JSON |
//! | `GET /slice?t=&w=&h=` | 8-bit PNG cross-section at arclength `t` |
//! | `GET /preview` | `{x, y, z}` base64 PNG maximum-intensity projections of a budgeted straighten |
//! | `GET /curve` | skeleton, keyframe positions and arclengths |
//! | `POST /keyframe/{insert,remove,rotate,center,extent}` | one rig edit |
//! | `POST /endpoints` | new endpoints; re-runs skeleton extraction |
//! | `POST /save` | writes the session file |
//! | `GET /export?path=` | writes the full-resolution straight volume |

use std::io::Cursor;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::RwLock;
use unbend_core::{
    budgeted_spec, build_rig, cross_section, export_volume, extract_skeleton, load_volume, max_intensity_projections,
    straighten, Edit, Endpoints, Error as CoreError, Image2D, PipelineParams, Rig, Sess, Skeleton, StraightVolumeSpec,
    Vec3, Volume,
};

/// Voxel cap for the straightened volume behind `GET /preview`.
pub const PREVIEW_VOXEL_BUDGET: usize = 2_000_000;
const DEFAULT_SLICE_SIZE: u32 = 128;
const MAX_SLICE_SIZE: u32 = 4096;
const VERSION_HEADER: &str = "x-rig-version";

/// JSON error response: `{"error": message}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            CoreError::SolverDiverged { .. } | CoreError::NonConvergence => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    session: Sess,
    volume: Arc<Volume>,
    skeleton: Option<Skeleton>,
    version: u64,
}

/// Shared state behind the router.
pub struct ServiceState {
    inner: RwLock<Inner>,
    params: PipelineParams,
}

impl ServiceState {
    /// Wraps an already loaded session and volume. `params` drive `POST /endpoints`.
    pub fn new(session: Sess, volume: Volume, skeleton: Option<Skeleton>, params: PipelineParams) -> Self {
        for warning in session.check_provenance() {
            tracing::warn!("volume provenance: {warning}");
        }
        Self {
            inner: RwLock::new(Inner {
                session,
                volume: Arc::new(volume),
                skeleton,
                version: 0,
            }),
            params,
        }
    }

    /// Loads a session file and the volume it references, then extracts the skeleton for
    /// `GET /curve`.
    pub fn open(session_path: impl AsRef<Path>, params: PipelineParams) -> unbend_core::Result<Self> {
        let session = Sess::load(session_path)?;
        let volume: Volume = load_volume(&session.volume_ref.data_path, &session.volume_ref.meta_path)?;
        let skeleton = match extract_skeleton(&volume, &session.endpoints, &params) {
            Ok(run) => Some(run.skeleton),
            Err(e) => {
                tracing::warn!("skeleton unavailable: {e}");
                None
            }
        };
        Ok(Self::new(session, volume, skeleton, params))
    }

    pub async fn version(&self) -> u64 {
        self.inner.read().await.version
    }

    pub async fn session(&self) -> Sess {
        self.inner.read().await.session.clone()
    }
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/rig", get(get_rig))
        .route("/slice", get(get_slice))
        .route("/preview", get(get_preview))
        .route("/curve", get(get_curve))
        .route("/keyframe/insert", post(insert))
        .route("/keyframe/remove", post(remove))
        .route("/keyframe/rotate", post(rotate))
        .route("/keyframe/center", post(center))
        .route("/keyframe/extent", post(extent))
        .route("/endpoints", post(set_endpoints))
        .route("/save", post(save))
        .route("/export", get(export))
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn versioned(version: u64, body: impl IntoResponse) -> Response {
    let mut res = body.into_response();
    res.headers_mut().insert(VERSION_HEADER, HeaderValue::from(version));
    res
}

fn png(img: &Image2D<f64>) -> ApiResult<Vec<u8>> {
    let gray = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.to_u8())
        .ok_or_else(|| ApiError::internal("image buffer size mismatch"))?;
    let mut out = Cursor::new(Vec::new());
    gray.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(out.into_inner())
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> ApiResult<R> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))
}

/// Straightened grid at the volume's finest spacing.
fn straight_spec(rig: &Rig, volume: &Volume) -> StraightVolumeSpec<f64> {
    let s = volume.min_spacing();
    StraightVolumeSpec::from_rig(rig, Vec3::new(s, s, s))
}

async fn get_rig(State(state): State<Arc<ServiceState>>) -> ApiResult<Response> {
    let inner = state.inner.read().await;
    let rig = serde_json::to_value(inner.session.rig()).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(versioned(inner.version, Json(rig)))
}

#[derive(Deserialize)]
struct SliceQuery {
    t: f64,
    w: Option<u32>,
    h: Option<u32>,
}

async fn get_slice(State(state): State<Arc<ServiceState>>, q: Result<Query<SliceQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let (w, h) = (q.w.unwrap_or(DEFAULT_SLICE_SIZE), q.h.unwrap_or(DEFAULT_SLICE_SIZE));
    if !(1..=MAX_SLICE_SIZE).contains(&w) || !(1..=MAX_SLICE_SIZE).contains(&h) {
        return Err(ApiError::bad_request(format!("slice size must lie in 1..={MAX_SLICE_SIZE}")));
    }
    let (rig, volume, version) = {
        let inner = state.inner.read().await;
        (inner.session.rig().clone(), inner.volume.clone(), inner.version)
    };
    let img = blocking(move || cross_section(&rig, &volume, q.t, [w as usize, h as usize])).await??;
    Ok(versioned(version, ([(header::CONTENT_TYPE, "image/png")], png(&img)?)))
}

async fn get_preview(State(state): State<Arc<ServiceState>>) -> ApiResult<Response> {
    let (rig, volume, version) = {
        let inner = state.inner.read().await;
        (inner.session.rig().clone(), inner.volume.clone(), inner.version)
    };
    let mips = blocking(move || {
        let spec = budgeted_spec(&straight_spec(&rig, &volume), PREVIEW_VOXEL_BUDGET);
        max_intensity_projections(&straighten(&rig, &volume, &spec))
    })
    .await?;
    let b64 = |img: &Image2D<f64>| png(img).map(|p| base64::engine::general_purpose::STANDARD.encode(p));
    let body = json!({ "version": version, "x": b64(&mips[0])?, "y": b64(&mips[1])?, "z": b64(&mips[2])? });
    Ok(versioned(version, Json(body)))
}

async fn get_curve(State(state): State<Arc<ServiceState>>) -> ApiResult<Response> {
    let inner = state.inner.read().await;
    let rig = inner.session.rig();
    let body = json!({
        "skeleton": inner.skeleton,
        "keyframes": rig.positions(),
        "arclengths": rig.cum_arclength(),
    });
    Ok(versioned(inner.version, Json(body)))
}

async fn apply(state: &ServiceState, edit: Edit) -> ApiResult<Response> {
    let mut inner = state.inner.write().await;
    inner.session.apply_edit(edit)?;
    inner.version += 1;
    let body = json!({ "version": inner.version, "rig": inner.session.rig() });
    Ok(versioned(inner.version, Json(body)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InsertBody {
    t: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexBody {
    i: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RotateBody {
    i: usize,
    angle: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CenterBody {
    i: usize,
    dx: f64,
    dy: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExtentBody {
    i: usize,
    rx: f64,
    ry: f64,
}

async fn insert(State(state): State<Arc<ServiceState>>, body: Result<Json<InsertBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    apply(&state, Edit::InsertAt { t: b.t }).await
}

async fn remove(State(state): State<Arc<ServiceState>>, body: Result<Json<IndexBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    apply(&state, Edit::Remove { i: b.i }).await
}

async fn rotate(State(state): State<Arc<ServiceState>>, body: Result<Json<RotateBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    apply(&state, Edit::Rotate { i: b.i, angle: b.angle }).await
}

async fn center(State(state): State<Arc<ServiceState>>, body: Result<Json<CenterBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    apply(&state, Edit::SetCenter { i: b.i, dx: b.dx, dy: b.dy }).await
}

async fn extent(State(state): State<Arc<ServiceState>>, body: Result<Json<ExtentBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    apply(&state, Edit::SetExtent { i: b.i, rx: b.rx, ry: b.ry }).await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointsBody {
    points: Vec<[f64; 3]>,
}

async fn set_endpoints(
    State(state): State<Arc<ServiceState>>,
    body: Result<Json<EndpointsBody>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(b) = body?;
    let endpoints = Endpoints::new(b.points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())?;
    let mut inner = state.inner.write().await;
    let (volume, params) = (inner.volume.clone(), state.params);
    let ends = endpoints.clone();
    let (rig, run) = blocking(move || build_rig(&volume, &ends, &params)).await??;
    inner.session.reinitialize(endpoints, rig);
    inner.skeleton = Some(run.skeleton);
    inner.version += 1;
    let body = json!({ "version": inner.version, "rig": inner.session.rig() });
    Ok(versioned(inner.version, Json(body)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathBody {
    path: PathBuf,
}

async fn save(State(state): State<Arc<ServiceState>>, body: Result<Json<PathBody>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let inner = state.inner.read().await;
    inner.session.save(&b.path)?;
    Ok(versioned(inner.version, Json(json!({ "path": b.path, "version": inner.version }))))
}

/// Sidecar path for an exported data file: same stem, `.json` extension.
pub fn export_meta_path(data: &Path) -> Option<PathBuf> {
    let meta = data.with_extension("json");
    (meta != data).then_some(meta)
}

async fn export(State(state): State<Arc<ServiceState>>, q: Result<Query<PathBody>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let meta = export_meta_path(&q.path).ok_or_else(|| ApiError::bad_request("export path must not end in .json"))?;
    let (rig, volume, version) = {
        let inner = state.inner.read().await;
        (inner.session.rig().clone(), inner.volume.clone(), inner.version)
    };
    let (data_path, meta_path) = (q.path.clone(), meta.clone());
    let dims = blocking(move || {
        let out = straighten(&rig, &volume, &straight_spec(&rig, &volume));
        export_volume(&out, &data_path, &meta_path).map(|_| out.dims)
    })
    .await??;
    Ok(versioned(version, Json(json!({ "data": q.path, "meta": meta, "dims": dims, "version": version }))))
}

