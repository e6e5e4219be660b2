//! HTTP/JSON API for semi-automatic marking.
//!
//! A session holds a grid, the singular points and sparse orientation marks
//! placed by an expert, and the model fitted to them. Angles travel in
//! degrees on the wire and in radians everywhere else. Fits run on a
//! blocking worker and are polled through `GET /sessions/{id}/fit`.

mod session;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use xqd_core::angle::{from_degrees, to_degrees};
use xqd_core::codec;
use xqd_core::fitting::{
    fit_xqd, optimize, FitStrategy, OptimizeCaps, ParamSelection, StrategyName,
};
use xqd_core::xqd::MAX_ANCHORS;
use xqd_core::{xqd_orientation, AnchorPoint, FieldExtent, GridSpec, Mark, XqdModel};

pub use session::{AppState, FitState, Session, SessionSnapshot, Snapshot};

/// Most cores (and, separately, deltas) a session accepts.
pub const MAX_SINGULAR_PER_KIND: usize = 2;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
    fn conflict(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::CONFLICT, msg.into())
    }
    fn not_found(id: &str) -> Self {
        ApiError(StatusCode::NOT_FOUND, format!("unknown session {id:?}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Body parsing that reports every malformed request as 400.
fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn finite(name: &str, v: f64) -> ApiResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ApiError::bad_request(format!("{name} must be finite")))
    }
}

fn lookup(state: &AppState, id: &str) -> ApiResult<session::SessionHandle> {
    state.get(id).ok_or_else(|| ApiError::not_found(id))
}

#[derive(Deserialize)]
struct GridBody {
    cols: usize,
    rows: usize,
    spacing_px: u32,
}

#[derive(Deserialize)]
struct CreateBody {
    grid: Option<GridBody>,
    /// Background image, base64. Stored for display only.
    image: Option<String>,
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let body: CreateBody = parse(&body)?;
    let g = body
        .grid
        .ok_or_else(|| ApiError::bad_request("missing grid"))?;
    let grid = GridSpec::new(g.cols, g.rows, g.spacing_px)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let (w, h) = grid.image_size_px();
    if w > usize::from(u16::MAX)
        || h > usize::from(u16::MAX)
        || grid.spacing_px > u32::from(u8::MAX)
    {
        return Err(ApiError::bad_request(
            "grid exceeds 65535 px per side or 255 px spacing",
        ));
    }
    let image = match body.image {
        Some(s) => Some(
            B64.decode(s)
                .map_err(|e| ApiError::bad_request(format!("image: {e}")))?,
        ),
        None => None,
    };
    let id = loop {
        let id = format!("{:016x}", rand::random::<u64>());
        if state.get(&id).is_none() {
            break id;
        }
    };
    state.insert(Session::new(id.clone(), grid, image));
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))).into_response())
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum SingularKind {
    Core,
    Delta,
}

#[derive(Deserialize)]
struct SingularBody {
    kind: SingularKind,
    x: f64,
    y: f64,
}

async fn add_singular_point(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let handle = lookup(&state, &id)?;
    let body: SingularBody = parse(&body)?;
    let p = (finite("x", body.x)?, finite("y", body.y)?);
    let mut s = handle.write().await;
    let (list, name) = match body.kind {
        SingularKind::Core => (&mut s.cores, "cores"),
        SingularKind::Delta => (&mut s.deltas, "deltas"),
    };
    if list.len() >= MAX_SINGULAR_PER_KIND {
        return Err(ApiError::conflict(format!(
            "a field has at most {MAX_SINGULAR_PER_KIND} {name}"
        )));
    }
    list.push(p);
    s.touch();
    Ok(Json(
        json!({ "cores": s.cores.len(), "deltas": s.deltas.len(), "revision": s.revision }),
    ))
}

#[derive(Deserialize)]
struct MarkBody {
    x: f64,
    y: f64,
    theta_deg: f64,
}

async fn add_marks(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let handle = lookup(&state, &id)?;
    let body: Vec<MarkBody> = parse(&body)?;
    let marks = body
        .iter()
        .map(|m| {
            let theta = from_degrees(m.theta_deg)
                .map_err(|_| ApiError::bad_request("theta_deg must be finite"))?;
            Mark::new(m.x, m.y, theta).map_err(|e| ApiError::bad_request(e.to_string()))
        })
        .collect::<ApiResult<Vec<_>>>()?;
    let mut s = handle.write().await;
    s.marks.extend(marks);
    s.touch();
    Ok(Json(
        json!({ "marks": s.marks.len(), "revision": s.revision }),
    ))
}

/// JSON description of a model, angles in degrees.
pub fn model_summary(model: &XqdModel, revision: u64, stale: bool) -> Value {
    let q = &model.qd;
    json!({
        "revision": revision,
        "stale": stale,
        "parameter_count": model.parameter_count(),
        "encoded_bytes": codec::encoded_len(q.singular_count(), model.anchors.len()),
        "anchors_used": model.anchors.len(),
        "model": {
            "r": q.r,
            "lambda": q.lambda,
            "rotation_deg": q.rotation.to_degrees(),
            "translation": [q.translation.0, q.translation.1],
            "cores": q.cores_world(),
            "deltas": q.deltas_world(),
            "anchors": model.anchors.iter().map(|p| json!({
                "a": p.a,
                "b": p.b,
                "theta_deg": to_degrees(p.theta),
                "sigma1": p.sigma1,
                "sigma2": p.sigma2,
            })).collect::<Vec<_>>(),
        },
    })
}

fn fit_status(s: &Session) -> Value {
    let state = s.fit.state;
    let mut out = json!({ "status": state });
    if let Some(r) = &s.fit.report {
        out["report"] = serde_json::to_value(r).expect("reports serialize");
    }
    if let Some(e) = &s.fit.error {
        out["error"] = json!(e);
    }
    if state == FitState::Done {
        if let Some(m) = &s.model {
            out["model"] = model_summary(m, s.revision, s.stale());
        }
    }
    out
}

#[derive(Deserialize)]
struct FitBody {
    strategy: String,
    target_deg: Option<f64>,
    max_seconds: Option<f64>,
    /// Block until the fit finishes instead of returning 202.
    #[serde(default)]
    wait: bool,
}

async fn start_fit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let handle = lookup(&state, &id)?;
    let body: FitBody = parse(&body)?;
    let name: StrategyName = body.strategy.parse().map_err(ApiError::bad_request)?;
    let mut strategy = FitStrategy::preset(name);
    if let Some(t) = body.target_deg {
        if !(t.is_finite() && t >= 0.0) {
            return Err(ApiError::bad_request(
                "target_deg must be a finite non-negative number",
            ));
        }
        strategy = strategy.with_target(t);
    }
    if let Some(t) = body.max_seconds {
        if !(t.is_finite() && t >= 0.0) {
            return Err(ApiError::bad_request(
                "max_seconds must be a finite non-negative number",
            ));
        }
        strategy = strategy.with_budget(t);
    }

    let (marks, singular, grid, revision) = {
        let mut s = handle.write().await;
        if s.marks.is_empty() {
            return Err(ApiError::conflict("no marks to fit"));
        }
        if s.fit.state == FitState::Running {
            return Err(ApiError::conflict(
                "a fit is already running for this session",
            ));
        }
        s.fit = session::FitJob {
            state: FitState::Running,
            report: None,
            error: None,
        };
        (s.marks.clone(), s.singular(), s.grid, s.revision)
    };

    let job_handle = handle.clone();
    let job = tokio::spawn(async move {
        let result =
            tokio::task::spawn_blocking(move || fit_xqd(&marks, &singular, &strategy)).await;
        let mut s = job_handle.write().await;
        match result {
            Ok(Ok((mut model, report))) => {
                model.extent = FieldExtent::from_grid(&grid);
                // Keep the stored form, so the field feed matches the export.
                let stored = codec::encode(&model)
                    .ok()
                    .and_then(|b| codec::decode(&b).ok());
                s.model = Some(stored.unwrap_or(model));
                s.model_revision = revision;
                s.fit.state = FitState::Done;
                s.fit.report = Some(report);
            }
            Ok(Err(e)) => {
                s.fit.state = FitState::Failed;
                s.fit.error = Some(e.to_string());
            }
            Err(e) => {
                s.fit.state = FitState::Failed;
                s.fit.error = Some(format!("fit worker stopped: {e}"));
            }
        }
    });

    if body.wait {
        job.await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        let s = handle.read().await;
        Ok((StatusCode::OK, Json(fit_status(&s))).into_response())
    } else {
        Ok((
            StatusCode::ACCEPTED,
            Json(json!({ "status": FitState::Running })),
        )
            .into_response())
    }
}

async fn get_fit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let handle = lookup(&state, &id)?;
    let s = handle.read().await;
    Ok(Json(fit_status(&s)))
}

#[derive(Deserialize)]
struct FieldQuery {
    stride: Option<usize>,
}

#[derive(Serialize)]
struct Sample {
    x: f64,
    y: f64,
    theta_deg: f64,
}

async fn get_field(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FieldQuery>,
) -> ApiResult<Json<Value>> {
    let handle = lookup(&state, &id)?;
    let stride = q.stride.unwrap_or(1);
    if stride == 0 {
        return Err(ApiError::bad_request("stride must be at least 1"));
    }
    let s = handle.read().await;
    let model = s
        .model
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no model yet"))?;
    let g = s.grid;
    let mut samples = Vec::new();
    for row in (0..g.rows).step_by(stride) {
        for col in (0..g.cols).step_by(stride) {
            let (x, y) = g.point(col, row);
            samples.push(Sample {
                x,
                y,
                theta_deg: to_degrees(xqd_orientation(x, y, model)),
            });
        }
    }
    Ok(Json(
        json!({ "revision": s.revision, "stale": s.stale(), "samples": samples }),
    ))
}

#[derive(Deserialize)]
struct AnchorBody {
    a: f64,
    b: f64,
    theta_deg: f64,
    sigma1: f64,
    sigma2: f64,
    #[serde(default)]
    optimize: bool,
}

async fn add_anchor(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let handle = lookup(&state, &id)?;
    let body: AnchorBody = parse(&body)?;
    let (a, b) = (finite("a", body.a)?, finite("b", body.b)?);
    let theta = from_degrees(body.theta_deg)
        .map_err(|_| ApiError::bad_request("theta_deg must be finite"))?;
    for (name, v) in [("sigma1", body.sigma1), ("sigma2", body.sigma2)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(ApiError::bad_request(format!("{name} must be positive")));
        }
    }

    // The write guard is held across the optimization to keep the session
    // single-writer.
    let mut s = handle.write().await;
    if s.fit.state == FitState::Running {
        return Err(ApiError::conflict("a fit is running for this session"));
    }
    let Some(model) = s.model.as_ref() else {
        return Err(ApiError::conflict("no model yet"));
    };
    if model.anchors.len() >= MAX_ANCHORS {
        return Err(ApiError::conflict(format!(
            "a model holds at most {MAX_ANCHORS} anchors"
        )));
    }
    if body.optimize && s.marks.is_empty() {
        return Err(ApiError::conflict("no marks to optimize against"));
    }
    let mut model = model.clone();
    model
        .anchors
        .push(AnchorPoint::new(a, b, theta, body.sigma1, body.sigma2));
    if body.optimize {
        let marks = s.marks.clone();
        let out = tokio::task::spawn_blocking(move || {
            optimize(
                &model,
                &marks,
                &ParamSelection::last_anchor(),
                &OptimizeCaps::default(),
            )
        })
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::conflict(e.to_string()))?;
        model = out.model;
    }
    let fresh = !s.stale();
    s.model = Some(model);
    s.touch();
    if fresh {
        s.model_revision = s.revision;
    }
    let summary = model_summary(
        s.model.as_ref().expect("just stored"),
        s.revision,
        s.stale(),
    );
    Ok(Json(summary))
}

async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = lookup(&state, &id)?;
    let s = handle.read().await;
    let model = s
        .model
        .as_ref()
        .ok_or_else(|| ApiError::conflict("no model yet"))?;
    let bytes = codec::encode(model).map_err(|e| ApiError::conflict(e.to_string()))?;
    Ok((
        StatusCode::OK,
        [(
            header::CONTENT_TYPE,
            HeaderValue::from_static("application/octet-stream"),
        )],
        bytes,
    )
        .into_response())
}

/// Routes with CORS open to any origin.
pub fn router(state: Arc<AppState>) -> Router {
    router_with_cors(state, None)
}

/// Routes with CORS restricted to `origin` when given.
pub fn router_with_cors(state: Arc<AppState>, origin: Option<HeaderValue>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match origin {
        Some(o) => cors.allow_origin(AllowOrigin::exact(o)),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/singular-points", post(add_singular_point))
        .route("/sessions/{id}/marks", post(add_marks))
        .route("/sessions/{id}/fit", post(start_fit).get(get_fit))
        .route("/sessions/{id}/field", get(get_field))
        .route("/sessions/{id}/anchors", post(add_anchor))
        .route("/sessions/{id}/export", get(export))
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub cors_origin: Option<String>,
    /// Sessions are loaded from here at startup, if present, and written
    /// back on shutdown.
    pub snapshot: Option<PathBuf>,
}

pub fn load_snapshot(path: &std::path::Path) -> io::Result<Arc<AppState>> {
    let text = std::fs::read_to_string(path)?;
    let snap: Snapshot =
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    AppState::restore(&snap).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub async fn save_snapshot(state: &AppState, path: &std::path::Path) -> io::Result<()> {
    let snap = state.snapshot().await;
    let text = serde_json::to_string_pretty(&snap).map_err(io::Error::other)?;
    std::fs::write(path, text)
}

/// Serves until Ctrl-C, then writes the snapshot if one is configured.
pub async fn serve(addr: SocketAddr, opts: ServeOptions) -> io::Result<()> {
    let state = match &opts.snapshot {
        Some(p) if p.exists() => load_snapshot(p)?,
        _ => AppState::new(),
    };
    let origin = match &opts.cors_origin {
        Some(o) => Some(
            HeaderValue::from_str(o).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?,
        ),
        None => None,
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router_with_cors(state.clone(), origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(p) = &opts.snapshot {
        save_snapshot(&state, p).await?;
    }
    Ok(())
}
