//! Read-only HTTP API over a [`SessionStore`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use mmtl_core::canonical::to_canonical_string;
use mmtl_core::timeline::{build_timeline, clip_lane, resample, LaneKind, Timeline, TimelineError};
use serde_json::json;
use tower_http::services::ServeFile;

use crate::store::{SessionStore, StoreError, METRICS_FILE};

/// Error response: status plus `{"error": ..., "field": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<&'static str>,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, message: message.into(), field: Some(field) }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownSession(_) => StatusCode::NOT_FOUND,
            StoreError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, message: e.to_string(), field: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = to_canonical_string(&json!({"error": self.message, "field": self.field}));
        (self.status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
    }
}

fn json_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

/// Parsed `/timeline` query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimelineQuery {
    pub students: Option<Vec<String>>,
    pub lanes: Option<Vec<LaneKind>>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub resolution: Option<f64>,
}

fn number(params: &BTreeMap<String, String>, key: &'static str) -> Result<Option<f64>, ApiError> {
    params
        .get(key)
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| ApiError::bad(key, format!("`{v}` is not a finite number")))
        })
        .transpose()
}

fn list(params: &BTreeMap<String, String>, key: &str) -> Option<Vec<String>> {
    params
        .get(key)
        .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
}

impl TimelineQuery {
    pub fn parse(params: &BTreeMap<String, String>) -> Result<Self, ApiError> {
        const KNOWN: [&str; 5] = ["students", "lanes", "from", "to", "resolution"];
        if let Some(k) = params.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(ApiError { status: StatusCode::BAD_REQUEST, message: format!("unknown parameter `{k}`"), field: None });
        }
        let lanes = list(params, "lanes")
            .map(|names| {
                names
                    .iter()
                    .map(|n| n.parse::<LaneKind>().map_err(|e| ApiError::bad("lanes", e.to_string())))
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()?;
        let q = TimelineQuery {
            students: list(params, "students"),
            lanes,
            from: number(params, "from")?,
            to: number(params, "to")?,
            resolution: number(params, "resolution")?,
        };
        if q.from.is_some_and(|f| f < 0.0) {
            return Err(ApiError::bad("from", "must be >= 0"));
        }
        if let (Some(f), Some(t)) = (q.from, q.to) {
            if t <= f {
                return Err(ApiError::bad("to", "must be greater than `from`"));
            }
        }
        if q.resolution.is_some_and(|r| r <= 0.0) {
            return Err(ApiError::bad("resolution", "must be > 0"));
        }
        Ok(q)
    }
}

/// Apply a query to a full timeline: select, clip, then resample.
pub fn query_timeline(full: &Timeline, q: &TimelineQuery) -> Result<Timeline, ApiError> {
    let mut t = build_timeline(full, q.students.as_deref(), q.lanes.as_deref()).map_err(|e| match e {
        TimelineError::UnknownStudent(_) => ApiError::bad("students", e.to_string()),
        TimelineError::UnknownLane(_) => ApiError::bad("lanes", e.to_string()),
        other => ApiError::bad("timeline", other.to_string()),
    })?;
    if q.from.is_some() || q.to.is_some() {
        let (from, to) = (q.from.unwrap_or(0.0), q.to.unwrap_or(f64::INFINITY));
        t.lanes = t.lanes.iter().map(|l| clip_lane(l, from, to)).collect();
    }
    match q.resolution {
        Some(r) => resample(&t, r).map_err(|e| ApiError::bad("resolution", e.to_string())),
        None => Ok(t),
    }
}

type Shared = Arc<SessionStore>;

async fn list_sessions(State(store): State<Shared>) -> Response {
    json_response(to_canonical_string(&store.sessions()))
}

async fn students(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let t = store.timeline(&id)?;
    Ok(json_response(to_canonical_string(&t.students())))
}

async fn timeline(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Result<Response, ApiError> {
    let full = store.timeline(&id)?;
    let q = TimelineQuery::parse(&params)?;
    Ok(json_response(query_timeline(&full, &q)?.to_canonical_json()))
}

async fn metrics(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(json_response(store.read(&id, METRICS_FILE)?.trim_end().to_string()))
}

/// Camera list with offsets and file names, for synchronising playback.
fn video_meta_value(id: &str, manifest: &serde_json::Value) -> serde_json::Value {
    let cameras: Vec<serde_json::Value> = manifest["video_files"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|v| {
            let cam = v["camera_id"].as_str().unwrap_or_default();
            let file = PathBuf::from(v["path"].as_str().unwrap_or_default());
            json!({
                "camera_id": cam,
                "file": file.file_name().map(|f| f.to_string_lossy().into_owned()),
                "start_offset_seconds": v["start_offset_seconds"],
                "url": format!("/sessions/{id}/video/{cam}"),
            })
        })
        .collect();
    let streams: Vec<serde_json::Value> = manifest["streams"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|s| {
            json!({
                "stream_id": s["stream_id"],
                "camera_id": s["camera_id"],
                "start_offset_seconds": s["start_offset_seconds"],
            })
        })
        .collect();
    json!({"session": id, "fps": manifest["fps"], "cameras": cameras, "streams": streams})
}

async fn video_meta(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let manifest = store.manifest(&id)?;
    Ok(json_response(to_canonical_string(&video_meta_value(&id, &manifest))))
}

/// Video bytes with range support.
async fn video(
    State(store): State<Shared>,
    Path((id, camera)): Path<(String, String)>,
    request: Request<Body>,
) -> Result<Response, ApiError> {
    let manifest = store.manifest(&id)?;
    let path = manifest["video_files"]
        .as_array()
        .into_iter()
        .flatten()
        .find(|v| v["camera_id"].as_str() == Some(camera.as_str()))
        .and_then(|v| v["path"].as_str())
        .map(PathBuf::from)
        .ok_or_else(|| ApiError { status: StatusCode::NOT_FOUND, message: format!("no video for camera `{camera}`"), field: None })?;
    let mut service = ServeFile::new(path);
    let response = tower::ServiceExt::oneshot(&mut service, request)
        .await
        .map_err(|e| ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string(), field: None })?;
    Ok(response.map(Body::new))
}

pub fn router(store: SessionStore) -> Router {
    Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}/students", get(students))
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/video-meta", get(video_meta))
        .route("/sessions/{id}/video/{camera}", get(video))
        .with_state(Arc::new(store))
}

/// Serve until the process is stopped.
pub async fn serve(store: SessionStore, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    axum::serve(listener, router(store)).await
}
