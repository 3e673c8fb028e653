#![allow(dead_code)]

use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use mmtl_server::{api, store};
use mmtl_sim::ScenarioSpec;
use tempfile::TempDir;
use tower::ServiceExt;

/// Bytes of the stand-in video file: 0, 1, ..., 255 repeated.
pub const VIDEO_LEN: usize = 4096;

/// A generated fixture and a store root inside one temporary directory.
pub struct Workspace {
    pub dir: TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    pub fn root(&self) -> PathBuf {
        self.dir.path().join("store")
    }

    /// Write the scenario's fixture under `fixtures/<name>`, with a fake
    /// video for its camera, and return the manifest path.
    pub fn fixture(&self, spec: &ScenarioSpec) -> PathBuf {
        let dir = self.dir.path().join("fixtures").join(&spec.name);
        mmtl_sim::generate(spec).unwrap().write_to(&dir).unwrap();
        let video: Vec<u8> = (0..VIDEO_LEN).map(|i| i as u8).collect();
        std::fs::write(dir.join("cam0.mp4"), video).unwrap();
        let path = dir.join("manifest.json");
        let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        m["video_files"] = serde_json::json!([{"camera_id": "cam0", "path": "cam0.mp4", "start_offset_seconds": 1.5}]);
        std::fs::write(&path, serde_json::to_string_pretty(&m).unwrap()).unwrap();
        path
    }

    /// Generate and process a scenario; returns the session directory.
    pub fn processed(&self, spec: &ScenarioSpec) -> PathBuf {
        store::process_session(&self.fixture(spec), &self.root()).unwrap()
    }

    pub fn router(&self) -> axum::Router {
        api::router(store::SessionStore::new(self.root()))
    }
}

pub fn read_dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn text(&self) -> String {
        String::from_utf8(self.body.clone()).unwrap()
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap()
    }
}

pub async fn get(router: &axum::Router, uri: &str) -> Reply {
    send(router, Request::get(uri).body(Body::empty()).unwrap()).await
}

pub async fn send(router: &axum::Router, request: Request<Body>) -> Reply {
    let response = router.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let body = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}
