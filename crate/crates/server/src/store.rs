//! Filesystem session store. Each processed session is a directory under the
//! root holding its artifacts and, written last, a completion marker.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use mmtl_core::canonical::to_canonical_string;
use mmtl_core::timeline::Timeline;
use serde::Serialize;
use serde_json::json;

use crate::pipeline::{analyze, PipelineError, SessionAnalysis};

pub const COMPLETE_MARKER: &str = "COMPLETE";
pub const TIMELINE_FILE: &str = "timeline.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Exclusive writer lock for one session; released on drop.
struct SessionLock {
    path: PathBuf,
}

impl SessionLock {
    fn acquire(root: &Path, session: &str) -> Result<Self, PipelineError> {
        let path = root.join(format!(".{session}.lock"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(SessionLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(session.into())),
            Err(e) => Err(PipelineError::io(&path, e)),
        }
    }
}

impl Drop for SessionLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| to_canonical_string(&i) + "\n").collect()
}

/// Artifact files for an analysed session, name to contents.
pub fn artifacts(a: &SessionAnalysis) -> Vec<(String, String)> {
    let mut files = vec![
        (MANIFEST_FILE.to_string(), to_canonical_string(&a.manifest) + "\n"),
        (METRICS_FILE.to_string(), to_canonical_string(&a.metrics) + "\n"),
        (TIMELINE_FILE.to_string(), a.timeline.to_canonical_json() + "\n"),
        ("outcomes.jsonl".to_string(), jsonl(&a.outcomes)),
    ];
    let mut tracks = Vec::new();
    for s in &a.streams {
        for t in &s.tracks {
            for (frame, d) in &t.history {
                tracks.push(json!({
                    "stream": s.stream_id,
                    "track_id": t.track_id,
                    "frame": frame,
                    "bbox": [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
                    "valence": d.valence,
                    "arousal": d.arousal,
                    "pitch": d.pitch,
                    "yaw": d.yaw,
                    "depth": d.depth,
                }));
            }
            if let Some(segs) = s.affect.get(&t.track_id) {
                files.push((format!("affect_{}_{}.jsonl", s.stream_id, t.track_id), jsonl(segs)));
            }
            if let Some(segs) = s.gaze.get(&t.track_id) {
                files.push((format!("gaze_{}_{}.jsonl", s.stream_id, t.track_id), jsonl(segs)));
            }
        }
    }
    files.push(("tracks.jsonl".to_string(), jsonl(tracks)));
    files
}

/// Process a session and publish it under `root`. Artifacts are written to
/// a temporary directory that replaces any previous version by rename; the
/// completion marker is written last.
pub fn process_session(manifest_path: &Path, root: &Path) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
    let analysis = analyze(manifest_path)?;
    let id = analysis.manifest.session_id.clone();
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\']) {
        return Err(PipelineError::Io { path: root.to_path_buf(), reason: format!("unusable session id `{id}`") });
    }
    let _lock = SessionLock::acquire(root, &id)?;

    let staging = root.join(format!(".staging-{id}"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| PipelineError::io(&staging, e))?;
    }
    fs::create_dir(&staging).map_err(|e| PipelineError::io(&staging, e))?;
    for (name, body) in artifacts(&analysis) {
        let path = staging.join(name);
        fs::write(&path, body).map_err(|e| PipelineError::io(&path, e))?;
    }
    let marker = staging.join(COMPLETE_MARKER);
    fs::write(&marker, "").map_err(|e| PipelineError::io(&marker, e))?;

    let target = root.join(&id);
    let retired = root.join(format!(".retired-{id}"));
    if target.exists() {
        if retired.exists() {
            fs::remove_dir_all(&retired).map_err(|e| PipelineError::io(&retired, e))?;
        }
        fs::rename(&target, &retired).map_err(|e| PipelineError::io(&target, e))?;
    }
    fs::rename(&staging, &target).map_err(|e| PipelineError::io(&target, e))?;
    if retired.exists() {
        fs::remove_dir_all(&retired).map_err(|e| PipelineError::io(&retired, e))?;
    }
    Ok(target)
}

/// Read-only view of the processed sessions under a root directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("{0}")]
    Corrupt(String),
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        SessionStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Completed sessions, sorted by id.
    pub fn sessions(&self) -> Vec<String> {
        let Ok(entries) = fs::read_dir(&self.root) else {
            return Vec::new();
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join(COMPLETE_MARKER).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !n.starts_with('.'))
            .collect();
        ids.sort();
        ids
    }

    /// Directory of a completed session.
    pub fn session_dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        let valid = !id.is_empty() && !id.starts_with('.') && !id.contains(['/', '\\']);
        let dir = self.root.join(id);
        if valid && dir.join(COMPLETE_MARKER).is_file() {
            Ok(dir)
        } else {
            Err(StoreError::UnknownSession(id.to_string()))
        }
    }

    pub fn read(&self, id: &str, file: &str) -> Result<String, StoreError> {
        let path = self.session_dir(id)?.join(file);
        fs::read_to_string(&path).map_err(|e| StoreError::Corrupt(format!("{}: {e}", path.display())))
    }

    pub fn timeline(&self, id: &str) -> Result<Timeline, StoreError> {
        Timeline::from_json(&self.read(id, TIMELINE_FILE)?).map_err(|e| StoreError::Corrupt(e.to_string()))
    }

    pub fn manifest(&self, id: &str) -> Result<serde_json::Value, StoreError> {
        serde_json::from_str(&self.read(id, MANIFEST_FILE)?).map_err(|e| StoreError::Corrupt(e.to_string()))
    }
}
