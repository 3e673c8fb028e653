//! Batch pipeline: ingest, re-identification, affect and gaze lanes,
//! simulation log analysis, and timeline assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use mmtl_core::affect::{affect_lane, AffectError, AffectSegment};
use mmtl_core::config::AnalysisConfig;
use mmtl_core::gaze3d::{encode_tracks, gaze_lane, GazeSegment, OoiHit, SceneModel, PERSON_PREFIX};
use mmtl_core::ingest::{load_manifest, load_scene, parse_detections, IngestError, SessionManifest, StreamSpec};
use mmtl_core::reid::{group_by_frame, parse_corrections, run_tracker, ReidError, Track};
use mmtl_core::simlog::{
    action_markers, compute_metrics, parse_log, state_intervals, students as log_students, system_state_lane,
    validate_transitions, LogEvent, ModelSpec, SimlogError, StudentMetrics, TransitionOutcome,
};
use mmtl_core::timeline::{Marker, Segment, StudentLanes, Timeline};
use thiserror::Error;

/// Gaze label for windows where no object was hit.
pub const NO_GAZE: &str = "none";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Reid(#[from] ReidError),
    #[error(transparent)]
    Affect(#[from] AffectError),
    #[error(transparent)]
    Simlog(#[from] SimlogError),
    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error("{path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("session `{0}` is being processed by another writer")]
    Locked(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io { path: path.to_path_buf(), reason: e.to_string() }
    }
}

/// Per-stream results.
#[derive(Debug, Clone)]
pub struct StreamAnalysis {
    pub stream_id: String,
    pub tracks: Vec<Track>,
    /// Per-frame gaze hits by track; empty when the scene belongs to another
    /// camera.
    pub hits: BTreeMap<u64, Vec<OoiHit>>,
    pub affect: BTreeMap<u64, Vec<AffectSegment>>,
    pub gaze: BTreeMap<u64, Vec<GazeSegment>>,
}

#[derive(Debug, Clone)]
pub struct SessionAnalysis {
    pub manifest: SessionManifest,
    pub config: AnalysisConfig,
    pub scene: SceneModel,
    pub model: ModelSpec,
    pub duration: f64,
    pub streams: Vec<StreamAnalysis>,
    pub events: Vec<LogEvent>,
    pub outcomes: Vec<TransitionOutcome>,
    pub metrics: BTreeMap<String, StudentMetrics>,
    pub timeline: Timeline,
}

impl SessionAnalysis {
    /// Student a track belongs to: from the manifest, else `<stream>:<track>`.
    pub fn student_of(&self, stream: &str, track: u64) -> String {
        student_name(&self.manifest, stream, track)
    }
}

fn student_name(manifest: &SessionManifest, stream: &str, track: u64) -> String {
    manifest.student_for(stream, track).map(String::from).unwrap_or_else(|| format!("{stream}:{track}"))
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()).into(),
        _ => PipelineError::io(path, e),
    })
}

fn analyze_stream(
    manifest: &SessionManifest,
    stream: &StreamSpec,
    scene: &SceneModel,
    config: &AnalysisConfig,
) -> Result<StreamAnalysis, PipelineError> {
    let records = parse_detections(open(&stream.detections)?)?.strict()?;
    let corrections = match &stream.corrections {
        Some(p) => parse_corrections(open(p)?)?,
        None => Vec::new(),
    };
    let tracks = run_tracker(group_by_frame(&records), config.tracker, &corrections)?;
    let clock = manifest.clock(stream);

    let mut affect = BTreeMap::new();
    for t in &tracks {
        affect.insert(t.track_id, affect_lane(t, &clock, &config.affect)?);
    }
    let gaze_applies = scene.camera_id.as_deref().is_none_or(|c| c == stream.camera_id);
    let hits = if gaze_applies { encode_tracks(&tracks, scene, &stream.intrinsics) } else { BTreeMap::new() };
    let gaze = hits
        .iter()
        .map(|(id, h)| (*id, gaze_lane(*id, h, &clock, config.gaze.window_frames)))
        .collect();
    Ok(StreamAnalysis { stream_id: stream.stream_id.clone(), tracks, hits, affect, gaze })
}

/// Put segments from several tracks on one lane. Where they overlap the
/// earlier-starting segment keeps the time. Segments are cut to
/// `[0, duration]`.
fn lay_out(mut segs: Vec<Segment>, duration: f64) -> Vec<Segment> {
    segs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for mut s in segs {
        s.start = s.start.max(out.last().map_or(0.0, |p| p.end));
        s.end = s.end.min(duration);
        if s.end <= s.start {
            continue;
        }
        match out.last_mut() {
            Some(prev) if prev.end == s.start && prev.label == s.label => prev.end = s.end,
            _ => out.push(s),
        }
    }
    out
}

/// Analysis settings named by the manifest, or the defaults.
pub fn load_config(manifest: &SessionManifest) -> Result<AnalysisConfig, PipelineError> {
    let Some(p) = &manifest.config_path else {
        return Ok(AnalysisConfig::default());
    };
    let text = fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
    let c = AnalysisConfig::from_json(&text).map_err(|e| PipelineError::Config { path: p.clone(), reason: e.to_string() })?;
    c.tracker.validate()?;
    c.affect.validate()?;
    Ok(c)
}

/// Run every analysis step for the session described by `manifest_path`.
pub fn analyze(manifest_path: &Path) -> Result<SessionAnalysis, PipelineError> {
    let manifest = load_manifest(manifest_path)?;
    let config = load_config(&manifest)?;
    let scene = load_scene(&manifest.scene_path)?;
    let model = match &manifest.model_path {
        Some(p) => ModelSpec::from_json(&fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?)?,
        None => ModelSpec::photosynthesis(),
    };

    let streams = manifest
        .streams
        .iter()
        .map(|s| analyze_stream(&manifest, s, &scene, &config))
        .collect::<Result<Vec<_>, _>>()?;

    let events = parse_log(open(&manifest.log_path)?, Some(&model))?;
    let last_frame_time = streams
        .iter()
        .filter_map(|s| {
            let spec = manifest.stream(&s.stream_id)?;
            let last = s.tracks.iter().filter_map(Track::last_frame).max()?;
            Some(manifest.clock(spec).time(last + 1))
        })
        .fold(0.0, f64::max);
    let duration = manifest
        .duration_seconds
        .unwrap_or_else(|| events.iter().map(|e| e.time).fold(last_frame_time, f64::max));

    let outcomes = validate_transitions(&events, &model);
    let mut lanes: BTreeMap<String, (Vec<Segment>, Vec<Segment>)> = BTreeMap::new();
    for s in &streams {
        for (track, segs) in &s.affect {
            let who = student_name(&manifest, &s.stream_id, *track);
            let entry = lanes.entry(who).or_default();
            entry.0.extend(segs.iter().map(|a| Segment::new(a.start, a.end, a.label.as_str())));
        }
        for (track, segs) in &s.gaze {
            let who = student_name(&manifest, &s.stream_id, *track);
            let entry = lanes.entry(who).or_default();
            entry.1.extend(segs.iter().map(|g| {
                let label = match &g.ooi {
                    None => NO_GAZE.to_string(),
                    Some(name) => match name.strip_prefix(PERSON_PREFIX).and_then(|id| id.parse::<u64>().ok()) {
                        Some(other) => format!("{PERSON_PREFIX}{}", student_name(&manifest, &s.stream_id, other)),
                        None => name.clone(),
                    },
                };
                Segment::new(g.start, g.end, label)
            }));
        }
    }

    let mut everyone: BTreeSet<String> = log_students(&events);
    everyone.extend(manifest.students.keys().cloned());
    everyone.extend(lanes.keys().cloned());

    let mut metrics = BTreeMap::new();
    let mut per_student = BTreeMap::new();
    for who in everyone {
        let intervals = state_intervals(&events, &who, duration);
        let mine: Vec<TransitionOutcome> = outcomes.iter().filter(|o| o.student_id == who).cloned().collect();
        match compute_metrics(&who, &intervals, &mine, &model, config.initial_window) {
            Ok(m) => {
                metrics.insert(who.clone(), m);
            }
            Err(SimlogError::NoStateData(_)) => {}
            Err(e) => return Err(e.into()),
        }
        let (affect, gaze) = lanes.remove(&who).unwrap_or_default();
        per_student.insert(
            who.clone(),
            StudentLanes {
                state: intervals.into_iter().map(|i| Segment::new(i.start, i.end, i.molecule)).collect(),
                actions: action_markers(&events, &outcomes, &who).into_iter().map(|(t, l)| Marker::new(t, l)).collect(),
                affect: lay_out(affect, duration),
                gaze: lay_out(gaze, duration),
            },
        );
    }
    let system = system_state_lane(&events, duration)
        .into_iter()
        .map(|s| Segment::new(s.start, s.end, s.state.to_string()))
        .collect();
    let timeline =
        Timeline::assemble(&manifest.session_id, duration, 1.0 / manifest.fps.as_f64(), per_student, system);

    Ok(SessionAnalysis { manifest, config, scene, model, duration, streams, events, outcomes, metrics, timeline })
}
