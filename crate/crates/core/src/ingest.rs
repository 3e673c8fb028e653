//! Input parsing and validation: session manifests, per-stream detection
//! CSVs, scene files, and frame to session-time alignment.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::gaze3d::{Ooi, SceneModel};

/// Header of a detection CSV without the optional gaze columns.
pub const DETECTION_COLUMNS: [&str; 7] =
    ["frame", "x_min", "y_min", "x_max", "y_max", "valence", "arousal"];
/// Optional trailing columns: gaze angles in radians and depth in meters.
pub const GAZE_COLUMNS: [&str; 3] = ["pitch", "yaw", "depth"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("schema violation at `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("duplicate stream id `{0}`")]
    DuplicateStreamId(String),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: value out of range for `{field}`")]
    RangeViolation { line: u64, field: String },
    #[error("duplicate object-of-interest name `{0}`")]
    DuplicateOoiName(String),
    #[error("scene has no floor plane")]
    MissingFloorPlane,
    #[error("io error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

impl IngestError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        IngestError::SchemaViolation { field: field.into(), reason: reason.into() }
    }
}

/// Frames per second as an exact positive rational.
///
/// Written in JSON as an integer (`30`), a decimal (`29.97`, kept to three
/// decimal places) or a `"num/den"` string (`"30000/1001"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameRate {
    num: u64,
    den: u64,
}

impl FrameRate {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        if num == 0 || den == 0 {
            return None;
        }
        let g = gcd(num, den);
        Some(FrameRate { num: num / g, den: den / g })
    }

    pub fn integer(fps: u64) -> Option<Self> {
        Self::new(fps, 1)
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Duration of `frames` frames in seconds.
    pub fn frames_to_seconds(&self, frames: u64) -> f64 {
        // frames * den / num, split to keep the integer part exact.
        let whole = (frames * self.den) / self.num;
        let rem = (frames * self.den) % self.num;
        whole as f64 + rem as f64 / self.num as f64
    }
}

impl Default for FrameRate {
    fn default() -> Self {
        FrameRate { num: 30, den: 1 }
    }
}

impl fmt::Display for FrameRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawRate {
    Int(i64),
    Float(f64),
    Text(String),
}

/// Parsed but not yet validated frame rate; zero and negative values survive
/// deserialization so validation can report them as schema violations.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RateValue {
    num: i64,
    den: i64,
}

impl<'de> Deserialize<'de> for RateValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match RawRate::deserialize(d)? {
            RawRate::Int(n) => Ok(RateValue { num: n, den: 1 }),
            RawRate::Float(x) => {
                if !x.is_finite() {
                    return Err(D::Error::custom("fps must be finite"));
                }
                Ok(RateValue { num: (x * 1000.0).round() as i64, den: 1000 })
            }
            RawRate::Text(s) => {
                let (n, dn) = s
                    .split_once('/')
                    .ok_or_else(|| D::Error::custom("fps string must be `num/den`"))?;
                let num = n.trim().parse::<i64>().map_err(D::Error::custom)?;
                let den = dn.trim().parse::<i64>().map_err(D::Error::custom)?;
                Ok(RateValue { num, den })
            }
        }
    }
}

impl Serialize for FrameRate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.den == 1 {
            s.serialize_u64(self.num)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl CameraIntrinsics {
    /// Default intrinsics for an image size: 1000 px focal length, principal
    /// point at the image center.
    pub fn for_image(image_width: u32, image_height: u32) -> Self {
        CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: image_width as f64 / 2.0,
            cy: image_height as f64 / 2.0,
            image_width,
            image_height,
        }
    }

    fn validate(&self, field: &str) -> Result<(), IngestError> {
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return Err(IngestError::schema(format!("{field}.fx"), "fx must be > 0"));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return Err(IngestError::schema(format!("{field}.fy"), "fy must be > 0"));
        }
        if !(self.cx >= 0.0 && self.cx < self.image_width as f64) {
            return Err(IngestError::schema(format!("{field}.cx"), "cx must lie in [0, image_width)"));
        }
        if !(self.cy >= 0.0 && self.cy < self.image_height as f64) {
            return Err(IngestError::schema(format!("{field}.cy"), "cy must lie in [0, image_height)"));
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics::for_image(1920, 1080)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct IntrinsicsSpec {
    #[serde(default = "default_width")]
    image_width: u32,
    #[serde(default = "default_height")]
    image_height: u32,
    fx: Option<f64>,
    fy: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
}

fn default_width() -> u32 {
    1920
}

fn default_height() -> u32 {
    1080
}

impl From<IntrinsicsSpec> for CameraIntrinsics {
    fn from(s: IntrinsicsSpec) -> Self {
        let base = CameraIntrinsics::for_image(s.image_width, s.image_height);
        CameraIntrinsics {
            fx: s.fx.unwrap_or(base.fx),
            fy: s.fy.unwrap_or(base.fy),
            cx: s.cx.unwrap_or(base.cx),
            cy: s.cy.unwrap_or(base.cy),
            ..base
        }
    }
}

/// One camera's detection stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamSpec {
    pub stream_id: String,
    pub camera_id: String,
    pub start_offset_seconds: f64,
    pub detections: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrections: Option<PathBuf>,
    pub intrinsics: CameraIntrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoFile {
    pub camera_id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub start_offset_seconds: f64,
}

/// Reference to a tracker identity within one stream.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrackRef {
    pub stream: String,
    pub track: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionManifest {
    pub session_id: String,
    pub fps: FrameRate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
    pub streams: Vec<StreamSpec>,
    pub video_files: Vec<VideoFile>,
    pub log_path: PathBuf,
    pub scene_path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<PathBuf>,
    /// Student id to the tracks (per stream) that belong to that student.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub students: BTreeMap<String, Vec<TrackRef>>,
}

impl SessionManifest {
    pub fn stream(&self, stream_id: &str) -> Option<&StreamSpec> {
        self.streams.iter().find(|s| s.stream_id == stream_id)
    }

    pub fn clock(&self, stream: &StreamSpec) -> FrameClock {
        FrameClock { fps: self.fps, offset_seconds: stream.start_offset_seconds }
    }

    /// Student owning a stream's track, if the manifest maps one.
    pub fn student_for(&self, stream_id: &str, track_id: u64) -> Option<&str> {
        self.students.iter().find_map(|(sid, refs)| {
            refs.iter()
                .any(|r| r.stream == stream_id && r.track == track_id)
                .then_some(sid.as_str())
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStream {
    stream_id: String,
    camera_id: Option<String>,
    #[serde(default)]
    start_offset_seconds: f64,
    detections: Option<PathBuf>,
    corrections: Option<PathBuf>,
    intrinsics: Option<IntrinsicsSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    session_id: String,
    #[serde(default)]
    fps: Option<RateValue>,
    duration_seconds: Option<f64>,
    streams: Vec<RawStream>,
    #[serde(default)]
    video_files: Vec<VideoFile>,
    log_path: PathBuf,
    scene_path: PathBuf,
    model_path: Option<PathBuf>,
    config_path: Option<PathBuf>,
    #[serde(default)]
    students: BTreeMap<String, Vec<TrackRef>>,
}

fn read_file(path: &Path) -> Result<String, IngestError> {
    fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile(path.to_path_buf())
        } else {
            IngestError::Io { path: path.to_path_buf(), reason: e.to_string() }
        }
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Load and validate a manifest. Relative paths are resolved against the
/// manifest's directory, and every required input must exist.
pub fn load_manifest(path: &Path) -> Result<SessionManifest, IngestError> {
    let text = read_file(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    let mut required: Vec<&Path> = vec![&manifest.log_path, &manifest.scene_path];
    for s in &manifest.streams {
        required.push(&s.detections);
        if let Some(c) = &s.corrections {
            required.push(c);
        }
    }
    required.extend(manifest.model_path.as_deref());
    required.extend(manifest.config_path.as_deref());
    for p in required {
        if !p.exists() {
            return Err(IngestError::MissingFile(p.to_path_buf()));
        }
    }
    Ok(manifest)
}

/// Parse manifest JSON without touching the filesystem.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<SessionManifest, IngestError> {
    let raw: RawManifest =
        serde_json::from_str(text).map_err(|e| IngestError::schema("manifest", e.to_string()))?;

    if raw.session_id.trim().is_empty() {
        return Err(IngestError::schema("session_id", "must not be empty"));
    }
    let fps = match raw.fps {
        None => FrameRate::default(),
        Some(r) if r.num > 0 && r.den > 0 => {
            FrameRate::new(r.num as u64, r.den as u64).expect("positive")
        }
        Some(_) => return Err(IngestError::schema("fps", "fps must be > 0")),
    };
    if let Some(d) = raw.duration_seconds {
        if !(d.is_finite() && d > 0.0) {
            return Err(IngestError::schema("duration_seconds", "must be finite and > 0"));
        }
    }
    if raw.streams.is_empty() {
        return Err(IngestError::schema("streams", "at least one stream is required"));
    }

    let mut ids = HashSet::new();
    let mut streams = Vec::with_capacity(raw.streams.len());
    for (i, s) in raw.streams.into_iter().enumerate() {
        if s.stream_id.is_empty() {
            return Err(IngestError::schema(format!("streams[{i}].stream_id"), "must not be empty"));
        }
        if !ids.insert(s.stream_id.clone()) {
            return Err(IngestError::DuplicateStreamId(s.stream_id));
        }
        if !(s.start_offset_seconds.is_finite() && s.start_offset_seconds >= 0.0) {
            return Err(IngestError::schema(
                format!("streams[{i}].start_offset_seconds"),
                "must be finite and non-negative",
            ));
        }
        let intrinsics: CameraIntrinsics = s.intrinsics.map(Into::into).unwrap_or_default();
        intrinsics.validate(&format!("streams[{i}].intrinsics"))?;
        let detections = s
            .detections
            .unwrap_or_else(|| PathBuf::from(format!("detections_{}.csv", s.stream_id)));
        streams.push(StreamSpec {
            camera_id: s.camera_id.unwrap_or_else(|| s.stream_id.clone()),
            stream_id: s.stream_id,
            start_offset_seconds: s.start_offset_seconds,
            detections: resolve(base_dir, &detections),
            corrections: s.corrections.map(|c| resolve(base_dir, &c)),
            intrinsics,
        });
    }

    let mut video_files = raw.video_files;
    for (i, v) in video_files.iter_mut().enumerate() {
        if !(v.start_offset_seconds.is_finite() && v.start_offset_seconds >= 0.0) {
            return Err(IngestError::schema(
                format!("video_files[{i}].start_offset_seconds"),
                "must be finite and non-negative",
            ));
        }
        v.path = resolve(base_dir, &v.path);
    }

    for (sid, refs) in &raw.students {
        for r in refs {
            if !ids.contains(&r.stream) {
                return Err(IngestError::schema(
                    format!("students.{sid}"),
                    format!("unknown stream `{}`", r.stream),
                ));
            }
        }
    }

    let manifest = SessionManifest {
        session_id: raw.session_id,
        fps,
        duration_seconds: raw.duration_seconds,
        streams,
        video_files,
        log_path: resolve(base_dir, &raw.log_path),
        scene_path: resolve(base_dir, &raw.scene_path),
        model_path: raw.model_path.map(|p| resolve(base_dir, &p)),
        config_path: raw.config_path.map(|p| resolve(base_dir, &p)),
        students: raw.students,
    };

    let mut seen = HashSet::new();
    for p in manifest.declared_paths() {
        if !seen.insert(p) {
            return Err(IngestError::schema(
                "paths",
                format!("{} is declared more than once", p.display()),
            ));
        }
    }
    Ok(manifest)
}

impl SessionManifest {
    fn declared_paths(&self) -> impl Iterator<Item = &Path> {
        self.streams
            .iter()
            .flat_map(|s| std::iter::once(s.detections.as_path()).chain(s.corrections.as_deref()))
            .chain(self.video_files.iter().map(|v| v.path.as_path()))
            .chain([self.log_path.as_path(), self.scene_path.as_path()])
            .chain(self.model_path.as_deref())
            .chain(self.config_path.as_deref())
    }
}

/// Face bounding box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }
}

/// One face observation in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub bbox: BBox,
    pub valence: f64,
    pub arousal: f64,
    pub pitch: Option<f64>,
    pub yaw: Option<f64>,
    pub depth: Option<f64>,
}

impl DetectionRecord {
    /// Pitch, yaw and depth when all three are present.
    pub fn gaze(&self) -> Option<(f64, f64, f64)> {
        Some((self.pitch?, self.yaw?, self.depth?))
    }
}

/// Result of parsing a detection CSV: accepted records (sorted by frame) and
/// one diagnostic per rejected row.
#[derive(Debug, Clone, Default)]
pub struct ParsedDetections {
    pub records: Vec<DetectionRecord>,
    pub rejected: Vec<IngestError>,
}

impl ParsedDetections {
    /// Fail on the first rejected row.
    pub fn strict(self) -> Result<Vec<DetectionRecord>, IngestError> {
        match self.rejected.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(self.records),
        }
    }
}

pub fn parse_detections<R: Read>(source: R) -> Result<ParsedDetections, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::schema("header", e.to_string()))?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let with_gaze = if names == DETECTION_COLUMNS {
        false
    } else if names.len() == 10
        && names[..7] == DETECTION_COLUMNS
        && names[7..] == GAZE_COLUMNS
    {
        true
    } else {
        return Err(IngestError::schema(
            "header",
            format!(
                "expected `{}` optionally followed by `{}`",
                DETECTION_COLUMNS.join(","),
                GAZE_COLUMNS.join(",")
            ),
        ));
    };
    let width = if with_gaze { 10 } else { 7 };

    let mut out = ParsedDetections::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                out.rejected.push(IngestError::MalformedRow { line, reason: e.to_string() });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, width, line) {
            Ok(r) => out.records.push(r),
            Err(e) => out.rejected.push(e),
        }
    }
    out.records.sort_by_key(|r| r.frame_index);
    Ok(out)
}

fn parse_row(row: &csv::StringRecord, width: usize, line: u64) -> Result<DetectionRecord, IngestError> {
    if row.len() != width {
        return Err(IngestError::MalformedRow {
            line,
            reason: format!("expected {width} fields, found {}", row.len()),
        });
    }
    let malformed = |field: &str, reason: String| IngestError::MalformedRow {
        line,
        reason: format!("`{field}`: {reason}"),
    };
    let real = |i: usize, field: &str| -> Result<f64, IngestError> {
        let v: f64 = row[i].parse().map_err(|e: std::num::ParseFloatError| malformed(field, e.to_string()))?;
        if !v.is_finite() {
            return Err(malformed(field, "not a finite number".into()));
        }
        Ok(v)
    };
    let optional = |i: usize, field: &str| -> Result<Option<f64>, IngestError> {
        if row.get(i).is_none_or(str::is_empty) {
            Ok(None)
        } else {
            real(i, field).map(Some)
        }
    };
    let range = |field: &str| IngestError::RangeViolation { line, field: field.into() };

    let frame_index: u64 = row[0].parse().map_err(|e: std::num::ParseIntError| malformed("frame", e.to_string()))?;
    let bbox = BBox::new(real(1, "x_min")?, real(2, "y_min")?, real(3, "x_max")?, real(4, "y_max")?);
    let valence = real(5, "valence")?;
    let arousal = real(6, "arousal")?;
    let (pitch, yaw, depth) = if width == 10 {
        (optional(7, "pitch")?, optional(8, "yaw")?, optional(9, "depth")?)
    } else {
        (None, None, None)
    };

    if !bbox.is_valid() {
        return Err(range("bbox"));
    }
    if !(-1.0..=1.0).contains(&valence) {
        return Err(range("valence"));
    }
    if !(-1.0..=1.0).contains(&arousal) {
        return Err(range("arousal"));
    }
    if depth.is_some_and(|d| d <= 0.0) {
        return Err(range("depth"));
    }
    Ok(DetectionRecord { frame_index, bbox, valence, arousal, pitch, yaw, depth })
}

/// Maps a stream's frame indices onto session time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameClock {
    pub fps: FrameRate,
    pub offset_seconds: f64,
}

impl FrameClock {
    pub fn new(fps: FrameRate, offset_seconds: f64) -> Self {
        FrameClock { fps, offset_seconds }
    }

    pub fn time(&self, frame_index: u64) -> f64 {
        self.offset_seconds + self.fps.frames_to_seconds(frame_index)
    }
}

/// Seconds since the session epoch for a frame of `stream`.
pub fn frame_to_time(frame_index: u64, stream: &StreamSpec, manifest: &SessionManifest) -> f64 {
    manifest.clock(stream).time(frame_index)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScene {
    camera_id: Option<String>,
    floor: Option<crate::gaze3d::FloorPlane>,
    #[serde(default = "crate::gaze3d::default_person_width")]
    person_width: f64,
    #[serde(default = "crate::gaze3d::default_head_margin")]
    head_margin: f64,
    #[serde(default)]
    oois: Vec<Ooi>,
}

pub fn load_scene(path: &Path) -> Result<SceneModel, IngestError> {
    parse_scene(&read_file(path)?)
}

pub fn parse_scene(text: &str) -> Result<SceneModel, IngestError> {
    let raw: RawScene =
        serde_json::from_str(text).map_err(|e| IngestError::schema("scene", e.to_string()))?;
    let floor = raw.floor.ok_or(IngestError::MissingFloorPlane)?;
    if !floor.y.is_finite() {
        return Err(IngestError::schema("floor.y", "must be finite"));
    }
    if !(raw.person_width > 0.0 && raw.person_width.is_finite()) {
        return Err(IngestError::schema("person_width", "must be > 0"));
    }
    if !(raw.head_margin >= 0.0 && raw.head_margin.is_finite()) {
        return Err(IngestError::schema("head_margin", "must be >= 0"));
    }
    if raw.oois.is_empty() {
        return Err(IngestError::schema("oois", "at least one static object of interest is required"));
    }
    let mut names = HashSet::new();
    for (i, o) in raw.oois.iter().enumerate() {
        if o.name.is_empty() || o.name.starts_with(crate::gaze3d::PERSON_PREFIX) {
            return Err(IngestError::schema(
                format!("oois[{i}].name"),
                "must be non-empty and not use the reserved `person:` prefix",
            ));
        }
        if !names.insert(o.name.as_str()) {
            return Err(IngestError::DuplicateOoiName(o.name.clone()));
        }
        o.shape
            .validate()
            .map_err(|reason| IngestError::schema(format!("oois[{i}]"), reason))?;
    }
    Ok(SceneModel {
        camera_id: raw.camera_id,
        floor,
        person_width: raw.person_width,
        head_margin: raw.head_margin,
        oois: raw.oois,
    })
}
