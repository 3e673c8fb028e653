//! Scenario description: scripted students, scene, and simulation activity.

use std::collections::BTreeSet;

use mmtl_core::gaze3d::SceneModel;
use mmtl_core::ingest::{parse_scene, CameraIntrinsics};
use mmtl_core::simlog::{LogEvent, ModelSpec};
use serde::{Deserialize, Deserializer, Serialize};

use crate::SimError;

fn default_fps() -> u64 {
    30
}

fn default_camera() -> String {
    "cam0".into()
}

fn default_bbox() -> f64 {
    80.0
}

fn default_true() -> bool {
    true
}

fn scene_from_json<'de, D: Deserializer<'de>>(d: D) -> Result<SceneModel, D::Error> {
    let v = serde_json::Value::deserialize(d)?;
    parse_scene(&v.to_string()).map_err(serde::de::Error::custom)
}

/// Full scenario. Times are session seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    pub duration: f64,
    #[serde(default = "default_fps")]
    pub fps: u64,
    #[serde(default = "default_camera")]
    pub camera_id: String,
    #[serde(default)]
    pub start_offset_seconds: f64,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    /// Side of the square face box in pixels.
    #[serde(default = "default_bbox")]
    pub bbox_size_px: f64,
    /// Standard deviation of the Gaussian jitter on box centers, pixels.
    #[serde(default)]
    pub noise_px: f64,
    #[serde(deserialize_with = "scene_from_json")]
    pub scene: SceneModel,
    pub students: Vec<AgentScript>,
    /// Night periods as `[start, end)` pairs; the rest of the session is day.
    #[serde(default)]
    pub night: Vec<[f64; 2]>,
    /// Extra log events emitted verbatim.
    #[serde(default)]
    pub log: Vec<LogEvent>,
    #[serde(default = "ModelSpec::photosynthesis")]
    pub model: ModelSpec,
    /// Write identity corrections for absences the tracker cannot bridge.
    #[serde(default = "default_true")]
    pub emit_corrections: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    /// Head position, camera frame, meters.
    pub pos: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSpan {
    pub start: f64,
    pub end: f64,
    /// An object name, another student's id, or `None` for looking away.
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectSpan {
    pub start: f64,
    pub end: f64,
    pub valence: f64,
    pub arousal: f64,
    /// Per-frame label the author intends for `(valence, arousal)`; used to
    /// derive the expected window labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Scripted sequence of simulation moves for one student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityPlan {
    /// Time of the first avatar change.
    pub start: f64,
    /// Seconds from `start` to the first successful transition.
    pub first_transition_after: f64,
    /// Seconds between consecutive moves.
    pub step_seconds: f64,
    pub cycles: usize,
    /// Total valid successful transitions, at least `4 * cycles`.
    pub successes: usize,
    /// Failed attempts placed just before the first moves.
    #[serde(default)]
    pub failures: usize,
    /// Rule-breaking transitions reported as successful; used to restart
    /// partial chains.
    #[serde(default)]
    pub invalid_successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentScript {
    pub id: String,
    pub waypoints: Vec<Waypoint>,
    pub gaze: Vec<GazeSpan>,
    pub affect: Vec<AffectSpan>,
    /// `[start, end)` periods with no detection.
    #[serde(default)]
    pub absent: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<ActivityPlan>,
}

impl AgentScript {
    /// Head position at `t`, linear between waypoints and held at the ends.
    pub fn position(&self, t: f64) -> [f64; 3] {
        let w = &self.waypoints;
        let i = w.partition_point(|p| p.t <= t);
        if i == 0 {
            return w[0].pos;
        }
        if i == w.len() {
            return w[w.len() - 1].pos;
        }
        let (a, b) = (&w[i - 1], &w[i]);
        let s = (t - a.t) / (b.t - a.t);
        [0, 1, 2].map(|k| a.pos[k] + s * (b.pos[k] - a.pos[k]))
    }

    pub fn present(&self, t: f64) -> bool {
        !self.absent.iter().any(|[a, b]| t >= *a && t < *b)
    }

    pub fn gaze_at(&self, t: f64) -> Option<&GazeSpan> {
        span_at(&self.gaze, t, |g| (g.start, g.end))
    }

    pub fn affect_at(&self, t: f64) -> Option<&AffectSpan> {
        span_at(&self.affect, t, |a| (a.start, a.end))
    }
}

/// The span containing `t`; the last span also owns its end point.
fn span_at<T>(spans: &[T], t: f64, bounds: impl Fn(&T) -> (f64, f64)) -> Option<&T> {
    let i = spans.partition_point(|s| bounds(s).1 <= t);
    match spans.get(i) {
        Some(s) if bounds(s).0 <= t => Some(s),
        _ => spans.last().filter(|s| bounds(s).1 == t),
    }
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let spec: ScenarioSpec = serde_json::from_str(text).map_err(|e| SimError::SpecViolation(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Number of frames in the stream.
    pub fn frame_count(&self) -> u64 {
        ((self.duration - self.start_offset_seconds) * self.fps as f64).round().max(0.0) as u64
    }

    /// Session time of a frame.
    pub fn frame_time(&self, frame: u64) -> f64 {
        self.start_offset_seconds + frame as f64 / self.fps as f64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::SpecViolation(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return fail("duration must be positive".into());
        }
        if self.fps == 0 {
            return fail("fps must be positive".into());
        }
        if !(self.start_offset_seconds >= 0.0 && self.start_offset_seconds < self.duration) {
            return fail("start_offset_seconds must lie within the session".into());
        }
        if !(self.bbox_size_px > 0.0) || !(self.noise_px >= 0.0) {
            return fail("bbox_size_px must be positive and noise_px non-negative".into());
        }
        self.model.validate().map_err(|e| SimError::SpecViolation(e.to_string()))?;
        for [a, b] in &self.night {
            if !(a < b) {
                return fail(format!("night period [{a}, {b}) is empty"));
            }
        }

        let ids: BTreeSet<&str> = self.students.iter().map(|s| s.id.as_str()).collect();
        if ids.len() != self.students.len() {
            return fail("student ids must be unique".into());
        }
        let oois: BTreeSet<&str> = self.scene.oois.iter().map(|o| o.name.as_str()).collect();
        let floor = self.scene.floor.y;
        for s in &self.students {
            let who = &s.id;
            if s.waypoints.is_empty() {
                return fail(format!("{who}: no waypoints"));
            }
            if s.waypoints.windows(2).any(|w| !(w[0].t < w[1].t)) {
                return fail(format!("{who}: waypoint times must increase"));
            }
            for w in &s.waypoints {
                if !(w.pos[1] < floor) {
                    return fail(format!("{who}: waypoint at t={} is not above the floor", w.t));
                }
                if !(w.pos[2] > 0.0) {
                    return fail(format!("{who}: waypoint at t={} is behind the camera", w.t));
                }
            }
            covers(&s.gaze, self.duration, |g| (g.start, g.end)).map_err(|m| SimError::SpecViolation(format!("{who}: gaze {m}")))?;
            covers(&s.affect, self.duration, |a| (a.start, a.end))
                .map_err(|m| SimError::SpecViolation(format!("{who}: affect {m}")))?;
            for g in &s.gaze {
                if let Some(t) = &g.target {
                    let known = oois.contains(t.as_str()) || (ids.contains(t.as_str()) && t != who);
                    if !known {
                        return fail(format!("{who}: unknown gaze target `{t}`"));
                    }
                }
            }
            for a in &s.affect {
                if !(-1.0..=1.0).contains(&a.valence) || !(-1.0..=1.0).contains(&a.arousal) {
                    return fail(format!("{who}: affect values must lie in [-1, 1]"));
                }
            }
            for [a, b] in &s.absent {
                if !(a < b) {
                    return fail(format!("{who}: absence [{a}, {b}) is empty"));
                }
            }
            if let Some(p) = &s.activity {
                if p.successes < 4 * p.cycles {
                    return fail(format!("{who}: successes must be at least four per cycle"));
                }
                if !(p.step_seconds > 0.0) || p.first_transition_after < 0.5 * p.step_seconds {
                    return fail(format!("{who}: first_transition_after must be at least half a step"));
                }
            }
        }
        Ok(())
    }
}

/// Spans must be sorted, contiguous and cover `[0, duration]`.
fn covers<T>(spans: &[T], duration: f64, bounds: impl Fn(&T) -> (f64, f64)) -> Result<(), String> {
    let (Some(first), Some(last)) = (spans.first(), spans.last()) else {
        return Err("schedule is empty".into());
    };
    if bounds(first).0 > 0.0 || bounds(last).1 < duration {
        return Err("schedule must cover the whole session".into());
    }
    for w in spans.windows(2) {
        if bounds(&w[0]).1 != bounds(&w[1]).0 {
            return Err("schedule must be contiguous".into());
        }
    }
    if spans.iter().any(|s| !(bounds(s).0 < bounds(s).1)) {
        return Err("schedule spans must be non-empty".into());
    }
    Ok(())
}
