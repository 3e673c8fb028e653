//! Gaze to object-of-interest encoding.
//!
//! Camera frame convention: +X right, +Y down, +Z into the scene, meters.
//! A gaze with pitch = yaw = 0 points back at the camera, `(0, 0, -1)`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Point2, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{CameraIntrinsics, DetectionRecord, FrameClock};
use crate::reid::Track;
use crate::window::{merge_runs, window_spans};

/// Rays ignore intersections closer than this to the gaze origin so a
/// student's own head never counts as a hit.
pub const SELF_EXCLUSION: f64 = 0.3;
/// Name prefix for dynamic person volumes.
pub const PERSON_PREFIX: &str = "person:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GazeError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("gaze origin y={origin_y} is not above the floor at y={floor_y}")]
    OriginBelowFloor { origin_y: f64, floor_y: f64 },
}

pub(crate) fn default_person_width() -> f64 {
    0.5
}

pub(crate) fn default_head_margin() -> f64 {
    0.15
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorPlane {
    /// The floor is the plane `y = y_floor` (below the camera when positive).
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Static object geometry, camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OoiShape {
    #[serde(rename = "box")]
    Box { min: [f64; 3], max: [f64; 3] },
    /// Axis-aligned rectangle lying in the plane `axis = at`; `min`/`max`
    /// give the extent along the two remaining axes in x, y, z order.
    #[serde(rename = "rect")]
    Rect { axis: Axis, at: f64, min: [f64; 2], max: [f64; 2] },
}

impl OoiShape {
    pub fn aabb(&self) -> Aabb {
        match *self {
            OoiShape::Box { min, max } => Aabb::new(min.into(), max.into()),
            OoiShape::Rect { axis, at, min, max } => {
                let k = axis.index();
                let mut lo = [0.0; 3];
                let mut hi = [0.0; 3];
                let mut j = 0;
                for i in 0..3 {
                    if i == k {
                        lo[i] = at;
                        hi[i] = at;
                    } else {
                        lo[i] = min[j];
                        hi[i] = max[j];
                        j += 1;
                    }
                }
                Aabb::new(lo.into(), hi.into())
            }
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            OoiShape::Box { min, max } => {
                if !finite(min) || !finite(max) {
                    return Err("box corners must be finite".into());
                }
                if (0..3).any(|i| min[i] >= max[i]) {
                    return Err("box min must be below max on every axis".into());
                }
            }
            OoiShape::Rect { at, min, max, .. } => {
                if !at.is_finite() || !finite(min) || !finite(max) {
                    return Err("rectangle must be finite".into());
                }
                if (0..2).any(|i| min[i] >= max[i]) {
                    return Err("rectangle min must be below max".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ooi {
    pub name: String,
    #[serde(flatten)]
    pub shape: OoiShape,
}

/// Annotated room: static objects of interest plus what is needed to build
/// person volumes at runtime.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    pub floor: FloorPlane,
    pub person_width: f64,
    pub head_margin: f64,
    pub oois: Vec<Ooi>,
}

impl SceneModel {
    /// Scale all geometry about the camera center.
    pub fn scaled(&self, factor: f64) -> SceneModel {
        let oois = self
            .oois
            .iter()
            .map(|o| Ooi {
                name: o.name.clone(),
                shape: match o.shape {
                    OoiShape::Box { min, max } => OoiShape::Box {
                        min: min.map(|v| v * factor),
                        max: max.map(|v| v * factor),
                    },
                    OoiShape::Rect { axis, at, min, max } => OoiShape::Rect {
                        axis,
                        at: at * factor,
                        min: min.map(|v| v * factor),
                        max: max.map(|v| v * factor),
                    },
                },
            })
            .collect();
        SceneModel {
            camera_id: self.camera_id.clone(),
            floor: FloorPlane { y: self.floor.y * factor },
            person_width: self.person_width * factor,
            head_margin: self.head_margin * factor,
            oois,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Aabb { min, max }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    /// Slab test. Returns the parameter interval `[t_enter, t_exit]` over
    /// which `origin + t * dir` lies inside the box, unbounded in t.
    pub fn ray_interval(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, f64)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let mut t0 = (self.min[i] - origin[i]) * inv;
            let mut t1 = (self.max[i] - origin[i]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_enter > t_exit {
                return None;
            }
        }
        Some((t_enter, t_exit))
    }
}

/// Unit gaze direction for pitch and yaw in radians.
pub fn gaze_direction(pitch: f64, yaw: f64) -> Result<Vector3<f64>, GazeError> {
    if !pitch.is_finite() || !yaw.is_finite() {
        return Err(GazeError::NonFiniteInput);
    }
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Ok(Vector3::new(-cp * sy, -sp, -cp * cy))
}

/// Rotation taking the camera-facing forward vector `(0, 0, -1)` onto the gaze
/// direction: a yaw about +Y applied after a pitch about +X.
pub fn gaze_rotation(pitch: f64, yaw: f64) -> Result<Rotation3<f64>, GazeError> {
    if !pitch.is_finite() || !yaw.is_finite() {
        return Err(GazeError::NonFiniteInput);
    }
    Ok(Rotation3::from_axis_angle(&Vector3::y_axis(), yaw)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), -pitch))
}

/// Pixel plus metric depth to a camera-frame point.
pub fn back_project(centroid: Point2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Vector3<f64>, GazeError> {
    if !depth.is_finite() || !centroid.x.is_finite() || !centroid.y.is_finite() {
        return Err(GazeError::NonFiniteInput);
    }
    if depth <= 0.0 {
        return Err(GazeError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (centroid.x - k.cx) * depth / k.fx,
        (centroid.y - k.cy) * depth / k.fy,
        depth,
    ))
}

/// Gaze origin and orientation of one face in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GazePose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl GazePose {
    pub fn new(pitch: f64, yaw: f64, centroid: Point2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Self, GazeError> {
        let rotation = gaze_rotation(pitch, yaw)?.into_inner();
        Ok(GazePose {
            rotation,
            translation: back_project(centroid, depth, k)?,
            direction: gaze_direction(pitch, yaw)?,
        })
    }

    /// Homogeneous `[R | t]` transform.
    pub fn rt(&self) -> Matrix4<f64> {
        let mut m = self.rotation.to_homogeneous();
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Upright person volume hanging from a gaze origin down to the floor.
pub fn person_volume(origin: &Vector3<f64>, scene: &SceneModel) -> Result<Aabb, GazeError> {
    if !(origin.y < scene.floor.y) {
        return Err(GazeError::OriginBelowFloor { origin_y: origin.y, floor_y: scene.floor.y });
    }
    let half = scene.person_width / 2.0;
    Ok(Aabb::new(
        Vector3::new(origin.x - half, origin.y - scene.head_margin, origin.z - half),
        Vector3::new(origin.x + half, scene.floor.y, origin.z + half),
    ))
}

pub fn person_name(track_id: u64) -> String {
    format!("{PERSON_PREFIX}{track_id}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayHit {
    pub name: String,
    /// Ray parameter of the first point inside the object beyond the
    /// self-exclusion distance.
    pub distance: f64,
}

/// Nearest object hit by the gaze ray, ignoring the first [`SELF_EXCLUSION`]
/// meters. `others` are the other students' person volumes; the caster's own
/// volume must not be included. Equal distances resolve to the smaller name.
pub fn ray_cast(
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    scene: &SceneModel,
    others: &[(u64, Aabb)],
) -> Option<RayHit> {
    ray_cast_with(origin, direction, scene, others, SELF_EXCLUSION)
}

pub fn ray_cast_with(
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    scene: &SceneModel,
    others: &[(u64, Aabb)],
    exclusion: f64,
) -> Option<RayHit> {
    let statics = scene.oois.iter().map(|o| (o.name.clone(), o.shape.aabb()));
    let persons = others.iter().map(|(id, b)| (person_name(*id), *b));
    let mut best: Option<RayHit> = None;
    for (name, aabb) in statics.chain(persons) {
        let Some((enter, exit)) = aabb.ray_interval(origin, direction) else {
            continue;
        };
        if exit <= exclusion {
            continue;
        }
        let distance = enter.max(exclusion);
        let better = match &best {
            None => true,
            Some(b) => distance < b.distance || (distance == b.distance && name < b.name),
        };
        if better {
            best = Some(RayHit { name, distance });
        }
    }
    best
}

/// Per-frame gaze encoding for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OoiHit {
    pub track_id: u64,
    pub frame_index: u64,
    pub ooi: Option<String>,
}

/// One track's state in a frame: its detection if the face was found.
#[derive(Debug, Clone, Copy)]
pub struct TrackObservation<'a> {
    pub track_id: u64,
    pub detection: Option<&'a DetectionRecord>,
}

/// Encode one frame: one hit per observed track. Tracks without a face, or
/// without gaze angles and depth, get an absent OOI and no person volume.
pub fn encode_frame(observations: &[TrackObservation<'_>], scene: &SceneModel, k: &CameraIntrinsics) -> Vec<OoiHit> {
    // Poses and volumes for every face with complete gaze data.
    let poses: Vec<(u64, Option<(Vector3<f64>, Vector3<f64>, Option<Aabb>)>)> = observations
        .iter()
        .map(|obs| {
            let pose = obs.detection.and_then(|d| {
                let (pitch, yaw, depth) = d.gaze()?;
                let c = crate::reid::centroid(&d.bbox);
                let origin = back_project(Point2::new(c.0, c.1), depth, k).ok()?;
                let dir = gaze_direction(pitch, yaw).ok()?;
                Some((origin, dir, person_volume(&origin, scene).ok()))
            });
            (obs.track_id, pose)
        })
        .collect();

    poses
        .iter()
        .zip(observations)
        .map(|((track_id, pose), obs)| {
            let ooi = pose.as_ref().and_then(|(origin, dir, own)| {
                // Faces below the floor are inconsistent input; they get no hit.
                own.as_ref()?;
                let others: Vec<(u64, Aabb)> = poses
                    .iter()
                    .filter(|(id, _)| id != track_id)
                    .filter_map(|(id, p)| Some((*id, p.as_ref()?.2?)))
                    .collect();
                ray_cast(origin, dir, scene, &others).map(|h| h.name)
            });
            OoiHit {
                track_id: *track_id,
                frame_index: obs.detection.map(|d| d.frame_index).unwrap_or_default(),
                ooi,
            }
        })
        .collect()
}

/// Encode every frame of every track, from each track's first to last frame.
/// Frames where a track has no detection yield absent hits.
pub fn encode_tracks(tracks: &[Track], scene: &SceneModel, k: &CameraIntrinsics) -> BTreeMap<u64, Vec<OoiHit>> {
    let mut by_frame: BTreeMap<u64, Vec<(u64, &DetectionRecord)>> = BTreeMap::new();
    for t in tracks {
        for (f, d) in &t.history {
            by_frame.entry(*f).or_default().push((t.track_id, d));
        }
    }
    let (Some(first), Some(last)) = (
        tracks.iter().filter_map(Track::first_frame).min(),
        tracks.iter().filter_map(Track::last_frame).max(),
    ) else {
        return BTreeMap::new();
    };

    let mut out: BTreeMap<u64, Vec<OoiHit>> = tracks.iter().map(|t| (t.track_id, Vec::new())).collect();
    for frame in first..=last {
        let seen = by_frame.get(&frame).map(Vec::as_slice).unwrap_or_default();
        let alive: Vec<TrackObservation<'_>> = tracks
            .iter()
            .filter(|t| t.first_frame().is_some_and(|f| f <= frame) && t.last_frame().is_some_and(|l| frame <= l))
            .map(|t| TrackObservation {
                track_id: t.track_id,
                detection: seen.iter().find(|(id, _)| *id == t.track_id).map(|(_, d)| *d),
            })
            .collect();
        if alive.is_empty() {
            continue;
        }
        for mut hit in encode_frame(&alive, scene, k) {
            hit.frame_index = frame;
            out.get_mut(&hit.track_id).expect("known track").push(hit);
        }
    }
    out
}

/// Most frequent present OOI; ties go to the lexicographically smallest name.
pub fn pool_ooi<'a, I>(hits: I) -> Option<String>
where
    I: IntoIterator<Item = &'a OoiHit>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for h in hits {
        if let Some(name) = &h.ooi {
            *counts.entry(name.as_str()).or_default() += 1;
        }
    }
    // BTreeMap iterates names in ascending order; keep the first maximum.
    let mut best: Option<(&str, usize)> = None;
    for (name, n) in counts {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((name, n));
        }
    }
    best.map(|(name, _)| name.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSegment {
    pub track_id: u64,
    pub start: f64,
    pub end: f64,
    pub ooi: Option<String>,
}

/// Pool a track's per-frame hits over consecutive windows starting at the
/// track's first frame and merge equal neighbours.
pub fn gaze_lane(track_id: u64, hits: &[OoiHit], clock: &FrameClock, window_frames: u64) -> Vec<GazeSegment> {
    let (Some(first), Some(last)) = (hits.first(), hits.last()) else {
        return Vec::new();
    };
    let spans = window_spans(first.frame_index, last.frame_index, window_frames);
    let labelled = spans.into_iter().map(|(start, end)| {
        let pooled = pool_ooi(hits.iter().filter(|h| h.frame_index >= start && h.frame_index < end));
        (start, end, pooled)
    });
    merge_runs(labelled)
        .into_iter()
        .map(|(start, end, ooi)| GazeSegment { track_id, start: clock.time(start), end: clock.time(end), ooi })
        .collect()
}
