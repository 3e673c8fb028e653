//! Fixture generation: detections, log, scene, manifest and ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mmtl_core::gaze3d::{Aabb, SceneModel};
use mmtl_core::ingest::BBox;
use mmtl_core::reid::TruthEntry;
use mmtl_core::simlog::{LogEvent, SimState};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::activity::{plan_activity, PlannedMetrics};
use crate::projection::{angles_for, project};
use crate::spec::{AgentScript, ScenarioSpec};
use crate::SimError;

/// Frames per affect window and the delight threshold the expected labels
/// are derived with.
pub const AFFECT_WINDOW_FRAMES: usize = 150;
const DELIGHT_FRAMES: usize = 60;
/// Tracker memory the emitted corrections assume.
pub const TRACKER_MEMORY_FRAMES: u64 = 30;
/// Fraction of an object's extent kept clear around the aim point.
const AIM_INSET: f64 = 0.1;
/// A face is not detected when its center leaves the image or a nearer
/// head's box covers more than this share of its own box.
pub const OCCLUSION_OVERLAP: f64 = 0.5;

/// A run of frames `[start_frame, end_frame)` sharing one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRun<T> {
    pub start_frame: u64,
    pub end_frame: u64,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scenario: String,
    pub seed: u64,
    pub stream_id: String,
    /// Student ids; a detection's `true_id` is the index here plus one.
    pub students: Vec<String>,
    pub identities: Vec<TruthEntry>,
    /// Per student, the object looked at in each frame the face is visible.
    /// Other students appear as `person:<id>`.
    pub gaze: BTreeMap<String, Vec<FrameRun<Option<String>>>>,
    /// Expected affect window labels, for students whose affect spans all
    /// declare a label.
    pub affect: BTreeMap<String, Vec<FrameRun<String>>>,
    pub metrics: BTreeMap<String, PlannedMetrics>,
    /// Track id the tracker is expected to give each student.
    pub expected_tracks: BTreeMap<String, u64>,
}

impl GroundTruth {
    pub fn ooi_at(&self, student: &str, frame: u64) -> Option<Option<&str>> {
        let runs = self.gaze.get(student)?;
        let i = runs.partition_point(|r| r.end_frame <= frame);
        runs.get(i).filter(|r| r.start_frame <= frame).map(|r| r.value.as_deref())
    }
}

/// Generated fixture: file name to contents, plus the parsed truth.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub files: BTreeMap<String, String>,
    pub truth: GroundTruth,
}

impl Fixture {
    pub fn write_to(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(|e| SimError::Io(format!("{}: {e}", dir.display())))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn push_run<T: PartialEq>(runs: &mut Vec<FrameRun<T>>, frame: u64, value: T) {
    match runs.last_mut() {
        Some(r) if r.end_frame == frame && r.value == value => r.end_frame += 1,
        _ => runs.push(FrameRun { start_frame: frame, end_frame: frame + 1, value }),
    }
}

/// Point inside `b`, shrunk by the inset on every axis with extent, closest
/// to `from`.
fn aim_point(b: &Aabb, from: &Vector3<f64>) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        let (lo, hi) = (b.min[i], b.max[i]);
        let pad = (hi - lo) * AIM_INSET;
        from[i].clamp(lo + pad, hi - pad)
    })
}

/// Volume occupied by a student whose head is at `head`.
fn body(head: &Vector3<f64>, scene: &SceneModel) -> Aabb {
    let h = scene.person_width / 2.0;
    Aabb::new(
        Vector3::new(head.x - h, head.y - scene.head_margin, head.z - h),
        Vector3::new(head.x + h, scene.floor.y, head.z + h),
    )
}

fn fmt_row(out: &mut String, frame: u64, b: &BBox, v: f64, a: f64, gaze: (f64, f64, f64)) {
    let _ = writeln!(
        out,
        "{frame},{},{},{},{},{v},{a},{},{},{}",
        b.x_min, b.y_min, b.x_max, b.y_max, gaze.0, gaze.1, gaze.2
    );
}

/// Expected label for one window of author-declared frame labels. `None`
/// marks a frame without a face.
pub fn expected_window_label(frames: &[Option<&str>]) -> String {
    let n = frames.len();
    let missing = frames.iter().filter(|f| f.is_none()).count();
    if n == 0 || 2 * missing > n {
        return "NotFound".into();
    }
    let need = |full: usize| (full * n / AFFECT_WINDOW_FRAMES).max(1);
    let count = |label: &str| frames.iter().filter(|f| **f == Some(label)).count();
    if count("Delight") >= need(DELIGHT_FRAMES) {
        return "Delight".into();
    }
    let mut seen: Vec<&str> = frames.iter().flatten().copied().collect();
    seen.sort();
    seen.dedup();
    let mut best: Option<(&str, usize)> = None;
    for label in seen.into_iter().filter(|l| *l != "Engagement") {
        let c = count(label);
        if c >= need(AFFECT_WINDOW_FRAMES) && best.is_none_or(|(_, m)| c > m) {
            best = Some((label, c));
        }
    }
    if let Some((label, _)) = best {
        return label.into();
    }
    if count("Engagement") >= need(AFFECT_WINDOW_FRAMES) {
        return "Engagement".into();
    }
    "NoDominantEmotion".into()
}

pub fn generate(spec: &ScenarioSpec) -> Result<Fixture, SimError> {
    spec.validate()?;
    let k = spec.intrinsics;
    let stream_id = spec.camera_id.clone();
    let noise = Normal::new(0.0, spec.noise_px).map_err(|e| SimError::SpecViolation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let index: BTreeMap<&str, usize> = spec.students.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();

    let mut csv = String::from("frame,x_min,y_min,x_max,y_max,valence,arousal,pitch,yaw,depth\n");
    let mut identities = Vec::new();
    let mut gaze_truth: BTreeMap<String, Vec<FrameRun<Option<String>>>> = BTreeMap::new();
    let mut frame_affect: BTreeMap<&str, Vec<(u64, Option<&str>)>> = BTreeMap::new();
    // (frame, row, student) where a correction is needed.
    let mut reappear: Vec<(u64, usize, usize)> = Vec::new();
    let mut last_seen: Vec<Option<u64>> = vec![None; spec.students.len()];
    let mut first_order: Vec<(u64, usize, usize)> = Vec::new();
    let half = spec.bbox_size_px / 2.0;

    for frame in 0..spec.frame_count() {
        let t = spec.frame_time(frame);
        let heads: Vec<Vector3<f64>> = spec.students.iter().map(|s| Vector3::from(s.position(t))).collect();
        let centers = heads.iter().map(|h| project(h, &k)).collect::<Result<Vec<_>, _>>()?;
        let scripted: Vec<bool> = spec.students.iter().map(|s| s.present(t)).collect();
        let present: Vec<bool> = (0..heads.len())
            .map(|i| {
                let in_frame = (0.0..k.image_width as f64).contains(&centers[i].x)
                    && (0.0..k.image_height as f64).contains(&centers[i].y);
                scripted[i]
                    && in_frame
                    && !(0..heads.len()).any(|j| {
                        let overlap = |a: f64, b: f64| (spec.bbox_size_px - (a - b).abs()).max(0.0);
                        let covered = overlap(centers[i].x, centers[j].x) * overlap(centers[i].y, centers[j].y);
                        j != i && scripted[j] && heads[j].z < heads[i].z && covered > OCCLUSION_OVERLAP * spec.bbox_size_px.powi(2)
                    })
            })
            .collect();
        let mut row = 0usize;
        for (i, s) in spec.students.iter().enumerate() {
            if !present[i] {
                continue;
            }
            let head = heads[i];
            let c = centers[i];
            let (du, dv) = if spec.noise_px > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
            let (u, v) = (c.x + du, c.y + dv);
            let bbox = BBox::new(u - half, v - half, u + half, v + half);

            let span = s.gaze_at(t).expect("validated schedule");
            let (aim, truth) = match &span.target {
                None => (None, None),
                Some(target) => match index.get(target.as_str()) {
                    Some(&j) => {
                        let aim = aim_point(&body(&heads[j], &spec.scene), &head);
                        (Some(aim), present[j].then(|| format!("person:{target}")))
                    }
                    None => {
                        let ooi = spec.scene.oois.iter().find(|o| &o.name == target).expect("validated target");
                        (Some(aim_point(&ooi.shape.aabb(), &head)), Some(target.clone()))
                    }
                },
            };
            // Looking away: backwards and up, where nothing is annotated.
            let dir = aim.map(|p| p - head).unwrap_or(Vector3::new(0.0, -0.3, 1.0));
            let (pitch, yaw) = angles_for(&dir);
            let affect = s.affect_at(t).expect("validated schedule");
            fmt_row(&mut csv, frame, &bbox, affect.valence, affect.arousal, (pitch, yaw, head.z));

            identities.push(TruthEntry { frame, true_id: i as u64 + 1, bbox });
            push_run(gaze_truth.entry(s.id.clone()).or_default(), frame, truth);
            frame_affect.entry(&s.id).or_default().push((frame, affect.label.as_deref()));

            match last_seen[i] {
                None => first_order.push((frame, row, i)),
                Some(prev) if frame - prev > TRACKER_MEMORY_FRAMES && spec.emit_corrections => {
                    reappear.push((frame, row, i));
                }
                _ => {}
            }
            last_seen[i] = Some(frame);
            row += 1;
        }
    }

    // The tracker numbers tracks by first appearance, then row order.
    first_order.sort();
    let track_of: BTreeMap<usize, u64> =
        first_order.iter().enumerate().map(|(n, &(_, _, i))| (i, n as u64 + 1)).collect();
    let corrections: String = reappear
        .iter()
        .map(|&(frame, row, i)| format!("{}\n", json!({"frame": frame, "detection_index": row, "track_id": track_of[&i]})))
        .collect();

    let affect_truth = expected_affect(spec, &frame_affect);

    // Log: planned activity, night periods, then verbatim extras.
    let mut events: Vec<LogEvent> = Vec::new();
    let mut metrics = BTreeMap::new();
    for s in &spec.students {
        if let Some(plan) = &s.activity {
            let (ev, m) = plan_activity(&s.id, plan, &spec.night, spec.duration)?;
            events.extend(ev);
            metrics.insert(s.id.clone(), m);
        }
    }
    for [a, b] in &spec.night {
        events.push(LogEvent::sim_state(*a, SimState::Night));
        if *b < spec.duration {
            events.push(LogEvent::sim_state(*b, SimState::Day));
        }
    }
    events.extend(spec.log.iter().cloned());
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let log: String = events.iter().map(|e| e.to_json_line() + "\n").collect();

    let detections_name = format!("detections_{stream_id}.csv");
    let mut stream = json!({
        "stream_id": stream_id,
        "camera_id": spec.camera_id,
        "start_offset_seconds": spec.start_offset_seconds,
        "detections": detections_name,
        "intrinsics": spec.intrinsics,
    });
    let mut files = BTreeMap::new();
    if !corrections.is_empty() {
        let name = format!("corrections_{stream_id}.jsonl");
        stream["corrections"] = json!(name);
        files.insert(name, corrections);
    }
    let students: BTreeMap<&str, serde_json::Value> = spec
        .students
        .iter()
        .enumerate()
        .filter_map(|(i, s)| Some((s.id.as_str(), json!([{"stream": stream_id, "track": track_of.get(&i)?}]))))
        .collect();
    let manifest = json!({
        "session_id": spec.name,
        "fps": spec.fps,
        "duration_seconds": spec.duration,
        "streams": [stream],
        "log_path": "log.jsonl",
        "scene_path": "scene.json",
        "model_path": "model.json",
        "students": students,
    });

    let truth = GroundTruth {
        scenario: spec.name.clone(),
        seed: spec.seed,
        stream_id: stream_id.clone(),
        students: spec.students.iter().map(|s| s.id.clone()).collect(),
        identities,
        gaze: gaze_truth,
        affect: affect_truth,
        metrics,
        expected_tracks: spec
            .students
            .iter()
            .enumerate()
            .filter_map(|(i, s)| Some((s.id.clone(), *track_of.get(&i)?)))
            .collect(),
    };

    files.insert(detections_name, csv);
    files.insert("log.jsonl".into(), log);
    files.insert("scene.json".into(), pretty(&spec.scene));
    files.insert("model.json".into(), pretty(&spec.model));
    files.insert("manifest.json".into(), pretty(&manifest));
    files.insert("scenario.json".into(), pretty(spec));
    files.insert("ground_truth.json".into(), serde_json::to_string(&truth).expect("truth serializes") + "\n");
    Ok(Fixture { files, truth })
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

/// Expected affect windows per student: consecutive windows from the first
/// to the last visible frame, labelled from the declared frame labels.
fn expected_affect(
    spec: &ScenarioSpec,
    frames: &BTreeMap<&str, Vec<(u64, Option<&str>)>>,
) -> BTreeMap<String, Vec<FrameRun<String>>> {
    let declared = |s: &AgentScript| s.affect.iter().all(|a| a.label.is_some());
    let mut out = BTreeMap::new();
    for s in spec.students.iter().filter(|s| declared(s)) {
        let Some(seen) = frames.get(s.id.as_str()) else {
            continue;
        };
        let (first, last) = (seen[0].0, seen[seen.len() - 1].0);
        let by_frame: BTreeMap<u64, Option<&str>> = seen.iter().copied().collect();
        let mut runs: Vec<FrameRun<String>> = Vec::new();
        let mut start = first;
        while start <= last {
            let end = (start + AFFECT_WINDOW_FRAMES as u64).min(last + 1);
            let window: Vec<Option<&str>> = (start..end).map(|f| by_frame.get(&f).copied().flatten()).collect();
            let label = expected_window_label(&window);
            match runs.last_mut() {
                Some(r) if r.value == label => r.end_frame = end,
                _ => runs.push(FrameRun { start_frame: start, end_frame: end, value: label }),
            }
            start = end;
        }
        out.insert(s.id.clone(), runs);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_oracle_examples() {
        let w = |parts: &[(Option<&'static str>, usize)]| -> Vec<Option<&'static str>> {
            parts.iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect()
        };
        assert_eq!(expected_window_label(&w(&[(Some("Boredom"), 150)])), "Boredom");
        assert_eq!(expected_window_label(&w(&[(Some("Delight"), 60), (Some("Engagement"), 90)])), "Delight");
        assert_eq!(expected_window_label(&w(&[(None, 76), (Some("Engagement"), 74)])), "NotFound");
        assert_eq!(expected_window_label(&w(&[(None, 75), (Some("Engagement"), 75)])), "NoDominantEmotion");
        assert_eq!(expected_window_label(&w(&[(Some("Engagement"), 30)])), "Engagement");
    }
}
