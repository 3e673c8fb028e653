//! Student re-identification from face bounding boxes.
//!
//! Nearest-centroid tracking: each frame, detections are matched one-to-one
//! to live tracks greedily by ascending Euclidean distance between box
//! centers, subject to a distance threshold. Unmatched tracks coast on their
//! last known center for up to `memory_frames` frames so a face can be
//! re-acquired after a short occlusion; unmatched detections open new tracks.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BBox, DetectionRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReidError {
    #[error("frame {frame} is not after the previous tracked frame {previous}")]
    FrameOrderViolation { frame: u64, previous: u64 },
    #[error("detection for frame {found} passed to step for frame {frame}")]
    MixedFrames { frame: u64, found: u64 },
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("invalid tracker parameter: {0}")]
    InvalidParams(&'static str),
    #[error("corrections line {line}: {reason}")]
    MalformedCorrection { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    pub distance_threshold_px: f64,
    pub memory_frames: u64,
    /// Expected number of simultaneous students. When every slot is taken,
    /// a detection that matches nothing within the threshold is attached to
    /// the nearest still-unmatched live track instead of opening a new one.
    pub max_tracks: Option<usize>,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams { distance_threshold_px: 75.0, memory_frames: 30, max_tracks: None }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), ReidError> {
        if !(self.distance_threshold_px > 0.0 && self.distance_threshold_px.is_finite()) {
            return Err(ReidError::InvalidParams("distance_threshold_px must be > 0"));
        }
        if self.max_tracks == Some(0) {
            return Err(ReidError::InvalidParams("max_tracks must be positive"));
        }
        Ok(())
    }
}

pub fn centroid(bbox: &BBox) -> (f64, f64) {
    ((bbox.x_min + bbox.x_max) / 2.0, (bbox.y_min + bbox.y_max) / 2.0)
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u64,
    pub last_center: (f64, f64),
    pub last_seen_frame: u64,
    pub coasting: bool,
    pub history: Vec<(u64, DetectionRecord)>,
}

impl Track {
    fn open(track_id: u64, frame: u64, det: DetectionRecord) -> Self {
        Track {
            track_id,
            last_center: centroid(&det.bbox),
            last_seen_frame: frame,
            coasting: false,
            history: vec![(frame, det)],
        }
    }

    fn absorb(&mut self, frame: u64, det: DetectionRecord) {
        self.last_center = centroid(&det.bbox);
        self.last_seen_frame = frame;
        self.coasting = false;
        self.history.push((frame, det));
    }

    pub fn first_frame(&self) -> Option<u64> {
        self.history.first().map(|(f, _)| *f)
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.history.last().map(|(f, _)| *f)
    }
}

/// A manual fix: force detection `detection_index` (0-based, in file order
/// within its frame) of `frame` onto `track_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub frame: u64,
    pub detection_index: usize,
    pub track_id: u64,
}

pub fn parse_corrections<R: BufRead>(source: R) -> Result<Vec<Correction>, ReidError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| ReidError::MalformedCorrection { line: i + 1, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Correction = serde_json::from_str(&line)
            .map_err(|e| ReidError::MalformedCorrection { line: i + 1, reason: e.to_string() })?;
        out.push(c);
    }
    Ok(out)
}

/// Tracker state across frames of one stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    params: TrackerParams,
    live: Vec<Track>,
    retired: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
    corrections: HashMap<(u64, usize), u64>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self, ReidError> {
        params.validate()?;
        Ok(Tracker {
            params,
            live: Vec::new(),
            retired: Vec::new(),
            next_id: 1,
            last_frame: None,
            corrections: HashMap::new(),
        })
    }

    pub fn with_corrections(mut self, corrections: &[Correction]) -> Self {
        self.corrections = corrections
            .iter()
            .map(|c| ((c.frame, c.detection_index), c.track_id))
            .collect();
        self
    }

    pub fn live_tracks(&self) -> &[Track] {
        &self.live
    }

    /// Process one frame. Returns the track id assigned to each detection,
    /// in input order.
    pub fn step(&mut self, frame: u64, detections: &[DetectionRecord]) -> Result<Vec<u64>, ReidError> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(ReidError::FrameOrderViolation { frame, previous });
            }
        }
        if let Some(d) = detections.iter().find(|d| d.frame_index != frame) {
            return Err(ReidError::MixedFrames { frame, found: d.frame_index });
        }
        self.last_frame = Some(frame);

        // Retire tracks whose coasting exceeded the memory.
        let memory = self.params.memory_frames;
        let (keep, gone): (Vec<Track>, Vec<Track>) =
            self.live.drain(..).partition(|t| frame - t.last_seen_frame <= memory);
        self.live = keep;
        self.retired.extend(gone);

        let mut assigned: Vec<Option<usize>> = vec![None; detections.len()];
        let mut track_taken = vec![false; self.live.len()];

        // Manual corrections take precedence over matching.
        for (di, _) in detections.iter().enumerate() {
            let Some(&forced) = self.corrections.get(&(frame, di)) else {
                continue;
            };
            let ti = self.ensure_live(forced);
            if ti >= track_taken.len() {
                track_taken.resize(ti + 1, false);
            }
            if !track_taken[ti] {
                track_taken[ti] = true;
                assigned[di] = Some(ti);
            }
        }

        let threshold = self.params.distance_threshold_px;
        let pairs = candidate_pairs(&self.live, detections, |d| d <= threshold);
        greedy_match(&pairs, &self.live, &mut assigned, &mut track_taken);

        if let Some(cap) = self.params.max_tracks {
            if self.live.len() >= cap {
                let pairs = candidate_pairs(&self.live, detections, |_| true);
                greedy_match(&pairs, &self.live, &mut assigned, &mut track_taken);
            }
        }

        let mut ids = Vec::with_capacity(detections.len());
        for (di, det) in detections.iter().enumerate() {
            let id = match assigned[di] {
                Some(ti) => {
                    self.live[ti].absorb(frame, *det);
                    self.live[ti].track_id
                }
                None => {
                    let id = self.next_id;
                    self.next_id += 1;
                    self.live.push(Track::open(id, frame, *det));
                    track_taken.push(true);
                    id
                }
            };
            ids.push(id);
        }
        for (t, taken) in self.live.iter_mut().zip(&track_taken) {
            if !taken {
                t.coasting = true;
            }
        }
        Ok(ids)
    }

    /// Index of the live track with `id`, reviving a retired track or opening
    /// an empty one when needed.
    fn ensure_live(&mut self, id: u64) -> usize {
        if let Some(i) = self.live.iter().position(|t| t.track_id == id) {
            return i;
        }
        let track = match self.retired.iter().position(|t| t.track_id == id) {
            Some(i) => self.retired.remove(i),
            None => {
                self.next_id = self.next_id.max(id + 1);
                Track { track_id: id, last_center: (0.0, 0.0), last_seen_frame: 0, coasting: true, history: Vec::new() }
            }
        };
        self.live.push(track);
        self.live.len() - 1
    }

    /// All tracks, live and retired, ordered by id.
    pub fn finish(self) -> Vec<Track> {
        let mut all: Vec<Track> = self.live.into_iter().chain(self.retired).filter(|t| !t.history.is_empty()).collect();
        all.sort_by_key(|t| t.track_id);
        all
    }
}

/// A detection/track pair eligible for matching.
#[derive(Debug, Clone, Copy)]
struct Pair {
    dist: f64,
    det: usize,
    track: usize,
}

fn candidate_pairs(tracks: &[Track], detections: &[DetectionRecord], eligible: impl Fn(f64) -> bool) -> Vec<Pair> {
    let mut pairs = Vec::new();
    for (di, d) in detections.iter().enumerate() {
        let c = centroid(&d.bbox);
        for (ti, t) in tracks.iter().enumerate() {
            if t.history.is_empty() {
                continue;
            }
            let dist = distance(c, t.last_center);
            if eligible(dist) {
                pairs.push(Pair { dist, det: di, track: ti });
            }
        }
    }
    pairs
}

/// Ascending distance; ties by lower detection index, then lower track id.
fn greedy_match(pairs: &[Pair], tracks: &[Track], assigned: &mut [Option<usize>], taken: &mut [bool]) {
    let mut order: Vec<&Pair> = pairs.iter().collect();
    order.sort_by(|a, b| {
        a.dist
            .total_cmp(&b.dist)
            .then(a.det.cmp(&b.det))
            .then(tracks[a.track].track_id.cmp(&tracks[b.track].track_id))
    });
    for p in order {
        if assigned[p.det].is_none() && !taken[p.track] {
            assigned[p.det] = Some(p.track);
            taken[p.track] = true;
        }
    }
}

/// Track a whole stream. Frames must be in strictly ascending order.
pub fn run_tracker<'a, I>(frames: I, params: TrackerParams, corrections: &[Correction]) -> Result<Vec<Track>, ReidError>
where
    I: IntoIterator<Item = (u64, &'a [DetectionRecord])>,
{
    let mut tracker = Tracker::new(params)?.with_corrections(corrections);
    for (frame, dets) in frames {
        tracker.step(frame, dets)?;
    }
    Ok(tracker.finish())
}

/// Group frame-sorted records into `(frame, detections)` slices.
pub fn group_by_frame(records: &[DetectionRecord]) -> Vec<(u64, &[DetectionRecord])> {
    records
        .chunk_by(|a, b| a.frame_index == b.frame_index)
        .map(|chunk| (chunk[0].frame_index, chunk))
        .collect()
}

/// Ground-truth identity of one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub frame: u64,
    pub true_id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReidScore {
    pub correct: usize,
    pub total: usize,
    pub rate: f64,
}

/// Share of ground-truth detections whose track maps, by majority vote over
/// the track's detections, to the detection's true identity. Detections are
/// paired with ground truth within a frame by nearest box center.
pub fn evaluate_tracking(tracks: &[Track], ground_truth: &[TruthEntry]) -> Result<ReidScore, ReidError> {
    if ground_truth.is_empty() {
        return Err(ReidError::EmptyGroundTruth);
    }
    let mut truth_by_frame: BTreeMap<u64, Vec<(usize, &TruthEntry)>> = BTreeMap::new();
    for (i, t) in ground_truth.iter().enumerate() {
        truth_by_frame.entry(t.frame).or_default().push((i, t));
    }

    // (track_id, true_id) for every tracked detection that pairs with truth.
    let mut labelled: Vec<(u64, u64)> = Vec::new();
    let mut used = vec![false; ground_truth.len()];
    for track in tracks {
        for (frame, det) in &track.history {
            let Some(cands) = truth_by_frame.get(frame) else {
                continue;
            };
            let c = centroid(&det.bbox);
            let best = cands
                .iter()
                .filter(|(i, _)| !used[*i])
                .min_by(|(ia, a), (ib, b)| {
                    distance(c, centroid(&a.bbox))
                        .total_cmp(&distance(c, centroid(&b.bbox)))
                        .then(ia.cmp(ib))
                });
            if let Some((i, t)) = best {
                used[*i] = true;
                labelled.push((track.track_id, t.true_id));
            }
        }
    }

    let mut votes: BTreeMap<u64, BTreeMap<u64, usize>> = BTreeMap::new();
    for (track_id, true_id) in &labelled {
        *votes.entry(*track_id).or_default().entry(*true_id).or_default() += 1;
    }
    let majority: BTreeMap<u64, u64> = votes
        .iter()
        .map(|(track_id, counts)| {
            let mut best = (0u64, 0usize);
            for (&true_id, &n) in counts {
                if n > best.1 {
                    best = (true_id, n);
                }
            }
            (*track_id, best.0)
        })
        .collect();

    let correct = labelled.iter().filter(|(tid, true_id)| majority[tid] == *true_id).count();
    let total = ground_truth.len();
    Ok(ReidScore { correct, total, rate: correct as f64 / total as f64 })
}
