//! Multi-lane per-student timeline: assembly, selection, clipping,
//! zoom-dependent resampling and canonical serialization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::to_canonical_string;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("unknown student `{0}`")]
    UnknownStudent(String),
    #[error("unknown lane `{0}`")]
    UnknownLane(String),
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("malformed timeline document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneKind {
    State,
    Actions,
    System,
    Affect,
    Gaze,
}

impl LaneKind {
    pub const ALL: [LaneKind; 5] = [LaneKind::State, LaneKind::Actions, LaneKind::System, LaneKind::Affect, LaneKind::Gaze];

    pub fn as_str(self) -> &'static str {
        match self {
            LaneKind::State => "state",
            LaneKind::Actions => "actions",
            LaneKind::System => "system",
            LaneKind::Affect => "affect",
            LaneKind::Gaze => "gaze",
        }
    }
}

impl fmt::Display for LaneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LaneKind {
    type Err = TimelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LaneKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| TimelineError::UnknownLane(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Segment {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Segment { start, end, label: label.into() }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// A point event, or a cluster of `count` events starting at `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub t: f64,
    pub label: String,
    pub count: u64,
}

/// Label given to a cluster whose members disagree.
pub const MIXED_LABEL: &str = "mixed";

impl Marker {
    pub fn new(t: f64, label: impl Into<String>) -> Self {
        Marker { t, label: label.into(), count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LaneData {
    Segments(Vec<Segment>),
    Markers(Vec<Marker>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub lane_id: LaneKind,
    /// `None` for the system lane.
    pub student: Option<String>,
    #[serde(flatten)]
    pub data: LaneData,
}

impl Lane {
    pub fn segments(kind: LaneKind, student: Option<&str>, segments: Vec<Segment>) -> Self {
        Lane { lane_id: kind, student: student.map(String::from), data: LaneData::Segments(segments) }
    }

    pub fn markers(student: Option<&str>, markers: Vec<Marker>) -> Self {
        Lane { lane_id: LaneKind::Actions, student: student.map(String::from), data: LaneData::Markers(markers) }
    }

    /// Latest time covered by the lane.
    pub fn extent(&self) -> f64 {
        match &self.data {
            LaneData::Segments(s) => s.iter().map(|s| s.end).fold(0.0, f64::max),
            LaneData::Markers(m) => m.iter().map(|m| m.t).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub session: String,
    pub duration: f64,
    pub resolution: f64,
    pub lanes: Vec<Lane>,
}

/// Source lanes for one student.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudentLanes {
    pub state: Vec<Segment>,
    pub actions: Vec<Marker>,
    pub affect: Vec<Segment>,
    pub gaze: Vec<Segment>,
}

impl Timeline {
    /// The full timeline at native resolution: for each student in id order
    /// the state, actions, affect and gaze lanes, then the system lane.
    pub fn assemble(
        session: &str,
        duration: f64,
        native_resolution: f64,
        students: BTreeMap<String, StudentLanes>,
        system: Vec<Segment>,
    ) -> Timeline {
        let mut lanes = Vec::with_capacity(students.len() * 4 + 1);
        for (id, s) in students {
            let who = Some(id.as_str());
            lanes.push(Lane::segments(LaneKind::State, who, s.state));
            lanes.push(Lane::markers(who, s.actions));
            lanes.push(Lane::segments(LaneKind::Affect, who, s.affect));
            lanes.push(Lane::segments(LaneKind::Gaze, who, s.gaze));
        }
        lanes.push(Lane::segments(LaneKind::System, None, system));
        Timeline { session: session.to_string(), duration, resolution: native_resolution, lanes }
    }

    pub fn students(&self) -> BTreeSet<String> {
        self.lanes.iter().filter_map(|l| l.student.clone()).collect()
    }

    pub fn to_canonical_json(&self) -> String {
        to_canonical_string(self)
    }

    pub fn from_json(text: &str) -> Result<Timeline, TimelineError> {
        serde_json::from_str(text).map_err(|e| TimelineError::Malformed(e.to_string()))
    }
}

/// Canonical document form of a timeline.
pub fn serialize(timeline: &Timeline) -> String {
    timeline.to_canonical_json()
}

/// Select lanes from a full timeline. `None` selects everything. The output
/// keeps the full timeline's lane order regardless of request order.
pub fn build_timeline(
    full: &Timeline,
    students: Option<&[String]>,
    lanes: Option<&[LaneKind]>,
) -> Result<Timeline, TimelineError> {
    let known = full.students();
    if let Some(req) = students {
        if let Some(bad) = req.iter().find(|s| !known.contains(*s)) {
            return Err(TimelineError::UnknownStudent(bad.clone()));
        }
    }
    let want_student = |s: &Option<String>| match (s, students) {
        (None, _) | (_, None) => true,
        (Some(id), Some(req)) => req.contains(id),
    };
    let want_kind = |k: LaneKind| lanes.is_none_or(|l| l.contains(&k));
    Ok(Timeline {
        session: full.session.clone(),
        duration: full.duration,
        resolution: full.resolution,
        lanes: full
            .lanes
            .iter()
            .filter(|l| want_kind(l.lane_id) && want_student(&l.student))
            .cloned()
            .collect(),
    })
}

/// Restrict a lane to `[from, to]`, cutting segments at the bounds.
pub fn clip_lane(lane: &Lane, from: f64, to: f64) -> Lane {
    let data = match &lane.data {
        LaneData::Segments(segs) => LaneData::Segments(
            segs.iter()
                .filter(|s| s.end > from && s.start < to)
                .map(|s| Segment::new(s.start.max(from), s.end.min(to), s.label.clone()))
                .collect(),
        ),
        LaneData::Markers(ms) => LaneData::Markers(ms.iter().filter(|m| m.t >= from && m.t <= to).cloned().collect()),
    };
    Lane { lane_id: lane.lane_id, student: lane.student.clone(), data }
}

/// Relative slack when comparing a segment's duration with the resolution.
const RES_SLACK: f64 = 1e-9;

/// Resample one lane to `resolution` seconds.
///
/// Segments at least one resolution long are kept. Each maximal run of
/// shorter segments is cut at multiples of the resolution and every piece
/// takes the label with the most duration inside it (earliest wins ties).
/// Markers closer than the resolution to the first of a cluster join it.
pub fn resample_lane(lane: &Lane, resolution: f64) -> Result<Lane, TimelineError> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(TimelineError::InvalidResolution(resolution));
    }
    let data = match &lane.data {
        LaneData::Segments(s) => LaneData::Segments(resample_segments(s, resolution)),
        LaneData::Markers(m) => LaneData::Markers(cluster_markers(m, resolution)),
    };
    Ok(Lane { lane_id: lane.lane_id, student: lane.student.clone(), data })
}

pub fn resample(timeline: &Timeline, resolution: f64) -> Result<Timeline, TimelineError> {
    Ok(Timeline {
        session: timeline.session.clone(),
        duration: timeline.duration,
        resolution,
        lanes: timeline.lanes.iter().map(|l| resample_lane(l, resolution)).collect::<Result<_, _>>()?,
    })
}

fn resample_segments(segs: &[Segment], res: f64) -> Vec<Segment> {
    let long = |s: &Segment| s.duration() >= res * (1.0 - RES_SLACK);
    let mut out = Vec::with_capacity(segs.len());
    let mut i = 0;
    while i < segs.len() {
        if long(&segs[i]) {
            out.push(segs[i].clone());
            i += 1;
            continue;
        }
        let mut j = i;
        while j < segs.len() && !long(&segs[j]) {
            j += 1;
        }
        relabel_run(&segs[i..j], res, &mut out);
        i = j;
    }
    out
}

/// Cut a run of short segments on the resolution grid. Gaps inside the run
/// are preserved as gaps.
fn relabel_run(run: &[Segment], res: f64, out: &mut Vec<Segment>) {
    // Split into contiguous stretches first so gaps never get filled.
    let mut stretch_start = 0;
    for k in 1..=run.len() {
        if k == run.len() || run[k].start != run[k - 1].end {
            relabel_stretch(&run[stretch_start..k], res, out);
            stretch_start = k;
        }
    }
}

fn relabel_stretch(run: &[Segment], res: f64, out: &mut Vec<Segment>) {
    let (lo, hi) = (run[0].start, run[run.len() - 1].end);
    let mut cuts = vec![lo];
    let mut k = (lo / res).floor() as i64 + 1;
    loop {
        let b = k as f64 * res;
        if b >= hi {
            break;
        }
        if b > *cuts.last().unwrap() {
            cuts.push(b);
        }
        k += 1;
    }
    cuts.push(hi);
    let mut first = 0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut tally: Vec<(&str, f64)> = Vec::new();
        while first < run.len() && run[first].end <= a {
            first += 1;
        }
        for s in run[first..].iter().take_while(|s| s.start < b) {
            let d = s.end.min(b) - s.start.max(a);
            if d <= 0.0 {
                continue;
            }
            match tally.iter_mut().find(|(l, _)| *l == s.label) {
                Some(entry) => entry.1 += d,
                None => tally.push((&s.label, d)),
            }
        }
        let best = tally
            .iter()
            .fold(None::<(&str, f64)>, |acc, &(l, d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((l, d)),
            })
            .map(|(l, _)| l.to_string());
        if let Some(label) = best {
            out.push(Segment::new(a, b, label));
        }
    }
}

fn cluster_markers(markers: &[Marker], res: f64) -> Vec<Marker> {
    let mut out: Vec<Marker> = Vec::new();
    for m in markers {
        match out.last_mut() {
            Some(c) if m.t - c.t < res => {
                c.count += m.count;
                if c.label != m.label {
                    c.label = MIXED_LABEL.to_string();
                }
            }
            _ => out.push(m.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seg_lane(segs: &[(f64, f64, &str)]) -> Lane {
        Lane::segments(LaneKind::Affect, Some("s1"), segs.iter().map(|&(a, b, l)| Segment::new(a, b, l)).collect())
    }

    fn triples(l: &Lane) -> Vec<(f64, f64, String)> {
        match &l.data {
            LaneData::Segments(s) => s.iter().map(|s| (s.start, s.end, s.label.clone())).collect(),
            LaneData::Markers(_) => panic!("segment lane expected"),
        }
    }

    fn full(students: &[&str]) -> Timeline {
        let per = students
            .iter()
            .map(|s| {
                (
                    s.to_string(),
                    StudentLanes {
                        state: vec![Segment::new(0.0, 10.0, "water")],
                        actions: vec![Marker::new(2.0, "zone:roots")],
                        affect: vec![Segment::new(0.0, 10.0, "Engagement")],
                        gaze: vec![Segment::new(0.0, 10.0, "screen")],
                    },
                )
            })
            .collect();
        Timeline::assemble("demo", 10.0, 1.0 / 30.0, per, vec![Segment::new(0.0, 10.0, "day")])
    }

    #[test]
    fn majority_duration_example() {
        let lane = seg_lane(&[(0.0, 4.9, "A"), (4.9, 5.0, "B"), (5.0, 10.0, "A")]);
        let out = resample_lane(&lane, 5.0).unwrap();
        assert_eq!(triples(&out), vec![(0.0, 5.0, "A".into()), (5.0, 10.0, "A".into())]);
    }

    #[test]
    fn fine_resolution_is_identity() {
        let lane = seg_lane(&[(0.0, 1.0, "A"), (1.0, 2.5, "B"), (3.0, 4.0, "A")]);
        assert_eq!(resample_lane(&lane, 0.5).unwrap(), lane);
    }

    #[test]
    fn markers_cluster_but_survive() {
        let lane = Lane::markers(Some("s1"), vec![Marker::new(10.0, "a"), Marker::new(10.4, "a"), Marker::new(10.9, "b")]);
        let out = resample_lane(&lane, 5.0).unwrap();
        assert_eq!(out.data, LaneData::Markers(vec![Marker { t: 10.0, label: MIXED_LABEL.into(), count: 3 }]));
        let spread = Lane::markers(None, vec![Marker::new(0.0, "a"), Marker::new(6.0, "a")]);
        assert_eq!(resample_lane(&spread, 5.0).unwrap(), spread);
    }

    #[test]
    fn gaps_stay_gaps() {
        let lane = seg_lane(&[(0.0, 1.0, "A"), (3.0, 4.0, "B")]);
        let out = resample_lane(&lane, 5.0).unwrap();
        assert_eq!(triples(&out), vec![(0.0, 1.0, "A".into()), (3.0, 4.0, "B".into())]);
    }

    #[test]
    fn bad_resolution_rejected() {
        let lane = seg_lane(&[(0.0, 1.0, "A")]);
        for r in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(resample_lane(&lane, r).is_err());
        }
    }

    #[test]
    fn selection_counts() {
        let t = full(&["a", "b", "c"]);
        assert_eq!(build_timeline(&t, None, None).unwrap().lanes.len(), 13);
        let one = build_timeline(&t, Some(&["b".to_string()]), Some(&[LaneKind::Affect])).unwrap();
        assert_eq!(one.lanes.len(), 1);
        assert_eq!(one.lanes[0].student.as_deref(), Some("b"));
        let single = build_timeline(&full(&["a"]), None, None).unwrap();
        assert_eq!(single.lanes.len(), 5);
        assert_eq!(
            build_timeline(&t, Some(&["zed".to_string()]), None),
            Err(TimelineError::UnknownStudent("zed".into()))
        );
        assert_eq!("mood".parse::<LaneKind>(), Err(TimelineError::UnknownLane("mood".into())));
    }

    #[test]
    fn serialization_is_canonical() {
        let t = full(&["a", "b"]);
        let once = serialize(&t);
        assert_eq!(once, serialize(&t.clone()));
        assert_eq!(serialize(&Timeline::from_json(&once).unwrap()), once);
        let empty = Timeline { session: "x".into(), duration: 0.0, resolution: 1.0, lanes: vec![] };
        assert_eq!(serialize(&empty), r#"{"duration":0.000000,"lanes":[],"resolution":1.000000,"session":"x"}"#);
        assert!(once.contains(r#"{"lane_id":"system","segments":[{"end":10.000000,"label":"day","start":0.000000}],"student":null}"#));
    }

    #[test]
    fn clipping() {
        let lane = seg_lane(&[(0.0, 4.0, "A"), (4.0, 9.0, "B")]);
        assert_eq!(triples(&clip_lane(&lane, 2.0, 5.0)), vec![(2.0, 4.0, "A".into()), (4.0, 5.0, "B".into())]);
    }

    fn lane_strategy() -> impl Strategy<Value = Lane> {
        proptest::collection::vec((1u32..400, 0u8..3, 0u8..4), 1..60).prop_map(|parts| {
            let mut t = 0u32;
            let mut segs = Vec::new();
            for (len, label, gap) in parts {
                let start = t as f64 / 100.0;
                t += len;
                segs.push(Segment::new(start, t as f64 / 100.0, ["A", "B", "C"][label as usize]));
                if gap == 0 {
                    t += 50;
                }
            }
            Lane::segments(LaneKind::Gaze, Some("s"), segs)
        })
    }

    proptest! {
        #[test]
        fn resample_idempotent(lane in lane_strategy(), res in 0.05f64..8.0) {
            let once = resample_lane(&lane, res).unwrap();
            prop_assert_eq!(resample_lane(&once, res).unwrap(), once.clone());
            prop_assert_eq!(once.extent(), lane.extent());
        }

        #[test]
        fn resample_tiny_resolution_identity(lane in lane_strategy()) {
            prop_assert_eq!(resample_lane(&lane, 1e-6).unwrap(), lane);
        }

        #[test]
        fn markers_idempotent(ts in proptest::collection::vec(0u32..10_000, 0..50), res in 0.1f64..20.0) {
            let mut ts = ts;
            ts.sort();
            let lane = Lane::markers(Some("s"), ts.iter().map(|&t| Marker::new(t as f64 / 100.0, "x")).collect());
            let once = resample_lane(&lane, res).unwrap();
            prop_assert_eq!(resample_lane(&once, res).unwrap(), once.clone());
            let LaneData::Markers(m) = &once.data else { unreachable!() };
            prop_assert_eq!(m.iter().map(|m| m.count).sum::<u64>(), ts.len() as u64);
        }
    }
}
