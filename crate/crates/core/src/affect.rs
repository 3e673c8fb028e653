//! Discrete affect from per-frame valence and arousal.
//!
//! Each frame is placed in the valence/arousal plane: a small disk around
//! the origin (minimal expression) is engaged concentration; outside it the
//! circumplex quadrant decides, refined into learning-centered emotions.
//! Frames are then pooled over fixed windows with sustain rules.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FrameClock;
use crate::reid::Track;
use crate::window::{merge_runs, window_spans};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffectError {
    #[error("valence/arousal ({valence}, {arousal}) outside [-1, 1]")]
    RangeViolation { valence: f64, arousal: f64 },
    #[error("window has {found} frames, expected {expected}")]
    WrongWindowLength { expected: usize, found: usize },
    #[error("invalid affect thresholds: {0}")]
    InvalidThresholds(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AffectLabel {
    Delight,
    Engagement,
    Confusion,
    Frustration,
    Boredom,
    Q1PleasantActive,
    Q2UnpleasantActive,
    Q3UnpleasantSubdued,
    Q4PleasantSerene,
    NotFound,
    NoDominantEmotion,
}

impl AffectLabel {
    pub const ALL: [AffectLabel; 11] = [
        AffectLabel::Delight,
        AffectLabel::Engagement,
        AffectLabel::Confusion,
        AffectLabel::Frustration,
        AffectLabel::Boredom,
        AffectLabel::Q1PleasantActive,
        AffectLabel::Q2UnpleasantActive,
        AffectLabel::Q3UnpleasantSubdued,
        AffectLabel::Q4PleasantSerene,
        AffectLabel::NotFound,
        AffectLabel::NoDominantEmotion,
    ];

    /// Labels a single frame can carry.
    pub const FRAME_LABELS: [AffectLabel; 9] = [
        AffectLabel::Delight,
        AffectLabel::Engagement,
        AffectLabel::Confusion,
        AffectLabel::Frustration,
        AffectLabel::Boredom,
        AffectLabel::Q1PleasantActive,
        AffectLabel::Q2UnpleasantActive,
        AffectLabel::Q3UnpleasantSubdued,
        AffectLabel::Q4PleasantSerene,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AffectLabel::Delight => "Delight",
            AffectLabel::Engagement => "Engagement",
            AffectLabel::Confusion => "Confusion",
            AffectLabel::Frustration => "Frustration",
            AffectLabel::Boredom => "Boredom",
            AffectLabel::Q1PleasantActive => "Q1PleasantActive",
            AffectLabel::Q2UnpleasantActive => "Q2UnpleasantActive",
            AffectLabel::Q3UnpleasantSubdued => "Q3UnpleasantSubdued",
            AffectLabel::Q4PleasantSerene => "Q4PleasantSerene",
            AffectLabel::NotFound => "NotFound",
            AffectLabel::NoDominantEmotion => "NoDominantEmotion",
        }
    }
}

impl fmt::Display for AffectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AffectLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AffectLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown affect label `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffectThresholds {
    pub neutral_radius: f64,
    pub delight_arousal_min: f64,
    pub frustration_arousal_min: f64,
    pub window_frames: usize,
    pub sustain_frames: usize,
    pub delight_sustain_frames: usize,
    pub notfound_fraction: f64,
    /// Report plain circumplex quadrants instead of learning-centered emotions.
    pub quadrants_only: bool,
}

impl Default for AffectThresholds {
    fn default() -> Self {
        AffectThresholds {
            neutral_radius: 0.15,
            delight_arousal_min: 0.35,
            frustration_arousal_min: 0.35,
            window_frames: 150,
            sustain_frames: 150,
            delight_sustain_frames: 60,
            notfound_fraction: 0.5,
            quadrants_only: false,
        }
    }
}

impl AffectThresholds {
    pub fn validate(&self) -> Result<(), AffectError> {
        if !(self.neutral_radius > 0.0 && self.neutral_radius < 1.0) {
            return Err(AffectError::InvalidThresholds("neutral_radius must lie in (0, 1)"));
        }
        if self.window_frames == 0 {
            return Err(AffectError::InvalidThresholds("window_frames must be positive"));
        }
        if !(self.delight_sustain_frames <= self.sustain_frames && self.sustain_frames <= self.window_frames) {
            return Err(AffectError::InvalidThresholds(
                "need delight_sustain_frames <= sustain_frames <= window_frames",
            ));
        }
        if !(0.0..=1.0).contains(&self.notfound_fraction) {
            return Err(AffectError::InvalidThresholds("notfound_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Label for one frame. Zero valence or arousal outside the neutral disk
/// counts as positive.
pub fn frame_label(valence: f64, arousal: f64, t: &AffectThresholds) -> Result<AffectLabel, AffectError> {
    if !((-1.0..=1.0).contains(&valence) && (-1.0..=1.0).contains(&arousal)) {
        return Err(AffectError::RangeViolation { valence, arousal });
    }
    if valence.hypot(arousal) <= t.neutral_radius {
        return Ok(AffectLabel::Engagement);
    }
    let pleasant = valence >= 0.0;
    let active = arousal >= 0.0;
    let label = if t.quadrants_only {
        match (pleasant, active) {
            (true, true) => AffectLabel::Q1PleasantActive,
            (false, true) => AffectLabel::Q2UnpleasantActive,
            (false, false) => AffectLabel::Q3UnpleasantSubdued,
            (true, false) => AffectLabel::Q4PleasantSerene,
        }
    } else {
        match (pleasant, active) {
            (true, true) if arousal >= t.delight_arousal_min => AffectLabel::Delight,
            (true, true) => AffectLabel::Q1PleasantActive,
            (false, true) if arousal >= t.frustration_arousal_min => AffectLabel::Frustration,
            (false, true) => AffectLabel::Confusion,
            (false, false) => AffectLabel::Boredom,
            (true, false) => AffectLabel::Q4PleasantSerene,
        }
    };
    Ok(label)
}

/// Label for a full window; `None` entries are frames without a face.
pub fn window_label(frames: &[Option<AffectLabel>], t: &AffectThresholds) -> Result<AffectLabel, AffectError> {
    if frames.len() != t.window_frames {
        return Err(AffectError::WrongWindowLength { expected: t.window_frames, found: frames.len() });
    }
    Ok(pooled_label(frames, t))
}

/// Window decision for any window length; sustain counts scale with
/// `len / window_frames`, rounded down but never below one frame.
fn pooled_label(frames: &[Option<AffectLabel>], t: &AffectThresholds) -> AffectLabel {
    let len = frames.len();
    if len == 0 {
        return AffectLabel::NotFound;
    }
    let scale = |count: usize| ((count * len) / t.window_frames).max(1);
    let sustain = scale(t.sustain_frames);
    let delight_sustain = scale(t.delight_sustain_frames);

    let mut counts: BTreeMap<AffectLabel, usize> = BTreeMap::new();
    let mut absent = 0usize;
    for f in frames {
        match f {
            Some(l) => *counts.entry(*l).or_default() += 1,
            None => absent += 1,
        }
    }
    let count = |l: AffectLabel| counts.get(&l).copied().unwrap_or(0);

    if absent as f64 / len as f64 > t.notfound_fraction {
        return AffectLabel::NotFound;
    }
    if count(AffectLabel::Delight) >= delight_sustain {
        return AffectLabel::Delight;
    }
    // Most frequent sustained non-engagement label; ties resolve in label order.
    let mut best: Option<(AffectLabel, usize)> = None;
    for (&l, &n) in &counts {
        if l != AffectLabel::Engagement && n >= sustain && best.is_none_or(|(_, m)| n > m) {
            best = Some((l, n));
        }
    }
    if let Some((l, _)) = best {
        return l;
    }
    if count(AffectLabel::Engagement) >= sustain {
        return AffectLabel::Engagement;
    }
    AffectLabel::NoDominantEmotion
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffectSegment {
    pub track_id: u64,
    pub start: f64,
    pub end: f64,
    pub label: AffectLabel,
}

/// Affect lane for one track: consecutive windows from the track's first
/// frame, adjacent equal labels merged.
pub fn affect_lane(track: &Track, clock: &FrameClock, t: &AffectThresholds) -> Result<Vec<AffectSegment>, AffectError> {
    let (Some(first), Some(last)) = (track.first_frame(), track.last_frame()) else {
        return Ok(Vec::new());
    };
    let mut per_frame: BTreeMap<u64, AffectLabel> = BTreeMap::new();
    for (frame, det) in &track.history {
        per_frame.insert(*frame, frame_label(det.valence, det.arousal, t)?);
    }
    let runs = window_spans(first, last, t.window_frames as u64).into_iter().map(|(start, end)| {
        let frames: Vec<Option<AffectLabel>> = (start..end).map(|f| per_frame.get(&f).copied()).collect();
        (start, end, pooled_label(&frames, t))
    });
    Ok(merge_runs(runs)
        .into_iter()
        .map(|(start, end, label)| AffectSegment {
            track_id: track.track_id,
            start: clock.time(start),
            end: clock.time(end),
            label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{BBox, DetectionRecord, FrameRate};
    use proptest::prelude::*;

    fn t() -> AffectThresholds {
        AffectThresholds::default()
    }

    fn window(parts: &[(Option<AffectLabel>, usize)]) -> Vec<Option<AffectLabel>> {
        parts.iter().flat_map(|(l, n)| std::iter::repeat_n(*l, *n)).collect()
    }

    use AffectLabel::*;

    #[test]
    fn frame_examples() {
        assert_eq!(frame_label(0.05, -0.05, &t()).unwrap(), Engagement);
        assert_eq!(frame_label(0.6, 0.6, &t()).unwrap(), Delight);
        assert_eq!(frame_label(-0.5, 0.2, &t()).unwrap(), Confusion);
        assert_eq!(frame_label(-0.4, -0.4, &t()).unwrap(), Boredom);
        assert_eq!(frame_label(0.5, 0.1, &t()).unwrap(), Q1PleasantActive);
        assert_eq!(frame_label(-0.5, 0.5, &t()).unwrap(), Frustration);
        assert_eq!(frame_label(0.5, -0.5, &t()).unwrap(), Q4PleasantSerene);
        assert!(matches!(frame_label(1.2, 0.0, &t()), Err(AffectError::RangeViolation { .. })));
        assert!(frame_label(f64::NAN, 0.0, &t()).is_err());
    }

    #[test]
    fn axis_counts_as_positive() {
        assert_eq!(frame_label(0.0, -0.5, &t()).unwrap(), Q4PleasantSerene);
        assert_eq!(frame_label(-0.5, 0.0, &t()).unwrap(), Confusion);
        assert_eq!(frame_label(0.5, 0.0, &t()).unwrap(), Q1PleasantActive);
    }

    #[test]
    fn quadrant_mode() {
        let q = AffectThresholds { quadrants_only: true, ..t() };
        assert_eq!(frame_label(0.6, 0.6, &q).unwrap(), Q1PleasantActive);
        assert_eq!(frame_label(-0.6, 0.6, &q).unwrap(), Q2UnpleasantActive);
        assert_eq!(frame_label(-0.6, -0.6, &q).unwrap(), Q3UnpleasantSubdued);
        assert_eq!(frame_label(0.6, -0.6, &q).unwrap(), Q4PleasantSerene);
        assert_eq!(frame_label(0.0, 0.0, &q).unwrap(), Engagement);
    }

    // Independent restatement of the second-quadrant rule, enumerated over
    // the arousal axis at the grid resolution.
    #[test]
    fn second_quadrant_truth_table() {
        for i in 1..=100 {
            let a = i as f64 / 100.0;
            let v = -0.5;
            let expect = if (v * v + a * a).sqrt() <= 0.15 {
                Engagement
            } else if a >= 0.35 {
                Frustration
            } else {
                Confusion
            };
            assert_eq!(frame_label(v, a, &t()).unwrap(), expect, "a = {a}");
        }
    }

    #[test]
    fn window_examples() {
        assert_eq!(window_label(&window(&[(Some(Boredom), 150)]), &t()).unwrap(), Boredom);
        assert_eq!(window_label(&window(&[(Some(Delight), 60), (Some(Engagement), 90)]), &t()).unwrap(), Delight);
        assert_eq!(
            window_label(&window(&[(Some(Confusion), 80), (Some(Engagement), 70)]), &t()).unwrap(),
            NoDominantEmotion
        );
        assert_eq!(window_label(&window(&[(None, 100), (Some(Engagement), 50)]), &t()).unwrap(), NotFound);
        assert_eq!(window_label(&window(&[(Some(Engagement), 150)]), &t()).unwrap(), Engagement);
        assert_eq!(
            window_label(&window(&[(Some(Boredom), 10)]), &t()),
            Err(WrongWindowLength { expected: 150, found: 10 })
        );
    }

    use AffectError::WrongWindowLength;

    #[test]
    fn exactly_half_absent_is_not_notfound() {
        assert_eq!(window_label(&window(&[(None, 75), (Some(Boredom), 75)]), &t()).unwrap(), NoDominantEmotion);
    }

    #[test]
    fn every_label_is_reachable() {
        let q = AffectThresholds { quadrants_only: true, ..t() };
        let mut seen = std::collections::BTreeSet::new();
        for l in AffectLabel::FRAME_LABELS {
            let th = if matches!(l, Q2UnpleasantActive | Q3UnpleasantSubdued) { q } else { t() };
            seen.insert(window_label(&window(&[(Some(l), 150)]), &th).unwrap());
        }
        seen.insert(window_label(&window(&[(None, 150)]), &t()).unwrap());
        seen.insert(window_label(&window(&[(Some(Boredom), 75), (Some(Engagement), 75)]), &t()).unwrap());
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), AffectLabel::ALL.to_vec());
    }

    #[test]
    fn labels_round_trip_through_strings() {
        for l in AffectLabel::ALL {
            assert_eq!(l.as_str().parse::<AffectLabel>().unwrap(), l);
            assert_eq!(serde_json::to_string(&l).unwrap(), format!("\"{l}\""));
        }
    }

    fn track_with(values: &[(f64, f64, usize)]) -> Track {
        let mut history = Vec::new();
        let mut f = 0;
        for &(v, a, n) in values {
            for _ in 0..n {
                let det = DetectionRecord {
                    frame_index: f,
                    bbox: BBox::new(0.0, 0.0, 10.0, 10.0),
                    valence: v,
                    arousal: a,
                    pitch: None,
                    yaw: None,
                    depth: None,
                };
                history.push((f, det));
                f += 1;
            }
        }
        Track { track_id: 3, last_center: (5.0, 5.0), last_seen_frame: f - 1, coasting: false, history }
    }

    fn clock() -> FrameClock {
        FrameClock::new(FrameRate::default(), 0.0)
    }

    #[test]
    fn lane_merges_equal_windows() {
        let lane = affect_lane(&track_with(&[(0.0, 0.0, 300)]), &clock(), &t()).unwrap();
        assert_eq!(lane, vec![AffectSegment { track_id: 3, start: 0.0, end: 10.0, label: Engagement }]);
    }

    #[test]
    fn lane_window_boundaries() {
        let lane = affect_lane(&track_with(&[(0.6, 0.6, 150), (-0.4, -0.4, 150)]), &clock(), &t()).unwrap();
        let got: Vec<(f64, f64, AffectLabel)> = lane.iter().map(|s| (s.start, s.end, s.label)).collect();
        assert_eq!(got, vec![(0.0, 5.0, Delight), (5.0, 10.0, Boredom)]);
    }

    #[test]
    fn partial_final_window_scales_thresholds() {
        // 30 trailing frames: sustain scales to 30, delight to 12.
        let lane = affect_lane(&track_with(&[(-0.4, -0.4, 180)]), &clock(), &t()).unwrap();
        assert_eq!(lane.len(), 1);
        assert_eq!((lane[0].end, lane[0].label), (6.0, Boredom));
        let lane = affect_lane(&track_with(&[(-0.4, -0.4, 150), (0.6, 0.6, 12), (0.0, 0.0, 18)]), &clock(), &t()).unwrap();
        assert_eq!(lane.last().unwrap().label, Delight);
        let lane = affect_lane(&track_with(&[(-0.4, -0.4, 150), (0.6, 0.6, 11), (0.0, 0.0, 19)]), &clock(), &t()).unwrap();
        assert_eq!(lane.last().unwrap().label, NoDominantEmotion);
    }

    #[test]
    fn lane_offsets_follow_stream_clock() {
        let c = FrameClock::new(FrameRate::default(), 2.5);
        let lane = affect_lane(&track_with(&[(0.0, 0.0, 150)]), &c, &t()).unwrap();
        assert_eq!((lane[0].start, lane[0].end), (2.5, 7.5));
    }

    fn label_strategy() -> impl Strategy<Value = Option<AffectLabel>> {
        proptest::option::weighted(0.8, proptest::sample::select(AffectLabel::FRAME_LABELS.to_vec()))
    }

    proptest! {
        #[test]
        fn window_codomain_and_delight_monotonicity(
            frames in proptest::collection::vec(label_strategy(), 150),
            extra in 0usize..150,
        ) {
            let label = window_label(&frames, &t()).unwrap();
            prop_assert!(AffectLabel::ALL.contains(&label));

            // Turning present frames into Delight never moves the result
            // away from Delight once 60 Delight frames are reached.
            let mut more = frames.clone();
            let mut changed = 0;
            for f in more.iter_mut() {
                if changed == extra { break; }
                if f.is_some() && *f != Some(Delight) {
                    *f = Some(Delight);
                    changed += 1;
                }
            }
            if label == Delight {
                prop_assert_eq!(window_label(&more, &t()).unwrap(), Delight);
            }
        }

        #[test]
        fn lane_tiles_track_span(
            parts in proptest::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0, 1usize..200), 1..6),
        ) {
            let track = track_with(&parts);
            let lane = affect_lane(&track, &clock(), &t()).unwrap();
            let frames: usize = parts.iter().map(|p| p.2).sum();
            prop_assert_eq!(lane.first().unwrap().start, 0.0);
            prop_assert!((lane.last().unwrap().end - frames as f64 / 30.0).abs() < 1e-9);
            for w in lane.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
                prop_assert!(w[0].label != w[1].label);
                prop_assert!(w[0].start < w[0].end);
            }
            prop_assert_eq!(&lane, &affect_lane(&track, &clock(), &t()).unwrap());
        }
    }
}
