//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p mmtl-server --test acceptance`; set UPDATE_GOLDEN=1 to
//! rewrite the frozen golden timeline.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use axum::http::StatusCode;
use common::Workspace;
use mmtl_core::affect::{frame_label, window_label, AffectLabel, AffectThresholds};
use mmtl_core::gaze3d::{back_project, gaze_direction, person_volume, PERSON_PREFIX};
use mmtl_core::ingest::CameraIntrinsics;
use mmtl_core::reid::centroid;
use mmtl_core::timeline::{resample_lane, serialize, Lane, LaneData, LaneKind, Segment, Timeline};
use mmtl_server::evaluate::{evaluate_fixture, evaluate_suite};
use mmtl_server::pipeline::{analyze, SessionAnalysis};
use mmtl_server::store::TIMELINE_FILE;
use mmtl_sim::builtin::{self, BENCHMARK_SIZE};
use mmtl_sim::oracle::{ray_cast_agreement, worst_direction_norm_error, worst_reprojection_error, MarchScene};
use mmtl_sim::{generate, GroundTruth, ScenarioSpec};
use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_TIMELINE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/golden_timeline.json");
const PROPERTY_CASES: usize = 1000;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn re_identification() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let started = Instant::now();
    for spec in builtin::benchmark_suite() {
        generate(&spec).and_then(|f| f.write_to(&dir.path().join(&spec.name))).map_err(|e| e.to_string())?;
    }
    let suite = evaluate_suite(dir.path()).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let detail = format!(
        "pooled {}/{} = {:.4} over {} scenarios in {:.2} s",
        suite.correct,
        suite.total,
        suite.pooled_rate,
        suite.scenarios.len(),
        elapsed.as_secs_f64()
    );
    ensure!(suite.scenarios.len() == BENCHMARK_SIZE, "{detail}");
    ensure!(suite.pooled_rate >= 0.91 && elapsed < Duration::from_secs(10), "{detail}");
    Ok(detail)
}

/// Student name for a gaze target, with `person:<track>` rewritten to the
/// student that track belongs to.
fn student_target(analysis: &SessionAnalysis, stream: &str, ooi: &str) -> String {
    match ooi.strip_prefix(PERSON_PREFIX).and_then(|t| t.parse::<u64>().ok()) {
        Some(track) => format!("{PERSON_PREFIX}{}", analysis.student_of(stream, track)),
        None => ooi.to_string(),
    }
}

/// Every sampled gaze ray, rebuilt from the detections, has the scripted
/// target with 2 mm to spare.
fn clearance_frames(spec: &ScenarioSpec, truth: &GroundTruth, analysis: &SessionAnalysis, every: u64) -> Result<usize, String> {
    let stream = &analysis.streams[0];
    let mut frames: BTreeMap<u64, Vec<(u64, &mmtl_core::ingest::DetectionRecord)>> = BTreeMap::new();
    for t in &stream.tracks {
        for (f, d) in t.history.iter().filter(|(f, _)| f % every == 0) {
            frames.entry(*f).or_default().push((t.track_id, d));
        }
    }
    let origin = |d: &mmtl_core::ingest::DetectionRecord| {
        let (x, y) = centroid(&d.bbox);
        back_project(Point2::new(x, y), d.depth.unwrap(), &spec.intrinsics).unwrap()
    };
    let mut checked = 0;
    for (frame, rows) in &frames {
        for (id, d) in rows {
            let others: Vec<_> = rows
                .iter()
                .filter(|(j, _)| j != id)
                .map(|(j, o)| (*j, person_volume(&origin(o), &spec.scene).unwrap()))
                .collect();
            let march = MarchScene::new(&spec.scene, &others);
            let dir = gaze_direction(d.pitch.unwrap(), d.yaw.unwrap()).unwrap();
            let student = analysis.student_of(&stream.stream_id, *id);
            let Some(got) = march.march_with_clearance(&origin(d), &dir) else {
                return Err(format!("{student} frame {frame}: target within 2 mm of an edge"));
            };
            let got = got.map(|(name, _)| student_target(analysis, &stream.stream_id, &name));
            let expected = truth.ooi_at(&student, *frame).flatten();
            ensure!(got.as_deref() == expected, "{student} frame {frame}: march {got:?}, scripted {expected:?}");
            checked += 1;
        }
    }
    Ok(checked)
}

fn round_trip_one(ws: &Workspace, spec: &ScenarioSpec) -> Outcome {
    ensure!(spec.noise_px == 0.0, "{} is not a zero-noise fixture", spec.name);
    let manifest = ws.fixture(spec);
    let dir = manifest.parent().unwrap();
    let truth: GroundTruth = serde_json::from_str(&std::fs::read_to_string(dir.join("ground_truth.json")).unwrap()).unwrap();
    let analysis = analyze(&manifest).map_err(|e| e.to_string())?;
    let name = &spec.name;

    let reid = evaluate_fixture(dir).map_err(|e| e.to_string())?.score;
    ensure!(reid.correct == reid.total && reid.total > 0, "{name}: identities {}/{}", reid.correct, reid.total);

    let stream = &analysis.streams[0];
    let (mut gaze_frames, mut visible) = (0usize, 0usize);
    for (track, hits) in &stream.hits {
        let student = analysis.student_of(&stream.stream_id, *track);
        for h in hits {
            let Some(expected) = truth.ooi_at(&student, h.frame_index) else {
                ensure!(h.ooi.is_none(), "{name}: {student} frame {} hit {:?} while hidden", h.frame_index, h.ooi);
                continue;
            };
            let got = h.ooi.as_deref().map(|o| student_target(&analysis, &stream.stream_id, o));
            ensure!(got.as_deref() == expected, "{name}: {student} frame {}: {got:?} != {expected:?}", h.frame_index);
            gaze_frames += 1;
        }
    }
    for runs in truth.gaze.values() {
        visible += runs.iter().map(|r| (r.end_frame - r.start_frame) as usize).sum::<usize>();
    }
    ensure!(gaze_frames == visible, "{name}: {gaze_frames} gaze frames compared, {visible} visible");
    let cleared = clearance_frames(spec, &truth, &analysis, 10)?;

    let clock = analysis.manifest.clock(analysis.manifest.stream(&stream.stream_id).unwrap());
    let mut windows = 0;
    for (student, runs) in &truth.affect {
        let track = truth.expected_tracks[student];
        let got: Vec<(f64, f64, &str)> = stream.affect[&track].iter().map(|s| (s.start, s.end, s.label.as_str())).collect();
        let want: Vec<(f64, f64, &str)> =
            runs.iter().map(|r| (clock.time(r.start_frame), clock.time(r.end_frame), r.value.as_str())).collect();
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(g, w)| close(g.0, w.0) && close(g.1, w.1) && g.2 == w.2);
        ensure!(same, "{name}: {student} affect {got:?} != {want:?}");
        windows += want.len();
    }

    for (student, plan) in &truth.metrics {
        let m = analysis.metrics.get(student).ok_or_else(|| format!("{name}: no metrics for {student}"))?;
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => close(a, b),
            (a, b) => a == b,
        };
        let shares = |a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>| {
            a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && close(*va, *vb))
        };
        let same = opt(m.first_transition_latency, plan.first_transition_latency)
            && m.successful_transitions == plan.successful_transitions
            && m.cycles_completed == plan.cycles_completed
            && opt(m.mean_transition_interval, plan.mean_transition_interval)
            && shares(&m.time_share_per_molecule, &plan.time_share_per_molecule)
            && shares(&m.initial_time_share_per_molecule, &plan.initial_time_share_per_molecule);
        ensure!(same, "{name}: {student} metrics {m:?} != planned {plan:?}");
    }
    Ok(format!(
        "{name}: {} detections, {gaze_frames} gaze frames ({cleared} cleared), {windows} affect runs, {} metric sets",
        reid.total,
        truth.metrics.len()
    ))
}

fn zero_noise_round_trip() -> Outcome {
    let ws = Workspace::new();
    let parts = [builtin::golden(), builtin::stationary(), builtin::narrative()]
        .iter()
        .map(|s| round_trip_one(&ws, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(parts.join("; "))
}

fn gaze_oracle() -> Outcome {
    let a = ray_cast_agreement(1000, 20);
    ensure!(
        a.compared == 1000 && a.agreed == a.compared,
        "{}/{} agreed, first mismatch {:?}",
        a.agreed,
        a.compared,
        a.first_mismatch
    );
    let norm = worst_direction_norm_error(1_000_000, 7);
    ensure!(norm <= 1e-9, "direction norm error {norm:e}");
    let reproj = [CameraIntrinsics::default(), CameraIntrinsics::for_image(640, 480)]
        .iter()
        .map(|k| worst_reprojection_error(100_000, 11, k))
        .fold(0.0, f64::max);
    ensure!(reproj <= 1e-6, "reprojection error {reproj:e} px");
    Ok(format!(
        "{}/{} scenes agree ({} hits, {} without 2 mm clearance), norm error {norm:.1e}, reprojection {reproj:.1e} px",
        a.agreed, a.compared, a.hits, a.discarded
    ))
}

/// Region each frame label owns, written out independently of `frame_label`.
fn regions(v: f64, a: f64) -> Vec<AffectLabel> {
    use AffectLabel::*;
    let neutral = v * v + a * a <= 0.15 * 0.15;
    let q = |pv: bool, pa: bool| !neutral && (v >= 0.0) == pv && (a >= 0.0) == pa;
    [
        (Engagement, neutral),
        (Delight, q(true, true) && a >= 0.35),
        (Q1PleasantActive, q(true, true) && a < 0.35),
        (Frustration, q(false, true) && a >= 0.35),
        (Confusion, q(false, true) && a < 0.35),
        (Boredom, q(false, false)),
        (Q4PleasantSerene, q(true, false)),
    ]
    .into_iter()
    .filter_map(|(l, inside)| inside.then_some(l))
    .collect()
}

fn affect_rules() -> Outcome {
    let t = AffectThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pick = |rng: &mut ChaCha8Rng| AffectLabel::FRAME_LABELS[rng.random_range(0..AffectLabel::FRAME_LABELS.len())];

    // Sustained labels dominate.
    for l in AffectLabel::FRAME_LABELS {
        let got = window_label(&vec![Some(l); 150], &t).map_err(|e| e.to_string())?;
        ensure!(got == l, "150 x {l:?} gave {got:?}");
    }
    // Sixty delight frames anywhere in a mostly visible window.
    for case in 0..PROPERTY_CASES {
        let mut frames: Vec<Option<AffectLabel>> =
            (0..150).map(|_| rng.random_bool(0.7).then(|| pick(&mut rng))).collect();
        let mut slots: Vec<usize> = (0..150).collect();
        for i in 0..60 {
            let j = rng.random_range(i..150);
            slots.swap(i, j);
            frames[slots[i]] = Some(AffectLabel::Delight);
        }
        if 2 * frames.iter().filter(|f| f.is_none()).count() > 150 {
            continue;
        }
        let got = window_label(&frames, &t).map_err(|e| e.to_string())?;
        ensure!(got == AffectLabel::Delight, "case {case}: 60 delight frames gave {got:?}");
    }
    let rest = Some(AffectLabel::Engagement);
    let below: Vec<_> = std::iter::repeat_n(Some(AffectLabel::Delight), 59).chain(std::iter::repeat_n(rest, 91)).collect();
    ensure!(window_label(&below, &t).unwrap() != AffectLabel::Delight, "59 delight frames suffice");
    // Codomain.
    let mut reached = std::collections::BTreeSet::new();
    for _ in 0..PROPERTY_CASES {
        let frames: Vec<Option<AffectLabel>> = (0..150).map(|_| rng.random_bool(0.8).then(|| pick(&mut rng))).collect();
        let got = window_label(&frames, &t).map_err(|e| e.to_string())?;
        ensure!(AffectLabel::ALL.contains(&got), "{got:?} outside the label set");
        reached.insert(got);
    }
    for l in AffectLabel::FRAME_LABELS {
        reached.insert(window_label(&vec![Some(l); 150], &t).unwrap());
    }
    reached.insert(window_label(&vec![None; 150], &t).unwrap());
    ensure!(reached.len() == AffectLabel::ALL.len(), "reached {} of 11 labels", reached.len());
    // Partition on the 0.01 grid.
    let mut seen = std::collections::BTreeSet::new();
    for i in -100..=100 {
        for j in -100..=100 {
            let (v, a) = (i as f64 / 100.0, j as f64 / 100.0);
            let got = frame_label(v, a, &t).map_err(|e| e.to_string())?;
            ensure!(regions(v, a) == vec![got], "({v}, {a}) gave {got:?}, regions {:?}", regions(v, a));
            seen.insert(got);
        }
    }
    Ok(format!("dominance, 60-frame delight ({PROPERTY_CASES} cases), {} labels reached, {} grid labels partition 201x201", reached.len(), seen.len()))
}

fn random_lane(rng: &mut ChaCha8Rng) -> Lane {
    let mut t = 0u32;
    let segs = (0..rng.random_range(0..40))
        .map(|_| {
            t += if rng.random_bool(0.3) { 37 } else { 0 };
            let len = rng.random_range(1..800);
            let s = Segment::new(t as f64 / 100.0, (t + len) as f64 / 100.0, ["a", "b", "c", "d"][rng.random_range(0..4)]);
            t += len;
            s
        })
        .collect();
    Lane::segments(LaneKind::Affect, Some("s1"), segs)
}

fn timeline_determinism() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..PROPERTY_CASES {
        let lane = random_lane(&mut rng);
        let res = rng.random_range(0.02..30.0);
        let once = resample_lane(&lane, res).map_err(|e| e.to_string())?;
        ensure!(resample_lane(&once, res).unwrap() == once, "case {case}: resample not idempotent at {res}");
        let LaneData::Segments(segs) = &lane.data else { unreachable!() };
        let fine = segs.iter().map(Segment::duration).fold(1.0, f64::min);
        ensure!(resample_lane(&lane, fine).unwrap() == lane, "case {case}: resample at {fine} changed the lane");
        let t = Timeline { session: "p".into(), duration: 600.0, resolution: 1.0 / 30.0, lanes: vec![lane] };
        let text = serialize(&t);
        ensure!(serialize(&Timeline::from_json(&text).unwrap()) == text, "case {case}: round trip changed bytes");
    }

    let ws = Workspace::new();
    let dir = ws.processed(&builtin::golden());
    let produced = std::fs::read_to_string(dir.join(TIMELINE_FILE)).unwrap();
    ensure!(serialize(&Timeline::from_json(&produced).unwrap()) + "\n" == produced, "golden timeline not byte-stable");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(Path::new(GOLDEN_TIMELINE).parent().unwrap()).unwrap();
        std::fs::write(GOLDEN_TIMELINE, &produced).unwrap();
    }
    let frozen = std::fs::read_to_string(GOLDEN_TIMELINE).map_err(|e| format!("{GOLDEN_TIMELINE}: {e}"))?;
    ensure!(produced == frozen, "golden timeline differs from the frozen file");
    Ok(format!("{PROPERTY_CASES} random lanes idempotent and fine-identity, golden timeline matches ({} bytes)", frozen.len()))
}

fn narrative_metrics() -> Outcome {
    let ws = Workspace::new();
    let analysis = analyze(&ws.fixture(&builtin::narrative())).map_err(|e| e.to_string())?;
    let got: Vec<(Option<f64>, usize, usize)> = ["s1", "s2", "s3"]
        .iter()
        .map(|s| {
            let m = &analysis.metrics[*s];
            (m.first_transition_latency, m.cycles_completed, m.successful_transitions)
        })
        .collect();
    let want = vec![(Some(12.0), 8, 44), (Some(120.0), 3, 15), (Some(300.0), 1, 7)];
    ensure!(got == want, "got {got:?}");
    Ok("first transitions 12/120/300 s, cycles 8/3/1, successes 44/15/7".into())
}

fn performance() -> Outcome {
    let ws = Workspace::new();
    let spec = builtin::perf();
    let manifest = ws.fixture(&spec);
    let rows = std::fs::read_to_string(manifest.with_file_name("detections_cam0.csv")).unwrap().lines().count() - 1;
    let started = Instant::now();
    mmtl_server::store::process_session(&manifest, &ws.root()).map_err(|e| e.to_string())?;
    let processing = started.elapsed();

    let router = ws.router();
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let uri = format!("/sessions/{}/timeline", spec.name);
    let (query, bytes) = runtime.block_on(async {
        let _ = common::get(&router, &uri).await;
        let started = Instant::now();
        let reply = common::get(&router, &uri).await;
        (started.elapsed(), if reply.status == StatusCode::OK { Some(reply.body.len()) } else { None })
    });
    let bytes = bytes.ok_or("timeline query failed")?;
    let detail = format!(
        "{rows} records processed in {:.2} s, full timeline ({bytes} bytes) served in {} ms",
        processing.as_secs_f64(),
        query.as_millis()
    );
    ensure!(rows >= 200_000 && processing < Duration::from_secs(60) && query < Duration::from_millis(200), "{detail}");
    Ok(detail)
}

fn no_ui_needed() -> Outcome {
    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap();
    let members: Vec<_> = std::fs::read_dir(crates).unwrap().map(|e| e.unwrap().path()).collect();
    for m in &members {
        ensure!(m.join("Cargo.toml").is_file() && !m.join("package.json").exists(), "{} is not a Rust crate", m.display());
    }
    Ok(format!("all {} workspace members are Rust crates", members.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("re-identification benchmark", re_identification),
        ("zero-noise round trip", zero_noise_round_trip),
        ("gaze geometry oracle", gaze_oracle),
        ("affect rule fidelity", affect_rules),
        ("timeline determinism", timeline_determinism),
        ("narrative metrics", narrative_metrics),
        ("performance", performance),
        ("no UI component", no_ui_needed),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
