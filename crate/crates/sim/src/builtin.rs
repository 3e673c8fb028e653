//! Bundled scenarios.

use mmtl_core::gaze3d::{Axis, FloorPlane, Ooi, OoiShape, SceneModel};
use mmtl_core::ingest::CameraIntrinsics;
use mmtl_core::simlog::ModelSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::spec::{ActivityPlan, AffectSpan, AgentScript, GazeSpan, ScenarioSpec, Waypoint};

pub const BENCHMARK_SIZE: usize = 20;

/// Names accepted by [`builtin`]; benchmark members are `benchmark-00` ..
/// `benchmark-19`.
pub const NAMES: [&str; 5] = ["golden", "narrative", "stationary", "perf", "benchmark-NN"];

/// Seated head height (camera frame, +Y down) and floor.
const SEATED_Y: f64 = 0.4;
const FLOOR_Y: f64 = 1.6;

pub fn builtin(name: &str) -> Option<ScenarioSpec> {
    match name {
        "golden" => Some(golden()),
        "narrative" => Some(narrative()),
        "stationary" => Some(stationary()),
        "perf" => Some(perf()),
        _ => {
            let i: usize = name.strip_prefix("benchmark-")?.parse().ok()?;
            (i < BENCHMARK_SIZE).then(|| benchmark(i))
        }
    }
}

/// Front screen, a teacher desk between the screen and the students, and a
/// poster on the right wall.
pub fn classroom() -> SceneModel {
    SceneModel {
        camera_id: None,
        floor: FloorPlane { y: FLOOR_Y },
        person_width: 0.5,
        head_margin: 0.15,
        oois: vec![
            Ooi {
                name: "screen".into(),
                shape: OoiShape::Rect { axis: Axis::Z, at: 0.3, min: [-2.0, -0.6], max: [2.0, 0.9] },
            },
            Ooi { name: "desk".into(), shape: OoiShape::Box { min: [-0.6, 1.0, 1.4], max: [0.6, 1.6, 2.0] } },
            Ooi {
                name: "poster".into(),
                shape: OoiShape::Rect { axis: Axis::X, at: 3.0, min: [-0.5, 2.0], max: [0.5, 4.5] },
            },
        ],
    }
}

fn base(name: &str, seed: u64, duration: f64, scene: SceneModel, students: Vec<AgentScript>) -> ScenarioSpec {
    ScenarioSpec {
        name: name.into(),
        seed,
        duration,
        fps: 30,
        camera_id: "cam0".into(),
        start_offset_seconds: 0.0,
        intrinsics: CameraIntrinsics::for_image(1920, 1080),
        bbox_size_px: 80.0,
        noise_px: 0.0,
        scene,
        students,
        night: Vec::new(),
        log: Vec::new(),
        model: ModelSpec::photosynthesis(),
        emit_corrections: true,
    }
}

fn gaze(spans: &[(f64, f64, Option<&str>)]) -> Vec<GazeSpan> {
    spans.iter().map(|&(start, end, t)| GazeSpan { start, end, target: t.map(String::from) }).collect()
}

/// Affect point for a declared frame label.
fn mood(label: &str) -> (f64, f64) {
    match label {
        "Engagement" => (0.0, 0.0),
        "Delight" => (0.6, 0.6),
        "Confusion" => (-0.5, 0.2),
        "Frustration" => (-0.5, 0.5),
        "Boredom" => (-0.4, -0.4),
        "Q1PleasantActive" => (0.5, 0.1),
        "Q4PleasantSerene" => (0.5, -0.5),
        other => panic!("no preset for {other}"),
    }
}

fn affect(spans: &[(f64, f64, &str)]) -> Vec<AffectSpan> {
    spans
        .iter()
        .map(|&(start, end, label)| {
            let (valence, arousal) = mood(label);
            AffectSpan { start, end, valence, arousal, label: Some(label.into()) }
        })
        .collect()
}

fn still(x: f64, z: f64) -> Vec<Waypoint> {
    vec![Waypoint { t: 0.0, pos: [x, SEATED_Y, z] }]
}

fn plan(start: f64, after: f64, step: f64, cycles: usize, successes: usize, failures: usize, invalid: usize) -> ActivityPlan {
    ActivityPlan {
        start,
        first_transition_after: after,
        step_seconds: step,
        cycles,
        successes,
        failures,
        invalid_successes: invalid,
    }
}

/// Three students, 30 s, no noise: looking at objects and each other,
/// one long and one short absence, every affect label path, a night period.
pub fn golden() -> ScenarioSpec {
    let s1 = AgentScript {
        id: "s1".into(),
        waypoints: vec![
            Waypoint { t: 0.0, pos: [-1.0, SEATED_Y, 3.0] },
            Waypoint { t: 20.0, pos: [-1.2, SEATED_Y, 3.0] },
            Waypoint { t: 30.0, pos: [-1.0, SEATED_Y, 3.0] },
        ],
        gaze: gaze(&[
            (0.0, 8.0, Some("screen")),
            (8.0, 12.0, Some("s2")),
            (12.0, 20.0, Some("desk")),
            (20.0, 24.0, None),
            (24.0, 30.0, Some("screen")),
        ]),
        affect: affect(&[
            (0.0, 10.0, "Engagement"),
            (10.0, 12.0, "Delight"),
            (12.0, 15.0, "Engagement"),
            (15.0, 25.0, "Boredom"),
            (25.0, 30.0, "Q1PleasantActive"),
        ]),
        absent: Vec::new(),
        activity: Some(plan(1.0, 3.0, 2.0, 1, 8, 1, 1)),
    };
    let s2 = AgentScript {
        id: "s2".into(),
        waypoints: vec![
            Waypoint { t: 0.0, pos: [0.0, SEATED_Y, 3.0] },
            Waypoint { t: 16.0, pos: [0.0, SEATED_Y, 3.0] },
            Waypoint { t: 17.0, pos: [0.0, 0.0, 3.0] },
        ],
        gaze: gaze(&[
            (0.0, 10.0, Some("screen")),
            (10.0, 18.0, Some("desk")),
            (18.0, 22.0, Some("screen")),
            (22.0, 26.0, Some("s3")),
            (26.0, 30.0, Some("s1")),
        ]),
        affect: affect(&[(0.0, 5.0, "Confusion"), (5.0, 30.0, "Engagement")]),
        absent: vec![[12.0, 14.0]],
        activity: Some(plan(9.0, 5.0, 2.5, 0, 3, 2, 0)),
    };
    let s3 = AgentScript {
        id: "s3".into(),
        waypoints: still(1.0, 3.0),
        gaze: gaze(&[
            (0.0, 6.0, Some("screen")),
            (6.0, 14.0, Some("poster")),
            (14.0, 20.0, Some("s2")),
            (20.0, 30.0, Some("desk")),
        ]),
        affect: affect(&[(0.0, 10.0, "Frustration"), (10.0, 20.0, "Q4PleasantSerene"), (20.0, 30.0, "Engagement")]),
        absent: vec![[20.0, 20.5]],
        activity: Some(plan(0.5, 2.0, 2.0, 2, 8, 0, 0)),
    };
    let mut spec = base("golden", 7, 30.0, classroom(), vec![s1, s2, s3]);
    spec.night = vec![[14.0, 18.0]];
    spec
}

/// Three students whose activity reproduces a classroom narrative: first
/// transitions after 12 s, 120 s and 300 s; 8, 3 and 1 cycles; 44, 15 and
/// 7 successful transitions.
pub fn narrative() -> ScenarioSpec {
    let duration = 420.0;
    let student = |id: &str, x: f64, activity: ActivityPlan| AgentScript {
        id: id.into(),
        waypoints: still(x, 3.0),
        gaze: gaze(&[(0.0, duration, Some("screen"))]),
        affect: affect(&[(0.0, duration, "Engagement")]),
        absent: Vec::new(),
        activity: Some(activity),
    };
    let mut spec = base(
        "narrative",
        11,
        duration,
        classroom(),
        vec![
            student("s1", -1.0, plan(3.0, 12.0, 6.0, 8, 44, 3, 2)),
            student("s2", 0.0, plan(10.0, 120.0, 8.0, 3, 15, 1, 0)),
            student("s3", 1.0, plan(20.0, 300.0, 10.0, 1, 7, 0, 0)),
        ],
    );
    spec.night = vec![[200.0, 230.0]];
    spec
}

/// One student sitting still for 10 s.
pub fn stationary() -> ScenarioSpec {
    let s = AgentScript {
        id: "s1".into(),
        waypoints: still(0.0, 2.5),
        gaze: gaze(&[(0.0, 10.0, Some("screen"))]),
        affect: affect(&[(0.0, 10.0, "Engagement")]),
        absent: Vec::new(),
        activity: None,
    };
    base("stationary", 1, 10.0, classroom(), vec![s])
}

/// Staggered seats: the front row at 2.5 m, the back rows offset by half a
/// seat so no two heads line up in the image.
const SEATS: [[f64; 2]; 7] = [[-1.5, 2.5], [-0.5, 2.5], [0.5, 2.5], [1.5, 2.5], [-1.0, 3.5], [0.0, 3.5], [1.0, 3.5]];

/// Depth of the rear of the room, where benchmark walks go.
const REAR_Z: f64 = 5.0;

/// Benchmark walks begin after this time; the crossing ends before it.
const WALKS_FROM: f64 = 28.0;

/// Benchmark member `index`: 2 to 7 students, 60 s, seated with walks
/// to the rear of the room, one scripted crossing, absences up to 2 s, and 3 px
/// center noise.
pub fn benchmark(index: usize) -> ScenarioSpec {
    let duration = 60.0;
    let seed = 1000 + index as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 + index % 6;
    let mut seats: Vec<[f64; 2]> = SEATS.to_vec();
    for i in (1..seats.len()).rev() {
        seats.swap(i, rng.random_range(0..=i));
    }

    let mut students: Vec<AgentScript> = Vec::with_capacity(n);
    for (i, seat) in seats.iter().take(n).enumerate() {
        let standing = rng.random_range(-0.15..0.05);
        let home = [seat[0], SEATED_Y, seat[1]];
        let mut waypoints = vec![Waypoint { t: 0.0, pos: home }];
        // Walks start after the scripted crossing has finished.
        let mut t = rng.random_range(WALKS_FROM..WALKS_FROM + 7.0);
        while t < duration - 12.0 {
            // Straight back between the seats to the rear of the room.
            let dest = [home[0], standing, REAR_Z];
            let travel = walk_time(&home, &dest);
            let stay = rng.random_range(2.0..5.0);
            waypoints.push(Waypoint { t, pos: [home[0], standing, home[2]] });
            waypoints.push(Waypoint { t: t + 1.0 + travel, pos: dest });
            waypoints.push(Waypoint { t: t + 1.0 + travel + stay, pos: dest });
            let back = t + 2.0 + 2.0 * travel + stay;
            waypoints.push(Waypoint { t: back, pos: [home[0], standing, home[2]] });
            waypoints.push(Waypoint { t: back + 1.0, pos: home });
            t = back + 1.0 + rng.random_range(5.0..20.0);
        }
        let mut absent = Vec::new();
        for _ in 0..rng.random_range(0..3) {
            let a = rng.random_range(1.0..duration - 3.0);
            absent.push([a, a + rng.random_range(0.2..2.0)]);
        }
        students.push(AgentScript {
            id: format!("s{}", i + 1),
            waypoints,
            gaze: gaze(&[(0.0, duration, Some("screen"))]),
            affect: vec![AffectSpan {
                start: 0.0,
                end: duration,
                valence: rng.random_range(-0.9..0.9),
                arousal: rng.random_range(-0.9..0.9),
                label: None,
            }],
            absent,
            activity: None,
        });
    }

    // The first two students trade places and come back, crossing twice. They
    // walk in separate depth lanes: one in front of both seats, one behind.
    let (a, b) = (seats[0], seats[1]);
    let cross_start = rng.random_range(3.0..8.0);
    let front = a[1].min(b[1]) - 0.5;
    let back = a[1].max(b[1]);
    for (who, from, to, lane) in [(0, a, b, front), (1, b, a, back)] {
        let h = rng.random_range(-0.15..0.05);
        let travel = walk_time(&[from[0], h, lane], &[to[0], h, lane]);
        let step = |p: [f64; 2]| (p[1] - lane).abs() / 0.8;
        let (out, back_in) = (step(from), step(to));
        let at = |x: f64, z: f64| [x, h, z];
        let mut t = cross_start;
        let mut path = vec![(t, at(from[0], from[1]))];
        for (x, z, dt) in [
            (from[0], lane, 0.5 + out),
            (to[0], lane, travel),
            (to[0], to[1], back_in),
            (to[0], to[1], 2.0),
            (to[0], lane, back_in),
            (from[0], lane, travel),
            (from[0], from[1], out),
        ] {
            t += dt;
            path.push((t, at(x, z)));
        }
        path.push((t + 1.0, [from[0], SEATED_Y, from[1]]));
        debug_assert!(t + 1.0 < WALKS_FROM);
        students[who].waypoints.extend(path.into_iter().map(|(t, pos)| Waypoint { t, pos }));
    }
    for s in &mut students {
        s.waypoints.sort_by(|p, q| p.t.total_cmp(&q.t));
        s.waypoints.dedup_by(|p, q| p.t == q.t);
    }

    let mut spec = base(&format!("benchmark-{index:02}"), seed, duration, classroom(), students);
    spec.noise_px = 3.0;
    spec.emit_corrections = false;
    spec
}

/// Seconds to walk between two points at 0.8 m/s over the floor.
fn walk_time(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[2] - b[2]).powi(2)).sqrt() / 0.8
}

pub fn benchmark_suite() -> Vec<ScenarioSpec> {
    (0..BENCHMARK_SIZE).map(benchmark).collect()
}

/// Thirty minutes, four students: gaze and affect changing every few tens of
/// seconds, several absences, and activity throughout.
pub fn perf() -> ScenarioSpec {
    let duration = 1800.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let xs = [-1.5, -0.5, 0.5, 1.5];
    let moods = ["Engagement", "Delight", "Confusion", "Frustration", "Boredom", "Q1PleasantActive", "Q4PleasantSerene"];
    let targets = [Some("screen"), Some("desk"), None];
    let students = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut gaze_spans = Vec::new();
            let mut t: f64 = 0.0;
            while t < duration {
                let end = (t + rng.random_range(10.0..40.0)).min(duration);
                gaze_spans.push(GazeSpan { start: t, end, target: targets[rng.random_range(0..targets.len())].map(String::from) });
                t = end;
            }
            let mut affect_spans = Vec::new();
            let mut t: f64 = 0.0;
            while t < duration {
                let end = (t + rng.random_range(5.0..60.0)).min(duration);
                let label = moods[rng.random_range(0..moods.len())];
                let (valence, arousal) = mood(label);
                affect_spans.push(AffectSpan { start: t, end, valence, arousal, label: Some(label.into()) });
                t = end;
            }
            let absent = (0..4)
                .map(|k| {
                    let a = 300.0 * (k as f64 + 1.0) + rng.random_range(0.0..100.0);
                    [a, a + rng.random_range(0.5..3.0)]
                })
                .collect();
            AgentScript {
                id: format!("s{}", i + 1),
                waypoints: (0..=30)
                    .map(|k| Waypoint { t: 60.0 * k as f64, pos: [x + rng.random_range(-0.1..0.1), SEATED_Y, 3.0] })
                    .collect(),
                gaze: gaze_spans,
                affect: affect_spans,
                absent,
                activity: Some(plan(5.0 + i as f64, 20.0 + 30.0 * i as f64, 7.0, 20 - 3 * i, 90 - 10 * i, 5, 3)),
            }
        })
        .collect();
    let mut spec = base("perf", 4242, duration, classroom(), students);
    spec.night = vec![[600.0, 660.0], [1200.0, 1260.0]];
    spec
}
