//! Brute-force gaze oracle: march along the ray in fixed steps and test each
//! sample against every object, plus random scenes to run it on.

use mmtl_core::gaze3d::{person_name, Aabb, Axis, FloorPlane, Ooi, OoiShape, SceneModel, SELF_EXCLUSION};
use nalgebra::Vector3;
use rand::Rng;

/// Default march step, meters.
pub const MARCH_STEP: f64 = 0.001;
/// Perturbation a fixture must tolerate to count as having clearance.
pub const CLEARANCE: f64 = 0.002;
/// Farthest the march looks, meters.
pub const MARCH_RANGE: f64 = 12.0;

/// Object as the oracle sees it: a solid box, or a flat rectangle crossed
/// when consecutive samples straddle its plane inside its extent.
#[derive(Debug, Clone, PartialEq)]
enum Solid {
    Box(Aabb),
    Flat { axis: usize, at: f64, lo: [f64; 2], hi: [f64; 2] },
}

fn other_axes(axis: usize) -> [usize; 2] {
    match axis {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

impl Solid {
    fn from_shape(shape: &OoiShape) -> Solid {
        match *shape {
            OoiShape::Box { min, max } => Solid::Box(Aabb::new(min.into(), max.into())),
            OoiShape::Rect { axis, at, min, max } => {
                let axis = match axis {
                    Axis::X => 0,
                    Axis::Y => 1,
                    Axis::Z => 2,
                };
                Solid::Flat { axis, at, lo: min, hi: max }
            }
        }
    }

    /// Grow (positive) or shrink (negative) by `d` on every side with extent.
    fn inflate(&self, d: f64) -> Solid {
        match self {
            Solid::Box(b) => Solid::Box(Aabb::new(b.min.add_scalar(-d), b.max.add_scalar(d))),
            Solid::Flat { axis, at, lo, hi } => Solid::Flat {
                axis: *axis,
                at: *at,
                lo: [lo[0] - d, lo[1] - d],
                hi: [hi[0] + d, hi[1] + d],
            },
        }
    }

    /// Whether the step from `a` to `b` touches the object.
    fn touched(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
        match self {
            Solid::Box(bx) => bx.contains(b),
            Solid::Flat { axis, at, lo, hi } => {
                let (sa, sb) = (a[*axis] - at, b[*axis] - at);
                if sa * sb > 0.0 || (sa == 0.0 && sb == 0.0) {
                    return false;
                }
                let w = if sa == sb { 0.0 } else { sa / (sa - sb) };
                let p = a + (b - a) * w;
                other_axes(*axis).iter().zip(0..2).all(|(&i, j)| p[i] >= lo[j] && p[i] <= hi[j])
            }
        }
    }
}

/// A scene with the other students' volumes, flattened for marching.
#[derive(Debug, Clone)]
pub struct MarchScene {
    objects: Vec<(String, Solid)>,
}

impl MarchScene {
    pub fn new(scene: &SceneModel, others: &[(u64, Aabb)]) -> Self {
        let mut objects: Vec<(String, Solid)> =
            scene.oois.iter().map(|o| (o.name.clone(), Solid::from_shape(&o.shape))).collect();
        objects.extend(others.iter().map(|(id, b)| (person_name(*id), Solid::Box(*b))));
        MarchScene { objects }
    }

    fn inflated(&self, d: f64) -> MarchScene {
        MarchScene { objects: self.objects.iter().map(|(n, s)| (n.clone(), s.inflate(d))).collect() }
    }

    /// First object touched walking from `exclusion` out to [`MARCH_RANGE`]
    /// in steps of `step`, with the distance reached. Several objects touched
    /// at the same step resolve to the smallest name.
    pub fn march(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, exclusion: f64, step: f64) -> Option<(String, f64)> {
        let dir = dir.normalize();
        let steps = ((MARCH_RANGE - exclusion) / step).ceil() as usize;
        let mut prev = origin + dir * exclusion;
        // Already inside something at the exclusion boundary.
        let mut first = true;
        for k in 0..=steps {
            let t = exclusion + k as f64 * step;
            let p = origin + dir * t;
            let touched = self
                .objects
                .iter()
                .filter(|(_, s)| match s {
                    Solid::Box(b) => b.contains(&p),
                    flat if !first => flat.touched(&prev, &p),
                    _ => false,
                })
                .map(|(n, _)| n)
                .min();
            if let Some(name) = touched {
                return Some((name.clone(), t));
            }
            prev = p;
            first = false;
        }
        None
    }

    /// March result, provided it does not change when every object grows or
    /// shrinks by [`CLEARANCE`] or the exclusion distance moves by as much.
    pub fn march_with_clearance(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Option<(String, f64)>> {
        let base = self.march(origin, dir, SELF_EXCLUSION, MARCH_STEP);
        let name = |r: &Option<(String, f64)>| r.as_ref().map(|(n, _)| n.clone());
        let stable = [CLEARANCE, -CLEARANCE].iter().all(|&d| {
            name(&self.inflated(d).march(origin, dir, SELF_EXCLUSION, MARCH_STEP)) == name(&base)
                && name(&self.march(origin, dir, SELF_EXCLUSION + d, MARCH_STEP)) == name(&base)
        });
        stable.then_some(base)
    }
}

/// One random gaze query: a scene, other students, and a ray.
#[derive(Debug, Clone)]
pub struct GazeCase {
    pub scene: SceneModel,
    pub others: Vec<(u64, Aabb)>,
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

fn range<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Random room: boxes, wall rectangles and people, with a gaze ray aimed at
/// one of them most of the time.
pub fn random_case<R: Rng>(rng: &mut R) -> GazeCase {
    let floor = 1.6;
    let mut oois = Vec::new();
    for i in 0..rng.random_range(1..5) {
        let c = [range(rng, -3.0, 3.0), range(rng, -0.5, 1.2), range(rng, 0.5, 6.0)];
        let h = [range(rng, 0.05, 0.8), range(rng, 0.05, 0.4), range(rng, 0.05, 0.8)];
        oois.push(Ooi {
            name: format!("box{i}"),
            shape: OoiShape::Box {
                min: [c[0] - h[0], c[1] - h[1], c[2] - h[2]],
                max: [c[0] + h[0], (c[1] + h[1]).min(floor), c[2] + h[2]],
            },
        });
    }
    for i in 0..rng.random_range(0..3) {
        let axis = [Axis::X, Axis::Y, Axis::Z][rng.random_range(0..3)];
        let (at, a, b) = match axis {
            Axis::X => (range(rng, -4.0, 4.0), [-1.0, 0.5], [1.0, 6.0]),
            Axis::Y => (range(rng, -1.5, 1.5), [-3.0, 0.5], [3.0, 6.0]),
            Axis::Z => (range(rng, 0.3, 7.0), [-3.0, -1.0], [3.0, 1.5]),
        };
        let lo = [range(rng, a[0], 0.0), range(rng, a[1], (a[1] + b[1]) / 2.0)];
        let hi = [range(rng, lo[0] + 0.2, b[0] + 0.2), range(rng, lo[1] + 0.2, b[1] + 0.2)];
        oois.push(Ooi { name: format!("wall{i}"), shape: OoiShape::Rect { axis, at, min: lo, max: hi } });
    }
    let scene = SceneModel { camera_id: None, floor: FloorPlane { y: floor }, person_width: 0.5, head_margin: 0.15, oois };

    let origin = Vector3::new(range(rng, -2.0, 2.0), range(rng, 0.0, 0.6), range(rng, 1.5, 4.5));
    let mut others = Vec::new();
    for id in 1..=rng.random_range(0..4u64) {
        let head = Vector3::new(range(rng, -2.5, 2.5), range(rng, -0.2, 0.6), range(rng, 1.0, 5.5));
        if (head - origin).norm() < 0.8 {
            continue;
        }
        let half = scene.person_width / 2.0;
        others.push((
            id + 10,
            Aabb::new(
                Vector3::new(head.x - half, head.y - scene.head_margin, head.z - half),
                Vector3::new(head.x + half, floor, head.z + half),
            ),
        ));
    }

    let targets: Vec<Aabb> = scene.oois.iter().map(|o| o.shape.aabb()).chain(others.iter().map(|o| o.1)).collect();
    let direction = if rng.random_bool(0.75) {
        let b = targets[rng.random_range(0..targets.len())];
        let p = Vector3::from_fn(|i, _| if b.min[i] == b.max[i] { b.min[i] } else { range(rng, b.min[i], b.max[i]) });
        (p - origin).try_normalize(1e-9).unwrap_or_else(Vector3::z)
    } else {
        let v = Vector3::new(range(rng, -1.0, 1.0), range(rng, -1.0, 1.0), range(rng, -1.0, 1.0));
        v.try_normalize(1e-9).unwrap_or_else(Vector3::z)
    };
    GazeCase { scene, others, origin, direction }
}

/// Outcome of comparing `ray_cast` with the march on random cases.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// Cases with clearance that were compared.
    pub compared: usize,
    pub agreed: usize,
    /// Compared cases where the march hit something.
    pub hits: usize,
    /// Cases drawn but discarded for lack of clearance.
    pub discarded: usize,
    pub first_mismatch: Option<String>,
}

/// Compare `ray_cast` with the march on `cases` seeded random cases that
/// have clearance. Names must match and the hit distance must lie within one
/// step before the marched distance.
pub fn ray_cast_agreement(cases: usize, seed: u64) -> Agreement {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Agreement { compared: 0, agreed: 0, hits: 0, discarded: 0, first_mismatch: None };
    while out.compared < cases {
        let case = random_case(&mut rng);
        let march = MarchScene::new(&case.scene, &case.others);
        let Some(expected) = march.march_with_clearance(&case.origin, &case.direction) else {
            out.discarded += 1;
            continue;
        };
        out.compared += 1;
        out.hits += usize::from(expected.is_some());
        let got = mmtl_core::gaze3d::ray_cast(&case.origin, &case.direction, &case.scene, &case.others);
        let agrees = match (&got, &expected) {
            (None, None) => true,
            (Some(hit), Some((name, t))) => {
                hit.name == *name && hit.distance <= *t + 1e-9 && *t - hit.distance <= MARCH_STEP + 1e-9
            }
            // Hits beyond the march range are out of scope.
            (Some(hit), None) => hit.distance > MARCH_RANGE,
            (None, Some(_)) => false,
        };
        if agrees {
            out.agreed += 1;
        } else if out.first_mismatch.is_none() {
            out.first_mismatch = Some(format!("{case:?}: ray_cast {got:?}, march {expected:?}"));
        }
    }
    out
}

/// Largest `| |gaze_direction| - 1 |` over `n` seeded random angle pairs
/// drawn from [-2π, 2π]².
pub fn worst_direction_norm_error(n: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    (0..n)
        .map(|_| {
            let d = mmtl_core::gaze3d::gaze_direction(range(&mut rng, -tau, tau), range(&mut rng, -tau, tau))
                .expect("finite angles");
            (d.norm() - 1.0).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest pixel error of `project(back_project(p, depth))` over `n` seeded
/// random pixels and depths, for the given image.
pub fn worst_reprojection_error(n: usize, seed: u64, k: &mmtl_core::ingest::CameraIntrinsics) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let px = nalgebra::Point2::new(
                range(&mut rng, 0.0, k.image_width as f64),
                range(&mut rng, 0.0, k.image_height as f64),
            );
            let p = mmtl_core::gaze3d::back_project(px, range(&mut rng, 0.3, 20.0), k).expect("positive depth");
            let q = crate::project(&p, k).expect("in front of the camera");
            (q - px).norm()
        })
        .fold(0.0, f64::max)
}
