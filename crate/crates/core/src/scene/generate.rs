//! Seeded synthetic table and bookshelf scenes.
//!
//! Primitives are placed by seeded sampling; splats are produced directly on
//! the primitive surfaces (jittered grid, flat splats aligned with the surface
//! normal, opacity 1). The robot starts at the origin facing +x, and every
//! scene sits beyond the arm's reach from there.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::primitives::StartState;
use super::{Primitive, PrimitiveScene, PrimitiveShape, SceneFile, Splat, SplatKind, SplatScene};
use crate::pose::Pose;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Table,
    Bookshelf,
}

impl std::fmt::Display for SceneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SceneKind::Table => "table",
            SceneKind::Bookshelf => "bookshelf",
        })
    }
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(SceneKind::Table),
            "bookshelf" => Ok(SceneKind::Bookshelf),
            other => Err(Error::InvalidArgument(format!("unknown scene kind '{other}'"))),
        }
    }
}

fn default_spacing() -> f64 {
    0.02
}

fn default_clutter() -> usize {
    8
}

fn default_targets() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub seed: u64,
    #[serde(default = "default_clutter")]
    pub clutter: usize,
    /// Surface sampling spacing in metres.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Number of reaching targets per scene.
    #[serde(default = "default_targets")]
    pub targets: usize,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        SceneSpec {
            kind,
            seed,
            clutter: default_clutter(),
            spacing: default_spacing(),
            targets: default_targets(),
        }
    }

    pub fn id(&self) -> String {
        format!("{}_{:06}", self.kind, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub splats: SplatScene,
    pub primitives: PrimitiveScene,
    pub file: SceneFile,
}

const MAX_ATTEMPTS: usize = 40;
const TARGET_TRIES: usize = 60;
/// Splat standard deviation relative to the sampling spacing.
const SIGMA_PER_SPACING: f64 = 0.5;

pub fn generate_synthetic_scene(spec: &SceneSpec) -> Result<GeneratedScene> {
    if !(spec.spacing > 1e-3 && spec.spacing.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spacing must be > 1 mm, got {}",
            spec.spacing
        )));
    }
    if spec.targets == 0 {
        return Err(Error::InvalidArgument("at least one target is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut last_reason = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let layout = match spec.kind {
            SceneKind::Table => table_layout(&mut rng, spec.clutter),
            SceneKind::Bookshelf => shelf_layout(&mut rng, spec.clutter),
        };
        let gt = PrimitiveScene::new(layout.primitives.clone(), Isometry3::identity())?;
        let target = (0..TARGET_TRIES)
            .map(|_| (layout.sample_target)(&mut rng))
            .find(|t| target_is_clear(&gt, t));
        let Some(target) = target else {
            last_reason = "no collision-free target found".into();
            continue;
        };
        let primitives = PrimitiveScene::new(layout.primitives.clone(), target)?;
        let splats = sample_splats(&primitives, spec.spacing, &mut rng);
        let splats = SplatScene::new(splats)?;
        let mut extra_targets = Vec::new();
        for _ in 0..TARGET_TRIES * spec.targets.saturating_sub(1) {
            if extra_targets.len() + 1 >= spec.targets {
                break;
            }
            let t = (layout.sample_target)(&mut rng);
            if target_is_clear(&gt, &t) {
                extra_targets.push(Pose::from(&t));
            }
        }
        if extra_targets.len() + 1 < spec.targets {
            last_reason = format!("found only {} of {} targets", extra_targets.len() + 1, spec.targets);
            continue;
        }
        let file = SceneFile {
            id: Some(spec.id()),
            primitives: layout.primitives,
            target_pose: Pose::from(&target),
            extra_targets,
            start: Some(StartState {
                base: [0.0, 0.0, 0.0],
                arm: None,
            }),
            generator: Some(spec.clone()),
        };
        return Ok(GeneratedScene {
            splats,
            primitives,
            file,
        });
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        reason: last_reason,
    })
}

/// Gripper envelope in the target frame (z along the approach axis, fingers
/// along y): sample points and the free radius required around each.
const GRIPPER_ENVELOPE: [([f64; 3], f64); 9] = [
    ([0.0, 0.0, 0.0], 0.06),
    ([0.0, 0.03, -0.005], 0.06),
    ([0.0, -0.03, -0.005], 0.06),
    ([0.0, 0.0, -0.075], 0.08),
    ([0.0, 0.08, -0.075], 0.08),
    ([0.0, -0.08, -0.075], 0.08),
    ([0.0, 0.0, -0.16], 0.09),
    ([0.0, 0.0, -0.25], 0.10),
    ([0.0, 0.0, -0.35], 0.10),
];

/// Checks that a generic parallel gripper and the wrist behind it fit at the target.
fn target_is_clear(gt: &PrimitiveScene, target: &Isometry3<f64>) -> bool {
    GRIPPER_ENVELOPE.iter().all(|(p, free)| {
        let w = target * nalgebra::Point3::from(Vector3::from(*p));
        gt.distance(&w.coords) >= *free
    })
}

type TargetSampler = Box<dyn Fn(&mut ChaCha8Rng) -> Isometry3<f64>>;

struct Layout {
    primitives: Vec<Primitive>,
    sample_target: TargetSampler,
}

fn yaw(angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle)
}

fn placed(frame: &Isometry3<f64>, local: Vector3<f64>, local_yaw: f64) -> Isometry3<f64> {
    frame * Isometry3::from_parts(Translation3::from(local), yaw(local_yaw))
}

/// Non-overlapping footprint placement on a rectangle `[x0, x1] x [y0, y1]`.
fn place_clutter(
    rng: &mut ChaCha8Rng,
    frame: &Isometry3<f64>,
    count: usize,
    area: [f64; 4],
    base_z: f64,
    max_height: f64,
) -> Vec<Primitive> {
    let mut placed_rects: Vec<[f64; 4]> = Vec::new();
    let mut out = Vec::new();
    for _ in 0..count {
        for _ in 0..30 {
            let is_box = rng.random_bool(0.6);
            let (half, dims): (f64, Vec<f64>) = if is_box {
                let w: f64 = rng.random_range(0.05..0.18);
                let d = rng.random_range(0.05..0.18);
                let h = rng.random_range(0.05..max_height);
                (0.5 * w.hypot(d), vec![w, d, h])
            } else {
                let r = rng.random_range(0.03..0.08);
                let h = rng.random_range(0.08_f64.min(max_height * 0.9)..max_height);
                (r, vec![r, h])
            };
            if area[1] - area[0] < 2.0 * half || area[3] - area[2] < 2.0 * half {
                continue;
            }
            let x = rng.random_range(area[0] + half..area[1] - half);
            let y = rng.random_range(area[2] + half..area[3] - half);
            let rect = [x - half, x + half, y - half, y + half];
            let overlaps = placed_rects.iter().any(|r| {
                rect[0] < r[1] + 0.02 && r[0] < rect[1] + 0.02 && rect[2] < r[3] + 0.02 && r[2] < rect[3] + 0.02
            });
            if overlaps {
                continue;
            }
            let spin = rng.random_range(-PI..PI);
            let h = if is_box { dims[2] } else { dims[1] };
            let pose = placed(frame, Vector3::new(x, y, base_z + 0.5 * h), spin);
            out.push(if is_box {
                Primitive::cuboid(pose, [dims[0], dims[1], dims[2]])
            } else {
                Primitive::cylinder(pose, dims[0], dims[1])
            });
            placed_rects.push(rect);
            break;
        }
    }
    out
}

fn table_layout(rng: &mut ChaCha8Rng, clutter: usize) -> Layout {
    let depth = rng.random_range(0.6..0.9);
    let length = rng.random_range(1.0..1.4);
    let height = rng.random_range(0.70..0.80);
    let centre_x = rng.random_range(1.5..1.9) + 0.5 * depth;
    let centre_y = rng.random_range(-0.3..0.3);
    let table_yaw = rng.random_range(-0.25..0.25);
    let frame = Isometry3::from_parts(Translation3::new(centre_x, centre_y, 0.0), yaw(table_yaw));

    let top_t = 0.04;
    let leg = 0.05;
    let mut prims = vec![Primitive::cuboid(
        placed(&frame, Vector3::new(0.0, 0.0, height - 0.5 * top_t), 0.0),
        [depth, length, top_t],
    )];
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            let x = sx * (0.5 * depth - 0.05);
            let y = sy * (0.5 * length - 0.05);
            prims.push(Primitive::cuboid(
                placed(&frame, Vector3::new(x, y, 0.5 * (height - top_t)), 0.0),
                [leg, leg, height - top_t],
            ));
        }
    }
    let inset = 0.05;
    prims.extend(place_clutter(
        rng,
        &frame,
        clutter,
        [
            -0.5 * depth + inset,
            0.5 * depth - inset,
            -0.5 * length + inset,
            0.5 * length - inset,
        ],
        height,
        0.30,
    ));

    let sample_target: TargetSampler = Box::new(move |rng: &mut ChaCha8Rng| {
        let near = -0.5 * depth;
        let x = rng.random_range(near + 0.10..near + (depth - 0.1).min(0.65));
        let y = rng.random_range(-0.5 * length + 0.15..0.5 * length - 0.15);
        let z = height + rng.random_range(0.06..0.22);
        let spin = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let tilt = rng.random_range(-0.4..0.4);
        let down = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI + tilt);
        let rot = yaw(table_yaw + spin) * down;
        Isometry3::from_parts(
            Translation3::from(frame * nalgebra::Point3::new(x, y, z)).into(),
            rot,
        )
    });
    Layout {
        primitives: prims,
        sample_target,
    }
}

fn shelf_layout(rng: &mut ChaCha8Rng, clutter: usize) -> Layout {
    let width = rng.random_range(0.8..1.2);
    let depth = rng.random_range(0.35..0.45);
    let height = rng.random_range(1.6..1.9);
    let front_x = rng.random_range(1.5..1.8);
    let centre_y = rng.random_range(-0.3..0.3);
    let shelf_yaw = rng.random_range(-0.2..0.2);
    // local frame: origin on the floor at the middle of the front face, x into the shelf
    let frame = Isometry3::from_parts(Translation3::new(front_x, centre_y, 0.0), yaw(shelf_yaw));
    let t = 0.02;
    let plinth = 0.10;
    let levels = 4usize;
    let comp_h = (height - plinth - t) / levels as f64;

    let mut prims = Vec::new();
    let board = |z: f64| {
        Primitive::cuboid(
            placed(&frame, Vector3::new(0.5 * depth, 0.0, z), 0.0),
            [depth, width, t],
        )
    };
    for i in 0..=levels {
        prims.push(board(plinth + 0.5 * t + i as f64 * comp_h));
    }
    for side in [-1.0, 1.0] {
        prims.push(Primitive::cuboid(
            placed(&frame, Vector3::new(0.5 * depth, side * (0.5 * width + 0.5 * t), 0.5 * height), 0.0),
            [depth, t, height],
        ));
    }
    prims.push(Primitive::cuboid(
        placed(&frame, Vector3::new(depth + 0.5 * t, 0.0, 0.5 * height), 0.0),
        [t, width + 2.0 * t, height],
    ));
    // plinth front so the base cannot drive under the bottom board
    prims.push(Primitive::cuboid(
        placed(&frame, Vector3::new(0.5 * t, 0.0, 0.5 * plinth), 0.0),
        [t, width, plinth],
    ));

    let inner = [0.02, depth - 0.02, -0.5 * width + 0.02, 0.5 * width - 0.02];
    let mut per_level = vec![0usize; levels];
    for _ in 0..clutter {
        per_level[rng.random_range(0..levels)] += 1;
    }
    for (i, &n) in per_level.iter().enumerate() {
        let base_z = plinth + t + i as f64 * comp_h;
        prims.extend(place_clutter(rng, &frame, n, inner, base_z, 0.6 * comp_h));
    }

    let reachable: Vec<usize> = (0..levels)
        .filter(|&i| {
            let mid = plinth + t + (i as f64 + 0.5) * comp_h;
            (0.35..=1.45).contains(&mid)
        })
        .collect();
    let sample_target: TargetSampler = Box::new(move |rng: &mut ChaCha8Rng| {
        let i = reachable[rng.random_range(0..reachable.len())];
        let base_z = plinth + t + i as f64 * comp_h;
        let x = rng.random_range(0.05..0.25);
        let y = rng.random_range(-0.5 * width + 0.2..0.5 * width - 0.2);
        let z = base_z + comp_h * rng.random_range(0.40..0.55);
        let forward = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2);
        Isometry3::from_parts(
            Translation3::from(frame * nalgebra::Point3::new(x, y, z)).into(),
            yaw(shelf_yaw) * forward,
        )
    });
    Layout {
        primitives: prims,
        sample_target,
    }
}

/// Surface sample: position, unit normal and a unit tangent.
struct SurfacePoint {
    p: Vector3<f64>,
    n: Vector3<f64>,
    u: Vector3<f64>,
}

fn jitter(rng: &mut ChaCha8Rng, spacing: f64) -> f64 {
    rng.random_range(-0.25..0.25) * spacing
}

fn sample_rect(
    rng: &mut ChaCha8Rng,
    out: &mut Vec<SurfacePoint>,
    centre: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    half_u: f64,
    half_v: f64,
    spacing: f64,
) {
    let n = u.cross(&v);
    let nu = ((2.0 * half_u) / spacing).ceil().max(1.0) as usize;
    let nv = ((2.0 * half_v) / spacing).ceil().max(1.0) as usize;
    let du = 2.0 * half_u / nu as f64;
    let dv = 2.0 * half_v / nv as f64;
    for i in 0..nu {
        for j in 0..nv {
            let a = (-half_u + (i as f64 + 0.5) * du + jitter(rng, du)).clamp(-half_u, half_u);
            let b = (-half_v + (j as f64 + 0.5) * dv + jitter(rng, dv)).clamp(-half_v, half_v);
            out.push(SurfacePoint {
                p: centre + u * a + v * b,
                n,
                u,
            });
        }
    }
}

fn sample_primitive(rng: &mut ChaCha8Rng, prim: &Primitive, spacing: f64) -> Vec<SurfacePoint> {
    let iso = prim.pose.to_isometry().expect("validated primitive pose");
    let r = iso.rotation.to_rotation_matrix();
    let axes = [r * Vector3::x(), r * Vector3::y(), r * Vector3::z()];
    let c = iso.translation.vector;
    let mut out = Vec::new();
    match prim.shape {
        PrimitiveShape::Box => {
            let h = [0.5 * prim.dims[0], 0.5 * prim.dims[1], 0.5 * prim.dims[2]];
            for k in 0..3 {
                let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                for sign in [-1.0, 1.0] {
                    // (u, v) ordered so that u x v is the outward normal
                    let (u, v, hu, hv) = if sign > 0.0 {
                        (axes[a], axes[b], h[a], h[b])
                    } else {
                        (axes[b], axes[a], h[b], h[a])
                    };
                    sample_rect(rng, &mut out, c + axes[k] * (sign * h[k]), u, v, hu, hv, spacing);
                }
            }
        }
        PrimitiveShape::Cylinder => {
            let (radius, height) = (prim.dims[0], prim.dims[1]);
            let n_theta = ((2.0 * PI * radius) / spacing).ceil().max(3.0) as usize;
            let n_z = (height / spacing).ceil().max(1.0) as usize;
            let dz = height / n_z as f64;
            let dtheta = 2.0 * PI / n_theta as f64;
            for i in 0..n_theta {
                for j in 0..n_z {
                    let theta = (i as f64 + 0.5) * dtheta + jitter(rng, dtheta);
                    let z = (-0.5 * height + (j as f64 + 0.5) * dz + jitter(rng, dz))
                        .clamp(-0.5 * height, 0.5 * height);
                    let radial = axes[0] * theta.cos() + axes[1] * theta.sin();
                    out.push(SurfacePoint {
                        p: c + radial * radius + axes[2] * z,
                        n: radial,
                        u: axes[2].cross(&radial),
                    });
                }
            }
            for sign in [-1.0, 1.0] {
                let cap = c + axes[2] * (sign * 0.5 * height);
                let n = axes[2] * sign;
                out.push(SurfacePoint { p: cap, n, u: axes[0] });
                let rings = (radius / spacing).ceil().max(1.0) as usize;
                for ring in 1..=rings {
                    let rr = radius * ring as f64 / rings as f64;
                    let count = ((2.0 * PI * rr) / spacing).ceil().max(3.0) as usize;
                    for m in 0..count {
                        let theta = 2.0 * PI * (m as f64 + 0.5) / count as f64;
                        let radial = axes[0] * theta.cos() + axes[1] * theta.sin();
                        out.push(SurfacePoint {
                            p: cap + radial * rr,
                            n,
                            u: radial,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Flat, fully opaque splats on all visible primitive surfaces.
fn sample_splats(scene: &PrimitiveScene, spacing: f64, rng: &mut ChaCha8Rng) -> Vec<Splat> {
    let sigma = SIGMA_PER_SPACING * spacing;
    let mut splats = Vec::new();
    for (i, prim) in scene.primitives().iter().enumerate() {
        for sp in sample_primitive(rng, prim, spacing) {
            // drop samples buried in, or pressed against, another primitive
            let hidden = (0..scene.primitives().len())
                .filter(|&j| j != i)
                .any(|j| scene.primitive_sdf(j, &sp.p).0 < 0.25 * spacing);
            if hidden {
                continue;
            }
            let v = sp.n.cross(&sp.u);
            let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[sp.u, v, sp.n]));
            let q = UnitQuaternion::from_rotation_matrix(&rot);
            splats.push(Splat {
                mean: sp.p,
                scales: Vector3::new(sigma, sigma, 0.0),
                rotation: q,
                opacity: 1.0,
                kind: SplatKind::Flat,
            });
        }
    }
    splats
}
