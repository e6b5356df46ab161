//! Median-depth rasterisation of splats into six-camera virtual distance sensors.
//!
//! Each robot sphere carries a cube of six 90 degree cameras at its centre.
//! A pixel's depth is the depth at which the accumulated transmittance along
//! its ray first drops to one half, so semi-transparent splats in front of an
//! opaque surface do not terminate the ray on their own.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{collect_ordered, BackendKind, DistanceBackend, DistanceResult, WorldSphere};
use crate::scene::{SplatKind, SplatScene};
use crate::{Error, Result};

pub const DEFAULT_RESOLUTION: usize = 16;
pub const DEFAULT_ALPHA_MIN: f64 = 1.0 / 255.0;

const NEAR: f64 = 1e-9;
const STOP_TRANSMITTANCE: f64 = 0.5 * (1.0 - 1e-6);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Pinhole camera with 90 degree horizontal and vertical field of view.
    pub fn fov90(width: usize, height: usize) -> Self {
        Intrinsics {
            width,
            height,
            fx: width as f64 / 2.0,
            fy: height as f64 / 2.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    /// Ray through the centre of pixel `(u, v)` with unit z component.
    pub fn ray(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new(
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        )
    }

    fn pixel_span(&self, lo: f64, hi: f64, focal: f64, centre: f64, size: usize) -> Option<(usize, usize)> {
        let first = (lo * focal + centre - 0.5).ceil().max(0.0);
        let last = (hi * focal + centre - 0.5).floor().min(size as f64 - 1.0);
        (first <= last).then_some((first as usize, last as usize))
    }

    /// Pixel range covering a ball of `radius` at lateral offset `c` and depth
    /// `z`, from the tangent lines through the camera centre.
    fn pixel_span_of_ball(&self, c: f64, z: f64, radius: f64, focal: f64, centre: f64, size: usize) -> Option<(usize, usize)> {
        let r = radius * (1.0 + 1e-9) + 1e-12;
        let d2 = c * c + z * z;
        if d2 <= r * r {
            return self.pixel_span(f64::NEG_INFINITY, f64::INFINITY, focal, centre, size);
        }
        if z > r {
            // Roots of (c - t z)^2 = r^2 (1 + t^2).
            let den = z * z - r * r;
            let root = r * (d2 - r * r).sqrt();
            return self.pixel_span((c * z - root) / den, (c * z + root) / den, focal, centre, size);
        }
        let mid = c.atan2(z);
        let half = (r / d2.sqrt()).asin();
        let (lo, hi) = (mid - half, mid + half);
        if lo >= FRAC_PI_2 || hi <= -FRAC_PI_2 {
            return None;
        }
        let slope = |a: f64| {
            if a >= FRAC_PI_2 {
                f64::INFINITY
            } else if a <= -FRAC_PI_2 {
                f64::NEG_INFINITY
            } else {
                a.tan()
            }
        };
        self.pixel_span(slope(lo), slope(hi), focal, centre, size)
    }
}

/// The six camera orientations of a sensor; their z axes cover `+-x, +-y, +-z`.
pub fn camera_rotations() -> [Rotation3<f64>; 6] {
    let rx = |a: f64| Rotation3::from_axis_angle(&Vector3::x_axis(), a);
    let ry = |a: f64| Rotation3::from_axis_angle(&Vector3::y_axis(), a);
    [rx(0.0), rx(FRAC_PI_2), rx(-FRAC_PI_2), ry(FRAC_PI_2), ry(PI), ry(3.0 * FRAC_PI_2)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpacityMode {
    /// `alpha = opacity * exp(-g / 2)` with `g` the squared Mahalanobis radius.
    #[default]
    Falloff,
    /// `alpha = opacity` anywhere inside the splat ellipsoid.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    /// Pixels per side of each camera.
    pub resolution: usize,
    pub alpha_min: f64,
    pub opacity_mode: OpacityMode,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            resolution: DEFAULT_RESOLUTION,
            alpha_min: DEFAULT_ALPHA_MIN,
            opacity_mode: OpacityMode::Falloff,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::InvalidArgument("raster resolution must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.alpha_min) {
            return Err(Error::InvalidArgument(format!("alpha_min {} outside [0, 1)", self.alpha_min)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualSensor {
    pub pose: Isometry3<f64>,
    pub radius: f64,
    pub intrinsics: Intrinsics,
    pub sphere_id: usize,
}

impl VirtualSensor {
    /// World-axis-aligned sensor at a robot sphere.
    pub fn at_sphere(sphere: &WorldSphere, resolution: usize) -> Self {
        VirtualSensor {
            pose: Isometry3::from_parts(Translation3::from(sphere.center), UnitQuaternion::identity()),
            radius: sphere.radius,
            intrinsics: Intrinsics::fov90(resolution, resolution),
            sphere_id: sphere.id,
        }
    }

    pub fn camera_pose(&self, camera: usize) -> Isometry3<f64> {
        let r = UnitQuaternion::from_rotation_matrix(&camera_rotations()[camera]);
        self.pose * Isometry3::from_parts(Translation3::identity(), r)
    }
}

/// Depth along the camera z axis per pixel, row-major; `+inf` means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Writes a little-endian greyscale PFM (rows bottom to top).
    pub fn write_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for v in (0..self.height).rev() {
            for u in 0..self.width {
                bytes.extend_from_slice(&(self.get(u, v) as f32).to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

/// Per-splat quantities relative to the camera centre, in world axes.
struct Prepared {
    index: usize,
    rel_mean: Vector3<f64>,
    opacity: f64,
    /// Bounding radius of the region where a hit can be accepted.
    support: f64,
    /// Squared Mahalanobis radius beyond which a hit falls below `alpha_min`.
    cutoff_sq: f64,
    shape: Shape,
}

enum Shape {
    Flat {
        normal: Vector3<f64>,
        axis_u: Vector3<f64>,
        axis_v: Vector3<f64>,
    },
    Volumetric {
        precision: Matrix3<f64>,
        precision_mean: Vector3<f64>,
        mean_norm: f64,
    },
}

struct Rasteriser {
    alpha_min: f64,
    mode: OpacityMode,
    /// Squared Mahalanobis radius accepted in raw mode.
    raw_cutoff: f64,
}

impl Rasteriser {
    fn new(scene: &SplatScene, alpha_min: f64, mode: OpacityMode) -> Self {
        Rasteriser {
            alpha_min,
            mode,
            raw_cutoff: scene.k_sigma() * scene.k_sigma(),
        }
    }

    fn prepare(&self, scene: &SplatScene, index: usize, origin: &Vector3<f64>) -> Option<Prepared> {
        let s = &scene.splats()[index];
        let floor = scene.min_thickness();
        let sigma = s.scales.map(|v| v.max(floor));
        let cutoff_sq = match self.mode {
            OpacityMode::Raw => {
                if s.opacity < self.alpha_min || s.opacity <= 0.0 {
                    return None;
                }
                self.raw_cutoff
            }
            OpacityMode::Falloff => {
                if s.opacity <= self.alpha_min || s.opacity <= 0.0 {
                    return None;
                }
                if self.alpha_min > 0.0 {
                    2.0 * (s.opacity / self.alpha_min).ln()
                } else {
                    f64::INFINITY
                }
            }
        };
        let rot = s.rotation.to_rotation_matrix();
        let rel_mean = s.mean - origin;
        let shape = match s.kind {
            SplatKind::Flat => Shape::Flat {
                normal: rot * Vector3::z(),
                axis_u: rot * Vector3::x() / sigma.x,
                axis_v: rot * Vector3::y() / sigma.y,
            },
            SplatKind::Volumetric => {
                let m = rot.matrix();
                let precision = m * Matrix3::from_diagonal(&sigma.map(|v| 1.0 / (v * v))) * m.transpose();
                let precision_mean = precision * rel_mean;
                Shape::Volumetric {
                    mean_norm: rel_mean.dot(&precision_mean),
                    precision,
                    precision_mean,
                }
            }
        };
        let max_sigma = match s.kind {
            SplatKind::Flat => sigma.x.max(sigma.y),
            SplatKind::Volumetric => sigma.max(),
        };
        Some(Prepared {
            index,
            rel_mean,
            opacity: s.opacity,
            support: cutoff_sq.sqrt() * max_sigma,
            cutoff_sq,
            shape,
        })
    }

    /// Upper bound on `Prepared::support` over the scene; `None` when unbounded.
    fn support_bound(&self, scene: &SplatScene) -> Option<f64> {
        let extent = scene.grid().max_extent();
        match self.mode {
            OpacityMode::Raw => Some(extent),
            OpacityMode::Falloff if self.alpha_min > 0.0 => {
                Some(extent * ((-2.0 * self.alpha_min.ln()).sqrt() / scene.k_sigma()).max(1.0))
            }
            OpacityMode::Falloff => None,
        }
    }

    /// Depth and effective opacity where `ray` (from the camera centre) meets the splat.
    fn hit(&self, p: &Prepared, ray: &Vector3<f64>) -> Option<(f64, f64)> {
        let (depth, g) = match &p.shape {
            Shape::Flat { normal, axis_u, axis_v } => {
                let denom = normal.dot(ray);
                if denom == 0.0 {
                    return None;
                }
                let depth = normal.dot(&p.rel_mean) / denom;
                let offset = ray * depth - p.rel_mean;
                (depth, axis_u.dot(&offset).powi(2) + axis_v.dot(&offset).powi(2))
            }
            Shape::Volumetric {
                precision,
                precision_mean,
                mean_norm,
            } => {
                let wlw = ray.dot(&(precision * ray));
                let wlm = ray.dot(precision_mean);
                let depth = wlm / wlw;
                (depth, (mean_norm - wlm * wlm / wlw).max(0.0))
            }
        };
        if !(depth > NEAR) || g > p.cutoff_sq * (1.0 + 1e-9) {
            return None;
        }
        let alpha = match self.mode {
            OpacityMode::Falloff => p.opacity * (-0.5 * g).exp(),
            OpacityMode::Raw => {
                if g > self.raw_cutoff {
                    return None;
                }
                p.opacity
            }
        };
        (alpha >= self.alpha_min && alpha > 0.0).then_some((depth, alpha.min(1.0)))
    }
}

fn sort_key(scene: &SplatScene, i: usize) -> [f64; 11] {
    let s = &scene.splats()[i];
    let q = s.rotation.quaternion();
    [
        s.mean.x, s.mean.y, s.mean.z, s.opacity, s.scales.x, s.scales.y, s.scales.z, q.w, q.i, q.j, q.k,
    ]
}

/// Inclusive pixel column and row ranges.
type Span = ((usize, usize), (usize, usize));

/// Output of one camera: median depths (`+inf` beyond `far`), the
/// transmittance left after all composited splats, and the world-axis rays.
struct Composite {
    map: DepthMap,
    transmittance: Vec<f64>,
    rays: Vec<Vector3<f64>>,
}

/// Composites `splats` into one camera. Rays are world-axis pixel rays of
/// unit camera-z component.
fn composite(
    scene: &SplatScene,
    raster: &Rasteriser,
    splats: &[Prepared],
    rotation: &Rotation3<f64>,
    intrinsics: &Intrinsics,
    far: f64,
) -> Composite {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let rays: Vec<Vector3<f64>> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| rotation * intrinsics.ray(u, v))
        .collect();
    let inv = rotation.inverse();

    let full = ((0, w - 1), (0, h - 1));
    let slope_x = intrinsics.cx.max(w as f64 - intrinsics.cx) / intrinsics.fx;
    let slope_y = intrinsics.cy.max(h as f64 - intrinsics.cy) / intrinsics.fy;
    let (norm_x, norm_y) = (slope_x.hypot(1.0), slope_y.hypot(1.0));
    let mut order: Vec<(f64, Span, &Prepared)> = splats
        .iter()
        .filter_map(|p| {
            let local = inv * p.rel_mean;
            if !(local.z + p.support > NEAR) {
                return None;
            }
            if !p.support.is_finite() {
                return Some((local.z, full, p));
            }
            // Beyond one of the four side planes of the frustum.
            if local.x.abs() - slope_x * local.z > p.support * norm_x || local.y.abs() - slope_y * local.z > p.support * norm_y {
                return None;
            }
            let us = intrinsics.pixel_span_of_ball(local.x, local.z, p.support, intrinsics.fx, intrinsics.cx, w)?;
            let vs = intrinsics.pixel_span_of_ball(local.y, local.z, p.support, intrinsics.fy, intrinsics.cy, h)?;
            Some((local.z, (us, vs), p))
        })
        .collect();
    order.sort_unstable_by(|a, b| {
        a.0.total_cmp(&b.0).then_with(|| {
            let (ka, kb) = (sort_key(scene, a.2.index), sort_key(scene, b.2.index));
            ka.iter()
                .zip(kb.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });

    let mut transmittance = vec![1.0f64; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let mut open = w * h;
    for (_, (us, vs), p) in order {
        for v in vs.0..=vs.1 {
            for u in us.0..=us.1 {
                let k = v * w + u;
                let t = transmittance[k];
                if t <= STOP_TRANSMITTANCE {
                    continue;
                }
                let Some((z, alpha)) = raster.hit(p, &rays[k]) else {
                    continue;
                };
                if t > 0.5 {
                    depth[k] = z;
                }
                let next = t * (1.0 - alpha);
                transmittance[k] = next;
                if next <= STOP_TRANSMITTANCE {
                    open -= 1;
                }
            }
        }
        if open == 0 {
            break;
        }
    }
    for z in &mut depth {
        if *z > far {
            *z = f64::INFINITY;
        }
    }
    Composite {
        map: DepthMap { width: w, height: h, data: depth },
        transmittance,
        rays,
    }
}

/// Whether `ray` from `origin` meets any splat of the scene at a depth beyond
/// `depth`. Marches the grid in steps of the support bound.
fn backed(scene: &SplatScene, raster: &Rasteriser, support: f64, origin: &Vector3<f64>, ray: &Vector3<f64>, depth: f64) -> bool {
    let norm = ray.norm();
    let dir = ray / norm;
    let bounds = scene.bounds();
    let (mut lo, mut hi) = (depth * norm, f64::INFINITY);
    for k in 0..3 {
        let (a, b) = (bounds.min[k] - support, bounds.max[k] + support);
        if dir[k] == 0.0 {
            if origin[k] < a || origin[k] > b {
                return false;
            }
            continue;
        }
        let (t0, t1) = ((a - origin[k]) / dir[k], (b - origin[k]) / dir[k]);
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    if lo > hi {
        return false;
    }
    let step = support.max(scene.grid().cell_size());
    let mut seen = std::collections::HashSet::new();
    let mut t = lo;
    while t <= hi + step {
        let centre = origin + dir * (t + 0.5 * step);
        let mut found = false;
        scene.grid().for_each_candidate(&centre, 0.5 * step + support, |i| {
            if found || !seen.insert(i) {
                return;
            }
            if let Some(p) = raster.prepare(scene, i, origin) {
                found = raster.hit(&p, ray).is_some_and(|(z, _)| z > depth);
            }
        });
        if found {
            return true;
        }
        t += step;
    }
    false
}

/// One camera of a culled sensor. Pixels whose in-range splats leave the
/// transmittance above one half and whose ray continues into further splats
/// have their median beyond the culling radius and report no return.
fn sensor_camera(
    scene: &SplatScene,
    raster: &Rasteriser,
    prepared: &[Prepared],
    sensor: &VirtualSensor,
    camera: usize,
    far: f64,
) -> DepthMap {
    let rotation = sensor.camera_pose(camera).rotation.to_rotation_matrix();
    let Composite { mut map, transmittance, rays } = composite(scene, raster, prepared, &rotation, &sensor.intrinsics, far);
    let Some(support) = raster.support_bound(scene) else {
        return map;
    };
    let origin = sensor.pose.translation.vector;
    for (k, z) in map.data.iter_mut().enumerate() {
        if z.is_finite() && transmittance[k] > 0.5 && backed(scene, raster, support, &origin, &rays[k], *z) {
            *z = f64::INFINITY;
        }
    }
    map
}

/// Median-depth map of the whole scene seen from `camera` (world from camera).
pub fn rasterise_median_depth(
    scene: &SplatScene,
    camera: &Isometry3<f64>,
    intrinsics: &Intrinsics,
    alpha_min: f64,
    mode: OpacityMode,
) -> DepthMap {
    let raster = Rasteriser::new(scene, alpha_min, mode);
    let origin = camera.translation.vector;
    let prepared: Vec<Prepared> = (0..scene.len())
        .filter_map(|i| raster.prepare(scene, i, &origin))
        .collect();
    composite(
        scene,
        &raster,
        &prepared,
        &camera.rotation.to_rotation_matrix(),
        intrinsics,
        f64::INFINITY,
    )
    .map
}

fn prepare_sensor(scene: &SplatScene, sensor: &VirtualSensor, influence: f64, config: &RasterConfig) -> (Rasteriser, Vec<Prepared>) {
    let raster = Rasteriser::new(scene, config.alpha_min, config.opacity_mode);
    let origin = sensor.pose.translation.vector;
    let prepared = scene
        .cull_splats(&origin, influence + sensor.radius)
        .into_iter()
        .filter_map(|i| raster.prepare(scene, i, &origin))
        .collect();
    (raster, prepared)
}

/// The six depth maps of a sensor, clipped at `influence + radius`. Splats
/// outside that ball only decide whether an unresolved pixel is backed.
pub fn sensor_depth_maps(scene: &SplatScene, sensor: &VirtualSensor, influence: f64, config: &RasterConfig) -> Vec<DepthMap> {
    let (raster, prepared) = prepare_sensor(scene, sensor, influence, config);
    (0..6)
        .map(|c| sensor_camera(scene, &raster, &prepared, sensor, c, influence + sensor.radius))
        .collect()
}

/// Closest return per camera, for cameras that see something within `influence`.
pub fn sensor_distance(
    scene: &SplatScene,
    sensor: &VirtualSensor,
    influence: f64,
    config: &RasterConfig,
) -> Vec<DistanceResult> {
    let (raster, prepared) = prepare_sensor(scene, sensor, influence, config);
    if prepared.is_empty() {
        return Vec::new();
    }
    let k = &sensor.intrinsics;
    let mut out = Vec::new();
    for c in 0..6 {
        let rotation = sensor.camera_pose(c).rotation.to_rotation_matrix();
        let map = sensor_camera(scene, &raster, &prepared, sensor, c, influence + sensor.radius);
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for v in 0..k.height {
            for u in 0..k.width {
                let z = map.get(u, v);
                if !z.is_finite() {
                    continue;
                }
                let ray = k.ray(u, v);
                let range = z * ray.norm();
                if best.is_none_or(|(b, _)| range < b) {
                    best = Some((range, ray));
                }
            }
        }
        if let Some((range, ray)) = best {
            let distance = range - sensor.radius;
            if distance <= influence {
                out.push(DistanceResult {
                    distance,
                    direction: rotation * ray.normalize(),
                    sphere_id: sensor.sphere_id,
                    backend: BackendKind::Raster,
                    camera_id: Some(c),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct RasterBackend<'a> {
    pub scene: &'a SplatScene,
    pub config: RasterConfig,
}

impl<'a> RasterBackend<'a> {
    pub fn new(scene: &'a SplatScene, config: RasterConfig) -> Self {
        RasterBackend { scene, config }
    }
}

impl DistanceBackend for RasterBackend<'_> {
    fn kind(&self) -> BackendKind {
        BackendKind::Raster
    }

    fn query(&self, spheres: &[WorldSphere], influence: f64) -> Vec<DistanceResult> {
        collect_ordered(spheres, |s| {
            let sensor = VirtualSensor::at_sphere(s, self.config.resolution);
            sensor_distance(self.scene, &sensor, influence, &self.config)
        })
    }
}
