//! Closest points on splat ellipsoids.

use nalgebra::Vector3;

use super::{collect_ordered, BackendKind, DistanceBackend, DistanceResult, WorldSphere};
use crate::scene::{Ellipsoid, SplatScene};

const MAX_BISECTION: usize = 128;
const BISECTION_WIDTH: f64 = 1e-12;
/// Principal coordinates below this (relative to the largest semi-axis) are zero.
const AXIS_ZERO: f64 = 1e-12;
/// Slack on the pruning bounds so rounding never discards the true minimum.
const PRUNE_MARGIN: f64 = 1e-9;

/// Closest point on the surface of `e` to `p`, for interior and exterior `p`.
///
/// When the closest point is not unique (interior points on the minor axis)
/// the lexicographically smallest candidate is returned.
pub fn closest_point_on_ellipsoid(e: &Ellipsoid, p: &Vector3<f64>) -> Vector3<f64> {
    let r = e.rotation.matrix();
    let scale = e.max_semi_axis();
    let y = r.transpose() * (p - e.center) / scale;
    let a = e.semi_axes / scale;
    let (mut x, mirror) = principal_closest(&a, &y);
    let level: f64 = (0..3).map(|i| (x[i] / a[i]).powi(2)).sum();
    x /= level.sqrt();
    let world = |x: &Vector3<f64>| e.center + r * (x * scale);
    let q = world(&x);
    match mirror {
        None => q,
        Some(k) => {
            let mut other = x;
            other[k] = -other[k];
            let q2 = world(&other);
            let lexicographic = q2
                .iter()
                .zip(q.iter())
                .find(|(a, b)| a != b)
                .is_some_and(|(a, b)| a < b);
            if lexicographic {
                q2
            } else {
                q
            }
        }
    }
}

/// Works in the first octant of the principal frame with the largest semi-axis
/// normalised to one. Returns the point and, for a tie, the axis along which
/// the mirrored point is equally close.
fn principal_closest(a: &Vector3<f64>, y: &Vector3<f64>) -> (Vector3<f64>, Option<usize>) {
    let z = y.abs();
    let sign = y.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
    let a_min = a.min();
    let is_zero = |i: usize| z[i] <= AXIS_ZERO;
    let is_minor = |i: usize| a[i] - a_min <= AXIS_ZERO;

    if (0..3).filter(|&i| is_minor(i)).all(is_zero) {
        // The root may sit on the pole t = -a_min^2; check the ridge solution.
        let mut x = Vector3::zeros();
        let mut used = 0.0;
        for i in (0..3).filter(|&i| !is_minor(i)) {
            x[i] = a[i] * a[i] * z[i] / (a[i] * a[i] - a_min * a_min);
            used += (x[i] / a[i]).powi(2);
        }
        if used < 1.0 {
            let k = (0..3).find(|&i| is_minor(i)).expect("some axis is minor");
            x[k] = a_min * (1.0 - used).sqrt();
            return (x.component_mul(&sign), Some(k));
        }
    }

    let f = |t: f64| -> f64 {
        (0..3)
            .filter(|&i| !is_zero(i))
            .map(|i| (a[i] * z[i] / (t + a[i] * a[i])).powi(2))
            .sum::<f64>()
            - 1.0
    };
    let mut lo = -a_min * a_min;
    let mut hi = z.norm() + 1.0;
    for _ in 0..MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        if hi - lo < BISECTION_WIDTH || mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let x = Vector3::from_fn(|i, _| {
        if is_zero(i) {
            0.0
        } else {
            a[i] * a[i] * z[i] / (t + a[i] * a[i])
        }
    });
    (x.component_mul(&sign), None)
}

/// Signed distance from `p` to splat `i` of `scene` and the unit direction
/// toward its surface (into the splat when `p` is inside).
pub fn point_splat_distance(scene: &SplatScene, i: usize, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let e = scene.ellipsoid(i);
    let q = closest_point_on_ellipsoid(&e, p);
    let diff = q - p;
    let len = diff.norm();
    let inside = e.level(p) < 1.0;
    let direction = if len > 1e-12 * (1.0 + e.max_semi_axis()) {
        if inside {
            -diff / len
        } else {
            diff / len
        }
    } else {
        -(e.conic * (q - e.center)).normalize()
    };
    (if inside { -len } else { len }, direction)
}

fn minor_extent(scene: &SplatScene, i: usize) -> f64 {
    let s = &scene.splats()[i];
    scene.k_sigma() * s.scales.iter().fold(f64::INFINITY, |m, &v| m.min(v.max(scene.min_thickness())))
}

fn nearest_splat(scene: &SplatScene, sphere: &WorldSphere, influence: f64, opacity_min: f64) -> Option<(f64, Vector3<f64>)> {
    let p = sphere.center;
    let candidates = scene.cull_splats(&p, influence + sphere.radius);
    let mut bounds: Vec<(usize, f64)> = Vec::with_capacity(candidates.len());
    let mut best_upper = f64::INFINITY;
    for &i in &candidates {
        if scene.splats()[i].opacity < opacity_min {
            continue;
        }
        let centre = (scene.splats()[i].mean - p).norm();
        best_upper = best_upper.min(centre - minor_extent(scene, i));
        bounds.push((i, centre - scene.extent(i)));
    }
    let mut best: Option<(f64, usize, Vector3<f64>)> = None;
    for (i, lower) in bounds {
        let lower = lower - PRUNE_MARGIN;
        if lower > best_upper || best.is_some_and(|(d, _, _)| lower > d) {
            continue;
        }
        let (d, dir) = point_splat_distance(scene, i, &p);
        if best.is_none_or(|(bd, bi, _)| d < bd || (d == bd && i < bi)) {
            best = Some((d, i, dir));
        }
    }
    best.map(|(d, _, dir)| (d - sphere.radius, dir))
}

/// One result per sphere: the nearest splat with opacity at least
/// `opacity_min`, if closer than `influence`.
pub fn query_scene_geometric(
    scene: &SplatScene,
    spheres: &[WorldSphere],
    influence: f64,
    opacity_min: f64,
) -> Vec<DistanceResult> {
    collect_ordered(spheres, |s| {
        nearest_splat(scene, s, influence, opacity_min)
            .filter(|(d, _)| *d <= influence)
            .map(|(distance, direction)| DistanceResult {
                distance,
                direction,
                sphere_id: s.id,
                backend: BackendKind::Geometric,
                camera_id: None,
            })
            .into_iter()
            .collect()
    })
}

#[derive(Debug, Clone, Copy)]
pub struct GeometricBackend<'a> {
    pub scene: &'a SplatScene,
    pub opacity_min: f64,
}

impl<'a> GeometricBackend<'a> {
    pub fn new(scene: &'a SplatScene, opacity_min: f64) -> Self {
        GeometricBackend { scene, opacity_min }
    }
}

impl DistanceBackend for GeometricBackend<'_> {
    fn kind(&self) -> BackendKind {
        BackendKind::Geometric
    }

    fn query(&self, spheres: &[WorldSphere], influence: f64) -> Vec<DistanceResult> {
        query_scene_geometric(self.scene, spheres, influence, self.opacity_min)
    }
}

#[cfg(test)]
mod tests;
