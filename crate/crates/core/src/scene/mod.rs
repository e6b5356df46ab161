//! Gaussian-splat scenes and their analytic ground-truth counterparts.

mod generate;
mod grid;
mod noise;
mod ply;
mod primitives;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use generate::{generate_synthetic_scene, GeneratedScene, SceneKind, SceneSpec};
pub use grid::SplatGrid;
pub use noise::{inject_floaters, FloaterSpec};
pub use ply::{load_scene, read_splats, write_scene, Activation};
pub use primitives::{Primitive, PrimitiveScene, PrimitiveShape, SceneFile};

/// Confidence scale (in standard deviations) used to turn a Gaussian into an ellipsoid.
pub const DEFAULT_K_SIGMA: f64 = 2.0;
/// Minimum standard deviation assigned to a degenerate (flat) splat axis.
pub const DEFAULT_MIN_THICKNESS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplatKind {
    /// Planar 2D splat; the third scale is degenerate and the local z axis is the normal.
    Flat,
    /// Full 3D anisotropic Gaussian.
    Volumetric,
}

/// One anisotropic Gaussian. Colour is not modelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub mean: Vector3<f64>,
    /// Per-axis standard deviations in metres.
    pub scales: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub kind: SplatKind,
}

impl Splat {
    /// Builds a splat from raw (already activated) parameters, validating them.
    ///
    /// `quaternion` is `[w, x, y, z]`; it is normalised here.
    pub fn new(
        mean: Vector3<f64>,
        scales: Vector3<f64>,
        quaternion: [f64; 4],
        opacity: f64,
        kind: SplatKind,
    ) -> Result<Self> {
        if mean.iter().chain(scales.iter()).any(|v| !v.is_finite())
            || quaternion.iter().any(|v| !v.is_finite())
            || !opacity.is_finite()
        {
            return Err(Error::Data("non-finite splat parameter".into()));
        }
        if scales.iter().any(|&s| s < 0.0) {
            return Err(Error::Data(format!("negative splat scale {scales:?}")));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::Data(format!("opacity {opacity} outside [0, 1]")));
        }
        let [w, x, y, z] = quaternion;
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(Error::Data("zero rotation quaternion".into()));
        }
        let mut scales = scales;
        if kind == SplatKind::Flat {
            scales.z = 0.0;
        }
        Ok(Splat {
            mean,
            scales,
            rotation: UnitQuaternion::from_quaternion(q),
            opacity,
            kind,
        })
    }

    /// Largest standard deviation after applying the thickness floor.
    pub fn max_scale(&self, min_thickness: f64) -> f64 {
        self.scales.iter().fold(min_thickness, |m, &s| m.max(s))
    }

    /// Ellipsoid at `k_sigma` standard deviations, with degenerate axes
    /// raised to `min_thickness` first.
    pub fn to_ellipsoid(&self, k_sigma: f64, min_thickness: f64) -> Ellipsoid {
        let semi = self.scales.map(|s| k_sigma * s.max(min_thickness));
        Ellipsoid::new(self.mean, self.rotation.to_rotation_matrix(), semi)
    }
}

/// `splat_to_ellipsoid` with the default thickness floor.
pub fn splat_to_ellipsoid(splat: &Splat, k_sigma: f64) -> Result<Ellipsoid> {
    if !(k_sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("k_sigma must be > 0, got {k_sigma}")));
    }
    Ok(splat.to_ellipsoid(k_sigma, DEFAULT_MIN_THICKNESS))
}

/// Solid ellipsoid `{p : (p - c)^T C (p - c) <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub semi_axes: Vector3<f64>,
    pub conic: Matrix3<f64>,
}

impl Ellipsoid {
    pub fn new(center: Vector3<f64>, rotation: Rotation3<f64>, semi_axes: Vector3<f64>) -> Self {
        let r = rotation.matrix();
        let inv_sq = Matrix3::from_diagonal(&semi_axes.map(|a| 1.0 / (a * a)));
        let conic = r * inv_sq * r.transpose();
        Ellipsoid {
            center,
            rotation,
            semi_axes,
            conic,
        }
    }

    /// Quadratic form value; 1 on the surface.
    pub fn level(&self, p: &Vector3<f64>) -> f64 {
        let d = p - self.center;
        d.dot(&(self.conic * d))
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.semi_axes.max()
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut min = [first.x, first.y, first.z];
        let mut max = min;
        for p in it {
            for k in 0..3 {
                min[k] = min[k].min(p[k]);
                max[k] = max[k].max(p[k]);
            }
        }
        Some(Aabb { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|k| (self.max[k] - self.min[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        (0..3)
            .map(|k| (self.min[k] - p[k]).max(p[k] - self.max[k]).max(0.0).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Immutable splat collection with a uniform-grid index over the means.
#[derive(Debug, Clone)]
pub struct SplatScene {
    splats: Vec<Splat>,
    bounds: Aabb,
    k_sigma: f64,
    min_thickness: f64,
    /// Per-splat ellipsoid extent `k_sigma * max_scale`, cached for culling.
    extents: Vec<f64>,
    grid: SplatGrid,
}

impl SplatScene {
    pub fn new(splats: Vec<Splat>) -> Result<Self> {
        Self::with_params(splats, DEFAULT_K_SIGMA, DEFAULT_MIN_THICKNESS)
    }

    pub fn with_params(splats: Vec<Splat>, k_sigma: f64, min_thickness: f64) -> Result<Self> {
        if !(k_sigma > 0.0) || !(min_thickness > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "k_sigma ({k_sigma}) and min_thickness ({min_thickness}) must be positive"
            )));
        }
        let bounds = Aabb::from_points(splats.iter().map(|s| &s.mean)).ok_or(Error::EmptyScene)?;
        let extents: Vec<f64> = splats
            .iter()
            .map(|s| k_sigma * s.max_scale(min_thickness))
            .collect();
        let grid = SplatGrid::build(&splats, &extents, &bounds);
        Ok(SplatScene {
            splats,
            bounds,
            k_sigma,
            min_thickness,
            extents,
            grid,
        })
    }

    pub fn splats(&self) -> &[Splat] {
        &self.splats
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn k_sigma(&self) -> f64 {
        self.k_sigma
    }

    pub fn min_thickness(&self) -> f64 {
        self.min_thickness
    }

    /// Ellipsoid extent (largest semi-axis) of splat `i`.
    pub fn extent(&self, i: usize) -> f64 {
        self.extents[i]
    }

    pub fn grid(&self) -> &SplatGrid {
        &self.grid
    }

    pub fn ellipsoid(&self, i: usize) -> Ellipsoid {
        self.splats[i].to_ellipsoid(self.k_sigma, self.min_thickness)
    }

    /// Indices of every splat with `|mean - center| <= radius + extent`.
    ///
    /// Exact with respect to that predicate: the grid only narrows the scan.
    pub fn cull_splats(&self, center: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.cull_into(center, radius, &mut out);
        out
    }

    pub fn cull_into(&self, center: &Vector3<f64>, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let reach = radius + self.grid.max_extent();
        if self.bounds.distance(center) > reach {
            return;
        }
        self.grid.for_each_candidate(center, reach, |i| {
            let r = radius + self.extents[i];
            if (self.splats[i].mean - center).norm_squared() <= r * r {
                out.push(i);
            }
        });
    }

    /// Returns a new scene with `extra` splats appended; the index is rebuilt.
    pub fn with_additional(&self, extra: Vec<Splat>) -> Result<SplatScene> {
        let mut splats = self.splats.clone();
        splats.extend(extra);
        SplatScene::with_params(splats, self.k_sigma, self.min_thickness)
    }
}
