//! Per-sphere distance queries against a scene.
//!
//! Every backend reports, for each robot sphere within the influence distance,
//! a signed clearance `distance` and a unit `direction` pointing from the
//! sphere centre toward the obstacle. The clearance decreases fastest along
//! `direction`, so a sphere velocity `v` approaches the obstacle at
//! `direction . v`.

pub mod geometric;
pub mod raster;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{PrimitiveScene, SplatScene};
use crate::Error;

pub use crate::kinematics::WorldSphere;
pub use geometric::{closest_point_on_ellipsoid, query_scene_geometric, GeometricBackend};
pub use raster::{
    camera_rotations, rasterise_median_depth, sensor_distance, DepthMap, Intrinsics, OpacityMode, RasterBackend,
    RasterConfig, VirtualSensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Geometric,
    Raster,
    GtSdf,
}

impl BackendKind {
    pub const ALL: [BackendKind; 3] = [BackendKind::Geometric, BackendKind::Raster, BackendKind::GtSdf];

    pub fn as_str(&self) -> &'static str {
        match self {
            BackendKind::Geometric => "geometric",
            BackendKind::Raster => "raster",
            BackendKind::GtSdf => "gt-sdf",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(BackendKind::Geometric),
            "raster" => Ok(BackendKind::Raster),
            "gt-sdf" | "gt_sdf" | "sdf" => Ok(BackendKind::GtSdf),
            other => Err(Error::InvalidArgument(format!("unknown backend '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceResult {
    /// Signed clearance between sphere surface and obstacle (m).
    pub distance: f64,
    /// Unit vector from the sphere toward the obstacle.
    pub direction: Vector3<f64>,
    pub sphere_id: usize,
    pub backend: BackendKind,
    pub camera_id: Option<usize>,
}

pub trait DistanceBackend: Sync {
    fn kind(&self) -> BackendKind;

    /// Results for every sphere closer than `influence`, ordered by sphere id.
    fn query(&self, spheres: &[WorldSphere], influence: f64) -> Vec<DistanceResult>;
}

/// Analytic signed distance to the primitive scene.
#[derive(Debug, Clone, Copy)]
pub struct SdfBackend<'a> {
    pub scene: &'a PrimitiveScene,
}

impl<'a> SdfBackend<'a> {
    pub fn new(scene: &'a PrimitiveScene) -> Self {
        SdfBackend { scene }
    }
}

impl DistanceBackend for SdfBackend<'_> {
    fn kind(&self) -> BackendKind {
        BackendKind::GtSdf
    }

    fn query(&self, spheres: &[WorldSphere], influence: f64) -> Vec<DistanceResult> {
        spheres
            .iter()
            .filter_map(|s| {
                let (sdf, grad) = self.scene.sdf_query(&s.center);
                let distance = sdf - s.radius;
                (distance <= influence && sdf.is_finite()).then(|| DistanceResult {
                    distance,
                    direction: -grad,
                    sphere_id: s.id,
                    backend: BackendKind::GtSdf,
                    camera_id: None,
                })
            })
            .collect()
    }
}

/// Runs `per_sphere` over all spheres in parallel, preserving sphere order.
pub(crate) fn collect_ordered<F>(spheres: &[WorldSphere], per_sphere: F) -> Vec<DistanceResult>
where
    F: Fn(&WorldSphere) -> Vec<DistanceResult> + Sync + Send,
{
    spheres.par_iter().map(per_sphere).collect::<Vec<_>>().into_iter().flatten().collect()
}

/// Backend over a splat scene selected at run time.
pub enum SplatBackend<'a> {
    Geometric(GeometricBackend<'a>),
    Raster(RasterBackend<'a>),
}

impl DistanceBackend for SplatBackend<'_> {
    fn kind(&self) -> BackendKind {
        match self {
            SplatBackend::Geometric(b) => b.kind(),
            SplatBackend::Raster(b) => b.kind(),
        }
    }

    fn query(&self, spheres: &[WorldSphere], influence: f64) -> Vec<DistanceResult> {
        match self {
            SplatBackend::Geometric(b) => b.query(spheres, influence),
            SplatBackend::Raster(b) => b.query(spheres, influence),
        }
    }
}

/// Convenience constructor used by the simulator and CLI.
pub fn splat_backend<'a>(
    kind: BackendKind,
    scene: &'a SplatScene,
    opacity_min: f64,
    raster: RasterConfig,
) -> Option<SplatBackend<'a>> {
    match kind {
        BackendKind::Geometric => Some(SplatBackend::Geometric(GeometricBackend::new(scene, opacity_min))),
        BackendKind::Raster => Some(SplatBackend::Raster(RasterBackend::new(scene, raster))),
        BackendKind::GtSdf => None,
    }
}
