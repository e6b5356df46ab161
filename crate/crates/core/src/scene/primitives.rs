//! Analytic primitive scenes with an exact signed distance field.

use nalgebra::{Isometry3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::SceneSpec;
use crate::pose::Pose;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveShape {
    /// `dims = [size_x, size_y, size_z]`, full extents in the local frame.
    Box,
    /// `dims = [radius, height]`, axis along local z.
    Cylinder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(rename = "type")]
    pub shape: PrimitiveShape,
    pub pose: Pose,
    pub dims: Vec<f64>,
}

impl Primitive {
    pub fn cuboid(pose: Isometry3<f64>, size: [f64; 3]) -> Self {
        Primitive {
            shape: PrimitiveShape::Box,
            pose: pose.into(),
            dims: size.to_vec(),
        }
    }

    pub fn cylinder(pose: Isometry3<f64>, radius: f64, height: f64) -> Self {
        Primitive {
            shape: PrimitiveShape::Cylinder,
            pose: pose.into(),
            dims: vec![radius, height],
        }
    }

    fn validate(&self) -> Result<()> {
        let expected = match self.shape {
            PrimitiveShape::Box => 3,
            PrimitiveShape::Cylinder => 2,
        };
        if self.dims.len() != expected {
            return Err(Error::Data(format!(
                "{:?} needs {expected} dims, got {}",
                self.shape,
                self.dims.len()
            )));
        }
        if self.dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Data(format!("primitive dims must be > 0: {:?}", self.dims)));
        }
        Ok(())
    }
}

/// Robot start state recorded with a scene.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    /// `[x, y, theta]`
    pub base: [f64; 3],
    /// Arm configuration; the robot's ready configuration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<Vec<f64>>,
}

/// On-disk scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub primitives: Vec<Primitive>,
    pub target_pose: Pose,
    /// Additional targets for multi-target scenes; `target_pose` is the first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_targets: Vec<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<StartState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<SceneSpec>,
}

impl SceneFile {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn primitive_scene(&self) -> Result<PrimitiveScene> {
        PrimitiveScene::new(self.primitives.clone(), self.target_pose.to_isometry()?)
    }

    pub fn targets(&self) -> Result<Vec<Isometry3<f64>>> {
        std::iter::once(&self.target_pose)
            .chain(&self.extra_targets)
            .map(Pose::to_isometry)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Cached {
    world_to_local: Isometry3<f64>,
    local_to_world: Isometry3<f64>,
    shape: PrimitiveShape,
    dims: [f64; 3],
}

impl Cached {
    /// Local-frame signed distance and unit gradient.
    fn local_sdf(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        match self.shape {
            PrimitiveShape::Box => {
                let h = Vector3::new(self.dims[0], self.dims[1], self.dims[2]) * 0.5;
                let q = p.abs() - h;
                let sign = p.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                let outside = q.map(|v| v.max(0.0));
                let out_norm = outside.norm();
                if out_norm > 0.0 {
                    (out_norm, outside.component_mul(&sign) / out_norm)
                } else {
                    let k = q.imax();
                    let mut g = Vector3::zeros();
                    g[k] = sign[k];
                    (q[k], g)
                }
            }
            PrimitiveShape::Cylinder => {
                let (radius, height) = (self.dims[0], self.dims[1]);
                let r = p.xy().norm();
                let radial = if r > 1e-12 {
                    Vector2::new(p.x / r, p.y / r)
                } else {
                    Vector2::new(1.0, 0.0)
                };
                let zsign = if p.z < 0.0 { -1.0 } else { 1.0 };
                let q = Vector2::new(r - radius, p.z.abs() - 0.5 * height);
                let outside = q.map(|v| v.max(0.0));
                let out_norm = outside.norm();
                let (d, g2) = if out_norm > 0.0 {
                    (out_norm, outside / out_norm)
                } else if q.x >= q.y {
                    (q.x, Vector2::new(1.0, 0.0))
                } else {
                    (q.y, Vector2::new(0.0, 1.0))
                };
                (
                    d,
                    Vector3::new(radial.x * g2.x, radial.y * g2.x, zsign * g2.y),
                )
            }
        }
    }

    fn sdf(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let local = self.world_to_local.transform_point(&(*p).into()).coords;
        let (d, g) = self.local_sdf(&local);
        (d, self.local_to_world.rotation * g)
    }
}

/// Union of primitives plus the task target; the ground-truth geometry.
#[derive(Debug, Clone)]
pub struct PrimitiveScene {
    primitives: Vec<Primitive>,
    cached: Vec<Cached>,
    pub target_pose: Isometry3<f64>,
}

impl PrimitiveScene {
    pub fn new(primitives: Vec<Primitive>, target_pose: Isometry3<f64>) -> Result<Self> {
        let mut cached = Vec::with_capacity(primitives.len());
        for p in &primitives {
            p.validate()?;
            let iso = p.pose.to_isometry()?;
            let mut dims = [0.0; 3];
            dims[..p.dims.len()].copy_from_slice(&p.dims);
            cached.push(Cached {
                world_to_local: iso.inverse(),
                local_to_world: iso,
                shape: p.shape,
                dims,
            });
        }
        Ok(PrimitiveScene {
            primitives,
            cached,
            target_pose,
        })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    /// Signed distance and gradient of primitive `i` alone.
    pub fn primitive_sdf(&self, i: usize, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        self.cached[i].sdf(p)
    }

    /// Exact signed distance to the union (minimum over primitives) and its
    /// unit gradient, pointing in the direction of increasing distance.
    /// An empty scene reports `+inf` with a zero gradient.
    pub fn sdf_query(&self, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let mut best = (f64::INFINITY, Vector3::zeros());
        for c in &self.cached {
            let (d, g) = c.sdf(p);
            if d < best.0 {
                best = (d, g);
            }
        }
        best
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.cached
            .iter()
            .map(|c| c.sdf(p).0)
            .fold(f64::INFINITY, f64::min)
    }
}
