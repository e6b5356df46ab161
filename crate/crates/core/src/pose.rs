//! Rigid-transform helpers shared across modules.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Serialisable 6-DoF pose: position in metres and a `[w, x, y, z]` quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: [0.0; 3],
            orientation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn to_isometry(&self) -> Result<Isometry3<f64>> {
        let [w, x, y, z] = self.orientation;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Data(format!(
                "pose orientation {:?} is not a valid quaternion",
                self.orientation
            )));
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "pose position {:?} is not finite",
                self.position
            )));
        }
        Ok(Isometry3::from_parts(
            Translation3::new(self.position[0], self.position[1], self.position[2]),
            UnitQuaternion::from_quaternion(q),
        ))
    }
}

impl From<&Isometry3<f64>> for Pose {
    fn from(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        let t = iso.translation.vector;
        Pose {
            position: [t.x, t.y, t.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

impl From<Isometry3<f64>> for Pose {
    fn from(iso: Isometry3<f64>) -> Self {
        Pose::from(&iso)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Rotation vector (axis * angle) of `target * current^-1`, i.e. the
/// world-frame rotation taking `current` onto `target`, angle in `[0, pi]`.
pub fn rotation_error(current: &UnitQuaternion<f64>, target: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut err = target * current.inverse();
    if err.w < 0.0 {
        err = UnitQuaternion::new_unchecked(-err.into_inner());
    }
    err.scaled_axis()
}

/// World-frame pose error `(translation, rotation vector)` stacked as a 6-vector.
pub fn pose_error(current: &Isometry3<f64>, target: &Isometry3<f64>) -> Vector6<f64> {
    let dp = target.translation.vector - current.translation.vector;
    let dr = rotation_error(&current.rotation, &target.rotation);
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// Translation and rotation distance between two poses.
pub fn pose_distance(a: &Isometry3<f64>, b: &Isometry3<f64>) -> (f64, f64) {
    let e = pose_error(a, b);
    (
        e.fixed_rows::<3>(0).norm(),
        e.fixed_rows::<3>(3).norm(),
    )
}
