//! Robot description files and the built-in mobile manipulator.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::Path;

use nalgebra::{Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{ArmJoint, BaseLimits, JointType, RobotModel, RobotSphere, SphereSet};
use crate::pose::Pose;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDescription {
    pub name: String,
    pub parent: Pose,
    pub axis: [f64; 3],
    #[serde(rename = "type", default = "revolute")]
    pub joint_type: JointType,
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
}

fn revolute() -> JointType {
    JointType::Revolute
}

fn all_rows() -> Vec<usize> {
    (0..6).collect()
}

/// On-disk robot description: kinematic chain, limits and collision spheres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotDescription {
    pub name: String,
    pub base_mount: Pose,
    pub joints: Vec<JointDescription>,
    pub tool: Pose,
    pub base_limits: BaseLimits,
    #[serde(default = "all_rows")]
    pub manipulability_rows: Vec<usize>,
    /// Default arm configuration.
    pub home: Vec<f64>,
    pub spheres: Vec<RobotSphere>,
}

impl RobotDescription {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Validates and converts into a model and sphere set.
    pub fn build(&self) -> Result<(RobotModel, SphereSet)> {
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let axis = Vector3::from(j.axis);
                if !(axis.norm() > 1e-9) || axis.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("joint {} has a degenerate axis", j.name)));
                }
                Ok(ArmJoint {
                    name: j.name.clone(),
                    parent: j.parent.to_isometry()?,
                    axis: Unit::new_normalize(axis),
                    joint_type: j.joint_type,
                    lower: j.lower,
                    upper: j.upper,
                    max_velocity: j.max_velocity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = RobotModel {
            base_mount: self.base_mount.to_isometry()?,
            joints,
            tool: self.tool.to_isometry()?,
            base_limits: self.base_limits,
            manipulability_rows: self.manipulability_rows.clone(),
        };
        model.validate()?;
        if self.home.len() != model.n_arm() {
            return Err(Error::Data(format!(
                "home configuration has {} entries for {} joints",
                self.home.len(),
                model.n_arm()
            )));
        }
        let spheres = SphereSet {
            spheres: self.spheres.clone(),
        };
        spheres.validate(&model)?;
        Ok((model, spheres))
    }
}

fn mdh(a: f64, d: f64, alpha: f64) -> Isometry3<f64> {
    Isometry3::rotation(Vector3::x() * alpha) * Isometry3::translation(a, 0.0, d)
}

fn sphere(link: usize, offset: [f64; 3], radius: f64) -> RobotSphere {
    RobotSphere { link, offset, radius }
}

/// Differential-drive base with a 7-DoF Panda-type arm mounted on top,
/// approximated by 77 collision spheres.
pub fn default_robot() -> RobotDescription {
    let mount = [0.2, 0.0, 0.4];
    let chain = [
        (0.0, 0.333, 0.0, -2.8973, 2.8973, 2.175),
        (0.0, 0.0, -FRAC_PI_2, -1.7628, 1.7628, 2.175),
        (0.0, 0.316, FRAC_PI_2, -2.8973, 2.8973, 2.175),
        (0.0825, 0.0, FRAC_PI_2, -3.0718, -0.0698, 2.175),
        (-0.0825, 0.384, -FRAC_PI_2, -2.8973, 2.8973, 2.61),
        (0.0, 0.0, FRAC_PI_2, -0.0175, 3.7525, 2.61),
        (0.088, 0.0, FRAC_PI_2, -2.8973, 2.8973, 2.61),
    ];
    let joints = chain
        .iter()
        .enumerate()
        .map(|(i, &(a, d, alpha, lower, upper, vel))| JointDescription {
            name: format!("arm_joint{}", i + 1),
            parent: Pose::from(mdh(a, d, alpha)),
            axis: [0.0, 0.0, 1.0],
            joint_type: JointType::Revolute,
            lower,
            upper,
            max_velocity: vel,
        })
        .collect();
    let flange = 0.107;
    let tool = Isometry3::translation(0.0, 0.0, flange)
        * Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_4),
        )
        * Isometry3::translation(0.0, 0.0, 0.1034);

    let mut spheres = Vec::with_capacity(77);
    for i in 0..7 {
        for j in 0..3 {
            let x = -0.24 + 0.08 * i as f64;
            let y = -0.12 + 0.12 * j as f64;
            spheres.push(sphere(0, [x, y, 0.22], 0.14));
        }
    }
    for z in [0.05, 0.15, 0.25] {
        spheres.push(sphere(0, [mount[0], mount[1], mount[2] + z], 0.08));
    }
    spheres.push(sphere(0, [mount[0] - 0.05, mount[1], mount[2] + 0.05], 0.08));
    for z in [-0.12, -0.06, 0.0] {
        spheres.push(sphere(1, [0.0, 0.0, z], 0.08));
    }
    for y in [0.0, -0.07, -0.14, -0.21, -0.28] {
        spheres.push(sphere(2, [0.0, y, 0.0], 0.07));
    }
    spheres.push(sphere(2, [0.0, 0.0, 0.06], 0.07));
    spheres.push(sphere(2, [0.0, 0.0, -0.06], 0.07));
    for p in [
        [0.0, 0.0, -0.12],
        [0.0, 0.0, -0.06],
        [0.0, 0.0, 0.0],
        [0.04, 0.0, 0.0],
        [0.0825, 0.0, 0.0],
        [0.0825, 0.06, 0.0],
        [0.0825, -0.06, 0.0],
    ] {
        spheres.push(sphere(3, p, 0.065));
    }
    for p in [[0.0, 0.0, 0.0], [-0.04, 0.0, 0.0], [-0.0825, 0.0, 0.0]] {
        spheres.push(sphere(4, p, 0.065));
    }
    for y in [0.06, 0.12, 0.18, 0.24, 0.30, 0.36] {
        spheres.push(sphere(4, [-0.0825, y, 0.0], 0.06));
    }
    for p in [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, -0.08],
        [0.0, 0.0, -0.16],
        [0.0, -0.06, 0.0],
        [0.0, 0.04, 0.0],
    ] {
        spheres.push(sphere(5, p, 0.06));
    }
    for p in [[0.0, 0.0, 0.0], [0.044, 0.0, 0.0], [0.088, 0.0, 0.0], [0.088, 0.05, 0.0]] {
        spheres.push(sphere(6, p, 0.06));
    }
    for z in [0.0, 0.05, 0.09] {
        spheres.push(sphere(7, [0.0, 0.0, z], 0.05));
    }
    // Gripper points are laid out in the hand frame, rotated about the flange axis.
    let hand = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_4);
    let mut hand_sphere = |y: f64, z: f64, r: f64| {
        let p = hand * Vector3::new(0.0, y, 0.0) + Vector3::new(0.0, 0.0, flange + z);
        spheres.push(sphere(7, [p.x, p.y, p.z], r));
    };
    for y in [-0.08, -0.04, 0.0, 0.04, 0.08] {
        hand_sphere(y, 0.03, 0.035);
    }
    for y in [-0.08, -0.04, 0.0, 0.04, 0.08] {
        hand_sphere(y, 0.065, 0.03);
    }
    for y in [-0.03, 0.03] {
        hand_sphere(y, 0.085, 0.015);
        hand_sphere(y, 0.1, 0.015);
    }

    RobotDescription {
        name: "mobile_panda".into(),
        base_mount: Pose::from(Isometry3::translation(mount[0], mount[1], mount[2])),
        joints,
        tool: Pose::from(tool),
        base_limits: BaseLimits {
            forward_velocity: 0.5,
            turn_velocity: 1.0,
        },
        manipulability_rows: all_rows(),
        home: vec![0.0, -FRAC_PI_4, 0.0, -3.0 * FRAC_PI_4, 0.0, FRAC_PI_2, FRAC_PI_4],
        spheres,
    }
}
