//! Holistic kinematics of a differential-drive base carrying a serial arm.
//!
//! The base contributes two virtual joints: `delta_x`, an infinitesimal
//! forward translation along the base heading, and `delta_theta`, a rotation
//! about the world z axis through the base origin. Joint vectors are ordered
//! `(delta_x, delta_theta, q_arm...)`.
//!
//! Link 0 is the base body; link `i >= 1` is the arm link moved by arm joint `i`.

mod description;

use nalgebra::{
    DVector, Isometry3, Matrix3xX, Matrix6xX, Point3, Translation3, Unit, UnitQuaternion, Vector3,
};
use serde::{Deserialize, Serialize};

use crate::pose::wrap_angle;
use crate::{Error, Result};

pub use description::{default_robot, RobotDescription};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmJoint {
    pub name: String,
    /// Fixed transform from the previous link frame to this joint's frame.
    pub parent: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    pub joint_type: JointType,
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
}

impl ArmJoint {
    fn motion(&self, q: f64) -> Isometry3<f64> {
        match self.joint_type {
            JointType::Revolute => {
                Isometry3::from_parts(Translation3::identity(), UnitQuaternion::from_axis_angle(&self.axis, q))
            }
            JointType::Prismatic => Isometry3::from_parts(
                Translation3::from(self.axis.into_inner() * q),
                UnitQuaternion::identity(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseLimits {
    /// Forward speed limit (m/s).
    pub forward_velocity: f64,
    /// Turn rate limit (rad/s).
    pub turn_velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    /// Base frame to arm mount.
    pub base_mount: Isometry3<f64>,
    pub joints: Vec<ArmJoint>,
    /// Last arm link to end effector.
    pub tool: Isometry3<f64>,
    pub base_limits: BaseLimits,
    /// End-effector twist rows used by the manipulability index.
    pub manipulability_rows: Vec<usize>,
}

impl RobotModel {
    pub fn n_arm(&self) -> usize {
        self.joints.len()
    }

    pub fn n_dof(&self) -> usize {
        2 + self.joints.len()
    }

    pub fn n_links(&self) -> usize {
        1 + self.joints.len()
    }

    /// Number of joints that move `link`.
    pub fn joints_up_to(&self, link: usize) -> usize {
        2 + link
    }

    pub fn validate(&self) -> Result<()> {
        for j in &self.joints {
            if !(j.lower.is_finite() && j.upper.is_finite() && j.lower < j.upper) {
                return Err(Error::Data(format!("joint {} has invalid limits", j.name)));
            }
            if !(j.max_velocity.is_finite() && j.max_velocity > 0.0) {
                return Err(Error::Data(format!("joint {} has invalid velocity limit", j.name)));
            }
        }
        let b = &self.base_limits;
        if !(b.forward_velocity > 0.0 && b.turn_velocity > 0.0) {
            return Err(Error::Data("base velocity limits must be positive".into()));
        }
        if self.manipulability_rows.is_empty() || self.manipulability_rows.iter().any(|&r| r > 5) {
            return Err(Error::Data("manipulability rows must be a non-empty subset of 0..6".into()));
        }
        Ok(())
    }

    /// Velocity bounds `(lower, upper)` for every joint, base first.
    pub fn velocity_limits(&self) -> (Vec<f64>, Vec<f64>) {
        let mut upper = vec![self.base_limits.forward_velocity, self.base_limits.turn_velocity];
        upper.extend(self.joints.iter().map(|j| j.max_velocity));
        let lower = upper.iter().map(|v| -v).collect();
        (lower, upper)
    }
}

/// 2D base pose plus arm configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    /// Heading, kept in `(-pi, pi]`.
    pub theta: f64,
    pub arm: Vec<f64>,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64, arm: Vec<f64>) -> Self {
        RobotState {
            x,
            y,
            theta: wrap_angle(theta),
            arm,
        }
    }

    pub fn base_pose(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.theta),
        )
    }

    /// Clamps the arm into its position limits.
    pub fn clamp_to(&mut self, model: &RobotModel) {
        for (q, j) in self.arm.iter_mut().zip(&model.joints) {
            *q = q.clamp(j.lower, j.upper);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotSphere {
    pub link: usize,
    /// Centre in the link frame (m).
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SphereSet {
    pub spheres: Vec<RobotSphere>,
}

impl SphereSet {
    pub fn validate(&self, model: &RobotModel) -> Result<()> {
        for (i, s) in self.spheres.iter().enumerate() {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return Err(Error::Data(format!("sphere {i} has non-positive radius")));
            }
            if s.link >= model.n_links() {
                return Err(Error::Data(format!("sphere {i} references missing link {}", s.link)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }
}

/// A robot sphere placed in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldSphere {
    pub id: usize,
    pub link: usize,
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// World poses produced by one forward-kinematics pass.
#[derive(Debug, Clone)]
pub struct ForwardKinematics {
    /// `links[0]` is the base; `links[i]` is arm link `i`.
    pub links: Vec<Isometry3<f64>>,
    /// World frame of each arm joint before its own motion is applied.
    pub joint_frames: Vec<Isometry3<f64>>,
    pub end_effector: Isometry3<f64>,
    pub heading: f64,
}

pub fn forward_kinematics(model: &RobotModel, state: &RobotState) -> ForwardKinematics {
    debug_assert_eq!(state.arm.len(), model.n_arm());
    let base = state.base_pose();
    let mut links = Vec::with_capacity(model.n_links());
    let mut joint_frames = Vec::with_capacity(model.n_arm());
    links.push(base);
    let mut prev = base * model.base_mount;
    for (joint, &q) in model.joints.iter().zip(&state.arm) {
        let frame = prev * joint.parent;
        let link = frame * joint.motion(q);
        joint_frames.push(frame);
        links.push(link);
        prev = link;
    }
    let end_effector = prev * model.tool;
    ForwardKinematics {
        links,
        joint_frames,
        end_effector,
        heading: state.theta,
    }
}

impl ForwardKinematics {
    /// 6 x k world-frame Jacobian (linear rows first) of a point rigidly
    /// attached to `link`, for the `k = 2 + link` joints that move it.
    pub fn spatial_jacobian(&self, model: &RobotModel, link: usize, point: &Vector3<f64>) -> Matrix6xX<f64> {
        let k = model.joints_up_to(link);
        let mut jac = Matrix6xX::zeros(k);
        let base_origin = self.links[0].translation.vector;
        let z = Vector3::z();
        jac[(0, 0)] = self.heading.cos();
        jac[(1, 0)] = self.heading.sin();
        let lin = z.cross(&(point - base_origin));
        jac.fixed_view_mut::<3, 1>(0, 1).copy_from(&lin);
        jac[(5, 1)] = 1.0;
        for i in 0..link {
            let joint = &model.joints[i];
            let frame = &self.joint_frames[i];
            let axis = frame.rotation * joint.axis.into_inner();
            let col = 2 + i;
            match joint.joint_type {
                JointType::Revolute => {
                    let lin = axis.cross(&(point - frame.translation.vector));
                    jac.fixed_view_mut::<3, 1>(0, col).copy_from(&lin);
                    jac.fixed_view_mut::<3, 1>(3, col).copy_from(&axis);
                }
                JointType::Prismatic => {
                    jac.fixed_view_mut::<3, 1>(0, col).copy_from(&axis);
                }
            }
        }
        jac
    }

    /// Translational rows of [`Self::spatial_jacobian`].
    pub fn point_jacobian(&self, model: &RobotModel, link: usize, point: &Vector3<f64>) -> Matrix3xX<f64> {
        self.spatial_jacobian(model, link, point).fixed_rows::<3>(0).into_owned()
    }

    /// 6 x n_dof end-effector Jacobian.
    pub fn end_effector_jacobian(&self, model: &RobotModel) -> Matrix6xX<f64> {
        self.spatial_jacobian(model, model.n_arm(), &self.end_effector.translation.vector)
    }

    pub fn sphere_positions(&self, spheres: &SphereSet) -> Vec<WorldSphere> {
        spheres
            .spheres
            .iter()
            .enumerate()
            .map(|(id, s)| WorldSphere {
                id,
                link: s.link,
                center: self.links[s.link]
                    .transform_point(&Point3::from(Vector3::from(s.offset)))
                    .coords,
                radius: s.radius,
            })
            .collect()
    }
}

/// Jacobian of a point given in `link` coordinates; 6 x (2 + link).
pub fn jacobian(model: &RobotModel, state: &RobotState, link: usize, local_point: &Vector3<f64>) -> Matrix6xX<f64> {
    let fk = forward_kinematics(model, state);
    let world = fk.links[link].transform_point(&Point3::from(*local_point)).coords;
    fk.spatial_jacobian(model, link, &world)
}

pub fn sphere_world_positions(model: &RobotModel, state: &RobotState, spheres: &SphereSet) -> Vec<WorldSphere> {
    forward_kinematics(model, state).sphere_positions(spheres)
}

const SINGULAR_DET: f64 = 1e-14;
const MANIPULABILITY_STEP: f64 = 1e-6;

/// Yoshikawa index `sqrt(det(J J^T))` of the arm, over the configured rows.
pub fn manipulability(model: &RobotModel, state: &RobotState) -> f64 {
    let fk = forward_kinematics(model, state);
    let full = fk.end_effector_jacobian(model);
    let arm = full.columns(2, model.n_arm());
    let rows: Vec<_> = model.manipulability_rows.iter().map(|&r| arm.row(r)).collect();
    let j = nalgebra::DMatrix::from_rows(&rows);
    let det = (&j * j.transpose()).determinant();
    if det <= SINGULAR_DET {
        0.0
    } else {
        det.sqrt()
    }
}

/// Manipulability and its gradient with respect to every joint (zeros for
/// the virtual base joints), by central differences.
pub fn manipulability_jacobian(model: &RobotModel, state: &RobotState) -> (f64, DVector<f64>) {
    let m = manipulability(model, state);
    let mut grad = DVector::zeros(model.n_dof());
    if m == 0.0 {
        return (m, grad);
    }
    let mut probe = state.clone();
    for i in 0..model.n_arm() {
        let q = state.arm[i];
        probe.arm[i] = q + MANIPULABILITY_STEP;
        let up = manipulability(model, &probe);
        probe.arm[i] = q - MANIPULABILITY_STEP;
        let down = manipulability(model, &probe);
        probe.arm[i] = q;
        grad[2 + i] = (up - down) / (2.0 * MANIPULABILITY_STEP);
    }
    (m, grad)
}
