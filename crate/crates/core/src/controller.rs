//! Per-step velocity QP for holistic base and arm control.
//!
//! The decision variable stacks joint velocities (base virtual joints first)
//! and a 6-D slack on the end-effector twist:
//!
//! ```text
//! minimise    1/2 x' diag(lambda_q I, lambda_slack I) x + c'x
//! subject to  [J_e | I] x = v_e
//!             A_c x <= b_c            (velocity dampers, one row per distance result)
//!             lower <= x <= upper     (velocity limits tightened near position limits)
//! ```

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3xX, Vector6};
use serde::{Deserialize, Serialize};

use crate::distance::{DistanceBackend, DistanceResult, RasterConfig};
use crate::kinematics::{forward_kinematics, manipulability_jacobian, RobotModel, RobotState, SphereSet};
use crate::pose::{pose_error, wrap_angle};
use crate::qp::{solve_qp, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Proportional gain of the servo law (1/s).
    pub servo_gain: f64,
    /// Per-component caps on the commanded twist (m/s, rad/s).
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub joint_weight: f64,
    pub slack_weight: f64,
    pub manipulability_gain: f64,
    pub base_orientation_gain: f64,
    /// Clearance beyond which obstacles are ignored (m).
    pub influence_distance: f64,
    /// Clearance at which approach speed must reach zero (m).
    pub stopping_distance: f64,
    /// Approach-speed scale of the velocity damper (1/s).
    pub damper_gain: f64,
    pub collision_gain_max: f64,
    /// Translation error (m) below which the collision cost fades out linearly; zero disables fading.
    pub collision_gain_fade: f64,
    pub collision_constraints: bool,
    pub active_cost: bool,
    /// Distance from a position limit at which the velocity bound starts shrinking (rad or m).
    pub joint_limit_influence: f64,
    pub joint_limit_buffer: f64,
    pub position_tolerance: f64,
    pub rotation_tolerance: f64,
    pub qp_tolerance: f64,
    pub qp_max_iter: usize,
    /// Splats below this opacity are ignored by the geometric backend.
    pub opacity_min: f64,
    pub raster: RasterConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            servo_gain: 2.5,
            max_linear_speed: 0.25,
            max_angular_speed: 0.5,
            joint_weight: 1.0,
            slack_weight: 3e4,
            manipulability_gain: 0.05,
            base_orientation_gain: 0.2,
            influence_distance: 0.3,
            stopping_distance: 0.02,
            damper_gain: 1.0,
            collision_gain_max: 3000.0,
            collision_gain_fade: 0.3,
            collision_constraints: true,
            active_cost: true,
            joint_limit_influence: 0.2,
            joint_limit_buffer: 0.02,
            position_tolerance: 0.02,
            rotation_tolerance: 0.035,
            qp_tolerance: DEFAULT_TOL,
            qp_max_iter: DEFAULT_MAX_ITER,
            opacity_min: 0.0,
            raster: RasterConfig::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("controller config: {m}")));
        if !(self.influence_distance > self.stopping_distance && self.stopping_distance >= 0.0) {
            return bad("requires influence_distance > stopping_distance >= 0");
        }
        let gains = [
            self.servo_gain,
            self.manipulability_gain,
            self.base_orientation_gain,
            self.damper_gain,
            self.collision_gain_max,
            self.collision_gain_fade,
            self.opacity_min,
        ];
        if gains.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return bad("gains must be finite and non-negative");
        }
        if !(self.joint_weight > 0.0 && self.slack_weight > self.joint_weight) {
            return bad("requires slack_weight > joint_weight > 0");
        }
        if !(self.max_linear_speed > 0.0 && self.max_angular_speed > 0.0) {
            return bad("twist caps must be positive");
        }
        if !(self.damper_gain > 0.0) {
            return bad("damper_gain must be positive");
        }
        if !(self.joint_limit_influence > self.joint_limit_buffer && self.joint_limit_buffer >= 0.0) {
            return bad("requires joint_limit_influence > joint_limit_buffer >= 0");
        }
        if !(self.position_tolerance > 0.0 && self.rotation_tolerance > 0.0 && self.qp_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        self.raster.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ControllerConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub inequalities: usize,
    pub active_constraints: usize,
    pub min_distance: Option<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Wall-clock QP time in seconds.
    pub qp_time: f64,
    pub manipulability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub joint_velocities: DVector<f64>,
    pub slack: Vector6<f64>,
    pub diagnostics: Diagnostics,
}

/// Proportional twist toward `target`, each component clamped to its cap.
pub fn servo_twist(current: &Isometry3<f64>, target: &Isometry3<f64>, gain: f64, max_linear: f64, max_angular: f64) -> Vector6<f64> {
    let mut v = pose_error(current, target) * gain;
    for i in 0..6 {
        let cap = if i < 3 { max_linear } else { max_angular };
        v[i] = v[i].clamp(-cap, cap);
    }
    v
}

/// Velocity-damper rows `direction' J_v qdot <= eta (d - d_s) / (d_i - d_s)`.
///
/// `jacobians[k]` is the translational Jacobian of the sphere of `results[k]`;
/// it may have fewer than `n_dof` columns. Rows span `n_dof + 6` columns.
pub fn build_damper_constraints(
    results: &[DistanceResult],
    jacobians: &[Matrix3xX<f64>],
    influence: f64,
    stopping: f64,
    eta: f64,
    n_dof: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !(influence > stopping) {
        return Err(Error::InvalidArgument("damper requires influence > stopping distance".into()));
    }
    if results.len() != jacobians.len() {
        return Err(Error::InvalidArgument("one jacobian per distance result required".into()));
    }
    let mut a = DMatrix::zeros(results.len(), n_dof + 6);
    let mut b = DVector::zeros(results.len());
    for (row, (r, j)) in results.iter().zip(jacobians).enumerate() {
        if j.ncols() > n_dof {
            return Err(Error::InvalidArgument("jacobian has more columns than joints".into()));
        }
        let jd = r.direction.transpose() * j;
        a.view_mut((row, 0), (1, j.ncols())).copy_from(&jd);
        b[row] = eta * (r.distance - stopping) / (influence - stopping);
    }
    Ok((a, b))
}

/// Proximity-weighted mean of the damper rows, scaled by a gain that grows
/// from zero at the influence distance to `beta_max` at the stopping distance.
pub fn build_active_collision_cost(
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
    eta: f64,
    beta_max: f64,
) -> DVector<f64> {
    let mut cost = DVector::zeros(rows.ncols());
    if rows.nrows() == 0 {
        return cost;
    }
    // d recovered from the rhs gives w = (d_i - d) / (d_i - d_s) = 1 - b / eta.
    let weights: Vec<f64> = rhs.iter().map(|b| (1.0 - b / eta).max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return cost;
    }
    for (i, w) in weights.iter().enumerate() {
        cost.axpy(*w / total, &rows.row(i).transpose(), 1.0);
    }
    let peak = weights.iter().copied().fold(0.0, f64::max);
    cost * (beta_max * peak.clamp(0.0, 1.0))
}

/// Scale in `[0, 1]` applied to the collision cost: the translation error
/// over `fade`, or 1 when fading is disabled.
pub fn collision_fade(current: &Isometry3<f64>, target: &Isometry3<f64>, fade: f64) -> f64 {
    if fade <= 0.0 {
        return 1.0;
    }
    let error = (target.translation.vector - current.translation.vector).norm();
    (error / fade).min(1.0)
}

/// Signed heading error from the base x axis to the ground-plane bearing of
/// the target.
pub fn heading_error(state: &RobotState, target: &Isometry3<f64>) -> f64 {
    let t = target.translation.vector;
    let (dx, dy) = (t.x - state.x, t.y - state.y);
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    wrap_angle(dy.atan2(dx) - state.theta)
}

/// Linear cost rotating the base toward the target; only the base-rotation entry is set.
pub fn base_orientation_cost(state: &RobotState, target: &Isometry3<f64>, gain: f64, n_dof: usize) -> DVector<f64> {
    let mut c = DVector::zeros(n_dof + 6);
    c[1] = -gain * heading_error(state, target);
    c
}

/// Velocity bounds for `x`; slack is unbounded.
pub fn velocity_bounds(model: &RobotModel, state: &RobotState, config: &ControllerConfig) -> (DVector<f64>, DVector<f64>) {
    let n = model.n_dof();
    let (lo, hi) = model.velocity_limits();
    let mut lower = DVector::from_element(n + 6, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(n + 6, f64::INFINITY);
    for i in 0..n {
        lower[i] = lo[i];
        upper[i] = hi[i];
    }
    let span = config.joint_limit_influence - config.joint_limit_buffer;
    for (k, (joint, &q)) in model.joints.iter().zip(&state.arm).enumerate() {
        let up = ((joint.upper - q - config.joint_limit_buffer) / span).clamp(0.0, 1.0);
        let down = ((q - joint.lower - config.joint_limit_buffer) / span).clamp(0.0, 1.0);
        upper[2 + k] *= up;
        lower[2 + k] *= down;
    }
    (lower, upper)
}

/// Assembles and solves one control step. An infeasible or unfinished QP
/// yields a zero-velocity command.
pub fn control_step(
    model: &RobotModel,
    spheres: &SphereSet,
    state: &RobotState,
    target: &Isometry3<f64>,
    backend: &dyn DistanceBackend,
    config: &ControllerConfig,
) -> Result<ControlOutput> {
    let n = model.n_dof();
    let fk = forward_kinematics(model, state);
    let twist = servo_twist(
        &fk.end_effector,
        target,
        config.servo_gain,
        config.max_linear_speed,
        config.max_angular_speed,
    );
    let j_e = fk.end_effector_jacobian(model);

    let results = if config.collision_constraints || config.active_cost {
        backend.query(&fk.sphere_positions(spheres), config.influence_distance)
    } else {
        Vec::new()
    };
    let jacobians: Vec<Matrix3xX<f64>> = results
        .iter()
        .map(|r| {
            let s = &spheres.spheres[r.sphere_id];
            let centre = fk.links[s.link].transform_point(&nalgebra::Point3::from(nalgebra::Vector3::from(s.offset))).coords;
            fk.point_jacobian(model, s.link, &centre)
        })
        .collect();
    let (a_c, b_c) = build_damper_constraints(
        &results,
        &jacobians,
        config.influence_distance,
        config.stopping_distance,
        config.damper_gain,
        n,
    )?;

    let (manip, manip_grad) = manipulability_jacobian(model, state);
    let mut c = base_orientation_cost(state, target, config.base_orientation_gain, n);
    for i in 0..n {
        c[i] -= config.manipulability_gain * manip_grad[i];
    }
    if config.active_cost {
        let c_gain = config.collision_gain_max * collision_fade(&fk.end_effector, target, config.collision_gain_fade);
        c += build_active_collision_cost(&a_c, &b_c, config.damper_gain, c_gain);
    }

    let mut q_diag = DVector::from_element(n + 6, config.joint_weight);
    q_diag.rows_mut(n, 6).fill(config.slack_weight);
    let mut a_eq = DMatrix::zeros(6, n + 6);
    a_eq.view_mut((0, 0), (6, n)).copy_from(&j_e);
    a_eq.view_mut((0, n), (6, 6)).fill_with_identity();
    let (lower, upper) = velocity_bounds(model, state, config);
    let mut problem = QpProblem::new(DMatrix::from_diagonal(&q_diag), c)
        .with_equalities(a_eq, DVector::from_column_slice(twist.as_slice()))
        .with_bounds(lower, upper);
    if config.collision_constraints {
        problem = problem.with_inequalities(a_c.clone(), b_c.clone());
    }

    let start = Instant::now();
    let solution = solve_qp(&problem, config.qp_tolerance, config.qp_max_iter)?;
    let qp_time = start.elapsed().as_secs_f64();

    let optimal = solution.status == QpStatus::Optimal;
    let (joint_velocities, slack) = if optimal {
        (
            solution.x.rows(0, n).into_owned(),
            Vector6::from_iterator(solution.x.rows(n, 6).iter().copied()),
        )
    } else {
        (DVector::zeros(n), Vector6::zeros())
    };
    let min_distance = results.iter().map(|r| r.distance).fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
    Ok(ControlOutput {
        joint_velocities,
        slack,
        diagnostics: Diagnostics {
            inequalities: if config.collision_constraints { results.len() } else { 0 },
            active_constraints: solution.active_inequalities,
            min_distance,
            qp_status: solution.status,
            qp_iterations: solution.iterations,
            qp_time,
            manipulability: manip,
        },
    })
}
