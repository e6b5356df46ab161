//! Deterministic kinematic trial simulation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Isometry3};
use serde::{Deserialize, Serialize};

use crate::controller::{control_step, ControllerConfig};
use crate::distance::DistanceBackend;
use crate::kinematics::{forward_kinematics, RobotModel, RobotState, SphereSet};
use crate::pose::{pose_distance, Pose};
use crate::qp::QpStatus;
use crate::scene::PrimitiveScene;
use crate::{Error, Result};

/// Control period matching 20 Hz.
pub const DEFAULT_DT: f64 = 0.05;
/// 60 s at the default period.
pub const DEFAULT_MAX_STEPS: usize = 1200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub max_steps: usize,
    /// Record wall-clock QP times. Off gives bit-identical logs across runs.
    pub record_timing: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            max_steps: DEFAULT_MAX_STEPS,
            record_timing: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Success,
    Collision,
    Timeout,
    QpFailure,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Success => "success",
            TrialStatus::Collision => "collision",
            TrialStatus::Timeout => "timeout",
            TrialStatus::QpFailure => "qp_failure",
        }
    }
}

/// One logged step. `joint_velocities` is the command applied from `state`;
/// the final record of a trial carries no command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStep {
    pub time: f64,
    pub state: RobotState,
    pub end_effector: Pose,
    /// Minimum ground-truth sphere clearance; `None` without obstacles.
    pub clearance: Option<f64>,
    pub joint_velocities: Vec<f64>,
    pub slack_norm: f64,
    pub qp_status: Option<QpStatus>,
    /// QP wall time in seconds (zero unless timing is recorded).
    pub qp_time: f64,
    /// Wall time of the whole control step in seconds (zero unless timing is recorded).
    pub step_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub status: TrialStatus,
    /// Number of control steps executed.
    pub steps: usize,
    pub dt: f64,
    pub final_translation_error: f64,
    pub final_rotation_error: f64,
    pub min_clearance: Option<f64>,
    pub trajectory: Vec<TrialStep>,
}

impl TrialResult {
    pub fn is_success(&self) -> bool {
        self.status == TrialStatus::Success
    }

    pub fn end_effector_positions(&self) -> Vec<nalgebra::Vector3<f64>> {
        self.trajectory
            .iter()
            .map(|s| nalgebra::Vector3::from(s.end_effector.position))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes one JSON record per trajectory step.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        for step in &self.trajectory {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// First-order integration of base (body-frame forward speed, turn rate)
/// and arm velocities; the arm is clamped to its position limits.
pub fn integrate(model: &RobotModel, state: &RobotState, velocities: &DVector<f64>, dt: f64) -> RobotState {
    let forward = velocities[0] * dt;
    let mut next = RobotState::new(
        state.x + forward * state.theta.cos(),
        state.y + forward * state.theta.sin(),
        state.theta + velocities[1] * dt,
        state.arm.iter().enumerate().map(|(i, q)| q + velocities[2 + i] * dt).collect(),
    );
    next.clamp_to(model);
    next
}

/// Minimum ground-truth clearance over all spheres and whether it is negative.
pub fn check_collision(scene: &PrimitiveScene, model: &RobotModel, state: &RobotState, spheres: &SphereSet) -> (bool, f64) {
    let fk = forward_kinematics(model, state);
    let clearance = fk
        .sphere_positions(spheres)
        .iter()
        .map(|s| scene.distance(&s.center) - s.radius)
        .fold(f64::INFINITY, f64::min);
    (clearance < 0.0, clearance)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Runs one reaching trial until success, collision, QP failure or timeout.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    model: &RobotModel,
    spheres: &SphereSet,
    ground_truth: &PrimitiveScene,
    start: &RobotState,
    target: &Isometry3<f64>,
    backend: &dyn DistanceBackend,
    controller: &ControllerConfig,
    sim: &SimConfig,
) -> TrialResult {
    let mut state = start.clone();
    let mut trajectory = Vec::new();
    let mut min_clearance = f64::INFINITY;
    let record = |state: &RobotState, step: usize, clearance: f64| TrialStep {
        time: step as f64 * sim.dt,
        state: state.clone(),
        end_effector: Pose::from(forward_kinematics(model, state).end_effector),
        clearance: finite(clearance),
        joint_velocities: Vec::new(),
        slack_norm: 0.0,
        qp_status: None,
        qp_time: 0.0,
        step_time: 0.0,
    };

    let (mut collided, mut clearance) = check_collision(ground_truth, model, &state, spheres);
    min_clearance = min_clearance.min(clearance);
    let mut status = TrialStatus::Timeout;
    let mut steps = 0;
    loop {
        let ee = forward_kinematics(model, &state).end_effector;
        let (et, er) = pose_distance(&ee, target);
        let mut entry = record(&state, steps, clearance);
        if collided {
            status = TrialStatus::Collision;
            trajectory.push(entry);
            break;
        }
        if et < controller.position_tolerance && er < controller.rotation_tolerance {
            status = TrialStatus::Success;
            trajectory.push(entry);
            break;
        }
        if steps >= sim.max_steps {
            trajectory.push(entry);
            break;
        }
        let clock = Instant::now();
        let outcome = control_step(model, spheres, &state, target, backend, controller);
        let step_time = clock.elapsed().as_secs_f64();
        let out = match outcome {
            Ok(out) if out.diagnostics.qp_status == QpStatus::Optimal => out,
            Ok(out) => {
                entry.qp_status = Some(out.diagnostics.qp_status);
                status = TrialStatus::QpFailure;
                trajectory.push(entry);
                break;
            }
            Err(_) => {
                status = TrialStatus::QpFailure;
                trajectory.push(entry);
                break;
            }
        };
        entry.joint_velocities = out.joint_velocities.iter().copied().collect();
        entry.slack_norm = out.slack.norm();
        entry.qp_status = Some(out.diagnostics.qp_status);
        if sim.record_timing {
            entry.qp_time = out.diagnostics.qp_time;
            entry.step_time = step_time;
        }
        trajectory.push(entry);

        state = integrate(model, &state, &out.joint_velocities, sim.dt);
        steps += 1;
        (collided, clearance) = check_collision(ground_truth, model, &state, spheres);
        min_clearance = min_clearance.min(clearance);
    }

    let ee = forward_kinematics(model, &state).end_effector;
    let (et, er) = pose_distance(&ee, target);
    TrialResult {
        status,
        steps,
        dt: sim.dt,
        final_translation_error: et,
        final_rotation_error: er,
        min_clearance: finite(min_clearance),
        trajectory,
    }
}

#[cfg(test)]
mod tests;
