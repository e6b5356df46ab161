//! Trial metrics: success and collision rates, clearance, gracefulness,
//! path length and timing.

use serde::{Deserialize, Serialize};

use crate::sim::{TrialResult, TrialStatus};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub trials: usize,
    pub successes: usize,
    pub collisions: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    /// Trials entering the clearance, gracefulness and path-length averages.
    pub common_successes: usize,
    /// Mean over trials of the per-step minimum ground-truth clearance (m).
    pub avg_distance: Option<f64>,
    /// Mean absolute end-effector acceleration (m/s^2).
    pub gracefulness: Option<f64>,
    /// Mean end-effector path length (m).
    pub path_length: Option<f64>,
    /// QP solve time over all steps (ms).
    pub qp_time_mean_ms: Option<f64>,
    pub qp_time_std_ms: Option<f64>,
    /// Reciprocal of the mean control-step time (Hz).
    pub control_rate_hz: Option<f64>,
}

/// Sum of consecutive distances.
pub fn path_length(points: &[nalgebra::Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Mean norm of the second finite difference divided by `dt^2`.
pub fn mean_abs_acceleration(points: &[nalgebra::Vector3<f64>], dt: f64) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let total: f64 = points
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).norm() / (dt * dt))
        .sum();
    total / (points.len() - 2) as f64
}

/// Mean of the logged per-step clearances, `None` when none were logged.
pub fn mean_clearance(trial: &TrialResult) -> Option<f64> {
    let values: Vec<f64> = trial.trajectory.iter().filter_map(|s| s.clearance).collect();
    mean(&values)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt())
}

/// Indices at which every configuration succeeded. All groups must be
/// aligned trial by trial.
pub fn common_successes(groups: &[&[TrialResult]]) -> Result<Vec<bool>> {
    let Some(first) = groups.first() else {
        return Ok(Vec::new());
    };
    if groups.iter().any(|g| g.len() != first.len()) {
        return Err(Error::InvalidArgument("trial groups differ in length".into()));
    }
    Ok((0..first.len())
        .map(|i| groups.iter().all(|g| g[i].is_success()))
        .collect())
}

/// Aggregates one configuration. Path, clearance and gracefulness cover the
/// successful trials selected by `mask` (all successes when `None`) and are
/// `None` when that set is empty.
pub fn compute_metrics(trials: &[TrialResult], mask: Option<&[bool]>) -> Result<MetricsRecord> {
    if trials.is_empty() {
        return Err(Error::InvalidArgument("no trials to aggregate".into()));
    }
    if let Some(mask) = mask {
        if mask.len() != trials.len() {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for {} trials",
                mask.len(),
                trials.len()
            )));
        }
    }
    let n = trials.len();
    let successes = trials.iter().filter(|t| t.is_success()).count();
    let collisions = trials.iter().filter(|t| t.status == TrialStatus::Collision).count();
    let selected: Vec<&TrialResult> = trials
        .iter()
        .enumerate()
        .filter(|(i, t)| t.is_success() && mask.is_none_or(|m| m[*i]))
        .map(|(_, t)| t)
        .collect();

    let clearances: Vec<f64> = selected.iter().filter_map(|t| mean_clearance(t)).collect();
    let grace: Vec<f64> = selected
        .iter()
        .map(|t| mean_abs_acceleration(&t.end_effector_positions(), t.dt))
        .collect();
    let lengths: Vec<f64> = selected.iter().map(|t| path_length(&t.end_effector_positions())).collect();

    let solved = || trials.iter().flat_map(|t| t.trajectory.iter()).filter(|s| s.qp_status.is_some());
    let qp_ms: Vec<f64> = solved().map(|s| s.qp_time * 1e3).collect();
    let timed = qp_ms.iter().any(|&t| t > 0.0);
    let step_times: Vec<f64> = solved().map(|s| s.step_time).collect();
    let control_rate = mean(&step_times).filter(|&m| m > 0.0).map(|m| 1.0 / m);

    Ok(MetricsRecord {
        trials: n,
        successes,
        collisions,
        success_rate: successes as f64 / n as f64,
        collision_rate: collisions as f64 / n as f64,
        common_successes: selected.len(),
        avg_distance: mean(&clearances),
        gracefulness: mean(&grace),
        path_length: mean(&lengths),
        qp_time_mean_ms: if timed { mean(&qp_ms) } else { None },
        qp_time_std_ms: if timed { std_dev(&qp_ms) } else { None },
        control_rate_hz: control_rate,
    })
}
