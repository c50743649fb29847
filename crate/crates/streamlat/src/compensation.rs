//! Latency compensation: maps detections produced at t0 onto a later query
//! time, either trivially (zero-hold), by uniform motion, by a fixed forecast
//! offset, or along a predicted trajectory.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{DetectionBox, Pose2};
use crate::prediction::{sample_trajectory, segment_displacement, TrajectoryPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant")]
pub enum CompensationStrategy {
    /// Copy the detections unchanged.
    ZeroHold,
    /// Fixed velocity offset at a constant horizon, independent of the query
    /// time — the fixed-point forecasting paradigm.
    Forecasting { fixed_horizon: f64 },
    /// Uniform-motion rollout to the query time.
    VelocityBased,
    /// Follow the best-scoring predicted trajectory mode.
    Trajectory,
}

impl std::fmt::Display for CompensationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CompensationStrategy::ZeroHold => write!(f, "zero_hold"),
            CompensationStrategy::Forecasting { fixed_horizon } => {
                write!(f, "forecasting:{fixed_horizon}")
            }
            CompensationStrategy::VelocityBased => write!(f, "velocity_based"),
            CompensationStrategy::Trajectory => write!(f, "trajectory"),
        }
    }
}

#[derive(Debug, Error)]
pub enum CompensationError {
    #[error("trajectory compensation needs one prediction per detection ({dets} dets, {preds} predictions)")]
    MissingPredictions { dets: usize, preds: usize },
    #[error("query time {t_j} precedes detection time {t0}")]
    QueryBeforeDetection { t0: f64, t_j: f64 },
    #[error("forecasting horizon must be positive, got {0}")]
    BadHorizon(f64),
}

/// Only with enough local displacement is the trajectory tangent a credible
/// heading; below this, keep the detected yaw (near-static agents would flip).
const YAW_TANGENT_MIN_DISP: f64 = 0.1;

/// Map detections from their capture time `t0` to query time `t_j`. All
/// strategies preserve score, class, size, and velocity; `Trajectory` may
/// additionally rotate yaw toward the local path tangent.
pub fn compensate(
    dets: &[DetectionBox],
    aux: Option<&[TrajectoryPrediction]>,
    strategy: &CompensationStrategy,
    t0: f64,
    t_j: f64,
) -> Result<Vec<DetectionBox>, CompensationError> {
    if t_j < t0 {
        return Err(CompensationError::QueryBeforeDetection { t0, t_j });
    }
    let dt = t_j - t0;
    match strategy {
        CompensationStrategy::ZeroHold => Ok(dets.to_vec()),
        CompensationStrategy::Forecasting { fixed_horizon } => {
            if *fixed_horizon <= 0.0 {
                return Err(CompensationError::BadHorizon(*fixed_horizon));
            }
            Ok(dets
                .iter()
                .map(|d| {
                    let mut out = d.clone();
                    out.center[0] += d.velocity[0] * fixed_horizon;
                    out.center[1] += d.velocity[1] * fixed_horizon;
                    out
                })
                .collect())
        }
        CompensationStrategy::VelocityBased => Ok(dets
            .iter()
            .map(|d| {
                let mut out = d.clone();
                out.center[0] += d.velocity[0] * dt;
                out.center[1] += d.velocity[1] * dt;
                out
            })
            .collect()),
        CompensationStrategy::Trajectory => {
            let preds = aux.ok_or(CompensationError::MissingPredictions {
                dets: dets.len(),
                preds: 0,
            })?;
            if preds.len() != dets.len() {
                return Err(CompensationError::MissingPredictions {
                    dets: dets.len(),
                    preds: preds.len(),
                });
            }
            Ok(dets
                .iter()
                .zip(preds)
                .map(|(d, traj)| {
                    let mut out = d.clone();
                    let mode = traj.best_mode();
                    let off = sample_trajectory(traj, mode, dt);
                    out.center[0] += off[0];
                    out.center[1] += off[1];
                    let disp = segment_displacement(traj, mode, dt);
                    if (disp[0] * disp[0] + disp[1] * disp[1]).sqrt() > YAW_TANGENT_MIN_DISP {
                        out.yaw = disp[1].atan2(disp[0]);
                    }
                    out
                })
                .collect())
        }
    }
}

/// Re-express detections given in the ego frame at t0 in the ego frame at
/// t_j.
pub fn ego_reframe(dets: &[DetectionBox], ego_t0: &Pose2, ego_tj: &Pose2) -> Vec<DetectionBox> {
    let rel = ego_t0.relative_to(ego_tj);
    dets.iter()
        .map(|d| {
            let mut out = d.clone();
            out.center = rel.apply(d.center);
            out.yaw = crate::geom::wrap_angle(d.yaw + rel.yaw);
            out.velocity = rel.rotate(d.velocity);
            out
        })
        .collect()
}
