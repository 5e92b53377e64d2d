//! Two-stage interaction-aware trajectory planning.

pub mod rrt;
pub mod scp;
mod traj;
mod validity;

pub use traj::{Trajectory, TrajectoryPoint};
pub use validity::{state_valid, ValidityConfig, ValidityReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no solution within budget for robot {robot}")]
    Timeout { robot: usize },
    #[error("infeasible start for robot {robot}: {reason}")]
    InfeasibleStart { robot: usize, reason: String },
    #[error("linearization failed at step {step}")]
    LinearizationFailed { step: usize },
    #[error(transparent)]
    Model(#[from] crate::deepset::ModelError),
    #[error(transparent)]
    Qp(#[from] crate::qp::QpError),
}
