//! Vehicle models: full rigid-body dynamics with motor delay, the simplified
//! double-integrator planning dynamics, and thrust mixing.

mod mixing;
mod plan;
mod rigid;
mod robot;
mod state;

pub use mixing::{thrust_mixing, MotorCommand};
pub use plan::{plan_derivative, PlanDerivative};
pub use rigid::{integrate_rk4, nominal_derivative, project_so3, skew as skew_matrix, FullStateDot};
pub use robot::{BivariatePoly, RobotRoster, RobotType, ENV_TYPE};
pub use state::{FullState, PlanState, Wrench};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("integration diverged (non-finite state after step)")]
    IntegrationDiverged,
    #[error("invalid robot type `{name}`: {reason}")]
    InvalidType { name: String, reason: String },
    #[error("unknown robot type `{0}`")]
    UnknownType(String),
    #[error("config parse error: {0}")]
    Config(String),
    #[error("state invariant violated: {0}")]
    InvalidState(String),
}
