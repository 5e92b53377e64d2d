//! Close-proximity multirotor swarm toolkit.
//!
//! The crate bundles everything needed to study aerodynamic interaction
//! between small and large quadrotors flying near each other:
//!
//! - [`dynamics`]: rigid-body and double-integrator vehicle models with a
//!   first-order motor delay and thrust mixing.
//! - [`aero`]: a synthetic, smooth interaction-force generator (downwash,
//!   ground effect, drag) plus the residual-label pipeline.
//! - [`nn`] and [`deepset`]: a small ReLU MLP stack with manual backprop,
//!   Adam, spectral normalization, and the typed permutation-invariant
//!   interaction model built on top of it.
//! - [`qp`]: a dense ADMM quadratic-program solver.
//! - [`planner`]: two-stage interaction-aware trajectory planning
//!   (sampling-based search followed by sequential convex refinement).
//! - [`control`]: nonlinear tracking controller with learned-force
//!   feed-forward and motor-delay compensation.
//! - [`sim`]: closed-loop experiment harness, scenario data generation and
//!   curriculum training.

pub mod aero;
pub mod control;
pub mod deepset;
pub mod dynamics;
pub mod nn;
pub mod planner;
pub mod presets;
pub mod qp;
pub mod sim;
pub mod util;

pub use dynamics::{FullState, PlanState, RobotRoster, RobotType, Wrench};
