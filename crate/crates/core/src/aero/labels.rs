//! Residual-force labels from logged flight segments.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dynamics::{FullState, RobotType};
use crate::util::gravity;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("need at least 5 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-uniform sampling: step {got} vs nominal {nominal} at index {index}")]
    NonUniform { index: usize, got: f64, nominal: f64 },
}

/// One logged state with its timestamp, s.
#[derive(Debug, Clone)]
pub struct TimedSample {
    pub t: f64,
    pub state: FullState,
}

/// Residual-force z labels for the interior samples of a uniform log.
///
/// Acceleration comes from five-point central differences of the logged
/// velocity; the rotor wrench is reconstructed from the logged delayed
/// motor state, so command lag does not contaminate the label. Returns
/// `(sample index, label in N)` for indices `2..n-2`.
pub fn compute_residual_labels(
    samples: &[TimedSample],
    ty: &RobotType,
) -> Result<Vec<(usize, f64)>, LabelError> {
    let n = samples.len();
    if n < 5 {
        return Err(LabelError::TooFewSamples(n));
    }
    let h = (samples[n - 1].t - samples[0].t) / (n - 1) as f64;
    for i in 1..n {
        let step = samples[i].t - samples[i - 1].t;
        if (step - h).abs() > 0.01 * h {
            return Err(LabelError::NonUniform { index: i, got: step, nominal: h });
        }
    }

    let mut out = Vec::with_capacity(n - 4);
    for k in 2..n - 2 {
        let vdot = (-samples[k + 2].state.v + 8.0 * samples[k + 1].state.v
            - 8.0 * samples[k - 1].state.v
            + samples[k - 2].state.v)
            / (12.0 * h);
        let s = &samples[k].state;
        let thrust: f64 = s.u_motor.iter().sum();
        let f_rotor_world = s.r * Vector3::new(0.0, 0.0, thrust);
        let y = ty.mass * vdot - ty.mass * gravity() - f_rotor_world;
        out.push((k, y.z));
    }
    Ok(out)
}
