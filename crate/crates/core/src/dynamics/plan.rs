//! Double-integrator planning dynamics.

use nalgebra::Vector3;

use super::{PlanState, RobotType};

/// Time derivative of a [`PlanState`].
#[derive(Debug, Clone, Copy)]
pub struct PlanDerivative {
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dfa: Vector3<f64>,
}

/// Planning dynamics: acceleration command plus the mass-normalized
/// interaction force. `fa_dot` is supplied by the caller, typically from the
/// learned model changing along the motion.
pub fn plan_derivative(
    state: &PlanState,
    u: &Vector3<f64>,
    fa_dot: &Vector3<f64>,
    ty: &RobotType,
) -> PlanDerivative {
    PlanDerivative {
        dp: state.v,
        dv: u + state.fa / ty.mass,
        dfa: *fa_dot,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::roster;
    use crate::util::G;

    #[test]
    fn rest_with_no_input_is_stationary() {
        let ty = roster().get("small").unwrap().clone();
        let s = PlanState::new(Vector3::zeros(), Vector3::zeros());
        let d = plan_derivative(&s, &Vector3::zeros(), &Vector3::zeros(), &ty);
        assert!(d.dp.norm() == 0.0 && d.dv.norm() == 0.0 && d.dfa.norm() == 0.0);
    }

    #[test]
    fn pure_acceleration_command() {
        let ty = roster().get("small").unwrap().clone();
        let s = PlanState::new(Vector3::zeros(), Vector3::zeros());
        let u = Vector3::new(0.0, 0.0, G);
        let d = plan_derivative(&s, &u, &Vector3::zeros(), &ty);
        assert_eq!(d.dv, u);
    }

    #[test]
    fn force_is_mass_normalized() {
        let ty = roster().get("small").unwrap().clone();
        let mut s = PlanState::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        s.fa = Vector3::new(0.0, 0.0, -0.0883);
        let d = plan_derivative(&s, &Vector3::zeros(), &Vector3::zeros(), &ty);
        assert!((d.dv.z - (-0.0883 / ty.mass)).abs() < 1e-12);
        assert_eq!(d.dp, s.v);
    }
}
