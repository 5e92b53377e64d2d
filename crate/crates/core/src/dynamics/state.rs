//! State and wrench value types.

use nalgebra::{Matrix3, Vector3, Vector4};

use super::DynamicsError;

/// Full rigid-body state of one vehicle plus its delayed motor state.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    /// World position, m.
    pub p: Vector3<f64>,
    /// World velocity, m/s.
    pub v: Vector3<f64>,
    /// Body-to-world rotation.
    pub r: Matrix3<f64>,
    /// Body angular velocity, rad/s.
    pub omega: Vector3<f64>,
    /// Current per-motor thrust forces (the first-order delay state), N.
    pub u_motor: Vector4<f64>,
}

impl FullState {
    /// Level hover at `p` with the motor state already at hover thrust.
    pub fn hover(p: Vector3<f64>, ty: &super::RobotType) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            r: Matrix3::identity(),
            omega: Vector3::zeros(),
            u_motor: ty.hover_motor_forces(),
        }
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !self.is_finite() {
            return Err(DynamicsError::InvalidState("non-finite entries".into()));
        }
        let ortho = (self.r.transpose() * self.r - Matrix3::identity()).norm();
        if ortho > 1e-9 {
            return Err(DynamicsError::InvalidState(format!(
                "rotation not orthonormal (drift {ortho:.2e})"
            )));
        }
        if (self.r.determinant() - 1.0).abs() > 1e-9 {
            return Err(DynamicsError::InvalidState("rotation not proper".into()));
        }
        if self.u_motor.iter().any(|&u| u < 0.0) {
            return Err(DynamicsError::InvalidState("negative motor state".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.r.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
            && self.u_motor.iter().all(|x| x.is_finite())
    }
}

/// Simplified planning state: position, velocity and the predicted
/// interaction force (z component only, x/y held at zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Predicted interaction force, N.
    pub fa: Vector3<f64>,
}

impl PlanState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v, fa: Vector3::zeros() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.fa.iter().all(|x| x.is_finite())
    }
}

/// Thrust and body torque produced by the rotors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    /// Total thrust along the body z axis, N.
    pub thrust: f64,
    /// Body torque, N m.
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }

    pub fn zero() -> Self {
        Self { thrust: 0.0, torque: Vector3::zeros() }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.thrust, self.torque.x, self.torque.y, self.torque.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self { thrust: v[0], torque: Vector3::new(v[1], v[2], v[3]) }
    }

    pub fn is_finite(&self) -> bool {
        self.thrust.is_finite() && self.torque.iter().all(|x| x.is_finite())
    }
}
