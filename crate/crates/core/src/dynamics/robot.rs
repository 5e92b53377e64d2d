//! Per-type physical parameters and the roster config format.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::Deserialize;

use super::DynamicsError;
use crate::util::G;

/// Name reserved for the environment pseudo-type (ground effect, drag).
pub const ENV_TYPE: &str = "env";

/// Bivariate polynomial over the monomial basis
/// `[1, a, b, a^2, a*b, b^2]`, coefficients lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariatePoly {
    pub coeffs: Vec<f64>,
}

impl BivariatePoly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(coeffs.len() <= 6, "basis supports up to degree 2");
        Self { coeffs }
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let basis = [1.0, a, b, a * a, a * b, b * b];
        self.coeffs
            .iter()
            .zip(basis.iter())
            .map(|(c, m)| c * m)
            .sum()
    }
}

/// Physical description of one vehicle type.
///
/// Thrust-related polynomials follow the bench-calibration convention:
/// `thrust_poly(pwm, vbat)` gives one rotor's force in grams,
/// `pwm_poly(grams, vbat)` the normalized PWM needed for a rotor force, and
/// `maxthrust_poly(pwm, vbat)` the maximum achievable rotor force in grams.
#[derive(Debug, Clone)]
pub struct RobotType {
    pub name: String,
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub inertia_inv: Matrix3<f64>,
    /// Maps per-motor thrust forces (N) to the output wrench `[T; tau]`.
    pub b0: Matrix4<f64>,
    pub b0_inv: Matrix4<f64>,
    /// Motor response time constant, 1/s.
    pub delay_lambda: f64,
    pub thrust_poly: BivariatePoly,
    pub pwm_poly: BivariatePoly,
    pub maxthrust_poly: BivariatePoly,
    /// Total thrust ceiling, N.
    pub max_total_thrust: f64,
    /// Frame diameter, m.
    pub diameter: f64,
    /// Largest tolerable interaction force magnitude, N.
    pub fa_max: f64,
    /// Minimum center distance to each other type, m.
    pub collision_radius: BTreeMap<String, f64>,
    /// Planner acceleration box half-width per axis, m/s^2.
    pub u_max: Vector3<f64>,
}

impl RobotType {
    /// Per-motor thrust forces that realize a hover wrench `[m g; 0]`.
    pub fn hover_motor_forces(&self) -> nalgebra::Vector4<f64> {
        self.b0_inv * nalgebra::Vector4::new(self.mass * G, 0.0, 0.0, 0.0)
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let fail = |reason: &str| {
            Err(DynamicsError::InvalidType {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !(self.mass > 0.0) {
            return fail("mass must be positive");
        }
        if !(self.delay_lambda > 0.0) {
            return fail("delay_lambda must be positive");
        }
        if !(self.fa_max > 0.0) {
            return fail("fa_max must be positive");
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12 {
            return fail("inertia must be symmetric");
        }
        if self.inertia.cholesky().is_none() {
            return fail("inertia must be positive-definite");
        }
        Ok(())
    }
}

/// All robot types available to an experiment, loaded from one config file.
#[derive(Debug, Clone)]
pub struct RobotRoster {
    types: Vec<RobotType>,
}

impl RobotRoster {
    pub fn from_types(types: Vec<RobotType>) -> Result<Self, DynamicsError> {
        let roster = Self { types };
        roster.validate()?;
        Ok(roster)
    }

    /// Parses the TOML roster format; see `RosterFile` for the schema.
    pub fn from_toml(text: &str) -> Result<Self, DynamicsError> {
        let file: RosterFile =
            toml::from_str(text).map_err(|e| DynamicsError::Config(e.to_string()))?;
        let mut types = Vec::new();
        for (name, t) in file.types {
            types.push(t.build(name)?);
        }
        // map order is not insertion order; keep a stable, readable order
        types.sort_by(|a, b| a.name.cmp(&b.name));
        Self::from_types(types)
    }

    pub fn get(&self, name: &str) -> Result<&RobotType, DynamicsError> {
        self.types
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DynamicsError::UnknownType(name.to_string()))
    }

    pub fn types(&self) -> &[RobotType] {
        &self.types
    }

    /// Sorted list of type names; the canonical group order used everywhere.
    pub fn type_names(&self) -> Vec<String> {
        self.types.iter().map(|t| t.name.clone()).collect()
    }

    pub fn collision_radius(&self, a: &str, b: &str) -> Result<f64, DynamicsError> {
        self.get(a)?
            .collision_radius
            .get(b)
            .copied()
            .ok_or_else(|| DynamicsError::Config(format!("no collision radius for {a}/{b}")))
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        for t in &self.types {
            t.validate()?;
            for (other, r) in &t.collision_radius {
                let sym = self.get(other)?.collision_radius.get(&t.name);
                match sym {
                    Some(rs) if (rs - r).abs() < 1e-12 => {}
                    _ => {
                        return Err(DynamicsError::Config(format!(
                            "collision radius {}/{} must be symmetric",
                            t.name, other
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RosterFile {
    types: BTreeMap<String, TypeEntry>,
}

#[derive(Debug, Deserialize)]
struct TypeEntry {
    mass: f64,
    inertia_diag: [f64; 3],
    arm_length: f64,
    thrust_to_torque: f64,
    delay_lambda: f64,
    thrust_poly: Vec<f64>,
    pwm_poly: Vec<f64>,
    maxthrust_poly: Vec<f64>,
    max_total_thrust: f64,
    diameter: f64,
    fa_max: f64,
    collision_radius: BTreeMap<String, f64>,
    u_max: [f64; 3],
}

impl TypeEntry {
    fn build(self, name: String) -> Result<RobotType, DynamicsError> {
        let inertia = Matrix3::from_diagonal(&Vector3::from(self.inertia_diag));
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| DynamicsError::Config(format!("{name}: singular inertia")))?;
        let b0 = actuation_matrix(self.arm_length, self.thrust_to_torque);
        let b0_inv = b0
            .try_inverse()
            .ok_or_else(|| DynamicsError::Config(format!("{name}: singular actuation matrix")))?;
        Ok(RobotType {
            name,
            mass: self.mass,
            inertia,
            inertia_inv,
            b0,
            b0_inv,
            delay_lambda: self.delay_lambda,
            thrust_poly: BivariatePoly::new(self.thrust_poly),
            pwm_poly: BivariatePoly::new(self.pwm_poly),
            maxthrust_poly: BivariatePoly::new(self.maxthrust_poly),
            max_total_thrust: self.max_total_thrust,
            diameter: self.diameter,
            fa_max: self.fa_max,
            collision_radius: self.collision_radius,
            u_max: Vector3::from(self.u_max),
        })
    }
}

/// X-configuration quadrotor actuation matrix.
///
/// Motors are numbered counter-clockwise starting front-right; `arm` is the
/// center-to-motor distance projected on each body axis and `kappa` the
/// drag-torque per unit thrust.
fn actuation_matrix(arm: f64, kappa: f64) -> Matrix4<f64> {
    let l = arm / std::f64::consts::SQRT_2;
    Matrix4::new(
        1.0, 1.0, 1.0, 1.0, //
        -l, -l, l, l, //
        -l, l, l, -l, //
        -kappa, kappa, -kappa, kappa,
    )
}
