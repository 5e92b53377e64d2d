//! Wrench-to-motor mixing with thrust-priority saturation.

use nalgebra::Vector4;

use super::{DynamicsError, RobotType, Wrench};
use crate::util::{gram_force, newtons_to_grams};

/// Mixer output: per-motor thrust command (the delay-model input), the
/// normalized PWM that would realize it, and whether limits were hit.
#[derive(Debug, Clone)]
pub struct MotorCommand {
    /// Per-motor thrust forces, N.
    pub forces: Vector4<f64>,
    /// Normalized PWM per motor.
    pub pwm: Vector4<f64>,
    pub saturated: bool,
}

/// Distributes a desired wrench over the motors.
///
/// Total thrust takes priority when limits are hit: torque components are
/// scaled down first, and only then is the thrust itself clamped to what the
/// rotors can deliver at the current battery level.
pub fn thrust_mixing(
    wrench: &Wrench,
    ty: &RobotType,
    battery_v: f64,
) -> Result<MotorCommand, DynamicsError> {
    if !wrench.is_finite() {
        return Err(DynamicsError::NonFinite("wrench"));
    }
    let desired = ty.b0_inv * wrench.as_vector();
    let per_motor_thrust = wrench.thrust / 4.0;

    // rotor ceilings evaluated at the PWM each desired force would need
    let mut f_max = Vector4::zeros();
    for i in 0..4 {
        let pwm = ty.pwm_poly.eval(newtons_to_grams(desired[i]).max(0.0), battery_v);
        let ceiling_g = ty.maxthrust_poly.eval(pwm.clamp(0.0, 1.0), battery_v);
        f_max[i] = gram_force(ceiling_g.max(0.0))
            .min(ty.max_total_thrust / 4.0);
    }

    let mut saturated = false;
    let mut forces = desired;
    let in_bounds =
        |f: &Vector4<f64>| f.iter().zip(f_max.iter()).all(|(&x, &m)| (0.0..=m).contains(&x));

    if !in_bounds(&forces) {
        saturated = true;
        // shed torque first: forces(s) = T/4 + s * delta stays linear in s
        let mut scale: f64 = 1.0;
        for i in 0..4 {
            let delta = desired[i] - per_motor_thrust;
            if delta > 1e-12 {
                scale = scale.min((f_max[i] - per_motor_thrust) / delta);
            } else if delta < -1e-12 {
                scale = scale.min(per_motor_thrust / -delta);
            }
        }
        if scale.is_finite() && scale > 0.0 && (0.0..=f_max.min()).contains(&per_motor_thrust) {
            let s = scale.min(1.0);
            for i in 0..4 {
                forces[i] = per_motor_thrust + s * (desired[i] - per_motor_thrust);
            }
        } else {
            // even pure thrust is infeasible; clamp it and drop torque
            for i in 0..4 {
                forces[i] = per_motor_thrust.clamp(0.0, f_max[i]);
            }
        }
        for i in 0..4 {
            forces[i] = forces[i].clamp(0.0, f_max[i]);
        }
    }

    let mut pwm = Vector4::zeros();
    for i in 0..4 {
        pwm[i] = ty
            .pwm_poly
            .eval(newtons_to_grams(forces[i]), battery_v)
            .clamp(0.0, 1.0);
    }
    Ok(MotorCommand { forces, pwm, saturated })
}
