//! Nonlinear tracking controller with interaction-force feed-forward and
//! first-order motor-delay compensation.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::dynamics::{
    skew_matrix, thrust_mixing, DynamicsError, FullState, MotorCommand, RobotType, Wrench,
};
use crate::util::{gravity, G};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("desired thrust vector too small for attitude extraction")]
    ThrustDegenerate,
    #[error("non-finite reference")]
    NonFinite,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Position, attitude and delay-compensation gains for one robot type.
/// Every matrix must be positive-definite.
#[derive(Debug, Clone)]
pub struct ControllerGains {
    pub lambda_p: Matrix3<f64>,
    pub k_v: Matrix3<f64>,
    pub gamma_v: Matrix3<f64>,
    pub lambda_q: Matrix3<f64>,
    pub k_omega: Matrix3<f64>,
    pub gamma_omega: Matrix3<f64>,
    pub k_omega_dot: Matrix3<f64>,
}

impl ControllerGains {
    pub fn validate(&self) -> bool {
        [
            &self.lambda_p,
            &self.k_v,
            &self.gamma_v,
            &self.lambda_q,
            &self.k_omega,
            &self.gamma_omega,
            &self.k_omega_dot,
        ]
        .iter()
        .all(|m| m.cholesky().is_some())
    }

    /// Stock gains, scaled by the vehicle's mass and inertia.
    pub fn default_for(ty: &RobotType) -> Self {
        let m = ty.mass;
        Self {
            lambda_p: Matrix3::identity() * 4.0,
            k_v: Matrix3::identity() * (10.0 * m),
            gamma_v: Matrix3::identity() * 5.0,
            lambda_q: Matrix3::identity() * 15.0,
            k_omega: ty.inertia * 80.0,
            gamma_omega: ty.inertia * 1600.0,
            k_omega_dot: ty.inertia * 5.0,
        }
    }
}

/// Trajectory sample handed to the controller.
#[derive(Debug, Clone, Copy)]
pub struct Reference {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
}

impl Reference {
    pub fn hold(p: Vector3<f64>) -> Self {
        Self { p, v: Vector3::zeros(), a: Vector3::zeros() }
    }
}

/// Per-robot controller memory: integrals and the numeric differentiators.
#[derive(Debug, Clone, Default)]
pub struct ControllerState {
    pub integral_v: Vector3<f64>,
    pub integral_omega: Vector3<f64>,
    prev_thrust: Option<f64>,
    thrust_rate: f64,
    prev_omega_err: Option<Vector3<f64>>,
    omega_err_rate: Vector3<f64>,
}

/// Output of the position loop.
#[derive(Debug, Clone)]
pub struct PositionLoopOut {
    pub thrust: f64,
    pub r_d: Matrix3<f64>,
    pub f_d: Vector3<f64>,
}

/// Desired thrust vector and attitude from the position loop.
///
/// `fa_hat` is the predicted interaction force; passing zero gives the
/// baseline behavior, any other source of prediction enters only here.
pub fn position_loop(
    state: &FullState,
    reference: &Reference,
    fa_hat: &Vector3<f64>,
    gains: &ControllerGains,
    ty: &RobotType,
    ctrl: &mut ControllerState,
    dt: f64,
) -> Result<PositionLoopOut, ControlError> {
    if !reference.p.iter().chain(reference.v.iter()).chain(reference.a.iter()).all(|x| x.is_finite())
        || !fa_hat.iter().all(|x| x.is_finite())
    {
        return Err(ControlError::NonFinite);
    }
    let p_err = state.p - reference.p;
    let v_r = reference.v - gains.lambda_p * p_err;
    let vdot_r = reference.a - gains.lambda_p * (state.v - reference.v);
    let v_err = state.v - v_r;

    // anti-windup: keep the integral authority under half the weight
    ctrl.integral_v += v_err * dt;
    let ki = gains.k_v * gains.gamma_v;
    for i in 0..3 {
        let gain = ki[(i, i)].max(1e-12);
        let cap = 0.5 * ty.mass * G / gain;
        ctrl.integral_v[i] = ctrl.integral_v[i].clamp(-cap, cap);
    }

    let f_d = -ty.mass * gravity() + ty.mass * vdot_r
        - fa_hat
        - (gains.k_v + ty.mass * gains.gamma_v) * v_err
        - ki * ctrl.integral_v;

    if f_d.norm() < 0.1 * ty.mass * G {
        return Err(ControlError::ThrustDegenerate);
    }
    let thrust = f_d.dot(&(state.r * Vector3::z()));
    let r_d = attitude_from_force(&f_d)?;
    Ok(PositionLoopOut { thrust, r_d, f_d })
}

/// Desired attitude whose body-z axis carries `f_d`, at zero yaw.
fn attitude_from_force(f_d: &Vector3<f64>) -> Result<Matrix3<f64>, ControlError> {
    let z_d = f_d.normalize();
    let x_c = Vector3::x();
    let y_raw = z_d.cross(&x_c);
    if y_raw.norm() < 1e-9 {
        return Err(ControlError::ThrustDegenerate);
    }
    let y_d = y_raw.normalize();
    let x_d = y_d.cross(&z_d);
    Ok(Matrix3::from_columns(&[x_d, y_d, z_d]))
}

/// Body-torque command from the attitude loop, including the delay term
/// `-k_omega_dot * d(omega_err)/dt`. Interaction torque compensation is a
/// pass-through (`tau_a_hat`, zero in this stack).
#[allow(clippy::too_many_arguments)]
pub fn attitude_loop(
    state: &FullState,
    r_d: &Matrix3<f64>,
    omega_d: &Vector3<f64>,
    omega_dot_d: &Vector3<f64>,
    tau_a_hat: &Vector3<f64>,
    gains: &ControllerGains,
    ty: &RobotType,
    ctrl: &mut ControllerState,
    dt: f64,
) -> Vector3<f64> {
    let r_err = r_d.transpose() * state.r;
    let q = UnitQuaternion::from_matrix(&r_err);
    // constrain the error quaternion to the q0 >= 0 hemisphere
    let (q0, qv) = if q.w >= 0.0 {
        (q.w, q.imag())
    } else {
        (-q.w, -q.imag())
    };

    let omega_d_body = r_err.transpose() * omega_d;
    let omega_r = omega_d_body - gains.lambda_q * qv;
    let omega_err = state.omega - omega_r;
    let omega_err_rot = state.omega - omega_d_body;

    // dq_v of the constrained error quaternion
    let qv_dot = 0.5 * (q0 * omega_err_rot + qv.cross(&omega_err_rot));
    let omega_r_dot =
        -skew_matrix(&state.omega) * omega_d_body + r_err.transpose() * omega_dot_d
            - gains.lambda_q * qv_dot;

    ctrl.integral_omega += omega_err * dt;
    for i in 0..3 {
        let gain = gains.gamma_omega[(i, i)].max(1e-12);
        let cap = 0.1 / gain;
        ctrl.integral_omega[i] = ctrl.integral_omega[i].clamp(-cap, cap);
    }

    // filtered numeric rate of the angular-velocity error (tau = 20 ms)
    let raw_rate = match ctrl.prev_omega_err {
        Some(prev) => (omega_err - prev) / dt,
        None => Vector3::zeros(),
    };
    let alpha = dt / (0.020 + dt);
    ctrl.omega_err_rate += alpha * (raw_rate - ctrl.omega_err_rate);
    ctrl.prev_omega_err = Some(omega_err);

    ty.inertia * omega_r_dot - (ty.inertia * state.omega).cross(&omega_r) - tau_a_hat
        - gains.k_omega * omega_err
        - gains.gamma_omega * ctrl.integral_omega
        - gains.k_omega_dot * ctrl.omega_err_rate
}

/// First-order delay compensation: command the wrench plus its rate over
/// the motor time constant. The torque rate is already absorbed by the
/// attitude loop's rate term, so only the thrust channel is differentiated
/// here (backward difference, 20 ms low pass).
pub fn delay_compensate(
    eta_d: &Wrench,
    ty: &RobotType,
    ctrl: &mut ControllerState,
    dt: f64,
    enabled: bool,
) -> Wrench {
    if !enabled {
        ctrl.prev_thrust = Some(eta_d.thrust);
        return *eta_d;
    }
    let raw_rate = match ctrl.prev_thrust {
        Some(prev) => (eta_d.thrust - prev) / dt,
        None => 0.0,
    };
    let alpha = dt / (0.020 + dt);
    ctrl.thrust_rate += alpha * (raw_rate - ctrl.thrust_rate);
    ctrl.prev_thrust = Some(eta_d.thrust);
    Wrench::new(eta_d.thrust + ctrl.thrust_rate / ty.delay_lambda, eta_d.torque)
}

/// One robot's controller bound to its type and gains.
#[derive(Debug, Clone)]
pub struct Controller {
    pub gains: ControllerGains,
    pub state: ControllerState,
    pub delay_compensation: bool,
    /// Control period, s.
    pub dt: f64,
}

impl Controller {
    pub fn new(gains: ControllerGains, dt: f64) -> Self {
        assert!(gains.validate(), "controller gains must be positive-definite");
        Self { gains, state: ControllerState::default(), delay_compensation: true, dt }
    }

    /// Full cascade: position loop, attitude loop, delay compensation and
    /// thrust mixing. Yaw is held at zero and the reference angular rate
    /// is taken as zero (quasi-static references).
    pub fn step(
        &mut self,
        state: &FullState,
        reference: &Reference,
        fa_hat: &Vector3<f64>,
        ty: &RobotType,
        battery_v: f64,
    ) -> Result<MotorCommand, ControlError> {
        let pos = position_loop(state, reference, fa_hat, &self.gains, ty, &mut self.state, self.dt)?;
        let tau = attitude_loop(
            state,
            &pos.r_d,
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &self.gains,
            ty,
            &mut self.state,
            self.dt,
        );
        let eta = Wrench::new(pos.thrust, tau);
        let eta_cmd = delay_compensate(&eta, ty, &mut self.state, self.dt, self.delay_compensation);
        Ok(thrust_mixing(&eta_cmd, ty, battery_v)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::roster;
    use crate::util::gram_force;
    use approx::assert_relative_eq;

    fn small() -> RobotType {
        roster().get("small").unwrap().clone()
    }

    #[test]
    fn hover_with_zero_errors_is_gravity_compensation() {
        let ty = small();
        let gains = ControllerGains::default_for(&ty);
        let mut ctrl = ControllerState::default();
        let state = FullState::hover(Vector3::new(0.0, 0.0, 1.0), &ty);
        let reference = Reference::hold(Vector3::new(0.0, 0.0, 1.0));
        let out =
            position_loop(&state, &reference, &Vector3::zeros(), &gains, &ty, &mut ctrl, 0.002)
                .unwrap();
        assert_relative_eq!(out.f_d.z, ty.mass * G, max_relative = 1e-12);
        assert!(out.f_d.fixed_rows::<2>(0).norm() < 1e-14);
        assert!((out.r_d - Matrix3::identity()).norm() < 1e-12);
        assert_relative_eq!(out.thrust, ty.mass * G, max_relative = 1e-12);
    }

    #[test]
    fn downwash_feedforward_raises_thrust_exactly() {
        let ty = small();
        let gains = ControllerGains::default_for(&ty);
        let state = FullState::hover(Vector3::new(0.0, 0.0, 1.0), &ty);
        let reference = Reference::hold(Vector3::new(0.0, 0.0, 1.0));
        let fa = Vector3::new(0.0, 0.0, -gram_force(9.0));
        let mut c1 = ControllerState::default();
        let mut c2 = ControllerState::default();
        let base =
            position_loop(&state, &reference, &Vector3::zeros(), &gains, &ty, &mut c1, 0.002)
                .unwrap();
        let comp = position_loop(&state, &reference, &fa, &gains, &ty, &mut c2, 0.002).unwrap();
        assert_relative_eq!(comp.thrust - base.thrust, gram_force(9.0), max_relative = 1e-12);
    }

    #[test]
    fn pd_form_matches_hand_computation() {
        let ty = small();
        let mut gains = ControllerGains::default_for(&ty);
        // effectively zero integral action
        gains.gamma_v = Matrix3::identity() * 1e-12;
        let mut ctrl = ControllerState::default();
        let mut state = FullState::hover(Vector3::new(0.1, -0.2, 1.3), &ty);
        state.v = Vector3::new(0.05, 0.0, -0.1);
        let reference = Reference::hold(Vector3::new(0.0, 0.0, 1.0));
        let out =
            position_loop(&state, &reference, &Vector3::zeros(), &gains, &ty, &mut ctrl, 0.002)
                .unwrap();
        let p_err = state.p - reference.p;
        let v_r = -gains.lambda_p * p_err;
        let vdot_r = -gains.lambda_p * state.v;
        let v_err = state.v - v_r;
        let ki = gains.k_v * gains.gamma_v;
        let hand = Vector3::new(0.0, 0.0, ty.mass * G) + ty.mass * vdot_r
            - (gains.k_v + ty.mass * gains.gamma_v) * v_err
            - ki * (v_err * 0.002);
        assert!((out.f_d - hand).norm() < 1e-10);
    }

    #[test]
    fn tiny_thrust_demand_is_degenerate() {
        let ty = small();
        let gains = ControllerGains::default_for(&ty);
        let mut ctrl = ControllerState::default();
        let mut state = FullState::hover(Vector3::zeros(), &ty);
        // free fall faster than gravity can explain: thrust demand ~ 0
        state.v = Vector3::zeros();
        let reference = Reference {
            p: state.p,
            v: Vector3::zeros(),
            a: Vector3::new(0.0, 0.0, -G),
        };
        let r = position_loop(&state, &reference, &Vector3::zeros(), &gains, &ty, &mut ctrl, 0.002);
        assert!(matches!(r, Err(ControlError::ThrustDegenerate)));
    }

    #[test]
    fn aligned_attitude_at_rest_needs_no_torque() {
        let ty = small();
        let gains = ControllerGains::default_for(&ty);
        let mut ctrl = ControllerState::default();
        let state = FullState::hover(Vector3::zeros(), &ty);
        let tau = attitude_loop(
            &state,
            &Matrix3::identity(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &gains,
            &ty,
            &mut ctrl,
            0.002,
        );
        assert!(tau.norm() < 1e-12);
    }

    #[test]
    fn constant_rate_tracking_leaves_gyroscopic_term() {
        let ty = small();
        let gains = ControllerGains::default_for(&ty);
        let mut ctrl = ControllerState::default();
        let omega = Vector3::new(0.4, -0.2, 0.6);
        let mut state = FullState::hover(Vector3::zeros(), &ty);
        state.omega = omega;
        let tau = attitude_loop(
            &state,
            &Matrix3::identity(),
            &omega,
            &Vector3::zeros(),
            &Vector3::zeros(),
            &gains,
            &ty,
            &mut ctrl,
            0.002,
        );
        // omega_r = omega, so only J*omega_r_dot - (J omega) x omega_r remains;
        // with R_err = I, omega_r_dot = -(omega x omega) = 0
        let expect = -(ty.inertia * omega).cross(&omega);
        assert!((tau - expect).norm() < 1e-12);
    }

    #[test]
    fn yaw_error_sweep_has_no_sign_chatter() {
        let ty = small();
        let gains = ControllerGains::default_for(&ty);
        let mut prev: Option<Vector3<f64>> = None;
        // sweep the yaw error through 180 degrees; torque must vary
        // continuously under the q0 >= 0 convention
        for k in 0..2000 {
            let ang = 3.1 * (k as f64 / 1999.0 - 0.5);
            let r = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), ang).into_inner();
            let mut state = FullState::hover(Vector3::zeros(), &ty);
            state.r = r;
            let mut ctrl = ControllerState::default();
            let tau = attitude_loop(
                &state,
                &Matrix3::identity(),
                &Vector3::zeros(),
                &Vector3::zeros(),
                &Vector3::zeros(),
                &gains,
                &ty,
                &mut ctrl,
                0.002,
            );
            if let Some(p) = prev {
                assert!((tau - p).norm() < 0.01, "torque jump at yaw {ang}");
            }
            prev = Some(tau);
        }
    }

    #[test]
    fn constant_wrench_passes_through_compensation() {
        let ty = small();
        let mut ctrl = ControllerState::default();
        let eta = Wrench::new(0.35, Vector3::new(1e-3, 0.0, 0.0));
        let mut out = eta;
        for _ in 0..100 {
            out = delay_compensate(&eta, &ty, &mut ctrl, 0.002, true);
        }
        assert_relative_eq!(out.thrust, eta.thrust, max_relative = 1e-9);
        assert_eq!(out.torque, eta.torque);
    }

    #[test]
    fn thrust_ramp_gets_rate_over_lambda_offset() {
        let ty = small();
        let mut ctrl = ControllerState::default();
        let slope = 0.05; // N/s
        let dt = 0.002;
        let mut out = Wrench::zero();
        for k in 0..3000 {
            let eta = Wrench::new(0.3 + slope * k as f64 * dt, Vector3::zeros());
            out = delay_compensate(&eta, &ty, &mut ctrl, dt, true);
            if k == 2999 {
                let expect = 0.3 + slope * k as f64 * dt + slope / ty.delay_lambda;
                assert!((out.thrust - expect).abs() < 1e-4);
            }
        }
        let _ = out;
    }
}
