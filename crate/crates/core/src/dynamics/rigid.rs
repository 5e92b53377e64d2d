//! Rigid-body derivative and RK4 integration.

use nalgebra::{Matrix3, Vector3, Vector4};

use super::{DynamicsError, FullState, RobotType};
use crate::util::gravity;

/// Time derivative of a [`FullState`].
#[derive(Debug, Clone)]
pub struct FullStateDot {
    pub dp: Vector3<f64>,
    pub dv: Vector3<f64>,
    pub dr: Matrix3<f64>,
    pub domega: Vector3<f64>,
    pub du: Vector4<f64>,
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Continuous-time dynamics under the current (delayed) motor state.
///
/// The wrench is produced by the motor state `u`, not the command; the
/// command only enters through the first-order lag `du = -lambda (u - u_c)`.
pub fn nominal_derivative(
    state: &FullState,
    u_cmd: &Vector4<f64>,
    ty: &RobotType,
    fa: &Vector3<f64>,
    tau_a: &Vector3<f64>,
) -> Result<FullStateDot, DynamicsError> {
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !u_cmd.iter().all(|x| x.is_finite()) {
        return Err(DynamicsError::NonFinite("u_cmd"));
    }
    if !fa.iter().all(|x| x.is_finite()) || !tau_a.iter().all(|x| x.is_finite()) {
        return Err(DynamicsError::NonFinite("disturbance"));
    }

    let eta = ty.b0 * state.u_motor;
    let f_u = Vector3::new(0.0, 0.0, eta[0]);
    let tau_u = Vector3::new(eta[1], eta[2], eta[3]);

    let dv = gravity() + (state.r * f_u + fa) / ty.mass;
    let dr = state.r * skew(&state.omega);
    let domega =
        ty.inertia_inv * ((ty.inertia * state.omega).cross(&state.omega) + tau_u + tau_a);
    let du = -ty.delay_lambda * (state.u_motor - u_cmd);

    Ok(FullStateDot { dp: state.v, dv, dr, domega, du })
}

/// One classical RK4 step with rotation re-projection onto SO(3).
///
/// `fa_fn` supplies the interaction force and torque as a function of the
/// intermediate states, so stage evaluations see consistent disturbances.
pub fn integrate_rk4<F>(
    state: &FullState,
    u_cmd: &Vector4<f64>,
    ty: &RobotType,
    fa_fn: F,
    dt: f64,
) -> Result<FullState, DynamicsError>
where
    F: Fn(&FullState) -> (Vector3<f64>, Vector3<f64>),
{
    assert!(dt > 0.0, "dt must be positive");
    let deriv = |s: &FullState| -> Result<FullStateDot, DynamicsError> {
        let (fa, tau_a) = fa_fn(s);
        nominal_derivative(s, u_cmd, ty, &fa, &tau_a)
    };

    let k1 = deriv(state)?;
    let s2 = advance(state, &k1, 0.5 * dt);
    let k2 = deriv(&s2)?;
    let s3 = advance(state, &k2, 0.5 * dt);
    let k3 = deriv(&s3)?;
    let s4 = advance(state, &k3, dt);
    let k4 = deriv(&s4)?;

    let sixth = dt / 6.0;
    let mut next = FullState {
        p: state.p + sixth * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp),
        v: state.v + sixth * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv),
        r: state.r + sixth * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr),
        omega: state.omega + sixth * (k1.domega + 2.0 * k2.domega + 2.0 * k3.domega + k4.domega),
        u_motor: state.u_motor + sixth * (k1.du + 2.0 * k2.du + 2.0 * k3.du + k4.du),
    };
    if !next.is_finite() {
        return Err(DynamicsError::IntegrationDiverged);
    }
    next.r = project_so3(&next.r);
    // the lag keeps u nonnegative for nonnegative commands; clamp rounding
    for u in next.u_motor.iter_mut() {
        if *u < 0.0 {
            *u = 0.0;
        }
    }
    Ok(next)
}

fn advance(s: &FullState, d: &FullStateDot, h: f64) -> FullState {
    FullState {
        p: s.p + h * d.dp,
        v: s.v + h * d.dv,
        r: s.r + h * d.dr,
        omega: s.omega + h * d.domega,
        u_motor: s.u_motor + h * d.du,
    }
}

/// Polar projection: the closest rotation to `m` in Frobenius norm.
pub fn project_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd");
    let vt = svd.v_t.expect("svd");
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // flip the weakest direction to stay in SO(3)
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        r = u2 * vt;
    }
    r
}
