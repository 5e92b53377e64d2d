//! Built-in default configuration.
//!
//! Bench-calibrated numbers for the two stock vehicle types. Inertia and the
//! thrust-to-torque ratio are taken from published identifications of the
//! same airframes rather than our own measurements; treat them as nominal.

use crate::aero::AeroCalibration;
use crate::dynamics::RobotRoster;

/// Default two-type roster, TOML source.
pub const ROSTER_TOML: &str = r#"
schema_version = 1

[types.small]
mass = 0.034
inertia_diag = [1.66e-5, 1.66e-5, 2.93e-5]
arm_length = 0.046
thrust_to_torque = 0.006
delay_lambda = 16.0
# rotor force in grams from (pwm, vbat)
thrust_poly = [11.09, -39.08, -9.53, 20.57, 38.43]
# pwm from (rotor grams, vbat)
pwm_poly = [0.5, 0.12, -0.41, -0.002, -0.043]
# max rotor force in grams from (pwm, vbat); vbat coefficient sign fixed,
# the published table prints -26.72 which would make max thrust negative
maxthrust_poly = [-9.86, 3.02, 26.72]
max_total_thrust = 0.637432      # 65 g
diameter = 0.12
fa_max = 0.049033                # 5 g
u_max = [4.903, 4.903, 4.903]
collision_radius = { small = 0.13, large = 0.17 }

[types.large]
mass = 0.067
inertia_diag = [9.17e-5, 9.17e-5, 13.3e-5]
arm_length = 0.0725
thrust_to_torque = 0.006
delay_lambda = 16.0
thrust_poly = [44.10, -122.51, -36.18, 53.11, 107.68]
pwm_poly = [0.56, 0.06, -0.6, -0.0007, -0.015]
maxthrust_poly = [-29.91, 8.1, 65.2]
max_total_thrust = 1.421964      # 145 g
diameter = 0.19
fa_max = 0.098066                # 10 g
u_max = [4.903, 4.903, 4.903]
collision_radius = { small = 0.17, large = 0.21 }
"#;

/// Parsed default roster.
pub fn roster() -> RobotRoster {
    RobotRoster::from_toml(ROSTER_TOML).expect("built-in roster is valid")
}

/// Default synthetic-aerodynamics calibration.
pub fn aero_calibration() -> AeroCalibration {
    AeroCalibration::default()
}
