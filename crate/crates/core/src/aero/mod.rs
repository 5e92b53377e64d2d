//! Synthetic ground-truth interaction forces.
//!
//! Stands in for flight measurements: a smooth, deterministic force field
//! built from per-neighbor downwash plumes, a capped near-ground thrust
//! gain, and quadratic air drag, blended through a saturating combiner so
//! that multi-neighbor scenes are more than the sum of their pairs.
//! Magnitudes are anchored to two bench observations: roughly nine grams of
//! downwash between stacked small vehicles at 0.30 m, and about five grams
//! of thrust gain when hovering at 0.05 m altitude.

mod labels;

pub use labels::{compute_residual_labels, LabelError, TimedSample};

use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{FullState, RobotType};
use crate::util::gram_force;

#[derive(Debug, Error)]
pub enum AeroError {
    #[error("ego index {0} out of range")]
    BadEgoIndex(usize),
    #[error("robots {0} and {1} are coincident")]
    CoincidentRobots(usize, usize),
}

/// Cuboid interaction volume relative to the ego position.
#[derive(Debug, Clone, Deserialize)]
pub struct InteractionVolume {
    pub horizontal: f64,
    pub below: f64,
    pub above: f64,
}

impl InteractionVolume {
    /// True when a point offset `dp` from the ego can interact with it.
    pub fn contains(&self, dp: &Vector3<f64>) -> bool {
        dp.x.abs() <= self.horizontal
            && dp.y.abs() <= self.horizontal
            && dp.z >= -self.below
            && dp.z <= self.above
    }
}

/// Tunable constants of the synthetic force field.
#[derive(Debug, Clone, Deserialize)]
pub struct AeroCalibration {
    /// Peak downwash force from a small-type source at full overlap, N.
    pub downwash_peak: f64,
    /// Reference diameter for disk-area scaling, m.
    pub reference_diameter: f64,
    /// Vertical decay half-width of the plume, m.
    pub plume_z0: f64,
    /// Smooth one-sidedness width of the plume gate, m.
    pub plume_gate_width: f64,
    /// Horizontal plume spread per source diameter.
    pub plume_sigma_per_diameter: f64,
    /// Relative-descent velocity gain and reference speed.
    pub plume_velocity_gain: f64,
    pub plume_velocity_ref: f64,
    /// Ground-effect cap for the reference diameter, N, and length scale, m.
    pub ground_peak: f64,
    pub ground_z0: f64,
    /// Quadratic drag coefficient, N/(m/s)^2.
    pub drag_coeff: f64,
    /// Saturation level of the combiner, N.
    pub saturation: f64,
    /// Interaction volume shared by all type pairs.
    pub volume: InteractionVolume,
    /// Asserted bound on the field's sensitivity to the 6-D relative
    /// state, N per unit.
    pub lipschitz_bound: f64,
}

impl Default for AeroCalibration {
    fn default() -> Self {
        Self {
            downwash_peak: 0.46214,
            reference_diameter: 0.12,
            plume_z0: 0.15,
            plume_gate_width: 0.06,
            plume_sigma_per_diameter: 0.6,
            plume_velocity_gain: 0.5,
            plume_velocity_ref: 1.0,
            ground_peak: gram_force(10.0),
            ground_z0: 0.05,
            drag_coeff: 0.02,
            saturation: gram_force(25.0),
            volume: InteractionVolume { horizontal: 1.0, below: 1.0, above: 2.0 },
            lipschitz_bound: 25.0,
        }
    }
}

/// A multi-robot configuration over a ground plane.
#[derive(Debug, Clone)]
pub struct Scene<'a> {
    pub robots: Vec<(&'a RobotType, FullState)>,
    pub ground_z: f64,
}

impl<'a> Scene<'a> {
    pub fn new(robots: Vec<(&'a RobotType, FullState)>, ground_z: f64) -> Result<Self, AeroError> {
        for i in 0..robots.len() {
            for j in (i + 1)..robots.len() {
                if (robots[i].1.p - robots[j].1.p).norm() <= 1e-6 {
                    return Err(AeroError::CoincidentRobots(i, j));
                }
            }
        }
        Ok(Self { robots, ground_z })
    }
}

/// True interaction force on robot `ego` as a world-frame vector. Only the
/// z component is nonzero, matching what the learning pipeline targets.
pub fn true_interaction_force(
    scene: &Scene,
    ego: usize,
    cal: &AeroCalibration,
) -> Result<Vector3<f64>, AeroError> {
    if ego >= scene.robots.len() {
        return Err(AeroError::BadEgoIndex(ego));
    }
    let (ego_ty, ego_state) = &scene.robots[ego];
    let mut sum = 0.0;
    for (j, (ty, state)) in scene.robots.iter().enumerate() {
        if j == ego {
            continue;
        }
        let dp = state.p - ego_state.p;
        if !cal.volume.contains(&dp) {
            continue;
        }
        sum += downwash_z(&dp, &(state.v - ego_state.v), ty, cal);
    }
    if env_in_volume(&ego_state.p, scene.ground_z, cal) {
        sum += ground_effect_z(ego_state.p.z - scene.ground_z, ego_ty, cal);
        sum += drag_z(&ego_state.v, cal);
    }
    let fz = cal.saturation * (sum / cal.saturation).tanh();
    Ok(Vector3::new(0.0, 0.0, fz))
}

/// Whether the environment pseudo-neighbor is active for an ego at `p`.
pub fn env_in_volume(p: &Vector3<f64>, ground_z: f64, cal: &AeroCalibration) -> bool {
    // the environment sits at the world origin on the ground plane
    let anchor = Vector3::new(0.0, 0.0, ground_z);
    cal.volume.contains(&(anchor - p))
}

/// Builds the typed neighbor groups a model sees from an ego's viewpoint:
/// robots inside the interaction volume grouped by type, plus the
/// environment pseudo-neighbor when active. The same construction feeds
/// data generation, planning and in-flight prediction.
pub fn model_groups(
    ego_p: &Vector3<f64>,
    ego_v: &Vector3<f64>,
    others: &[(&str, Vector3<f64>, Vector3<f64>)],
    ground_z: f64,
    cal: &AeroCalibration,
) -> std::collections::BTreeMap<String, Vec<crate::deepset::RelativeState>> {
    let mut groups: std::collections::BTreeMap<String, Vec<crate::deepset::RelativeState>> =
        std::collections::BTreeMap::new();
    for (ty, p, v) in others {
        let dp = p - ego_p;
        if !cal.volume.contains(&dp) {
            continue;
        }
        groups
            .entry((*ty).to_string())
            .or_default()
            .push(crate::deepset::RelativeState::new(dp, v - ego_v));
    }
    if env_in_volume(ego_p, ground_z, cal) {
        let anchored = Vector3::new(ego_p.x, ego_p.y, ego_p.z - ground_z);
        groups
            .entry(crate::dynamics::ENV_TYPE.to_string())
            .or_default()
            .push(crate::deepset::RelativeState::environment(&anchored, ego_v));
    }
    groups
}

/// Downwash plume of one source on an ego below or beside it.
fn downwash_z(dp: &Vector3<f64>, dv: &Vector3<f64>, source: &RobotType, cal: &AeroCalibration) -> f64 {
    let area_scale = (source.diameter / cal.reference_diameter).powi(2);
    let amp = cal.downwash_peak * area_scale;
    let sigma = cal.plume_sigma_per_diameter * source.diameter;
    let radial2 = dp.x * dp.x + dp.y * dp.y;
    let radial = (-radial2 / (2.0 * sigma * sigma)).exp();
    // one-sided in height: only sources above push down, smoothly gated
    let gate = 0.5 * (1.0 + (dp.z / cal.plume_gate_width).tanh());
    let vertical = cal.plume_z0 * cal.plume_z0 / (cal.plume_z0 * cal.plume_z0 + dp.z * dp.z);
    let descent = 1.0 + cal.plume_velocity_gain * (-dv.z / cal.plume_velocity_ref).tanh();
    -amp * radial * gate * vertical * descent
}

/// Capped near-ground thrust gain.
fn ground_effect_z(height: f64, ego: &RobotType, cal: &AeroCalibration) -> f64 {
    let area_scale = (ego.diameter / cal.reference_diameter).powi(2);
    let z = height.max(0.0);
    cal.ground_peak * area_scale * cal.ground_z0 * cal.ground_z0
        / (cal.ground_z0 * cal.ground_z0 + z * z)
}

/// Quadratic drag opposing vertical motion.
fn drag_z(v: &Vector3<f64>, cal: &AeroCalibration) -> f64 {
    -cal.drag_coeff * v.norm() * v.z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::roster;
    use crate::util::newtons_to_grams;
    use nalgebra::Vector3;

    fn hover_at(p: Vector3<f64>, ty: &RobotType) -> FullState {
        FullState::hover(p, ty)
    }

    #[test]
    fn stacked_smalls_match_downwash_anchor() {
        let r = roster();
        let small = r.get("small").unwrap();
        let cal = AeroCalibration::default();
        let scene = Scene::new(
            vec![
                (small, hover_at(Vector3::new(0.0, 0.0, 1.2), small)),
                (small, hover_at(Vector3::new(0.0, 0.0, 1.5), small)),
            ],
            0.0,
        )
        .unwrap();
        let f = true_interaction_force(&scene, 0, &cal).unwrap();
        let grams = newtons_to_grams(-f.z);
        assert!(
            (grams - 9.0).abs() <= 0.9,
            "downwash anchor off: {grams} g at 0.30 m"
        );
        // the upper robot feels almost nothing
        let f_upper = true_interaction_force(&scene, 1, &cal).unwrap();
        assert!(newtons_to_grams(f_upper.z.abs()) < 0.5);
    }

    #[test]
    fn ground_effect_anchor() {
        let r = roster();
        let small = r.get("small").unwrap();
        let cal = AeroCalibration::default();
        let scene =
            Scene::new(vec![(small, hover_at(Vector3::new(0.0, 0.0, 0.05), small))], 0.0).unwrap();
        let f = true_interaction_force(&scene, 0, &cal).unwrap();
        let grams = newtons_to_grams(f.z);
        assert!((grams - 5.0).abs() <= 0.5, "ground anchor off: {grams} g at 0.05 m");
    }

    #[test]
    fn isolated_high_static_robot_feels_nothing() {
        let r = roster();
        let small = r.get("small").unwrap();
        let cal = AeroCalibration::default();
        let scene =
            Scene::new(vec![(small, hover_at(Vector3::new(0.0, 0.0, 1.5), small))], 0.0).unwrap();
        let f = true_interaction_force(&scene, 0, &cal).unwrap();
        assert_eq!(f, Vector3::zeros());
    }

    #[test]
    fn three_body_force_is_not_pairwise_sum() {
        let r = roster();
        let small = r.get("small").unwrap();
        let large = r.get("large").unwrap();
        let cal = AeroCalibration::default();
        let ego = hover_at(Vector3::new(0.0, 0.0, 1.0), small);
        let n1 = hover_at(Vector3::new(0.02, 0.0, 1.22), large);
        let n2 = hover_at(Vector3::new(-0.02, 0.0, 1.45), large);

        let three = Scene::new(
            vec![(small, ego.clone()), (large, n1.clone()), (large, n2.clone())],
            0.0,
        )
        .unwrap();
        let f3 = true_interaction_force(&three, 0, &cal).unwrap().z;

        let pair1 = Scene::new(vec![(small, ego.clone()), (large, n1)], 0.0).unwrap();
        let pair2 = Scene::new(vec![(small, ego), (large, n2)], 0.0).unwrap();
        let fp = true_interaction_force(&pair1, 0, &cal).unwrap().z
            + true_interaction_force(&pair2, 0, &cal).unwrap().z;

        let gap = newtons_to_grams((f3 - fp).abs());
        assert!(gap > 1.0, "superposition gap only {gap} g");
    }

    #[test]
    fn descending_neighbor_blows_harder() {
        let r = roster();
        let small = r.get("small").unwrap();
        let cal = AeroCalibration::default();
        let ego = hover_at(Vector3::new(0.0, 0.0, 1.0), small);
        let mut above = hover_at(Vector3::new(0.0, 0.0, 1.3), small);
        let static_scene =
            Scene::new(vec![(small, ego.clone()), (small, above.clone())], 0.0).unwrap();
        let f_static = true_interaction_force(&static_scene, 0, &cal).unwrap().z;
        above.v.z = -0.8;
        let moving_scene = Scene::new(vec![(small, ego), (small, above)], 0.0).unwrap();
        let f_moving = true_interaction_force(&moving_scene, 0, &cal).unwrap().z;
        assert!(f_moving < f_static, "descent must strengthen downwash");
    }

    #[test]
    fn coincident_robots_rejected() {
        let r = roster();
        let small = r.get("small").unwrap();
        let s = hover_at(Vector3::new(0.0, 0.0, 1.0), small);
        assert!(Scene::new(vec![(small, s.clone()), (small, s)], 0.0).is_err());
    }

    #[test]
    fn ego_index_checked() {
        let r = roster();
        let small = r.get("small").unwrap();
        let cal = AeroCalibration::default();
        let scene =
            Scene::new(vec![(small, hover_at(Vector3::new(0.0, 0.0, 1.0), small))], 0.0).unwrap();
        assert!(true_interaction_force(&scene, 3, &cal).is_err());
    }

    /// Empirical smoothness: finite-difference slope of the field stays
    /// under the configured bound over random nearby scene pairs.
    #[test]
    fn empirical_lipschitz_under_bound() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let r = roster();
        let small = r.get("small").unwrap();
        let large = r.get("large").unwrap();
        let cal = AeroCalibration::default();
        let mut rng = StdRng::seed_from_u64(1234);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            let base_p = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(0.05..1.0),
            );
            let neighbor_p = base_p
                + Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(0.05..0.6),
                );
            let mut ego = hover_at(base_p, small);
            ego.v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let mut nb = hover_at(neighbor_p, large);
            nb.v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));

            let f0 = {
                let scene = Scene::new(vec![(small, ego.clone()), (large, nb.clone())], 0.0).unwrap();
                true_interaction_force(&scene, 0, &cal).unwrap().z
            };
            // perturb the relative state a little
            let eps = 1e-4;
            let mut nb2 = nb.clone();
            let dir = Vector3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5).normalize();
            nb2.p += eps * dir;
            let f1 = {
                let scene = Scene::new(vec![(small, ego), (large, nb2)], 0.0).unwrap();
                true_interaction_force(&scene, 0, &cal).unwrap().z
            };
            worst = worst.max((f1 - f0).abs() / eps);
        }
        assert!(
            worst <= cal.lipschitz_bound,
            "field slope {worst} exceeds configured bound {}",
            cal.lipschitz_bound
        );
    }
}
