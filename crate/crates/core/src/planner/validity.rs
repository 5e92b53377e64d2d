//! Shared state-validity checker used by both planning stages and the
//! post-hoc re-check in the test suites.

use nalgebra::Vector3;

use super::Trajectory;
use crate::aero::{model_groups, AeroCalibration};
use crate::deepset::{groups_from_states, HeteroDeepSet};
use crate::dynamics::{PlanState, RobotRoster};

/// Workspace, force-trust and collision parameters for validity checking.
#[derive(Debug, Clone)]
pub struct ValidityConfig {
    pub workspace_lo: Vector3<f64>,
    pub workspace_hi: Vector3<f64>,
    pub v_max: f64,
    /// Allowed change of a committed neighbor's predicted force caused by
    /// the ego being re-planned, N.
    pub b_fa_trust: f64,
    pub ground_z: f64,
}

/// Outcome with human-readable reasons for each violated rule.
#[derive(Debug, Clone, Default)]
pub struct ValidityReport {
    pub ok: bool,
    pub reasons: Vec<String>,
}

impl ValidityReport {
    fn fail(&mut self, reason: String) {
        self.ok = false;
        self.reasons.push(reason);
    }
}

/// A neighbor whose trajectory is already committed.
pub struct Committed<'a> {
    pub type_name: &'a str,
    pub traj: &'a Trajectory,
}

/// Predicted force on the ego at a candidate state, from the model.
#[allow(clippy::too_many_arguments)]
pub fn predict_ego_force(
    model: &HeteroDeepSet,
    ego_type: &str,
    p: &Vector3<f64>,
    v: &Vector3<f64>,
    committed: &[Committed],
    time_index: usize,
    cal: &AeroCalibration,
    ground_z: f64,
) -> f64 {
    let others: Vec<(&str, Vector3<f64>, Vector3<f64>)> = committed
        .iter()
        .filter(|c| !c.traj.is_empty())
        .map(|c| {
            let pt = c.traj.at(time_index);
            (c.type_name, pt.state.p, pt.state.v)
        })
        .collect();
    let groups = model_groups(p, v, &others, ground_z, cal);
    model
        .forward(ego_type, &groups_from_states(&groups))
        .expect("model evaluation failed")
}

/// Checks a candidate ego state against the workspace, its own force
/// bound, collisions with committed neighbors, and the trust region on the
/// committed neighbors' predicted forces.
#[allow(clippy::too_many_arguments)]
pub fn state_valid(
    candidate: &PlanState,
    ego_type: &str,
    time_index: usize,
    committed: &[Committed],
    model: &HeteroDeepSet,
    roster: &RobotRoster,
    cal: &AeroCalibration,
    cfg: &ValidityConfig,
) -> ValidityReport {
    let mut report = ValidityReport { ok: true, reasons: Vec::new() };
    let ego = roster.get(ego_type).expect("unknown ego type");

    for d in 0..3 {
        if candidate.p[d] < cfg.workspace_lo[d] || candidate.p[d] > cfg.workspace_hi[d] {
            report.fail(format!("position outside workspace on axis {d}"));
            break;
        }
    }
    if candidate.v.norm() > cfg.v_max {
        report.fail(format!("speed {:.2} above limit", candidate.v.norm()));
    }
    if candidate.fa.norm() > ego.fa_max {
        report.fail(format!(
            "own predicted force {:.4} N above bound {:.4} N",
            candidate.fa.norm(),
            ego.fa_max
        ));
    }

    for (j, c) in committed.iter().enumerate() {
        if c.traj.is_empty() {
            continue;
        }
        let other = c.traj.at(time_index);
        let r_min = roster
            .collision_radius(ego_type, c.type_name)
            .expect("missing collision radius");
        let dist = (candidate.p - other.state.p).norm();
        if dist < r_min {
            report.fail(format!("collision with neighbor {j}: {dist:.3} < {r_min:.3}"));
        }
    }

    // trust region on each committed neighbor's force: replanning the ego
    // must not shift what that neighbor already accounted for
    for (j, c) in committed.iter().enumerate() {
        if c.traj.is_empty() {
            continue;
        }
        let other = c.traj.at(time_index);
        let neighbor_ty = roster.get(c.type_name).expect("unknown neighbor type");
        let mut others: Vec<(&str, Vector3<f64>, Vector3<f64>)> = committed
            .iter()
            .enumerate()
            .filter(|(k, o)| *k != j && !o.traj.is_empty())
            .map(|(_, o)| {
                let pt = o.traj.at(time_index);
                (o.type_name, pt.state.p, pt.state.v)
            })
            .collect();
        others.push((ego_type, candidate.p, candidate.v));
        let groups = model_groups(&other.state.p, &other.state.v, &others, cfg.ground_z, cal);
        let predicted = model
            .forward(c.type_name, &groups_from_states(&groups))
            .expect("model evaluation failed");
        let accounted = other.state.fa.z;
        if (predicted - accounted).abs() > cfg.b_fa_trust {
            report.fail(format!(
                "neighbor {j} force shift {:.4} N beyond trust {:.4} N",
                (predicted - accounted).abs(),
                cfg.b_fa_trust
            ));
        }
        if predicted.abs() > neighbor_ty.fa_max {
            report.fail(format!(
                "neighbor {j} force {:.4} N above its bound {:.4} N",
                predicted.abs(),
                neighbor_ty.fa_max
            ));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::TrajectoryPoint;
    use crate::presets::{aero_calibration, roster};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn cfg() -> ValidityConfig {
        ValidityConfig {
            workspace_lo: Vector3::new(-1.0, -1.0, 0.05),
            workspace_hi: Vector3::new(1.0, 1.0, 1.5),
            v_max: 3.0,
            b_fa_trust: crate::util::gram_force(3.0),
            ground_z: 0.0,
        }
    }

    fn zero_model() -> HeteroDeepSet {
        let mut rng = StdRng::seed_from_u64(1);
        HeteroDeepSet::for_roster(&roster(), 20, 4.0, &mut rng).zeroed()
    }

    fn hover_traj(p: Vector3<f64>, len: usize) -> Trajectory {
        let mut t = Trajectory::new(0.1);
        for k in 0..len {
            t.points.push(TrajectoryPoint {
                t: k as f64 * 0.1,
                state: PlanState::new(p, Vector3::zeros()),
                u: Vector3::zeros(),
            });
        }
        t
    }

    #[test]
    fn isolated_mid_workspace_state_is_valid() {
        let model = zero_model();
        let r = roster();
        let s = PlanState::new(Vector3::new(0.0, 0.0, 0.8), Vector3::zeros());
        let rep = state_valid(&s, "small", 0, &[], &model, &r, &aero_calibration(), &cfg());
        assert!(rep.ok, "{:?}", rep.reasons);
    }

    #[test]
    fn workspace_and_speed_violations_reported() {
        let model = zero_model();
        let r = roster();
        let s = PlanState::new(Vector3::new(2.0, 0.0, 0.8), Vector3::new(5.0, 0.0, 0.0));
        let rep = state_valid(&s, "small", 0, &[], &model, &r, &aero_calibration(), &cfg());
        assert!(!rep.ok);
        assert_eq!(rep.reasons.len(), 2);
    }

    #[test]
    fn boundary_separation_is_valid() {
        let model = zero_model();
        let r = roster();
        let r_ss = r.collision_radius("small", "small").unwrap();
        let neighbor = hover_traj(Vector3::new(0.0, 0.0, 0.8), 3);
        let committed = [Committed { type_name: "small", traj: &neighbor }];
        let s = PlanState::new(Vector3::new(r_ss, 0.0, 0.8), Vector3::zeros());
        let rep = state_valid(&s, "small", 0, &committed, &model, &r, &aero_calibration(), &cfg());
        assert!(rep.ok, "boundary must be inclusive: {:?}", rep.reasons);
        let s2 = PlanState::new(Vector3::new(r_ss - 1e-4, 0.0, 0.8), Vector3::zeros());
        let rep2 = state_valid(&s2, "small", 0, &committed, &model, &r, &aero_calibration(), &cfg());
        assert!(!rep2.ok);
    }

    #[test]
    fn own_force_bound_enforced() {
        let model = zero_model();
        let r = roster();
        let mut s = PlanState::new(Vector3::new(0.0, 0.0, 0.8), Vector3::zeros());
        s.fa = Vector3::new(0.0, 0.0, -2.0 * r.get("small").unwrap().fa_max);
        let rep = state_valid(&s, "small", 0, &[], &model, &r, &aero_calibration(), &cfg());
        assert!(!rep.ok);
    }
}
