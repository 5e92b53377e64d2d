//! Stage 1: sequential sampling-based search with anytime cost bounds.
//!
//! Robots are planned one at a time in a random order, treating already
//! planned robots as dynamic obstacles. Each robot runs a tree search over
//! position, velocity, predicted interaction force and time; per-robot cost
//! bounds only ever tighten, so repeated outer passes drive solutions
//! toward lower control effort.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::validity::{predict_ego_force, state_valid, Committed, ValidityConfig};
use super::{PlanError, Trajectory, TrajectoryPoint};
use crate::aero::AeroCalibration;
use crate::deepset::HeteroDeepSet;
use crate::dynamics::{PlanState, RobotRoster, RobotType};

/// One robot's planning instance.
#[derive(Debug, Clone)]
pub struct RobotProblem {
    pub type_name: String,
    pub start: PlanState,
    pub goal: PlanState,
}

#[derive(Debug, Clone)]
pub struct PlannerConfig {
    /// Propagation step, s.
    pub dt: f64,
    /// Goal tolerance in the weighted state metric.
    pub goal_eps: f64,
    /// Probability of steering toward the goal instead of a random state.
    pub goal_bias: f64,
    /// Tree-growth budget per robot per outer pass.
    pub max_iters_per_rrt: usize,
    /// Hard cap on outer passes.
    pub max_outer_passes: usize,
    /// Stop after this many passes without any cost improvement.
    pub passes_without_improvement: usize,
    /// Multiplier applied to a new solution cost to force strict progress.
    pub cost_tighten: f64,
    /// Metric weights for velocity and force relative to position.
    pub metric_w_v: f64,
    pub metric_w_fa: f64,
    /// Sampled velocity bound per axis, m/s.
    pub v_max: f64,
    /// Longest allowed trajectory, in steps.
    pub max_horizon_steps: usize,
    pub seed: u64,
    pub validity: ValidityConfig,
}

impl PlannerConfig {
    pub fn desk_default(validity: ValidityConfig) -> Self {
        Self {
            dt: 0.1,
            goal_eps: 0.15,
            goal_bias: 0.05,
            max_iters_per_rrt: 20_000,
            max_outer_passes: 6,
            passes_without_improvement: 3,
            cost_tighten: 0.999,
            metric_w_v: 0.2,
            metric_w_fa: 0.05,
            v_max: 2.0,
            max_horizon_steps: 100,
            seed: 0,
            validity,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage1Result {
    pub trajectories: Vec<Trajectory>,
    pub costs: Vec<f64>,
    pub t_f: f64,
}

struct Node {
    state: PlanState,
    time_index: usize,
    cost: f64,
    parent: usize,
    action: Vector3<f64>,
}

/// Weighted distance over position, velocity and predicted force.
pub(crate) fn metric(a: &PlanState, b: &PlanState, cfg: &PlannerConfig) -> f64 {
    ((a.p - b.p).norm_squared()
        + cfg.metric_w_v * cfg.metric_w_v * (a.v - b.v).norm_squared()
        + cfg.metric_w_fa * cfg.metric_w_fa * (a.fa - b.fa).norm_squared())
    .sqrt()
}

/// Finds a common-duration trajectory set for all robots.
pub fn plan_stage1(
    robots: &[RobotProblem],
    model: &HeteroDeepSet,
    roster: &RobotRoster,
    cal: &AeroCalibration,
    cfg: &PlannerConfig,
) -> Result<Stage1Result, PlanError> {
    assert!(!robots.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // upfront feasibility: separation and force bounds at the start
    for (i, r) in robots.iter().enumerate() {
        for (j, o) in robots.iter().enumerate().skip(i + 1) {
            let r_min = roster
                .collision_radius(&r.type_name, &o.type_name)
                .map_err(|e| PlanError::InfeasibleStart { robot: i, reason: e.to_string() })?;
            let d = (r.start.p - o.start.p).norm();
            if d < r_min {
                return Err(PlanError::InfeasibleStart {
                    robot: i,
                    reason: format!("starts {i} and {j} are {d:.3} m apart, need {r_min:.3}"),
                });
            }
        }
        let ty = roster
            .get(&r.type_name)
            .map_err(|e| PlanError::InfeasibleStart { robot: i, reason: e.to_string() })?;
        let f0 = start_force(robots, i, model, cal, cfg);
        if f0.abs() > ty.fa_max {
            return Err(PlanError::InfeasibleStart {
                robot: i,
                reason: format!("start force {:.4} N exceeds bound {:.4} N", f0.abs(), ty.fa_max),
            });
        }
    }

    let n = robots.len();
    let mut bounds = vec![f64::INFINITY; n];
    let mut solutions: Vec<Option<Trajectory>> = vec![None; n];
    let mut costs = vec![f64::INFINITY; n];
    let mut stale_passes = 0;

    for _pass in 0..cfg.max_outer_passes {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut improved = false;
        for &i in &order {
            let committed_refs: Vec<Committed> = solutions
                .iter()
                .enumerate()
                .filter(|(j, s)| *j != i && s.is_some())
                .map(|(j, s)| Committed {
                    type_name: &robots[j].type_name,
                    traj: s.as_ref().unwrap(),
                })
                .collect();
            let ty = roster.get(&robots[i].type_name).unwrap();
            if let Some((traj, cost)) = grow_tree(
                &robots[i],
                ty,
                bounds[i],
                &committed_refs,
                model,
                roster,
                cal,
                cfg,
                &mut rng,
            ) {
                bounds[i] = cost * cfg.cost_tighten;
                costs[i] = cost;
                solutions[i] = Some(traj);
                improved = true;
            }
        }
        if improved {
            stale_passes = 0;
        } else {
            stale_passes += 1;
            if stale_passes >= cfg.passes_without_improvement {
                break;
            }
        }
    }

    for (i, s) in solutions.iter().enumerate() {
        if s.is_none() {
            return Err(PlanError::Timeout { robot: i });
        }
    }
    let mut trajectories: Vec<Trajectory> = solutions.into_iter().map(|s| s.unwrap()).collect();

    // uniform duration: repeat final states with null actions
    let len = trajectories.iter().map(|t| t.len()).max().unwrap();
    for t in trajectories.iter_mut() {
        t.extend_to(len);
    }
    refresh_forces(&mut trajectories, robots, model, cal, cfg);

    let t_f = (len - 1) as f64 * cfg.dt;
    Ok(Stage1Result { trajectories, costs, t_f })
}

/// Model force on robot `i` with everyone at their start states.
fn start_force(
    robots: &[RobotProblem],
    i: usize,
    model: &HeteroDeepSet,
    cal: &AeroCalibration,
    cfg: &PlannerConfig,
) -> f64 {
    let others: Vec<(&str, Vector3<f64>, Vector3<f64>)> = robots
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, r)| (r.type_name.as_str(), r.start.p, r.start.v))
        .collect();
    let groups = crate::aero::model_groups(
        &robots[i].start.p,
        &robots[i].start.v,
        &others,
        cfg.validity.ground_z,
        cal,
    );
    model
        .forward(&robots[i].type_name, &crate::deepset::groups_from_states(&groups))
        .expect("model evaluation failed")
}

/// Re-evaluates stored interaction forces against the final trajectory set.
pub fn refresh_forces(
    trajectories: &mut [Trajectory],
    robots: &[RobotProblem],
    model: &HeteroDeepSet,
    cal: &AeroCalibration,
    cfg: &PlannerConfig,
) {
    let len = trajectories.iter().map(|t| t.len()).max().unwrap_or(0);
    for k in 0..len {
        let snapshot: Vec<(String, Vector3<f64>, Vector3<f64>)> = trajectories
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let pt = t.at(k);
                (robots[j].type_name.clone(), pt.state.p, pt.state.v)
            })
            .collect();
        for (i, t) in trajectories.iter_mut().enumerate() {
            if k >= t.len() {
                continue;
            }
            let others: Vec<(&str, Vector3<f64>, Vector3<f64>)> = snapshot
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (n, p, v))| (n.as_str(), *p, *v))
                .collect();
            let (p, v) = {
                let s = &t.points[k].state;
                (s.p, s.v)
            };
            let groups = crate::aero::model_groups(&p, &v, &others, cfg.validity.ground_z, cal);
            let f = model
                .forward(&robots[i].type_name, &crate::deepset::groups_from_states(&groups))
                .expect("model evaluation failed");
            t.points[k].state.fa = Vector3::new(0.0, 0.0, f);
        }
    }
}

/// Single-robot tree search under a cost bound. Returns the first
/// goal-reaching trajectory whose cost beats the bound.
#[allow(clippy::too_many_arguments)]
fn grow_tree(
    problem: &RobotProblem,
    ty: &RobotType,
    cost_bound: f64,
    committed: &[Committed],
    model: &HeteroDeepSet,
    roster: &RobotRoster,
    cal: &AeroCalibration,
    cfg: &PlannerConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(Trajectory, f64)> {
    let mut root_state = problem.start;
    root_state.fa = Vector3::new(
        0.0,
        0.0,
        predict_ego_force(
            model,
            &problem.type_name,
            &problem.start.p,
            &problem.start.v,
            committed,
            0,
            cal,
            cfg.validity.ground_z,
        ),
    );
    let mut nodes = vec![Node {
        state: root_state,
        time_index: 0,
        cost: 0.0,
        parent: usize::MAX,
        action: Vector3::zeros(),
    }];

    if metric(&root_state, &problem.goal, cfg) <= cfg.goal_eps && 0.0 < cost_bound {
        return Some((extract(&nodes, 0, cfg.dt), 0.0));
    }

    let lo = cfg.validity.workspace_lo;
    let hi = cfg.validity.workspace_hi;
    let axis_active = |d: usize| hi[d] - lo[d] > 1e-12;

    for _ in 0..cfg.max_iters_per_rrt {
        let target = if rng.gen::<f64>() < cfg.goal_bias {
            problem.goal
        } else {
            let mut p = Vector3::zeros();
            let mut v = Vector3::zeros();
            for d in 0..3 {
                p[d] = if axis_active(d) { rng.gen_range(lo[d]..hi[d]) } else { lo[d] };
                v[d] = if axis_active(d) { rng.gen_range(-cfg.v_max..cfg.v_max) } else { 0.0 };
            }
            let fa_z = rng.gen_range(-ty.fa_max..ty.fa_max);
            PlanState { p, v, fa: Vector3::new(0.0, 0.0, fa_z) }
        };

        let mut nearest = 0;
        let mut best = f64::INFINITY;
        for (idx, node) in nodes.iter().enumerate() {
            let d = metric(&node.state, &target, cfg);
            if d < best {
                best = d;
                nearest = idx;
            }
        }
        let near = &nodes[nearest];
        if near.time_index + 1 > cfg.max_horizon_steps {
            continue;
        }

        let mut u = Vector3::zeros();
        for d in 0..3 {
            u[d] = if axis_active(d) { rng.gen_range(-ty.u_max[d]..ty.u_max[d]) } else { 0.0 };
        }

        // forward Euler, matching the refinement stage's discretization;
        // the force is held over the step and re-queried at the new state
        let acc = u + near.state.fa / ty.mass;
        let p_new = near.state.p + near.state.v * cfg.dt;
        let v_new = near.state.v + acc * cfg.dt;
        let k_new = near.time_index + 1;
        let cost_new = near.cost + u.norm() * cfg.dt;
        if cost_new > cost_bound {
            continue;
        }
        let fa_new = predict_ego_force(
            model,
            &problem.type_name,
            &p_new,
            &v_new,
            committed,
            k_new,
            cal,
            cfg.validity.ground_z,
        );
        let state_new = PlanState { p: p_new, v: v_new, fa: Vector3::new(0.0, 0.0, fa_new) };
        let report = state_valid(
            &state_new,
            &problem.type_name,
            k_new,
            committed,
            model,
            roster,
            cal,
            &cfg.validity,
        );
        if !report.ok {
            continue;
        }
        nodes.push(Node {
            state: state_new,
            time_index: k_new,
            cost: cost_new,
            parent: nearest,
            action: u,
        });
        if metric(&state_new, &problem.goal, cfg) <= cfg.goal_eps {
            let idx = nodes.len() - 1;
            return Some((extract(&nodes, idx, cfg.dt), cost_new));
        }
    }
    None
}

fn extract(nodes: &[Node], leaf: usize, dt: f64) -> Trajectory {
    let mut chain = Vec::new();
    let mut idx = leaf;
    while idx != usize::MAX {
        chain.push(idx);
        idx = nodes[idx].parent;
    }
    chain.reverse();
    let mut traj = Trajectory::new(dt);
    for (pos, &i) in chain.iter().enumerate() {
        let action =
            if pos + 1 < chain.len() { nodes[chain[pos + 1]].action } else { Vector3::zeros() };
        traj.points.push(TrajectoryPoint {
            t: nodes[i].time_index as f64 * dt,
            state: nodes[i].state,
            u: action,
        });
    }
    traj
}
