//! Stage 2: sequential convex refinement.
//!
//! Each robot's trajectory is refined by solving a convex program built
//! around the incumbent: linearized dynamics (the model force enters as a
//! state coordinate tied to position and velocity through its analytic
//! Jacobian), linearized collision half-spaces against the other robots'
//! incumbents, trust regions, and a soft terminal/workspace penalty. Robots
//! are swept in random order until the incumbents stop moving.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rrt::{refresh_forces, RobotProblem};
use super::{PlanError, Trajectory, TrajectoryPoint};
use crate::aero::{env_in_volume, AeroCalibration};
use crate::deepset::{Groups, HeteroDeepSet, RelativeState};
use crate::dynamics::{PlanState, RobotRoster, ENV_TYPE};
use crate::qp::{self, Qp, QpSettings, QpSolution, QpStatus};

/// Linearized per-robot program data.
#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub horizon: usize,
    pub dt: f64,
    pub mass: f64,
    pub start: PlanState,
    pub goal: PlanState,
    pub incumbent_states: Vec<PlanState>,
    pub incumbent_actions: Vec<Vector3<f64>>,
    /// Model value at each incumbent state, N.
    pub model_value: Vec<f64>,
    /// Model gradient w.r.t. the ego (p, v) at each incumbent state.
    pub model_jac: Vec<[f64; 6]>,
    /// Per step, per committed neighbor: gradient of that neighbor's
    /// predicted force w.r.t. the ego (p, v), plus its force bound.
    pub neighbor_force_jac: Vec<Vec<([f64; 6], f64)>>,
    /// Per step, per committed neighbor: unit offset and right-hand side of
    /// the separating half-space `n . p >= rhs`.
    pub collision: Vec<Vec<(Vector3<f64>, f64)>>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub b_x_p: f64,
    pub b_x_v: f64,
    pub b_x_fa: f64,
    pub b_u: f64,
    pub b_fa: f64,
    pub u_max: Vector3<f64>,
    pub workspace_lo: Vector3<f64>,
    pub workspace_hi: Vector3<f64>,
    pub v_max: f64,
    pub fa_max: f64,
}

#[derive(Debug, Clone)]
pub struct ScpConfig {
    pub max_sweeps: usize,
    /// Converged when no incumbent coordinate moves more than this.
    pub tol_converge: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub b_x_p: f64,
    pub b_x_v: f64,
    pub b_x_fa: f64,
    pub b_u: f64,
    pub b_fa: f64,
    /// Trust-region shrink factor and retry budget on merit regression.
    pub trust_shrink: f64,
    pub trust_retries: usize,
    pub qp: QpSettings,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 15,
            tol_converge: 1e-4,
            lambda1: 1000.0,
            lambda2: 1000.0,
            b_x_p: 0.3,
            b_x_v: 0.5,
            b_x_fa: crate::util::gram_force(5.0),
            b_u: 0.5 * crate::util::G,
            b_fa: crate::util::gram_force(2.0),
            trust_shrink: 0.5,
            trust_retries: 2,
            qp: QpSettings::default(),
        }
    }
}

/// Variable layout of the condensed program:
/// states (9 per knot), then actions (3 per step), then the workspace
/// slack and the terminal-norm epigraph variable.
#[derive(Debug, Clone, Copy)]
pub struct QpLayout {
    pub horizon: usize,
}

impl QpLayout {
    pub fn n(&self) -> usize {
        9 * (self.horizon + 1) + 3 * self.horizon + 2
    }

    pub fn x(&self, k: usize, d: usize) -> usize {
        9 * k + d
    }

    pub fn u(&self, k: usize, d: usize) -> usize {
        9 * (self.horizon + 1) + 3 * k + d
    }

    pub fn delta(&self) -> usize {
        self.n() - 2
    }

    pub fn t_term(&self) -> usize {
        self.n() - 1
    }

    /// Packs states and actions into a decision vector (slack terms zero).
    pub fn pack(&self, states: &[PlanState], actions: &[Vector3<f64>]) -> DVector<f64> {
        let mut z = DVector::zeros(self.n());
        for (k, s) in states.iter().enumerate() {
            for d in 0..3 {
                z[self.x(k, d)] = s.p[d];
                z[self.x(k, 3 + d)] = s.v[d];
                z[self.x(k, 6 + d)] = s.fa[d];
            }
        }
        for (k, u) in actions.iter().enumerate() {
            for d in 0..3 {
                z[self.u(k, d)] = u[d];
            }
        }
        z
    }

    /// Exact inverse of [`QpLayout::pack`].
    pub fn recover(&self, z: &DVector<f64>) -> (Vec<PlanState>, Vec<Vector3<f64>>, f64, f64) {
        let mut states = Vec::with_capacity(self.horizon + 1);
        for k in 0..=self.horizon {
            states.push(PlanState {
                p: Vector3::new(z[self.x(k, 0)], z[self.x(k, 1)], z[self.x(k, 2)]),
                v: Vector3::new(z[self.x(k, 3)], z[self.x(k, 4)], z[self.x(k, 5)]),
                fa: Vector3::new(z[self.x(k, 6)], z[self.x(k, 7)], z[self.x(k, 8)]),
            });
        }
        let mut actions = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            actions.push(Vector3::new(z[self.u(k, 0)], z[self.u(k, 1)], z[self.u(k, 2)]));
        }
        (states, actions, z[self.delta()], z[self.t_term()])
    }
}

/// Typed neighbor groups plus, for each robot-neighbor, where its entry
/// landed so Jacobian rows can be routed back.
fn groups_with_provenance(
    ego_p: &Vector3<f64>,
    ego_v: &Vector3<f64>,
    others: &[(usize, &str, Vector3<f64>, Vector3<f64>)],
    ground_z: f64,
    cal: &AeroCalibration,
) -> (Groups, Vec<(usize, String, usize)>) {
    let mut groups: Groups = Groups::new();
    let mut provenance = Vec::new();
    for (robot, ty, p, v) in others {
        let dp = p - ego_p;
        if !cal.volume.contains(&dp) {
            continue;
        }
        let entry = groups.entry((*ty).to_string()).or_default();
        provenance.push((*robot, (*ty).to_string(), entry.len()));
        entry.push(RelativeState::new(dp, v - ego_v).to_vector());
    }
    if env_in_volume(ego_p, ground_z, cal) {
        let anchored = Vector3::new(ego_p.x, ego_p.y, ego_p.z - ground_z);
        groups
            .entry(ENV_TYPE.to_string())
            .or_default()
            .push(RelativeState::environment(&anchored, ego_v).to_vector());
    }
    (groups, provenance)
}

/// Builds the linearized subproblem for robot `i` around the incumbents.
#[allow(clippy::too_many_arguments)]
pub fn linearize(
    i: usize,
    robots: &[RobotProblem],
    incumbents: &[Trajectory],
    model: &HeteroDeepSet,
    roster: &RobotRoster,
    cal: &AeroCalibration,
    cfg: &ScpConfig,
    workspace: (&Vector3<f64>, &Vector3<f64>, f64, f64),
) -> Result<ConvexSubproblem, PlanError> {
    let (ws_lo, ws_hi, v_max, ground_z) = workspace;
    let t_len = incumbents[i].len();
    assert!(incumbents.iter().all(|t| t.len() == t_len), "incumbents must share length");
    let horizon = t_len - 1;
    let ty = roster.get(&robots[i].type_name).expect("unknown type");

    let mut model_value = Vec::with_capacity(t_len);
    let mut model_jac = Vec::with_capacity(t_len);
    let mut neighbor_force_jac = Vec::with_capacity(t_len);
    let mut collision = Vec::with_capacity(t_len);

    for k in 0..t_len {
        let ego_pt = incumbents[i].at(k);
        let others: Vec<(usize, &str, Vector3<f64>, Vector3<f64>)> = (0..robots.len())
            .filter(|&j| j != i)
            .map(|j| {
                let pt = incumbents[j].at(k);
                (j, robots[j].type_name.as_str(), pt.state.p, pt.state.v)
            })
            .collect();

        // ego force and its gradient w.r.t. the ego state
        let (groups, _prov) =
            groups_with_provenance(&ego_pt.state.p, &ego_pt.state.v, &others, ground_z, cal);
        let value = model.forward(&robots[i].type_name, &groups)?;
        let jac_map = model.input_jacobian(&robots[i].type_name, &groups)?;
        let mut jac = [0.0; 6];
        for rows in jac_map.values() {
            for row in rows {
                // every relative state enters as (neighbor - ego)
                for d in 0..6 {
                    jac[d] -= row[d];
                }
            }
        }
        if !value.is_finite() || jac.iter().any(|v| !v.is_finite()) {
            return Err(PlanError::LinearizationFailed { step: k });
        }
        model_value.push(value);
        model_jac.push(jac);

        // committed neighbors: gradient of their force w.r.t. the ego state
        let mut nf = Vec::new();
        let mut col = Vec::new();
        for (j, other) in others.iter().map(|(j, ty_j, p, v)| (*j, (*ty_j, *p, *v))) {
            let (ty_j, p_j, v_j) = other;
            let mut their_others: Vec<(usize, &str, Vector3<f64>, Vector3<f64>)> = (0..robots.len())
                .filter(|&m| m != j && m != i)
                .map(|m| {
                    let pt = incumbents[m].at(k);
                    (m, robots[m].type_name.as_str(), pt.state.p, pt.state.v)
                })
                .collect();
            their_others.push((i, robots[i].type_name.as_str(), ego_pt.state.p, ego_pt.state.v));
            let (their_groups, prov) =
                groups_with_provenance(&p_j, &v_j, &their_others, ground_z, cal);
            let mut c_row = [0.0; 6];
            if prov.iter().any(|(robot, _, _)| *robot == i) {
                let jmap = model.input_jacobian(ty_j, &their_groups)?;
                for (robot, group_ty, idx) in &prov {
                    if *robot == i {
                        let row = &jmap[group_ty][*idx];
                        // the ego enters the neighbor's input as (ego - them)
                        for d in 0..6 {
                            c_row[d] = row[d];
                        }
                    }
                }
            }
            let fa_max_j = roster.get(ty_j).expect("unknown type").fa_max;
            nf.push((c_row, fa_max_j));

            // supporting half-space of the separation ball around them
            let rel = ego_pt.state.p - p_j;
            let dist = rel.norm();
            let r_min = roster
                .collision_radius(&robots[i].type_name, ty_j)
                .expect("missing radius");
            if dist > 1e-9 {
                let normal = rel / dist;
                col.push((normal, r_min + normal.dot(&p_j)));
            }
        }
        neighbor_force_jac.push(nf);
        collision.push(col);
    }

    Ok(ConvexSubproblem {
        horizon,
        dt: incumbents[i].dt,
        mass: ty.mass,
        start: robots[i].start,
        goal: robots[i].goal,
        incumbent_states: incumbents[i].points.iter().map(|p| p.state).collect(),
        incumbent_actions: incumbents[i].points[..horizon].iter().map(|p| p.u).collect(),
        model_value,
        model_jac,
        neighbor_force_jac,
        collision,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        b_x_p: cfg.b_x_p,
        b_x_v: cfg.b_x_v,
        b_x_fa: cfg.b_x_fa,
        b_u: cfg.b_u,
        b_fa: cfg.b_fa,
        u_max: ty.u_max,
        workspace_lo: *ws_lo,
        workspace_hi: *ws_hi,
        v_max,
        fa_max: ty.fa_max,
    })
}

/// Rewrites the subproblem in canonical QP form.
pub fn condense(sub: &ConvexSubproblem) -> (Qp, QpLayout) {
    let t = sub.horizon;
    let layout = QpLayout { horizon: t };
    let n = layout.n();
    let inf = f64::INFINITY;

    let mut p_mat = DMatrix::zeros(n, n);
    for k in 0..t {
        for d in 0..3 {
            p_mat[(layout.u(k, d), layout.u(k, d))] = 2.0;
        }
    }
    let mut q = DVector::zeros(n);
    q[layout.t_term()] = sub.lambda1;
    q[layout.delta()] = sub.lambda2;

    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
    let mut push = |coeffs: Vec<(usize, f64)>, l: f64, u: f64| {
        rows.push((coeffs, l, u));
    };

    // start pin
    for d in 0..3 {
        push(vec![(layout.x(0, d), 1.0)], sub.start.p[d], sub.start.p[d]);
        push(vec![(layout.x(0, 3 + d), 1.0)], sub.start.v[d], sub.start.v[d]);
    }

    // discrete dynamics
    for k in 0..t {
        for d in 0..3 {
            push(
                vec![
                    (layout.x(k + 1, d), 1.0),
                    (layout.x(k, d), -1.0),
                    (layout.x(k, 3 + d), -sub.dt),
                ],
                0.0,
                0.0,
            );
            push(
                vec![
                    (layout.x(k + 1, 3 + d), 1.0),
                    (layout.x(k, 3 + d), -1.0),
                    (layout.u(k, d), -sub.dt),
                    (layout.x(k, 6 + d), -sub.dt / sub.mass),
                ],
                0.0,
                0.0,
            );
        }
    }

    // force coordinates tied to the linearized model
    for k in 0..=t {
        push(vec![(layout.x(k, 6), 1.0)], 0.0, 0.0);
        push(vec![(layout.x(k, 7), 1.0)], 0.0, 0.0);
        let xbar = &sub.incumbent_states[k];
        let jac = &sub.model_jac[k];
        let mut coeffs = vec![(layout.x(k, 8), 1.0)];
        let mut rhs = sub.model_value[k];
        for d in 0..3 {
            coeffs.push((layout.x(k, d), -jac[d]));
            coeffs.push((layout.x(k, 3 + d), -jac[3 + d]));
            rhs -= jac[d] * xbar.p[d] + jac[3 + d] * xbar.v[d];
        }
        push(coeffs, rhs, rhs);
    }

    // soft state-space box: position, velocity, own force bound
    for k in 0..=t {
        for d in 0..3 {
            push(
                vec![(layout.x(k, d), 1.0), (layout.delta(), -1.0)],
                -inf,
                sub.workspace_hi[d],
            );
            push(
                vec![(layout.x(k, d), 1.0), (layout.delta(), 1.0)],
                sub.workspace_lo[d],
                inf,
            );
            push(vec![(layout.x(k, 3 + d), 1.0), (layout.delta(), -1.0)], -inf, sub.v_max);
            push(vec![(layout.x(k, 3 + d), 1.0), (layout.delta(), 1.0)], -sub.v_max, inf);
        }
        push(vec![(layout.x(k, 8), 1.0), (layout.delta(), -1.0)], -inf, sub.fa_max);
        push(vec![(layout.x(k, 8), 1.0), (layout.delta(), 1.0)], -sub.fa_max, inf);
    }

    // action box
    for k in 0..t {
        for d in 0..3 {
            push(vec![(layout.u(k, d), 1.0)], -sub.u_max[d], sub.u_max[d]);
        }
    }

    // collision half-spaces
    for k in 0..=t {
        for (normal, rhs) in &sub.collision[k] {
            push(
                vec![
                    (layout.x(k, 0), normal.x),
                    (layout.x(k, 1), normal.y),
                    (layout.x(k, 2), normal.z),
                ],
                *rhs,
                inf,
            );
        }
    }

    // neighbor force trust: |C (x - xbar)| <= b_fa
    for k in 0..=t {
        let xbar = &sub.incumbent_states[k];
        for (c_row, _) in &sub.neighbor_force_jac[k] {
            if c_row.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut coeffs = Vec::with_capacity(6);
            let mut center = 0.0;
            for d in 0..3 {
                coeffs.push((layout.x(k, d), c_row[d]));
                coeffs.push((layout.x(k, 3 + d), c_row[3 + d]));
                center += c_row[d] * xbar.p[d] + c_row[3 + d] * xbar.v[d];
            }
            push(coeffs, center - sub.b_fa, center + sub.b_fa);
        }
    }

    // incumbent trust regions
    for k in 0..=t {
        let xbar = &sub.incumbent_states[k];
        for d in 0..3 {
            push(
                vec![(layout.x(k, d), 1.0)],
                xbar.p[d] - sub.b_x_p,
                xbar.p[d] + sub.b_x_p,
            );
            push(
                vec![(layout.x(k, 3 + d), 1.0)],
                xbar.v[d] - sub.b_x_v,
                xbar.v[d] + sub.b_x_v,
            );
        }
        push(
            vec![(layout.x(k, 8), 1.0)],
            xbar.fa.z - sub.b_x_fa,
            xbar.fa.z + sub.b_x_fa,
        );
    }
    for k in 0..t {
        let ubar = &sub.incumbent_actions[k];
        for d in 0..3 {
            push(vec![(layout.u(k, d), 1.0)], ubar[d] - sub.b_u, ubar[d] + sub.b_u);
        }
    }

    // terminal epigraph over position and velocity
    for d in 0..6 {
        let goal = if d < 3 { sub.goal.p[d] } else { sub.goal.v[d - 3] };
        push(vec![(layout.x(t, d), 1.0), (layout.t_term(), -1.0)], -inf, goal);
        push(vec![(layout.x(t, d), 1.0), (layout.t_term(), 1.0)], goal, inf);
    }
    push(vec![(layout.delta(), 1.0)], 0.0, inf);
    push(vec![(layout.t_term(), 1.0)], 0.0, inf);

    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for (r, (coeffs, lo, hi)) in rows.into_iter().enumerate() {
        for (c, v) in coeffs {
            a[(r, c)] += v;
        }
        l[r] = lo;
        u[r] = hi;
    }
    (Qp { p: p_mat, q, a, l, u }, layout)
}

/// Refined trajectory for one robot from its condensed program.
#[derive(Debug, Clone)]
pub struct SubSolution {
    pub states: Vec<PlanState>,
    pub actions: Vec<Vector3<f64>>,
    pub delta: f64,
    pub objective: f64,
    pub qp: QpSolution,
}

pub fn build_and_solve(
    sub: &ConvexSubproblem,
    settings: &QpSettings,
    warm: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<SubSolution, PlanError> {
    let (qp_data, layout) = condense(sub);
    let sol = qp::solve(&qp_data, settings, warm)?;
    let (states, actions, delta, _t) = layout.recover(&sol.z);
    Ok(SubSolution { states, actions, delta, objective: sol.objective, qp: sol })
}

/// Merit of a candidate trajectory: control effort, terminal miss, and the
/// worst constraint/dynamics defect measured against the nonlinear model.
#[allow(clippy::too_many_arguments)]
fn merit(
    states: &[PlanState],
    actions: &[Vector3<f64>],
    robot: usize,
    robots: &[RobotProblem],
    incumbents: &[Trajectory],
    model: &HeteroDeepSet,
    cal: &AeroCalibration,
    sub: &ConvexSubproblem,
    ground_z: f64,
) -> f64 {
    let mut effort = 0.0;
    for u in actions {
        effort += u.norm_squared();
    }
    let last = states.last().unwrap();
    let mut term: f64 = 0.0;
    for d in 0..3 {
        term = term.max((last.p[d] - sub.goal.p[d]).abs());
        term = term.max((last.v[d] - sub.goal.v[d]).abs());
    }
    let mut viol: f64 = 0.0;
    for (k, s) in states.iter().enumerate() {
        for d in 0..3 {
            viol = viol.max(s.p[d] - sub.workspace_hi[d]).max(sub.workspace_lo[d] - s.p[d]);
            viol = viol.max(s.v[d].abs() - sub.v_max);
        }
        // true model force at this state, with neighbors on their incumbents
        let others: Vec<(&str, Vector3<f64>, Vector3<f64>)> = (0..robots.len())
            .filter(|&j| j != robot)
            .map(|j| {
                let pt = incumbents[j].at(k);
                (robots[j].type_name.as_str(), pt.state.p, pt.state.v)
            })
            .collect();
        let groups = crate::aero::model_groups(&s.p, &s.v, &others, ground_z, cal);
        let f_true = model
            .forward(&robots[robot].type_name, &crate::deepset::groups_from_states(&groups))
            .expect("model evaluation failed");
        viol = viol.max(f_true.abs() - sub.fa_max);
        if k < actions.len() {
            // defect of the nonlinear discrete step
            let acc = actions[k] + Vector3::new(0.0, 0.0, f_true) / sub.mass;
            let p_next = s.p + s.v * sub.dt;
            let v_next = s.v + acc * sub.dt;
            let next = &states[k + 1];
            let defect = (next.p - p_next).amax().max((next.v - v_next).amax());
            viol = viol.max(defect);
        }
    }
    effort + sub.lambda1 * term + sub.lambda2 * viol.max(0.0)
}

#[derive(Debug, Clone)]
pub struct SweepDiag {
    pub objective: f64,
    pub max_change: f64,
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub trajectories: Vec<Trajectory>,
    pub converged: bool,
    pub sweeps: usize,
    pub diagnostics: Vec<SweepDiag>,
}

/// Runs convex refinement sweeps until the incumbents settle.
#[allow(clippy::too_many_arguments)]
pub fn refine_stage2(
    stage1: &[Trajectory],
    robots: &[RobotProblem],
    model: &HeteroDeepSet,
    roster: &RobotRoster,
    cal: &AeroCalibration,
    cfg: &ScpConfig,
    workspace: (&Vector3<f64>, &Vector3<f64>, f64, f64),
    seed: u64,
) -> Result<RefineResult, PlanError> {
    let mut incumbents: Vec<Trajectory> = stage1.to_vec();
    let n = robots.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    let (_, _, _, ground_z) = workspace;

    for _sweep in 0..cfg.max_sweeps {
        sweeps += 1;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut max_change: f64 = 0.0;

        for &i in &order {
            let mut local = cfg.clone();
            let mut accepted = false;
            for _try in 0..=cfg.trust_retries {
                let sub = linearize(i, robots, &incumbents, model, roster, cal, &local, workspace)?;
                let warm_z = QpLayout { horizon: sub.horizon }
                    .pack(&sub.incumbent_states, &sub.incumbent_actions);
                let sol = build_and_solve(&sub, &local.qp, Some((&warm_z, &DVector::zeros(0))))?;
                if sol.qp.status == QpStatus::PrimalInfeasible {
                    local.b_x_p *= 2.0;
                    local.b_u *= 2.0;
                    continue;
                }
                let m_new = merit(
                    &sol.states, &sol.actions, i, robots, &incumbents, model, cal, &sub, ground_z,
                );
                let m_old = merit(
                    &sub.incumbent_states,
                    &sub.incumbent_actions,
                    i,
                    robots,
                    &incumbents,
                    model,
                    cal,
                    &sub,
                    ground_z,
                );
                if m_new <= m_old + 1e-9 {
                    let mut change: f64 = 0.0;
                    for (k, s) in sol.states.iter().enumerate() {
                        change = change
                            .max((s.p - incumbents[i].points[k].state.p).amax())
                            .max((s.v - incumbents[i].points[k].state.v).amax());
                    }
                    max_change = max_change.max(change);
                    for (k, pt) in incumbents[i].points.iter_mut().enumerate() {
                        pt.state = sol.states[k];
                        pt.u = if k < sol.actions.len() {
                            sol.actions[k]
                        } else {
                            Vector3::zeros()
                        };
                    }
                    accepted = true;
                    break;
                }
                local.b_x_p *= cfg.trust_shrink;
                local.b_x_v *= cfg.trust_shrink;
                local.b_u *= cfg.trust_shrink;
            }
            let _ = accepted;
        }

        let objective: f64 = (0..n)
            .map(|i| {
                let sub = linearize(i, robots, &incumbents, model, roster, cal, cfg, workspace)
                    .expect("linearize");
                merit(
                    &sub.incumbent_states,
                    &sub.incumbent_actions,
                    i,
                    robots,
                    &incumbents,
                    model,
                    cal,
                    &sub,
                    ground_z,
                )
            })
            .sum();
        diagnostics.push(SweepDiag { objective, max_change });
        if max_change <= cfg.tol_converge {
            converged = true;
            break;
        }
    }

    refresh_forces(&mut incumbents, robots, model, cal, &dummy_cfg_for_refresh(workspace));
    for t in incumbents.iter_mut() {
        for (k, pt) in t.points.iter_mut().enumerate() {
            pt.t = k as f64 * t.dt;
        }
        if let Some(p) = t.points.last_mut() {
            p.u = Vector3::zeros();
        }
    }
    Ok(RefineResult { trajectories: incumbents, converged, sweeps, diagnostics })
}

fn dummy_cfg_for_refresh(
    workspace: (&Vector3<f64>, &Vector3<f64>, f64, f64),
) -> super::rrt::PlannerConfig {
    let (lo, hi, v_max, ground_z) = workspace;
    super::rrt::PlannerConfig::desk_default(super::validity::ValidityConfig {
        workspace_lo: *lo,
        workspace_hi: *hi,
        v_max,
        b_fa_trust: f64::INFINITY,
        ground_z,
    })
}

/// Straight-line hover-to-hover incumbent, coarse but dynamically feasible
/// only at rest; useful for tests and as a fallback seed.
pub fn straight_line_seed(problem: &RobotProblem, steps: usize, dt: f64) -> Trajectory {
    let mut traj = Trajectory::new(dt);
    for k in 0..=steps {
        let alpha = k as f64 / steps.max(1) as f64;
        let p = problem.start.p + alpha * (problem.goal.p - problem.start.p);
        traj.points.push(TrajectoryPoint {
            t: k as f64 * dt,
            state: PlanState::new(p, Vector3::zeros()),
            u: Vector3::zeros(),
        });
    }
    traj
}
