//! Test-support reference solver: exhaustive active-set enumeration.
//!
//! Independent of the ADMM path. Only practical on small instances; callers
//! bound the active-set size that is searched. For a strictly convex QP the
//! first KKT-consistent candidate is the unique optimum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::Qp;

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub active_rows: Vec<usize>,
}

/// Brute-force solve by enumerating active sets up to `max_active`
/// inequality rows (equality rows are always active). Returns `None` when
/// no KKT-consistent candidate exists within the size budget.
pub fn enumerate_solve(qp: &Qp, max_active: usize) -> Option<ReferenceSolution> {
    let m = qp.m();
    let eq_rows: Vec<usize> = (0..m).filter(|&i| qp.l[i] == qp.u[i]).collect();
    let ineq_rows: Vec<usize> = (0..m).filter(|&i| qp.l[i] != qp.u[i]).collect();

    let feas_tol = 1e-8;
    let dual_tol = 1e-9;

    let mut subset = Vec::new();
    for size in 0..=max_active.min(ineq_rows.len()) {
        let mut best: Option<ReferenceSolution> = None;
        enumerate_subsets(&ineq_rows, size, 0, &mut subset, &mut |rows: &[usize]| {
            // each active inequality sits at l or u; try every side pattern
            let combos = 1usize << rows.len();
            for pattern in 0..combos {
                let mut active: Vec<(usize, f64, i8)> = eq_rows
                    .iter()
                    .map(|&r| (r, qp.l[r], 0i8))
                    .collect();
                for (bit, &r) in rows.iter().enumerate() {
                    if pattern >> bit & 1 == 1 {
                        if qp.u[r].is_infinite() {
                            return;
                        }
                        active.push((r, qp.u[r], 1));
                    } else {
                        if qp.l[r].is_infinite() {
                            return;
                        }
                        active.push((r, qp.l[r], -1));
                    }
                }
                if let Some(sol) = try_active_set(qp, &active, feas_tol, dual_tol) {
                    match &best {
                        Some(b) if b.objective <= sol.objective => {}
                        _ => best = Some(sol),
                    }
                }
            }
        });
        if let Some(sol) = best {
            return Some(sol);
        }
    }
    None
}

fn enumerate_subsets(
    rows: &[usize],
    size: usize,
    start: usize,
    current: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if current.len() == size {
        visit(current);
        return;
    }
    for i in start..rows.len() {
        current.push(rows[i]);
        enumerate_subsets(rows, size, i + 1, current, visit);
        current.pop();
    }
}

/// KKT solve with the given rows pinned; checks feasibility and dual signs.
fn try_active_set(
    qp: &Qp,
    active: &[(usize, f64, i8)],
    feas_tol: f64,
    dual_tol: f64,
) -> Option<ReferenceSolution> {
    let n = qp.n();
    let k = active.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    for (r, (row, _, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = qp.a[(*row, j)];
            kkt[(j, n + r)] = qp.a[(*row, j)];
        }
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -qp.q[i];
    }
    for (r, (_, b, _)) in active.iter().enumerate() {
        rhs[n + r] = *b;
    }
    let lu = kkt.lu();
    let sol = lu.solve(&rhs)?;
    let z = sol.rows(0, n).into_owned();

    // dual sign pattern: multiplier >= 0 at upper bounds, <= 0 at lower
    for (r, (_, _, side)) in active.iter().enumerate() {
        let lambda = sol[n + r];
        match side {
            1 if lambda < -dual_tol => return None,
            -1 if lambda > dual_tol => return None,
            _ => {}
        }
    }
    let az = &qp.a * &z;
    for i in 0..qp.m() {
        if az[i] < qp.l[i] - feas_tol || az[i] > qp.u[i] + feas_tol {
            return None;
        }
    }
    Some(ReferenceSolution {
        objective: qp.objective(&z),
        z,
        active_rows: active.iter().map(|(r, _, _)| *r).collect(),
    })
}

/// Random strictly convex instance, feasible by construction: the bounds
/// are windows around a feasible anchor point placed away from the
/// unconstrained optimum, so a few rows usually bind.
pub fn random_strictly_convex<R: Rng>(n: usize, m: usize, rng: &mut R) -> Qp {
    let g = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    let p = &g * g.transpose() + DMatrix::identity(n, n) * (0.5 + rng.gen::<f64>());
    let z_opt = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let q = -(&p * &z_opt);
    let z_feas = &z_opt + DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5);
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
    let az = &a * &z_feas;
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for i in 0..m {
        l[i] = az[i] - rng.gen_range(0.05..0.8);
        u[i] = az[i] + rng.gen_range(0.05..0.8);
    }
    Qp { p, q, a, l, u }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_finds_clamped_solution() {
        // min 0.5 z'z - z0 with 0 <= z <= 0.5: optimum pinned at upper bound
        let n = 3;
        let mut q = DVector::zeros(n);
        q[0] = -1.0;
        let qp = Qp {
            p: DMatrix::identity(n, n),
            q,
            a: DMatrix::identity(n, n),
            l: DVector::zeros(n),
            u: DVector::from_element(n, 0.5),
        };
        let sol = enumerate_solve(&qp, 3).unwrap();
        assert!((sol.z[0] - 0.5).abs() < 1e-12);
        assert!(sol.z[1].abs() < 1e-12);
    }

    #[test]
    fn unconstrained_interior_optimum() {
        let qp = Qp {
            p: DMatrix::identity(2, 2) * 2.0,
            q: DVector::from_vec(vec![-2.0, 0.0]),
            a: DMatrix::identity(2, 2),
            l: DVector::from_element(2, -10.0),
            u: DVector::from_element(2, 10.0),
        };
        let sol = enumerate_solve(&qp, 2).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!(sol.active_rows.is_empty());
    }
}
