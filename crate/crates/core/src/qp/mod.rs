//! Dense convex quadratic programs:
//! minimize `0.5 z'Pz + q'z` subject to `l <= Az <= u`,
//! solved by operator splitting (ADMM) with equilibration, per-row penalty
//! boosting for equality rows, and an optional active-set polish.

mod ldl;
#[doc(hidden)]
pub mod reference;

pub use ldl::LdlFactor;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("KKT factorization failed")]
    Factorization,
}

/// Problem data. Equalities are encoded as rows with `l == u`.
#[derive(Debug, Clone)]
pub struct Qp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl Qp {
    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn check_shapes(&self) -> Result<(), QpError> {
        if self.p.nrows() != self.n() || self.p.ncols() != self.n() {
            return Err(QpError::Shape("P must be n x n".into()));
        }
        if self.a.nrows() != self.m() || self.a.ncols() != self.n() {
            return Err(QpError::Shape("A must be m x n".into()));
        }
        if self.u.len() != self.m() {
            return Err(QpError::Shape("l/u length mismatch".into()));
        }
        Ok(())
    }

    /// Full validity check: symmetry, positive semidefiniteness (smallest
    /// eigenvalue above -1e-9) and ordered bounds.
    pub fn validate(&self) -> Result<(), QpError> {
        self.check_shapes()?;
        if (&self.p - self.p.transpose()).amax() > 1e-9 {
            return Err(QpError::Invalid("P not symmetric".into()));
        }
        let eigs = self.p.clone().symmetric_eigenvalues();
        if eigs.min() < -1e-9 {
            return Err(QpError::Invalid(format!("P indefinite (lambda_min {})", eigs.min())));
        }
        for i in 0..self.m() {
            if self.l[i] > self.u[i] {
                return Err(QpError::Invalid(format!("l > u at row {i}")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.p * z)[0] + self.q.dot(z)
    }

    /// Text dump for offline debugging.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(s, "qp n={} m={}", self.n(), self.m()).unwrap();
        let mat = |s: &mut String, name: &str, m: &DMatrix<f64>| {
            writeln!(s, "{name} {}x{}", m.nrows(), m.ncols()).unwrap();
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.12e}", m[(r, c)])).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
        };
        let vec = |s: &mut String, name: &str, v: &DVector<f64>| {
            let row: Vec<String> = v.iter().map(|x| format!("{x:.12e}")).collect();
            writeln!(s, "{name} {}", row.join(" ")).unwrap();
        };
        mat(&mut s, "P", &self.p);
        vec(&mut s, "q", &self.q);
        mat(&mut s, "A", &self.a);
        vec(&mut s, "l", &self.l);
        vec(&mut s, "u", &self.u);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub polished: bool,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Check/adapt cadence in iterations.
    pub check_interval: usize,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            check_interval: 50,
            polish: true,
        }
    }
}

struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

/// Ruiz equilibration of the constraint/objective data.
fn ruiz(p: &mut DMatrix<f64>, q: &mut DVector<f64>, a: &mut DMatrix<f64>, l: &mut DVector<f64>, u: &mut DVector<f64>) -> Scaling {
    let n = q.len();
    let m = l.len();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    for _ in 0..10 {
        for j in 0..n {
            let mut norm: f64 = 0.0;
            for i in 0..n {
                norm = norm.max(p[(i, j)].abs());
            }
            for i in 0..m {
                norm = norm.max(a[(i, j)].abs());
            }
            let s = if norm > 1e-12 { 1.0 / norm.sqrt() } else { 1.0 };
            d[j] *= s;
            for i in 0..n {
                p[(i, j)] *= s;
                p[(j, i)] *= s;
            }
            for i in 0..m {
                a[(i, j)] *= s;
            }
            q[j] *= s;
        }
        for i in 0..m {
            let mut norm: f64 = 0.0;
            for j in 0..n {
                norm = norm.max(a[(i, j)].abs());
            }
            let s = if norm > 1e-12 { 1.0 / norm.sqrt() } else { 1.0 };
            e[i] *= s;
            for j in 0..n {
                a[(i, j)] *= s;
            }
            l[i] *= s;
            u[i] *= s;
        }
    }
    // cost scaling keeps the objective magnitude near unity
    let mut p_col_max = 0.0f64;
    for j in 0..n {
        let mut cn = 0.0f64;
        for i in 0..n {
            cn = cn.max(p[(i, j)].abs());
        }
        p_col_max += cn;
    }
    p_col_max /= n as f64;
    let qs = q.amax();
    let c = 1.0 / p_col_max.max(qs).max(1e-6);
    *p *= c;
    *q *= c;
    Scaling { d, e, c }
}

/// Solves the QP, optionally warm-starting from a previous solution.
pub fn solve(qp: &Qp, settings: &QpSettings, warm: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<QpSolution, QpError> {
    qp.check_shapes()?;
    let n = qp.n();
    let m = qp.m();

    let mut p = qp.p.clone();
    let mut q = qp.q.clone();
    let mut a = qp.a.clone();
    let mut l = qp.l.clone();
    let mut u = qp.u.clone();
    let scal = ruiz(&mut p, &mut q, &mut a, &mut l, &mut u);

    // per-row penalties: equalities get a stiff multiple
    let base_rho = settings.rho;
    let rho_of = |base: f64, i: usize| -> f64 {
        if qp.l[i] == qp.u[i] {
            base * 1e3
        } else {
            base
        }
    };

    let mut rho = base_rho;
    let factorize = |rho: f64| -> Result<LdlFactor, QpError> {
        let mut kkt = p.clone();
        for i in 0..n {
            kkt[(i, i)] += settings.sigma;
        }
        // P + sigma I + A' diag(rho_i) A
        for r in 0..m {
            let rr = rho_of(rho, r);
            for i in 0..n {
                let ari = a[(r, i)];
                if ari == 0.0 {
                    continue;
                }
                for j in 0..n {
                    kkt[(i, j)] += rr * ari * a[(r, j)];
                }
            }
        }
        LdlFactor::new(&kkt).ok_or(QpError::Factorization)
    };
    let mut factor = factorize(rho)?;

    let mut x = DVector::zeros(n);
    let mut w = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    if let Some((z0, y0)) = warm {
        if z0.len() == n && y0.len() == m {
            // map into scaled coordinates
            for i in 0..n {
                x[i] = z0[i] / scal.d[i];
            }
            for i in 0..m {
                y[i] = y0[i] * scal.c / scal.e[i];
            }
            w = &a * &x;
        }
    }

    let mut status = QpStatus::MaxIterations;
    let mut iterations = settings.max_iter;
    let mut prim_res_unscaled = f64::INFINITY;
    let mut dual_res_unscaled = f64::INFINITY;

    for iter in 0..settings.max_iter {
        // x update
        let mut rhs = settings.sigma * &x - &q;
        let mut scaled_wy = DVector::zeros(m);
        for i in 0..m {
            scaled_wy[i] = rho_of(rho, i) * w[i] - y[i];
        }
        rhs += a.transpose() * scaled_wy;
        let x_tilde = factor.solve(&rhs);
        let z_tilde = &a * &x_tilde;

        let x_next = settings.alpha * &x_tilde + (1.0 - settings.alpha) * &x;
        let mut w_next = DVector::zeros(m);
        let mut y_next = DVector::zeros(m);
        for i in 0..m {
            let ri = rho_of(rho, i);
            let v = settings.alpha * z_tilde[i] + (1.0 - settings.alpha) * w[i] + y[i] / ri;
            w_next[i] = v.clamp(l[i], u[i]);
            y_next[i] = y[i] + ri * (settings.alpha * z_tilde[i] + (1.0 - settings.alpha) * w[i] - w_next[i]);
        }

        let dy = &y_next - &y;
        x = x_next;
        let w_prev = std::mem::replace(&mut w, w_next);
        y = y_next;

        if (iter + 1) % settings.check_interval == 0 || iter + 1 == settings.max_iter {
            // unscaled residuals
            let ax = &a * &x;
            let mut rp: f64 = 0.0;
            for i in 0..m {
                rp = rp.max(((ax[i] - w[i]) / scal.e[i]).abs());
            }
            let grad = &p * &x + &q + a.transpose() * &y;
            let mut rd: f64 = 0.0;
            for j in 0..n {
                rd = rd.max((grad[j] / scal.d[j]).abs() / scal.c);
            }
            prim_res_unscaled = rp;
            dual_res_unscaled = rd;
            if rp <= settings.tol_primal && rd <= settings.tol_dual {
                status = QpStatus::Solved;
                iterations = iter + 1;
                break;
            }

            // primal infeasibility certificate on the dual increment
            let dy_norm = dy.amax();
            if dy_norm > 1e-12 {
                let at_dy = a.transpose() * &dy;
                let mut support = 0.0;
                for i in 0..m {
                    if dy[i] > 0.0 {
                        support += u[i] * dy[i];
                    } else {
                        support += l[i] * dy[i];
                    }
                }
                let eps = 1e-10 * dy_norm;
                if at_dy.amax() <= eps && support <= -eps && support < 0.0 {
                    status = QpStatus::PrimalInfeasible;
                    iterations = iter + 1;
                    break;
                }
            }

            // penalty adaptation
            let ax_inf = ax.amax().max(w.amax()).max(1e-12);
            let px = (&p * &x).amax();
            let aty = (a.transpose() * &y).amax();
            let denom_d = px.max(aty).max(q.amax()).max(1e-12);
            let ratio = ((rp / ax_inf) / (rd / denom_d).max(1e-18)).sqrt();
            if ratio > 5.0 || ratio < 0.2 {
                rho = (rho * ratio).clamp(1e-6, 1e6);
                factor = factorize(rho)?;
            }
            let _ = w_prev;
        }
    }

    // recover unscaled iterates
    let mut z_out = DVector::zeros(n);
    for i in 0..n {
        z_out[i] = x[i] * scal.d[i];
    }
    let mut y_out = DVector::zeros(m);
    for i in 0..m {
        y_out[i] = y[i] * scal.e[i] / scal.c;
    }

    let mut polished = false;
    if status == QpStatus::Solved && settings.polish {
        if let Some((z_p, y_p)) = polish(qp, &z_out, &y_out) {
            let (rp_p, rd_p) = kkt_residuals(qp, &z_p, &y_p);
            let (rp_0, rd_0) = kkt_residuals(qp, &z_out, &y_out);
            if rp_p.max(rd_p) <= rp_0.max(rd_0) {
                z_out = z_p;
                y_out = y_p;
                prim_res_unscaled = rp_p;
                dual_res_unscaled = rd_p;
                polished = true;
            }
        }
    }

    Ok(QpSolution {
        objective: qp.objective(&z_out),
        z: z_out,
        y: y_out,
        status,
        primal_residual: prim_res_unscaled,
        dual_residual: dual_res_unscaled,
        iterations,
        polished,
    })
}

/// Infinity-norm KKT residuals (primal violation, stationarity).
pub fn kkt_residuals(qp: &Qp, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64) {
    let az = &qp.a * z;
    let mut rp: f64 = 0.0;
    for i in 0..qp.m() {
        rp = rp.max((az[i] - qp.u[i]).max(0.0)).max((qp.l[i] - az[i]).max(0.0));
    }
    let grad = &qp.p * z + &qp.q + qp.a.transpose() * y;
    (rp, grad.amax())
}

/// Equality-constrained re-solve on the detected active set.
fn polish(qp: &Qp, z: &DVector<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = qp.n();
    let m = qp.m();
    let az = &qp.a * z;
    let tol: f64 = 1e-7;
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        if qp.l[i] == qp.u[i]
            || (az[i] - qp.l[i]).abs() < tol.max(1e-6 * qp.l[i].abs()) && y[i] <= 0.0
        {
            active.push((i, qp.l[i]));
        } else if (az[i] - qp.u[i]).abs() < tol.max(1e-6 * qp.u[i].abs()) && y[i] >= 0.0 {
            active.push((i, qp.u[i]));
        }
    }
    let k = active.len();
    let dim = n + k;
    let delta = 1e-9;
    let mut kkt = DMatrix::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = qp.p[(i, j)];
        }
        kkt[(i, i)] += delta;
    }
    for (r, (row, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = qp.a[(*row, j)];
            kkt[(j, n + r)] = qp.a[(*row, j)];
        }
        kkt[(n + r, n + r)] = -delta;
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -qp.q[i];
    }
    for (r, (_, b)) in active.iter().enumerate() {
        rhs[n + r] = *b;
    }
    let factor = LdlFactor::new(&kkt)?;
    // one step of iterative refinement against the regularization
    let mut sol = factor.solve(&rhs);
    let resid = &rhs - kkt_mul(qp, &active, &sol, delta);
    sol += factor.solve(&resid);

    let z_new = sol.rows(0, n).into_owned();
    let mut y_new = DVector::zeros(m);
    for (r, (row, _)) in active.iter().enumerate() {
        y_new[*row] = sol[n + r];
    }
    Some((z_new, y_new))
}

fn kkt_mul(qp: &Qp, active: &[(usize, f64)], v: &DVector<f64>, delta: f64) -> DVector<f64> {
    let n = qp.n();
    let k = active.len();
    let mut out = DVector::zeros(n + k);
    let z = v.rows(0, n);
    for i in 0..n {
        let mut s = delta * v[i];
        for j in 0..n {
            s += qp.p[(i, j)] * v[j];
        }
        for (r, (row, _)) in active.iter().enumerate() {
            s += qp.a[(*row, i)] * v[n + r];
        }
        out[i] = s;
    }
    for (r, (row, _)) in active.iter().enumerate() {
        let mut s = -delta * v[n + r];
        for j in 0..n {
            s += qp.a[(*row, j)] * z[j];
        }
        out[n + r] = s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::reference::enumerate_solve;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn solve_default(qp: &Qp) -> QpSolution {
        solve(qp, &QpSettings::default(), None).unwrap()
    }

    #[test]
    fn one_dimensional_equality() {
        let qp = Qp {
            p: DMatrix::from_element(1, 1, 2.0),
            q: DVector::zeros(1),
            a: DMatrix::from_element(1, 1, 1.0),
            l: DVector::from_element(1, 1.0),
            u: DVector::from_element(1, 1.0),
        };
        let sol = solve_default(&qp);
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn clamped_box_solution() {
        let n = 4;
        let mut q = DVector::zeros(n);
        q[0] = -1.0;
        let qp = Qp {
            p: DMatrix::identity(n, n),
            q,
            a: DMatrix::identity(n, n),
            l: DVector::zeros(n),
            u: DVector::from_element(n, 0.5),
        };
        let sol = solve_default(&qp);
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.z[0] - 0.5).abs() < 1e-7);
        for i in 1..n {
            assert!(sol.z[i].abs() < 1e-7);
        }
    }

    #[test]
    fn detects_primal_infeasibility() {
        // z >= 1 and z <= -1 cannot hold
        let qp = Qp {
            p: DMatrix::identity(1, 1),
            q: DVector::zeros(1),
            a: DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            l: DVector::from_vec(vec![1.0, -f64::INFINITY]),
            u: DVector::from_vec(vec![f64::INFINITY, -1.0]),
        };
        let sol = solve_default(&qp);
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    /// Random strictly convex problems against the enumeration reference.
    #[test]
    fn matches_enumeration_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(2024);
        for trial in 0..30 {
            let n = rng.gen_range(2..7);
            let m = rng.gen_range(1..9);
            let qp = reference::random_strictly_convex(n, m, &mut rng);
            let oracle = enumerate_solve(&qp, 6).expect("oracle must resolve");
            let sol = solve_default(&qp);
            assert_eq!(sol.status, QpStatus::Solved, "trial {trial}");
            let scale = 1.0 + oracle.objective.abs();
            assert!(
                (sol.objective - oracle.objective).abs() / scale <= 1e-6,
                "trial {trial}: admm {} vs oracle {}",
                sol.objective,
                oracle.objective
            );
            let (rp, rd) = kkt_residuals(&qp, &sol.z, &sol.y);
            assert!(rp <= 1e-6 && rd <= 1e-5, "trial {trial}: residuals {rp} {rd}");
        }
    }

    #[test]
    fn scaling_invariance_of_minimizer() {
        let mut rng = StdRng::seed_from_u64(7);
        let qp = reference::random_strictly_convex(5, 6, &mut rng);
        let mut scaled = qp.clone();
        scaled.p *= 37.0;
        scaled.q *= 37.0;
        let a = solve_default(&qp);
        let b = solve_default(&scaled);
        assert!((a.z - b.z).amax() < 1e-6);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let mut rng = StdRng::seed_from_u64(8);
        let qp = reference::random_strictly_convex(6, 8, &mut rng);
        let a = solve_default(&qp);
        let b = solve_default(&qp);
        assert_eq!(a.z, b.z);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn validate_flags_bad_problems() {
        let qp = Qp {
            p: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]),
            q: DVector::zeros(2),
            a: DMatrix::identity(2, 2),
            l: DVector::zeros(2),
            u: DVector::from_element(2, 1.0),
        };
        assert!(qp.validate().is_err(), "asymmetric P must fail");
        let qp2 = Qp {
            p: DMatrix::identity(2, 2),
            q: DVector::zeros(2),
            a: DMatrix::identity(2, 2),
            l: DVector::from_element(2, 2.0),
            u: DVector::from_element(2, 1.0),
        };
        assert!(qp2.validate().is_err(), "l > u must fail");
    }
}
