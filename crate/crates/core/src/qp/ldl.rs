//! Dense LDL' factorization without pivoting.
//!
//! Suited to the quasi-definite systems ADMM produces; the signed diagonal
//! absorbs the negative lower-right block of polish KKT matrices.

use nalgebra::{DMatrix, DVector};

pub struct LdlFactor {
    l: DMatrix<f64>,
    d: DVector<f64>,
}

impl LdlFactor {
    /// Factors a symmetric matrix; returns `None` on a (near) zero pivot.
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        let n = m.nrows();
        assert_eq!(n, m.ncols());
        let mut l = DMatrix::identity(n, n);
        let mut d = DVector::zeros(n);
        for j in 0..n {
            let mut dj = m[(j, j)];
            for k in 0..j {
                dj -= l[(j, k)] * l[(j, k)] * d[k];
            }
            if dj.abs() < 1e-14 {
                return None;
            }
            d[j] = dj;
            for i in (j + 1)..n {
                let mut v = m[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)] * d[k];
                }
                l[(i, j)] = v / dj;
            }
        }
        Some(Self { l, d })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.d.len();
        let mut x = b.clone();
        // forward: L y = b
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.l[(i, k)] * x[k];
            }
        }
        // diagonal
        for i in 0..n {
            x[i] /= self.d[i];
        }
        // backward: L' z = y
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= self.l[(k, i)] * x[k];
            }
        }
        x
    }
}
