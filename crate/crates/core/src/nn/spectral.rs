//! Spectral normalization via warm-started power iteration.

use nalgebra::{DMatrix, DVector};

use super::Mlp;

/// Largest singular value of `w`, refined from the warm-start vector
/// `v` (right singular direction estimate, updated in place).
pub fn spectral_norm(w: &DMatrix<f64>, v: &mut DVector<f64>, tol: f64) -> f64 {
    if v.len() != w.ncols() {
        *v = DVector::from_element(w.ncols(), 1.0);
    }
    if v.norm() == 0.0 {
        v.fill(1.0);
    }
    v.normalize_mut();
    let mut sigma = 0.0;
    for _ in 0..10_000 {
        let u = w * &*v;
        let nu = u.norm();
        if nu == 0.0 {
            return 0.0;
        }
        let vt = w.transpose() * (u / nu);
        let new_sigma = vt.norm();
        if new_sigma == 0.0 {
            return 0.0;
        }
        *v = vt / new_sigma;
        if (new_sigma - sigma).abs() <= tol * new_sigma.max(1.0) {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}

/// Rescales every weight matrix so its largest singular value equals
/// `gamma^(1/n)` with `n` the number of weight layers, bounding the
/// network's Lipschitz constant by `gamma`. Zero matrices are left alone.
pub fn spectral_normalize(net: &mut Mlp, gamma: f64) {
    assert!(gamma > 0.0);
    let n = net.weights.len();
    let target = gamma.powf(1.0 / n as f64);
    for l in 0..n {
        let mut warm = std::mem::replace(&mut net.sn_warm[l], DVector::zeros(0));
        let sigma = spectral_norm(&net.weights[l], &mut warm, 1e-10);
        if sigma > 0.0 {
            net.weights[l] *= target / sigma;
        }
        net.sn_warm[l] = warm;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn svd_sigma_max(w: &DMatrix<f64>) -> f64 {
        w.clone().svd(false, false).singular_values[0]
    }

    #[test]
    fn identity_two_layer_scales_to_sqrt_gamma() {
        let net_layers = vec![DMatrix::identity(4, 4), DMatrix::identity(4, 4)];
        let biases = vec![DVector::zeros(4), DVector::zeros(4)];
        let mut net = Mlp::from_parts(net_layers, biases);
        spectral_normalize(&mut net, 4.0);
        for w in &net.weights {
            assert!((svd_sigma_max(w) - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn random_matrices_hit_target_sigma() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut net = Mlp::new_random(&[6, 25, 40, 40, 20], &mut rng);
        let gamma = 4.0;
        spectral_normalize(&mut net, gamma);
        let target = gamma.powf(1.0 / 4.0);
        for w in &net.weights {
            let sigma = svd_sigma_max(w);
            assert!((sigma - target).abs() < 1e-6, "sigma {sigma} target {target}");
        }
    }

    #[test]
    fn idempotent_on_normalized_net() {
        let mut rng = StdRng::seed_from_u64(18);
        let mut net = Mlp::new_random(&[5, 10, 3], &mut rng);
        spectral_normalize(&mut net, 2.0);
        let snapshot: Vec<_> = net.weights.clone();
        spectral_normalize(&mut net, 2.0);
        for (a, b) in snapshot.iter().zip(&net.weights) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_matrix_left_unchanged() {
        let mut net = Mlp::from_parts(vec![DMatrix::zeros(3, 3)], vec![DVector::zeros(3)]);
        spectral_normalize(&mut net, 4.0);
        assert!(net.weights[0].norm() == 0.0);
    }

    #[test]
    fn power_iteration_matches_svd_on_random() {
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..20 {
            let w = DMatrix::from_fn(12, 8, |_, _| rng.gen::<f64>() - 0.5);
            let mut warm = DVector::from_element(8, 1.0);
            let sigma = spectral_norm(&w, &mut warm, 1e-12);
            assert!((sigma - svd_sigma_max(&w)).abs() < 1e-8);
        }
    }
}
