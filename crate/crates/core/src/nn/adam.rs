//! Adam optimizer over one MLP's parameters.

use nalgebra::{DMatrix, DVector};

use super::{Mlp, MlpGrads};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: usize,
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            v_w: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            m_b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            v_b: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    /// Applies one bias-corrected update in place.
    pub fn step(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..net.weights.len() {
            for ((w, g), (m, v)) in net.weights[l]
                .iter_mut()
                .zip(grads.dw[l].iter())
                .zip(self.m_w[l].iter_mut().zip(self.v_w[l].iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            for ((b, g), (m, v)) in net.biases[l]
                .iter_mut()
                .zip(grads.db[l].iter())
                .zip(self.m_b[l].iter_mut().zip(self.v_b[l].iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *b -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}
