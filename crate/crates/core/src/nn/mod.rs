//! Minimal neural-network stack: ReLU MLPs with manual reverse-mode
//! gradients, Adam, and spectral normalization.

mod adam;
mod spectral;

pub use adam::Adam;
pub use spectral::{spectral_normalize, spectral_norm};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected input of size {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
}

/// Fully-connected network with ReLU hidden activations and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    /// Power-iteration warm starts, one right-singular-vector estimate per
    /// layer. Not part of the model definition.
    pub(crate) sn_warm: Vec<DVector<f64>>,
}

/// Per-layer parameter gradients plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub dw: Vec<DMatrix<f64>>,
    pub db: Vec<DVector<f64>>,
    pub dx: DVector<f64>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            dw: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            db: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
            dx: DVector::zeros(net.input_dim()),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            *a += b;
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.dw.iter_mut() {
            *a *= s;
        }
        for a in self.db.iter_mut() {
            *a *= s;
        }
    }
}

/// Forward-pass cache: the input and every post-activation hidden vector.
pub struct MlpCache {
    layer_inputs: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

impl Mlp {
    /// He-initialized network over the given layer sizes, e.g.
    /// `[6, 25, 40, 40, 20]` builds four weight matrices.
    pub fn new_random<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let std = (2.0 / n_in as f64).sqrt();
            let w = DMatrix::from_fn(n_out, n_in, |_, _| {
                // Box-Muller keeps us off extra distribution deps
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen::<f64>();
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            });
            weights.push(w);
            biases.push(DVector::zeros(n_out));
        }
        let sn_warm = weights.iter().map(|w| DVector::from_element(w.ncols(), 1.0)).collect();
        Self { weights, biases, sn_warm }
    }

    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>) -> Self {
        assert_eq!(weights.len(), biases.len());
        for (w, b) in weights.iter().zip(&biases) {
            assert_eq!(w.nrows(), b.len());
        }
        for pair in weights.windows(2) {
            assert_eq!(pair[0].nrows(), pair[1].ncols(), "incompatible layer sizes");
        }
        let sn_warm = weights.iter().map(|w| DVector::from_element(w.ncols(), 1.0)).collect();
        Self { weights, biases, sn_warm }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>, NnError> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &DVector<f64>) -> Result<MlpCache, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        let mut layer_inputs = Vec::with_capacity(self.weights.len());
        let mut a = x.clone();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            layer_inputs.push(a.clone());
            let mut z = w * &a + b;
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        Ok(MlpCache { layer_inputs, output: a })
    }

    /// Exact reverse-mode gradients of `upstream . output` with respect to
    /// all parameters and the input. The ReLU subgradient at zero is zero.
    pub fn backward(&self, cache: &MlpCache, upstream: &DVector<f64>) -> MlpGrads {
        let last = self.weights.len() - 1;
        let mut dw = vec![DMatrix::zeros(0, 0); self.weights.len()];
        let mut db = vec![DVector::zeros(0); self.weights.len()];
        let mut delta = upstream.clone();
        for l in (0..self.weights.len()).rev() {
            let input = &cache.layer_inputs[l];
            if l < last {
                // post-activation of layer l is the input of layer l+1
                let post = &cache.layer_inputs[l + 1];
                for i in 0..delta.len() {
                    if post[i] <= 0.0 {
                        delta[i] = 0.0;
                    }
                }
            }
            dw[l] = &delta * input.transpose();
            db[l] = delta.clone();
            delta = self.weights[l].transpose() * delta;
        }
        MlpGrads { dw, db, dx: delta }
    }

    /// Jacobian of the output w.r.t. the input at `x` (rows = outputs).
    pub fn input_jacobian(&self, cache: &MlpCache) -> DMatrix<f64> {
        let last = self.weights.len() - 1;
        let mut jac = self.weights[last].clone();
        for l in (0..last).rev() {
            let post = &cache.layer_inputs[l + 1];
            // scale columns by the ReLU mask of layer l's output
            let mut masked = self.weights[l].clone();
            for (i, row) in post.iter().enumerate() {
                if *row <= 0.0 {
                    masked.row_mut(i).fill(0.0);
                }
            }
            jac *= masked;
        }
        jac
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
