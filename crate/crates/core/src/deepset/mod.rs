//! Typed permutation-invariant interaction model.
//!
//! One inner network per neighbor type embeds each relative state into a
//! hidden vector; the embeddings of all neighbors are summed and decoded by
//! an outer network selected by the ego type. Summation runs in a canonical
//! order (types sorted by name, members sorted lexicographically) so the
//! output is bit-identical under any within-group permutation of the input.

mod data;
mod serial;
mod train;

pub use data::{Dataset, RelativeState, TrainSample};
pub use train::{mse_on, train, TrainConfig, TrainReport};

use std::collections::BTreeMap;

use nalgebra::{DVector, RowDVector};
use rand::Rng;
use thiserror::Error;

use crate::nn::Mlp;
use crate::util::gram_force;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown type key `{0}`")]
    UnknownType(String),
    #[error("bad input dimension: expected {expected}, got {got}")]
    BadInput { expected: usize, got: usize },
    #[error("model file error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error("training diverged: {0}")]
    Diverged(String),
}

/// The 2K+1 network interaction model for K robot types plus the
/// environment pseudo-type.
#[derive(Debug, Clone)]
pub struct HeteroDeepSet {
    /// Relative-state dimension (6 for position/velocity pairs).
    pub input_dim: usize,
    /// Hidden embedding width shared by every inner network.
    pub hidden: usize,
    /// Per-network Lipschitz budget applied by spectral normalization.
    pub gamma: f64,
    /// Types that can act as ego (sorted).
    pub robot_types: Vec<String>,
    /// Inner networks keyed by neighbor type (robot types plus `env`).
    pub phi: BTreeMap<String, Mlp>,
    /// Outer networks keyed by ego type.
    pub rho: BTreeMap<String, Mlp>,
    /// Input standardization, applied as `(x - mean) / scale`.
    pub input_mean: DVector<f64>,
    pub input_scale: DVector<f64>,
    /// Newtons per network output unit.
    pub output_scale: f64,
}

/// Neighbor sets keyed by type. Unlisted types count as empty groups.
pub type Groups = BTreeMap<String, Vec<DVector<f64>>>;

impl HeteroDeepSet {
    /// Fresh model with the stock architecture: inner nets
    /// `D -> 25 -> 40 -> 40 -> H`, outer nets `H -> 40 -> 40 -> 40 -> 1`.
    pub fn new_random<R: Rng>(
        robot_types: &[String],
        phi_types: &[String],
        input_dim: usize,
        hidden: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Self {
        let mut phi = BTreeMap::new();
        for t in phi_types {
            phi.insert(t.clone(), Mlp::new_random(&[input_dim, 25, 40, 40, hidden], rng));
        }
        let mut rho = BTreeMap::new();
        for t in robot_types {
            rho.insert(t.clone(), Mlp::new_random(&[hidden, 40, 40, 40, 1], rng));
        }
        let mut sorted_robot: Vec<String> = robot_types.to_vec();
        sorted_robot.sort();
        Self {
            input_dim,
            hidden,
            gamma,
            robot_types: sorted_robot,
            phi,
            rho,
            input_mean: DVector::zeros(input_dim),
            input_scale: DVector::from_element(input_dim, 1.0),
            output_scale: gram_force(1.0),
        }
    }

    /// Stock force model for a robot roster: one inner net per robot type
    /// plus `env`, one outer net per robot type, 6-D relative states.
    pub fn for_roster<R: Rng>(roster: &crate::dynamics::RobotRoster, hidden: usize, gamma: f64, rng: &mut R) -> Self {
        let robot_types = roster.type_names();
        let mut phi_types = robot_types.clone();
        phi_types.push(crate::dynamics::ENV_TYPE.to_string());
        phi_types.sort();
        Self::new_random(&robot_types, &phi_types, 6, hidden, gamma, rng)
    }

    /// A model that predicts exactly zero regardless of input.
    pub fn zeroed(mut self) -> Self {
        for net in self.phi.values_mut().chain(self.rho.values_mut()) {
            for w in net.weights.iter_mut() {
                w.fill(0.0);
            }
            for b in net.biases.iter_mut() {
                b.fill(0.0);
            }
        }
        self
    }

    fn standardize(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = x - &self.input_mean;
        for i in 0..out.len() {
            out[i] /= self.input_scale[i];
        }
        out
    }

    /// Canonically ordered (type, member) view of the groups.
    fn ordered<'a>(&self, groups: &'a Groups) -> Result<Vec<(&'a str, Vec<&'a DVector<f64>>)>, ModelError> {
        let mut out = Vec::new();
        for (ty, members) in groups {
            if !self.phi.contains_key(ty) {
                return Err(ModelError::UnknownType(ty.clone()));
            }
            for m in members {
                if m.len() != self.input_dim {
                    return Err(ModelError::BadInput { expected: self.input_dim, got: m.len() });
                }
            }
            let mut refs: Vec<&DVector<f64>> = members.iter().collect();
            refs.sort_by(|a, b| {
                for (x, y) in a.iter().zip(b.iter()) {
                    match x.total_cmp(y) {
                        std::cmp::Ordering::Equal => continue,
                        ord => return ord,
                    }
                }
                std::cmp::Ordering::Equal
            });
            out.push((ty.as_str(), refs));
        }
        Ok(out)
    }

    /// Predicted interaction-force z component in newtons.
    pub fn forward(&self, ego_type: &str, groups: &Groups) -> Result<f64, ModelError> {
        let rho = self.rho.get(ego_type).ok_or_else(|| ModelError::UnknownType(ego_type.into()))?;
        let mut hidden_sum = DVector::zeros(self.hidden);
        for (ty, members) in self.ordered(groups)? {
            let phi = &self.phi[ty];
            for m in members {
                hidden_sum += phi.forward(&self.standardize(m))?;
            }
        }
        let out = rho.forward(&hidden_sum)?;
        Ok(out[0] * self.output_scale)
    }

    /// Forward pass that also counts the arithmetic operations performed,
    /// for verifying linear cost in the neighbor count.
    pub fn forward_counting(&self, ego_type: &str, groups: &Groups) -> Result<(f64, u64), ModelError> {
        let mut flops: u64 = 0;
        let count_net = |net: &Mlp, flops: &mut u64| {
            for w in &net.weights {
                *flops += 2 * (w.nrows() * w.ncols()) as u64 + w.nrows() as u64;
            }
        };
        let rho = self.rho.get(ego_type).ok_or_else(|| ModelError::UnknownType(ego_type.into()))?;
        let mut hidden_sum = DVector::zeros(self.hidden);
        for (ty, members) in self.ordered(groups)? {
            let phi = &self.phi[ty];
            for m in members {
                hidden_sum += phi.forward(&self.standardize(m))?;
                count_net(phi, &mut flops);
                flops += 2 * self.input_dim as u64 + self.hidden as u64;
            }
        }
        let out = rho.forward(&hidden_sum)?;
        count_net(rho, &mut flops);
        flops += 1;
        Ok((out[0] * self.output_scale, flops))
    }

    /// Gradient of the prediction with respect to each raw neighbor state,
    /// in newtons per input unit. Output mirrors the input group layout.
    pub fn input_jacobian(
        &self,
        ego_type: &str,
        groups: &Groups,
    ) -> Result<BTreeMap<String, Vec<RowDVector<f64>>>, ModelError> {
        let rho = self.rho.get(ego_type).ok_or_else(|| ModelError::UnknownType(ego_type.into()))?;
        // hidden sum must match forward() exactly, so reuse the same order
        let mut hidden_sum = DVector::zeros(self.hidden);
        let mut caches: BTreeMap<String, Vec<crate::nn::MlpCache>> = BTreeMap::new();
        for (ty, members) in groups {
            if !self.phi.contains_key(ty) {
                return Err(ModelError::UnknownType(ty.clone()));
            }
            let mut list = Vec::with_capacity(members.len());
            for m in members {
                if m.len() != self.input_dim {
                    return Err(ModelError::BadInput { expected: self.input_dim, got: m.len() });
                }
                list.push(self.phi[ty].forward_cached(&self.standardize(m))?);
            }
            caches.insert(ty.clone(), list);
        }
        for (ty, members) in self.ordered(groups)? {
            let phi = &self.phi[ty];
            for m in members {
                hidden_sum += phi.forward(&self.standardize(m))?;
            }
            let _ = phi;
        }
        let rho_cache = rho.forward_cached(&hidden_sum)?;
        let rho_jac = rho.input_jacobian(&rho_cache); // 1 x H

        let mut out = BTreeMap::new();
        for (ty, list) in &caches {
            let phi = &self.phi[ty];
            let mut rows = Vec::with_capacity(list.len());
            for cache in list {
                let phi_jac = phi.input_jacobian(cache); // H x D
                let mut row = (&rho_jac * &phi_jac).row(0).into_owned();
                for i in 0..self.input_dim {
                    row[i] *= self.output_scale / self.input_scale[i];
                }
                rows.push(row);
            }
            out.insert(ty.clone(), rows);
        }
        Ok(out)
    }

    /// Conservative Lipschitz bound for predictions over a scene with
    /// `n_neighbors` inputs stacked into one vector, in newtons per raw
    /// input unit.
    pub fn composed_lipschitz_bound(&self, n_neighbors: usize) -> f64 {
        let min_scale = self.input_scale.iter().cloned().fold(f64::INFINITY, f64::min);
        self.gamma * self.gamma * (n_neighbors.max(1) as f64).sqrt() * self.output_scale / min_scale
    }

    pub fn apply_spectral_norm(&mut self) {
        let gamma = self.gamma;
        for net in self.phi.values_mut().chain(self.rho.values_mut()) {
            crate::nn::spectral_normalize(net, gamma);
        }
    }
}

/// Helper to build a group map from typed relative states.
pub fn groups_from_states(groups: &BTreeMap<String, Vec<RelativeState>>) -> Groups {
    groups
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|r| r.to_vector()).collect()))
        .collect()
}

/// Reference evaluation used by tests: an order-naive sum identical in math
/// but not in float ordering.
#[cfg(test)]
pub(crate) fn forward_unordered(model: &HeteroDeepSet, ego: &str, groups: &Groups) -> f64 {
    let mut hidden = DVector::zeros(model.hidden);
    for (ty, members) in groups {
        for m in members {
            hidden += model.phi[ty].forward(&model.standardize(m)).unwrap();
        }
    }
    model.rho[ego].forward(&hidden).unwrap()[0] * model.output_scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn demo_model(seed: u64) -> HeteroDeepSet {
        let mut rng = StdRng::seed_from_u64(seed);
        let robot = vec!["large".to_string(), "small".to_string()];
        let phi = vec!["env".to_string(), "large".to_string(), "small".to_string()];
        let mut m = HeteroDeepSet::new_random(&robot, &phi, 6, 20, 4.0, &mut rng);
        m.apply_spectral_norm();
        m
    }

    fn random_groups(rng: &mut StdRng, n_small: usize, n_large: usize, env: bool) -> Groups {
        use rand::Rng;
        let mut g = Groups::new();
        let mut vecs = |n: usize| -> Vec<DVector<f64>> {
            (0..n)
                .map(|_| DVector::from_fn(6, |_, _| rng.gen::<f64>() * 2.0 - 1.0))
                .collect()
        };
        g.insert("small".into(), vecs(n_small));
        g.insert("large".into(), vecs(n_large));
        if env {
            g.insert("env".into(), vecs(1));
        }
        g
    }

    #[test]
    fn empty_groups_decode_zero_embedding() {
        let model = demo_model(1);
        let out = model.forward("small", &Groups::new()).unwrap();
        let rho_zero = model.rho["small"].forward(&DVector::zeros(20)).unwrap()[0];
        assert_eq!(out, rho_zero * model.output_scale);
    }

    #[test]
    fn permutation_invariance_is_bit_exact() {
        let model = demo_model(2);
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..50 {
            let groups = random_groups(&mut rng, 3, 2, true);
            let base = model.forward("large", &groups).unwrap();
            let mut shuffled = groups.clone();
            for members in shuffled.values_mut() {
                members.shuffle(&mut rng);
            }
            let out = model.forward("large", &shuffled).unwrap();
            assert_eq!(base.to_bits(), out.to_bits());
        }
    }

    #[test]
    fn unknown_type_rejected() {
        let model = demo_model(3);
        let mut groups = Groups::new();
        groups.insert("medium".into(), vec![DVector::zeros(6)]);
        assert!(matches!(model.forward("small", &groups), Err(ModelError::UnknownType(_))));
        assert!(model.forward("medium", &Groups::new()).is_err());
    }

    #[test]
    fn jacobian_zero_when_rho_output_layer_zero() {
        let mut model = demo_model(4);
        for rho in model.rho.values_mut() {
            let last = rho.weights.len() - 1;
            rho.weights[last].fill(0.0);
        }
        let mut rng = StdRng::seed_from_u64(5);
        let groups = random_groups(&mut rng, 2, 1, false);
        let jac = model.input_jacobian("small", &groups).unwrap();
        for rows in jac.values() {
            for row in rows {
                assert!(row.norm() == 0.0);
            }
        }
    }

    #[test]
    fn duplicate_neighbors_get_identical_jacobians() {
        let model = demo_model(6);
        let x = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0, 0.05, -0.4]);
        let mut groups = Groups::new();
        groups.insert("small".into(), vec![x.clone(), x.clone()]);
        let jac = model.input_jacobian("large", &groups).unwrap();
        let rows = &jac["small"];
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = demo_model(7);
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..10 {
            let groups = random_groups(&mut rng, 2, 1, true);
            let jac = model.input_jacobian("small", &groups).unwrap();
            let h = 1e-5;
            for (ty, members) in &groups {
                for (mi, _) in members.iter().enumerate() {
                    for d in 0..6 {
                        let mut gp = groups.clone();
                        let mut gm = groups.clone();
                        gp.get_mut(ty).unwrap()[mi][d] += h;
                        gm.get_mut(ty).unwrap()[mi][d] -= h;
                        let fd = (model.forward("small", &gp).unwrap()
                            - model.forward("small", &gm).unwrap())
                            / (2.0 * h);
                        let an = jac[ty][mi][d];
                        assert!(
                            (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-3),
                            "type {ty} member {mi} dim {d}: analytic {an} fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn flop_count_is_affine_in_neighbor_count() {
        let model = demo_model(9);
        let mut rng = StdRng::seed_from_u64(10);
        let mut counts = Vec::new();
        for n in 0..8usize {
            let groups = random_groups(&mut rng, n, 0, false);
            let (_, flops) = model.forward_counting("small", &groups).unwrap();
            counts.push(flops);
        }
        let b = counts[0];
        let a = counts[1] - counts[0];
        for (n, &c) in counts.iter().enumerate() {
            assert_eq!(c, b + a * n as u64, "flops not affine at n={n}");
        }
    }

    #[test]
    fn canonical_sum_matches_naive_math() {
        let model = demo_model(11);
        let mut rng = StdRng::seed_from_u64(12);
        for _ in 0..20 {
            let groups = random_groups(&mut rng, 3, 3, true);
            let a = model.forward("large", &groups).unwrap();
            let b = forward_unordered(&model, "large", &groups);
            assert!((a - b).abs() < 1e-12);
        }
    }
}
