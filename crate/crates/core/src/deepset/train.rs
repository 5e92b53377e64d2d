//! Minibatch training with spectral normalization after every step.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, HeteroDeepSet, ModelError};
use crate::nn::{Adam, MlpGrads};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Fraction of chunks used for training; the rest validate.
    pub train_fraction: f64,
    pub seed: u64,
    /// Recompute the input standardization from the training split.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            train_fraction: 0.8,
            seed: 0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Per-epoch (train, validation) mean squared error, N^2.
    pub history: Vec<(f64, f64)>,
    pub final_train_mse: f64,
    pub final_val_mse: f64,
    pub n_train: usize,
    pub n_val: usize,
}

/// Index form of one sample: resolved network ids and model-unit target.
struct Prepared {
    ego: usize,
    members: Vec<(usize, DVector<f64>)>,
    target: f64,
}

/// Trains `model` on `data` in place.
///
/// Chunks are shuffled once and split 80/20 (by `train_fraction`), inputs
/// are standardized per dimension from the training split, and every Adam
/// step is followed by spectral normalization of all networks.
pub fn train(
    model: &mut HeteroDeepSet,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Format("empty dataset".into()));
    }
    assert!(cfg.epochs >= 1, "epochs must be at least 1");
    assert!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // chunk-respecting split
    let mut chunk_ids: Vec<u32> = data.chunks.clone();
    chunk_ids.sort_unstable();
    chunk_ids.dedup();
    chunk_ids.shuffle(&mut rng);
    let n_train_chunks = ((chunk_ids.len() as f64 * cfg.train_fraction).round() as usize)
        .clamp(1, chunk_ids.len());
    let train_chunks: std::collections::BTreeSet<u32> =
        chunk_ids[..n_train_chunks].iter().copied().collect();

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for (i, c) in data.chunks.iter().enumerate() {
        if train_chunks.contains(c) {
            train_idx.push(i);
        } else {
            val_idx.push(i);
        }
    }
    if val_idx.is_empty() {
        // single-chunk datasets validate on the training data
        val_idx = train_idx.clone();
    }

    if cfg.standardize {
        standardize_from(model, data, &train_idx);
    }

    let phi_names: Vec<String> = model.phi.keys().cloned().collect();
    let rho_names: Vec<String> = model.rho.keys().cloned().collect();
    let phi_id: BTreeMap<&str, usize> =
        phi_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let rho_id: BTreeMap<&str, usize> =
        rho_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let prepare = |idx: &[usize]| -> Result<Vec<Prepared>, ModelError> {
        idx.iter()
            .map(|&i| {
                let s = &data.samples[i];
                let ego = *rho_id
                    .get(s.ego_type.as_str())
                    .ok_or_else(|| ModelError::UnknownType(s.ego_type.clone()))?;
                let mut members = Vec::new();
                for (ty, list) in &s.groups {
                    let id = *phi_id
                        .get(ty.as_str())
                        .ok_or_else(|| ModelError::UnknownType(ty.clone()))?;
                    for m in list {
                        if m.len() != model.input_dim {
                            return Err(ModelError::BadInput {
                                expected: model.input_dim,
                                got: m.len(),
                            });
                        }
                        let mut std = m - &model.input_mean;
                        for d in 0..std.len() {
                            std[d] /= model.input_scale[d];
                        }
                        members.push((id, std));
                    }
                }
                Ok(Prepared { ego, members, target: s.target_faz / model.output_scale })
            })
            .collect()
    };
    let train_set = prepare(&train_idx)?;
    let val_set = prepare(&val_idx)?;

    let mut phi_opts: Vec<Adam> = Vec::new();
    let mut rho_opts: Vec<Adam> = Vec::new();
    for n in &phi_names {
        let mut a = Adam::new(&model.phi[n], cfg.lr);
        a.beta1 = cfg.beta1;
        a.beta2 = cfg.beta2;
        phi_opts.push(a);
    }
    for n in &rho_names {
        let mut a = Adam::new(&model.rho[n], cfg.lr);
        a.beta1 = cfg.beta1;
        a.beta2 = cfg.beta2;
        rho_opts.push(a);
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut train_sq_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut phi_grads: Vec<MlpGrads> =
                phi_names.iter().map(|n| MlpGrads::zeros_like(&model.phi[n])).collect();
            let mut rho_grads: Vec<MlpGrads> =
                rho_names.iter().map(|n| MlpGrads::zeros_like(&model.rho[n])).collect();
            let inv_batch = 1.0 / batch.len() as f64;
            for &si in batch {
                let s = &train_set[si];
                let mut hidden = DVector::zeros(model.hidden);
                let mut caches = Vec::with_capacity(s.members.len());
                for (id, x) in &s.members {
                    let c = model.phi[&phi_names[*id]].forward_cached(x)?;
                    hidden += &c.output;
                    caches.push(c);
                }
                let rho_net = &model.rho[&rho_names[s.ego]];
                let rho_cache = rho_net.forward_cached(&hidden)?;
                let err = rho_cache.output[0] - s.target;
                if !err.is_finite() {
                    return Err(ModelError::Diverged(format!(
                        "non-finite prediction at epoch {epoch}"
                    )));
                }
                train_sq_sum += err * err;
                let upstream = DVector::from_element(1, 2.0 * err * inv_batch);
                let rg = rho_net.backward(&rho_cache, &upstream);
                for ((id, _), cache) in s.members.iter().zip(&caches) {
                    let g = model.phi[&phi_names[*id]].backward(cache, &rg.dx);
                    phi_grads[*id].accumulate(&g);
                }
                rho_grads[s.ego].accumulate(&rg);
            }
            for (i, name) in phi_names.iter().enumerate() {
                let net = model.phi.get_mut(name).unwrap();
                phi_opts[i].step(net, &phi_grads[i]);
                crate::nn::spectral_normalize(net, model.gamma);
            }
            for (i, name) in rho_names.iter().enumerate() {
                let net = model.rho.get_mut(name).unwrap();
                rho_opts[i].step(net, &rho_grads[i]);
                crate::nn::spectral_normalize(net, model.gamma);
            }
        }
        let scale2 = model.output_scale * model.output_scale;
        let train_mse = train_sq_sum / train_set.len() as f64 * scale2;
        let val_mse = mse_prepared(model, &phi_names, &rho_names, &val_set)? * scale2;
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(ModelError::Diverged(format!("NaN loss at epoch {epoch}")));
        }
        history.push((train_mse, val_mse));
    }

    let (final_train_mse, final_val_mse) = *history.last().unwrap();
    Ok(TrainReport {
        history,
        final_train_mse,
        final_val_mse,
        n_train: train_set.len(),
        n_val: val_set.len(),
    })
}

fn standardize_from(model: &mut HeteroDeepSet, data: &Dataset, idx: &[usize]) {
    let d = model.input_dim;
    let mut count = 0usize;
    let mut mean = DVector::zeros(d);
    for &i in idx {
        for list in data.samples[i].groups.values() {
            for m in list {
                mean += m;
                count += 1;
            }
        }
    }
    if count == 0 {
        return;
    }
    mean /= count as f64;
    let mut var = DVector::zeros(d);
    for &i in idx {
        for list in data.samples[i].groups.values() {
            for m in list {
                let diff = m - &mean;
                for k in 0..d {
                    var[k] += diff[k] * diff[k];
                }
            }
        }
    }
    var /= count as f64;
    model.input_mean = mean;
    model.input_scale = var.map(|v| v.sqrt().max(1e-6));
}

fn mse_prepared(
    model: &HeteroDeepSet,
    phi_names: &[String],
    rho_names: &[String],
    set: &[Prepared],
) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for s in set {
        let mut hidden = DVector::zeros(model.hidden);
        for (id, x) in &s.members {
            hidden += model.phi[&phi_names[*id]].forward(x)?;
        }
        let pred = model.rho[&rho_names[s.ego]].forward(&hidden)?[0];
        sum += (pred - s.target) * (pred - s.target);
    }
    Ok(sum / set.len() as f64)
}

/// Mean squared prediction error of `model` over a dataset, N^2.
pub fn mse_on(model: &HeteroDeepSet, data: &Dataset) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for s in &data.samples {
        let pred = model.forward(&s.ego_type, &s.groups)?;
        sum += (pred - s.target_faz) * (pred - s.target_faz);
    }
    Ok(sum / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepset::TrainSample;
    use rand::rngs::StdRng;
    use rand::Rng;

    fn toy_dataset(n: usize, target: impl Fn(&DVector<f64>) -> f64, seed: u64) -> Dataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut data = Dataset::default();
        for i in 0..n {
            let x = DVector::from_fn(6, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let mut groups = BTreeMap::new();
            groups.insert("small".to_string(), vec![x.clone()]);
            data.push(
                TrainSample {
                    ego_type: "small".into(),
                    groups,
                    target_faz: target(&x),
                },
                (i / 50) as u32,
            );
        }
        data
    }

    fn fresh_model(seed: u64) -> HeteroDeepSet {
        let mut rng = StdRng::seed_from_u64(seed);
        HeteroDeepSet::new_random(
            &["small".to_string()],
            &["env".to_string(), "small".to_string()],
            6,
            20,
            4.0,
            &mut rng,
        )
    }

    #[test]
    fn zero_targets_drive_mse_down() {
        let data = toy_dataset(2000, |_| 0.0, 1);
        let mut model = fresh_model(2);
        let cfg = TrainConfig { epochs: 10, ..Default::default() };
        let report = train(&mut model, &data, &cfg).unwrap();
        assert!(report.final_val_mse <= 1e-4, "val mse {}", report.final_val_mse);
    }

    #[test]
    fn learns_a_smooth_function() {
        let data = toy_dataset(
            6000,
            |x| 0.05 * (x[0].sin() + 0.5 * x[2] * x[2] - 0.3 * x[4]),
            3,
        );
        let mut model = fresh_model(4);
        let cfg = TrainConfig { epochs: 30, seed: 5, ..Default::default() };
        let report = train(&mut model, &data, &cfg).unwrap();
        let targets: Vec<f64> = data.samples.iter().map(|s| s.target_faz).collect();
        let var = crate::util::variance(&targets);
        assert!(
            report.final_val_mse <= 0.15 * var,
            "val mse {} vs variance {}",
            report.final_val_mse,
            var
        );
    }

    #[test]
    fn spectral_budget_holds_after_training() {
        let data = toy_dataset(1000, |x| 0.02 * x[1], 6);
        let mut model = fresh_model(7);
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        train(&mut model, &data, &cfg).unwrap();
        let target = model.gamma.powf(1.0 / 4.0);
        for net in model.phi.values().chain(model.rho.values()) {
            for w in &net.weights {
                let sigma = w.clone().svd(false, false).singular_values[0];
                assert!((sigma - target).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn split_respects_chunks() {
        // two chunks with disjoint targets: validation must be 20% of chunks
        let data = toy_dataset(500, |_| 0.0, 8);
        let mut model = fresh_model(9);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let report = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(report.n_train + report.n_val, 500);
        assert_eq!(report.n_train % 50, 0, "split cut inside a chunk");
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut model = fresh_model(10);
        assert!(train(&mut model, &Dataset::default(), &TrainConfig::default()).is_err());
    }
}
