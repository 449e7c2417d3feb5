use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AdamState, Network};
use crate::{Error, Result};

/// Labeled feature vectors, stored row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub feature_len: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(feature_len: usize) -> Self {
        Dataset {
            feature_len,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, feature: &[f64], label: usize) -> Result<()> {
        if feature.len() != self.feature_len {
            return Err(Error::LengthMismatch {
                expected: self.feature_len,
                found: feature.len(),
            });
        }
        self.features.extend_from_slice(feature);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }
}

fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    128
}
fn default_lr() -> f64 {
    1e-3
}
fn default_patience() -> usize {
    5
}
fn default_factor() -> f64 {
    0.1
}
fn default_threshold() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_patience")]
    pub plateau_patience: usize,
    #[serde(default = "default_factor")]
    pub plateau_factor: f64,
    /// Minimum epoch-loss improvement that resets the plateau counter.
    #[serde(default = "default_threshold")]
    pub plateau_threshold: f64,
    /// `None` uses inverse class frequency of the training set.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    /// Fit a per-feature standardization on the training set.
    #[serde(default = "default_true")]
    pub standardize: bool,
    pub rng_seed: u64,
}

impl TrainConfig {
    /// 20 epochs, batch 128, learning rate 1e-3.
    pub fn desk(rng_seed: u64) -> Self {
        TrainConfig {
            epochs: default_epochs(),
            batch_size: default_batch(),
            learning_rate: default_lr(),
            plateau_patience: default_patience(),
            plateau_factor: default_factor(),
            plateau_threshold: default_threshold(),
            class_weights: None,
            standardize: true,
            rng_seed,
        }
    }

    /// The large-dataset schedule: learning rate 1e-6.
    pub fn full_scale(rng_seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            ..TrainConfig::desk(rng_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.plateau_patience == 0 {
            return Err(Error::Classifier("epochs, batch_size and plateau_patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Classifier("learning_rate must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Classifier("plateau_factor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub learning_rate: Vec<f64>,
    pub steps: u64,
}

/// `w_c = n / (C_present * n_c)`; classes absent from `labels` get weight 0.
pub fn inverse_frequency_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = alloc::vec![0usize; classes];
    for &l in labels {
        if l < classes {
            counts[l] += 1;
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (present as f64 * c as f64) })
        .collect()
}

/// Weighted cross-entropy `Σ w_y (-ln p_y) / Σ w_y` over a batch and its
/// gradient with respect to every parameter.
pub fn loss_and_gradients(
    model: &Network,
    features: &[f64],
    labels: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if labels.is_empty() {
        return Err(Error::Classifier("empty batch".into()));
    }
    let c = model.classes();
    let len = model.config().input_len;
    if features.len() != labels.len() * len {
        return Err(Error::LengthMismatch {
            expected: labels.len() * len,
            found: features.len(),
        });
    }
    if class_weights.len() != c {
        return Err(Error::LengthMismatch {
            expected: c,
            found: class_weights.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Classifier(format!("label {} not below class count {}", bad, c)));
    }
    let total_weight: f64 = labels.iter().map(|&l| class_weights[l]).sum();
    if !(total_weight > 0.0) {
        return Err(Error::Classifier("batch carries zero total class weight".into()));
    }
    let mut grads = alloc::vec![0.0; model.params().len()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let w = class_weights[y];
        if w == 0.0 {
            continue;
        }
        let trace = model.trace(&features[i * len..(i + 1) * len]);
        let logits = trace.acts.last().expect("logits");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
        let lse = max + libm::log(sum);
        loss += w * (lse - logits[y]);
        let scale = w / total_weight;
        let g: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(k, &z)| scale * (libm::exp(z - lse) - if k == y { 1.0 } else { 0.0 }))
            .collect();
        model.backward(&trace, &g, &mut grads);
    }
    Ok((loss / total_weight, grads))
}

fn fit_standardization(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let len = data.feature_len;
    let mut mean = alloc::vec![0.0; len];
    for i in 0..data.len() {
        for (m, v) in mean.iter_mut().zip(data.feature(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = alloc::vec![0.0; len];
    for i in 0..data.len() {
        for ((s, v), m) in var.iter_mut().zip(data.feature(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = libm::sqrt(s / n);
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Mini-batch Adam on weighted cross-entropy.
///
/// Each epoch visits the samples in a freshly shuffled order. The learning
/// rate is multiplied by `plateau_factor` once the epoch loss has failed to
/// beat the best loss so far by `plateau_threshold` for `plateau_patience`
/// consecutive epochs.
pub fn train(mut model: Network, data: &Dataset, cfg: &TrainConfig) -> Result<(Network, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Classifier("training set is empty".into()));
    }
    if data.feature_len != model.config().input_len {
        return Err(Error::LengthMismatch {
            expected: model.config().input_len,
            found: data.feature_len,
        });
    }
    let classes = model.classes();
    let weights = match &cfg.class_weights {
        Some(w) => w.clone(),
        None => inverse_frequency_weights(&data.labels, classes),
    };
    if cfg.standardize {
        let (shift, scale) = fit_standardization(data);
        model.set_normalization(shift, scale)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut adam = AdamState::new(model.params().len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut history = TrainHistory {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        learning_rate: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    let mut batch_features = Vec::with_capacity(cfg.batch_size * data.feature_len);
    let mut batch_labels = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch_features.clear();
            batch_labels.clear();
            for &i in chunk {
                batch_features.extend_from_slice(data.feature(i));
                batch_labels.push(data.labels[i]);
            }
            let batch_weight: f64 = batch_labels.iter().map(|&l| weights.get(l).copied().unwrap_or(0.0)).sum();
            if batch_weight == 0.0 {
                continue;
            }
            let (loss, grads) = loss_and_gradients(&model, &batch_features, &batch_labels, &weights)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b, loss });
            }
            adam.update(model.params_mut(), &grads, lr);
            history.steps += 1;
            epoch_loss += loss * batch_weight;
            epoch_weight += batch_weight;
        }
        let mean = epoch_loss / epoch_weight;
        history.epoch_loss.push(mean);
        history.learning_rate.push(lr);
        if mean < best - cfg.plateau_threshold {
            best = mean;
            stale = 0;
        } else {
            best = best.min(mean);
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                stale = 0;
            }
        }
    }
    Ok((model, history))
}
