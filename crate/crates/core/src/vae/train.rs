//! Label-free training with Adam, early stopping and a collapse check.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{squared_error_sum, kl_gaussian, BackwardScratch, ForwardCache, VaeArchitecture, VaeModel};
use crate::dsp::{revin_normalize, revin_stats, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Standardize each segment by its own statistics before the model.
    pub normalize: bool,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 300,
            patience: 50,
            seed: 0,
            normalize: true,
            eps: DEFAULT_EPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::invalid("batch_size, max_epochs and patience must be positive"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be positive"));
        }
        Ok(())
    }
}

/// Patience-based stopping on a loss that should decrease.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        }
    }

    /// Records the loss of 1-based `epoch`; returns true when training should stop.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
        }
        epoch - self.best_epoch >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }
}

/// Per-segment mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub train_total: f64,
    pub train_recon: f64,
    pub train_kl: f64,
    pub val_total: f64,
    pub val_recon: f64,
    pub val_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLosses>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_seconds: f64,
    /// Mean validation reconstruction term of predicting zero in model space.
    pub baseline_recon: f64,
    /// Set when the best validation reconstruction does not beat the baseline.
    pub collapse_flag: bool,
}

impl TrainReport {
    pub fn best(&self) -> &EpochLosses {
        &self.epochs[self.best_epoch - 1]
    }
}

fn prepare<T: Scalar>(segments: &[Vec<f64>], arch: &VaeArchitecture, cfg: &TrainConfig, what: &str) -> Result<Vec<Vec<T>>> {
    if segments.is_empty() {
        return Err(Error::invalid(format!("{what} set is empty")));
    }
    segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.len() != arch.input_len {
                return Err(Error::shape(format!(
                    "{what} segment {i} has {} samples, model expects {}",
                    s.len(),
                    arch.input_len
                )));
            }
            let values = if cfg.normalize {
                let stats = revin_stats(s, cfg.eps);
                revin_normalize(s, &stats)
            } else {
                s.clone()
            };
            Ok(values.into_iter().map(T::of).collect())
        })
        .collect()
}

/// Trains a fresh model; see [`train_with`].
pub fn train<T: Scalar>(
    train_segments: &[Vec<f64>],
    val_segments: &[Vec<f64>],
    arch: &VaeArchitecture,
    cfg: &TrainConfig,
) -> Result<(VaeModel<T>, TrainReport)> {
    train_with(train_segments, val_segments, arch, cfg, |_| {})
}

/// Trains on raw segments of `arch.input_len` samples, calling `on_epoch`
/// after every epoch. The returned model holds the best-validation weights.
pub fn train_with<T: Scalar>(
    train_segments: &[Vec<f64>],
    val_segments: &[Vec<f64>],
    arch: &VaeArchitecture,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLosses),
) -> Result<(VaeModel<T>, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let train_x = prepare::<T>(train_segments, arch, cfg, "training")?;
    let val_x = prepare::<T>(val_segments, arch, cfg, "validation")?;
    let mut model = VaeModel::<T>::new(arch.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let latent = arch.latent_dim;
    let baseline_recon = val_x
        .iter()
        .map(|x| x.iter().map(|v| v.as_f64().powi(2)).sum::<f64>())
        .sum::<f64>()
        / val_x.len() as f64;

    let mut cache = ForwardCache::default();
    let mut scratch = BackwardScratch::default();
    let mut grad_recon = vec![T::zero(); arch.input_len];
    let mut noise = vec![T::zero(); latent];
    let zeros = vec![T::zero(); latent];
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params: Vec<Tensor<T>> = model.params().iter().map(|p| p.value.clone()).collect();
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let two = T::of(2.0);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut tr_recon, mut tr_kl) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            for &i in batch {
                let x = &train_x[i];
                for n in noise.iter_mut() {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    *n = T::of(v);
                }
                model.forward_cached(x, &noise, &mut cache);
                tr_recon += squared_error_sum(x, &cache.output);
                tr_kl += kl_gaussian(&cache.mu, &cache.logvar);
                for ((g, &y), &t) in grad_recon.iter_mut().zip(&cache.output).zip(x) {
                    *g = two * (y - t);
                }
                model.backward(&cache, &grad_recon, &mut scratch);
            }
            for p in model.params_mut() {
                adam_step(p, &adam);
            }
        }
        let (mut va_recon, mut va_kl) = (0.0, 0.0);
        for x in &val_x {
            model.forward_cached(x, &zeros, &mut cache);
            va_recon += squared_error_sum(x, &cache.output);
            va_kl += kl_gaussian(&cache.mu, &cache.logvar);
        }
        let (nt, nv) = (train_x.len() as f64, val_x.len() as f64);
        let losses = EpochLosses {
            epoch,
            train_total: (tr_recon + tr_kl) / nt,
            train_recon: tr_recon / nt,
            train_kl: tr_kl / nt,
            val_total: (va_recon + va_kl) / nv,
            val_recon: va_recon / nv,
            val_kl: va_kl / nv,
        };
        if !losses.train_total.is_finite() || !losses.val_total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}")));
        }
        on_epoch(&losses);
        epochs.push(losses);
        let stop = stopper.observe(epoch, losses.val_total);
        if stopper.improved_at(epoch) {
            for (dst, p) in best_params.iter_mut().zip(model.params()) {
                dst.data_mut().copy_from_slice(p.value.data());
            }
        }
        if stop {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    for (p, best) in model.params_mut().into_iter().zip(best_params) {
        p.value = best;
    }
    let best_epoch = stopper.best_epoch();
    let collapse_flag = epochs[best_epoch - 1].val_recon >= baseline_recon;
    Ok((
        model,
        TrainReport {
            epochs,
            best_epoch,
            stop_reason,
            wall_seconds: start.elapsed().as_secs_f64(),
            baseline_recon,
            collapse_flag,
        },
    ))
}
