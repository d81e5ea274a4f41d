use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TcnModel;
use super::normalize::Normalizer;
use super::{FeatureFrame, N_FEATURES, N_PRED};
use crate::error::{Error, Result};
use crate::plant::Episode;

/// Per-frame weighting of the regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossWeighting {
    /// Plain MSE over all frames and features.
    #[default]
    Uniform,
    /// Weights growing linearly with frame index, normalized to mean 1.
    Ramp,
}

impl LossWeighting {
    pub fn weights(&self) -> [f64; N_PRED] {
        let mut w = [1.0; N_PRED];
        if let LossWeighting::Ramp = self {
            let total: f64 = (1..=N_PRED).map(|i| i as f64).sum();
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = (i + 1) as f64 * N_PRED as f64 / total;
            }
        }
        w
    }
}

/// Starting point of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelInit {
    /// He-normal weights with unit layer-norm gains.
    HeNormal,
    /// He-normal branch weights, silenced branches and copying skips.
    #[default]
    IdentityResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub batch: usize,
    pub grad_clip_norm: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Step between consecutive window starts within an episode.
    pub window_stride: usize,
    /// Fraction of episodes held out for validation.
    pub val_fraction: f64,
    pub weighting: LossWeighting,
    pub init: ModelInit,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            lr_decay_epochs: vec![12, 24, 30],
            lr_decay_factor: 0.1,
            batch: 64,
            grad_clip_norm: 0.8,
            epochs: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            window_stride: 16,
            val_fraction: 0.1,
            weighting: LossWeighting::Uniform,
            init: ModelInit::IdentityResidual,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr_decay_factor > 0.0
            && self.batch > 0
            && self.grad_clip_norm > 0.0
            && self.epochs > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.window_stride > 0
            && (0.0..1.0).contains(&self.val_fraction);
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid training config {self:?}")))
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossCurve {
    pub epochs: Vec<EpochRecord>,
}

impl LossCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "lr", "train_loss", "val_loss"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.lr.to_string(),
                r.train_loss.to_string(),
                r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Loss used for model selection at each epoch.
    pub fn selection_losses(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .map(|r| r.val_loss.unwrap_or(r.train_loss))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TcnModel,
    pub curve: LossCurve,
    pub best_epoch: usize,
}

/// Raw (unnormalized) flattened frames of an episode.
pub fn episode_frames(episode: &Episode) -> Vec<f64> {
    let mut out = Vec::with_capacity(episode.len() * N_FEATURES);
    for b in &episode.blimp_trace {
        out.extend_from_slice(&FeatureFrame::from_blimp(b).to_array());
    }
    out
}

/// Normalized sequences plus the `(sequence, start)` index of every window.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    sequences: Vec<Vec<f64>>,
    index: Vec<(usize, usize)>,
}

impl WindowSet {
    pub fn new(sequences: Vec<Vec<f64>>, stride: usize) -> Self {
        let mut index = Vec::new();
        for (s, seq) in sequences.iter().enumerate() {
            let frames = seq.len() / N_FEATURES;
            if frames > N_PRED {
                index.extend((0..frames - N_PRED).step_by(stride).map(|k| (s, k)));
            }
        }
        Self { sequences, index }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Input window `[k, k+97]` and its one-step-shifted target `[k+1, k+98]`.
    pub fn pair(&self, i: usize) -> (&[f64], &[f64]) {
        let (s, k) = self.index[i];
        let seq = &self.sequences[s];
        (
            &seq[k * N_FEATURES..(k + N_PRED) * N_FEATURES],
            &seq[(k + 1) * N_FEATURES..(k + 1 + N_PRED) * N_FEATURES],
        )
    }
}

/// Weighted MSE and its gradient w.r.t. the prediction.
pub fn mse_loss(pred: &[f64], target: &[f64], weights: &[f64; N_PRED], grad: Option<&mut [f64]>) -> f64 {
    let n = pred.len() as f64;
    let mut loss = 0.0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        let d = p - t;
        loss += weights[i / N_FEATURES] * d * d;
    }
    if let Some(g) = grad {
        for (i, (p, t)) in pred.iter().zip(target).enumerate() {
            g[i] = 2.0 * weights[i / N_FEATURES] * (p - t) / n;
        }
    }
    loss / n
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

fn evaluate(model: &TcnModel, set: &WindowSet, weights: &[f64; N_PRED]) -> f64 {
    let mut total = 0.0;
    for i in 0..set.len() {
        let (x, y) = set.pair(i);
        let cache = model.forward_cached(x, N_PRED);
        total += mse_loss(&cache.output, y, weights, None);
    }
    total / set.len() as f64
}

/// Trains on episodes; the normalizer is fit on the training split only.
pub fn train(model: TcnModel, episodes: &[Episode], config: &TrainConfig) -> Result<TrainOutcome> {
    let raw: Vec<Vec<f64>> = episodes.iter().map(episode_frames).collect();
    train_sequences(model, &raw, config)
}

/// Trains on raw flattened `T × 6` sequences.
pub fn train_sequences(mut model: TcnModel, raw: &[Vec<f64>], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if raw.is_empty() {
        return Err(Error::Invalid("empty training dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut rng);
    let n_val = (config.val_fraction * raw.len() as f64).round() as usize;
    let n_val = n_val.min(raw.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let normalizer = Normalizer::fit(train_idx.iter().map(|&i| raw[i].as_slice()))?;
    let norm = |idx: &[usize]| idx.iter().map(|&i| normalizer.normalize(&raw[i])).collect::<Vec<_>>();
    let train_set = WindowSet::new(norm(&train_idx), config.window_stride);
    let val_set = WindowSet::new(norm(&val_idx), config.window_stride);
    if train_set.is_empty() {
        return Err(Error::Invalid(format!(
            "no training windows: sequences need more than {N_PRED} frames"
        )));
    }
    model.normalizer = normalizer;

    let weights = config.weighting.weights();
    let n_params = model.num_params();
    let mut adam = Adam::new(n_params);
    let mut grad = vec![0.0; n_params];
    let mut d_out = vec![0.0; N_PRED * N_FEATURES];
    let mut curve = LossCurve::default();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut perm: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        perm.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in perm.chunks(config.batch).enumerate() {
            grad.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x, y) = train_set.pair(i);
                let cache = model.forward_cached(x, N_PRED);
                batch_loss += mse_loss(&cache.output, y, &weights, Some(&mut d_out));
                model.backward(&cache, &d_out, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (lr {lr})"
                )));
            }
            epoch_loss += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            let mut norm_sq = 0.0;
            for g in grad.iter_mut() {
                *g *= scale;
                norm_sq += *g * *g;
            }
            let norm = norm_sq.sqrt();
            if norm > config.grad_clip_norm {
                let c = config.grad_clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= c);
            }
            adam.step(&mut model.params, &grad, lr, config);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = (!val_set.is_empty()).then(|| evaluate(&model, &val_set, &weights));
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
            }
        }
        log::debug!("epoch {epoch}: lr {lr:.2e} train {train_loss:.6e} val {val_loss:?}");
        curve.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
        let sel = val_loss.unwrap_or(train_loss);
        if best.as_ref().map_or(true, |(l, _, _)| sel < *l) {
            best = Some((sel, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
    })
}
