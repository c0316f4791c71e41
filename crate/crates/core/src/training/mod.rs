//! Objectives, learning-rate schedule and the epoch loops for tagging
//! pretraining and caption training.

mod loops;
mod state;

pub use loops::{
    caption_loss, evaluate_caption_loss, predict_tags, pretrain_tagging, pretrain_tagging_epoch, train_caption_epoch,
    train_captioning, CaptionExample, EpochStats, TagExample,
};
pub use state::{init_encoder_from, restore_training, training_checkpoint, TrainPhase, TrainState};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::audio::SpecAugmentPolicy;
use crate::error::{ensure, Result};
use crate::numerics::{Graph, Tensor};
use crate::text::PAD;

/// Optimisation hyper-parameters. The defaults follow the caption recipe;
/// [`TrainConfig::pretrain`] gives the tagging recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub label_smoothing: f64,
    /// Overrides the model's dropout rates for the duration of training.
    pub dropout: f64,
    pub seed: u64,
    /// Keep encoder weights fixed during caption training.
    pub freeze_encoder: bool,
    /// Masking applied to each clip's spectrogram every epoch; a policy
    /// with zero masks disables it.
    pub spec_augment: SpecAugmentPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            base_lr: 1e-4,
            warmup_epochs: 5,
            decay_every: 10,
            decay_factor: 0.1,
            label_smoothing: 0.1,
            dropout: 0.2,
            seed: 0,
            freeze_encoder: false,
            spec_augment: SpecAugmentPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 128,
            ..Self::default()
        }
    }

    /// Small-corpus settings for laptop-scale runs: a flat learning rate
    /// after a one-epoch warmup, no smoothing, dropout or masking.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 8,
            base_lr: 1e-3,
            warmup_epochs: 1,
            decay_every: 1000,
            decay_factor: 0.1,
            label_smoothing: 0.0,
            dropout: 0.0,
            seed: 0,
            freeze_encoder: false,
            spec_augment: SpecAugmentPolicy::disabled(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, "epochs must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            self.base_lr > 0.0 && self.base_lr.is_finite(),
            "base_lr must be positive, got {}",
            self.base_lr
        );
        ensure!(self.decay_every >= 1, "decay_every must be at least 1");
        ensure!(
            self.decay_factor > 0.0 && self.decay_factor <= 1.0,
            "decay_factor must lie in (0, 1], got {}",
            self.decay_factor
        );
        ensure!(
            (0.0..1.0).contains(&self.label_smoothing),
            "label_smoothing must lie in [0, 1), got {}",
            self.label_smoothing
        );
        ensure!(
            (0.0..1.0).contains(&self.dropout),
            "dropout must lie in [0, 1), got {}",
            self.dropout
        );
        Ok(())
    }
}

/// Learning rate for 1-indexed epoch `e`: a linear ramp to `base_lr` over the
/// warmup epochs, then `base_lr · factor^⌊(e−1)/decay_every⌋`.
pub fn lr_at_epoch(e: usize, cfg: &TrainConfig) -> Result<f64> {
    ensure!(e >= 1, "epochs are 1-indexed, got {e}");
    if e <= cfg.warmup_epochs {
        return Ok(cfg.base_lr * e as f64 / cfg.warmup_epochs as f64);
    }
    let decays = ((e - 1) / cfg.decay_every.max(1)) as i32;
    Ok(cfg.base_lr * cfg.decay_factor.powi(decays))
}

/// Binary multi-label targets, one row of `num_tags` entries per clip.
#[derive(Clone, Debug, PartialEq)]
pub struct TagLabels {
    num_tags: usize,
    values: Vec<f64>,
}

impl TagLabels {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(!rows.is_empty(), "tag labels need at least one row");
        let num_tags = rows[0].len();
        ensure!(num_tags >= 1, "tag labels need at least one class");
        let mut values = Vec::with_capacity(rows.len() * num_tags);
        for (i, r) in rows.iter().enumerate() {
            ensure!(r.len() == num_tags, "row {i} has {} labels, expected {num_tags}", r.len());
            for &y in r {
                ensure!(y == 0.0 || y == 1.0, "tag label {y} in row {i} is not binary");
            }
            values.extend_from_slice(r);
        }
        Ok(TagLabels { num_tags, values })
    }

    pub fn from_sets(sets: &[BTreeSet<usize>], num_tags: usize) -> Result<Self> {
        let rows: Vec<Vec<f64>> = sets
            .iter()
            .map(|s| {
                let mut r = vec![0.0; num_tags];
                for &k in s {
                    ensure!(k < num_tags, "tag {k} outside {num_tags} classes");
                    r[k] = 1.0;
                }
                Ok(r)
            })
            .collect::<Result<_>>()?;
        Self::new(&rows)
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.num_tags
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_tags..(i + 1) * self.num_tags]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Mean label-smoothed cross-entropy of `T×K` logits against next-token
/// targets. `<pad>` targets are left out of the mean.
pub fn label_smoothed_ce(logits: &Tensor, targets: &[usize], smoothing: f64) -> Result<f64> {
    ensure!(
        (0.0..1.0).contains(&smoothing),
        "smoothing must lie in [0, 1), got {smoothing}"
    );
    let mut g = Graph::new();
    let z = g.constant(logits.clone());
    let t: Vec<Option<usize>> = targets.iter().map(|&t| (t != PAD).then_some(t)).collect();
    let loss = g.smoothed_cross_entropy(z, &t, smoothing)?;
    Ok(g.scalar(loss))
}

const PROB_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy over every (clip, class) entry of an `N×K`
/// probability matrix. Probabilities are clamped away from 0 and 1.
pub fn bce_tagging_loss(probs: &Tensor, labels: &TagLabels) -> Result<f64> {
    ensure!(
        probs.ndim() == 2 && probs.rows() == labels.len() && probs.cols() == labels.num_tags(),
        "probabilities of shape {:?} do not match {} clips × {} classes",
        probs.shape(),
        labels.len(),
        labels.num_tags()
    );
    let mut total = 0.0;
    for (&f, &y) in probs.data().iter().zip(labels.values()) {
        ensure!((0.0..=1.0).contains(&f), "probability {f} outside [0, 1]");
        let f = f.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= y * f.ln() + (1.0 - y) * (1.0 - f).ln();
    }
    Ok(total / probs.numel() as f64)
}
