use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::state::{TrainPhase, TrainState};
use super::{lr_at_epoch, TrainConfig};
use crate::audio::{patchify, spec_augment, LogMelSpectrogram, PatchSequence};
use crate::error::{ensure, Result};
use crate::model::{ActModel, ForwardCtx};
use crate::numerics::{adam_step, Graph, Tensor, Var};
use crate::text::{CaptionTokens, PAD};

/// One clip's features and its tokenized caption.
#[derive(Clone, Debug)]
pub struct CaptionExample {
    pub spec: LogMelSpectrogram,
    pub tokens: CaptionTokens,
}

/// One clip's features and its binary tag row.
#[derive(Clone, Debug)]
pub struct TagExample {
    pub spec: LogMelSpectrogram,
    pub labels: Vec<f64>,
}

/// Summary of one training epoch, also the record type of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch losses.
    pub loss: f64,
    pub wall_seconds: f64,
}

/// SplitMix64 finaliser over a running hash, used to derive independent
/// per-epoch and per-clip streams from one run seed.
fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn features(
    spec: &LogMelSpectrogram,
    model: &ActModel,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PatchSequence> {
    let t = model.config.encoder.patch_frames;
    let policy = &cfg.spec_augment;
    if policy.num_time_masks + policy.num_freq_masks == 0 {
        patchify(spec, t)
    } else {
        patchify(&spec_augment(spec, policy, seed), t)
    }
}

fn apply_dropout(model: &mut ActModel, p: f64) {
    model.config.encoder.dropout = p;
    model.config.decoder.dropout = p;
}

/// Teacher-forced caption loss of one clip: the decoder reads
/// `<sos> w1 … wn` and is scored on `w1 … wn <eos>`.
pub fn caption_loss(
    g: &mut Graph,
    model: &ActModel,
    patches: &PatchSequence,
    tokens: &CaptionTokens,
    smoothing: f64,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let memory = model.encode(g, patches, ctx)?;
    let logits = model.decoder_forward(g, tokens.inputs(), memory, ctx)?;
    let targets: Vec<Option<usize>> = tokens.targets().iter().map(|&t| (t != PAD).then_some(t)).collect();
    g.smoothed_cross_entropy(logits, &targets, smoothing)
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, &[epoch as u64])));
    order
}

/// Runs the next caption epoch (`state.epoch + 1`): shuffled mini-batches,
/// per-batch mean loss, one Adam step per batch at the epoch's learning rate.
pub fn train_caption_epoch(
    model: &mut ActModel,
    data: &[CaptionExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<EpochStats> {
    ensure!(!data.is_empty(), "caption dataset is empty");
    cfg.validate()?;
    state.expect_phase(TrainPhase::Caption)?;
    let start = Instant::now();
    let epoch = state.epoch + 1;
    let lr = lr_at_epoch(epoch, cfg)?;
    apply_dropout(model, cfg.dropout);
    model.params.set_trainable(|_| true, true);
    if cfg.freeze_encoder {
        model.params.set_trainable(ActModel::is_encoder_param, false);
    }
    model.params.set_trainable(|n| n.starts_with("tag_head."), false);

    let order = epoch_order(data.len(), cfg.seed, epoch);
    let mut batch_losses = Vec::new();
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        model.params.zero_grads();
        let mut total = 0.0;
        for &i in batch {
            let clip_seed = mix_seed(cfg.seed, &[epoch as u64, i as u64]);
            let patches = features(&data[i].spec, model, cfg, clip_seed)?;
            let mut ctx = if cfg.dropout > 0.0 {
                ForwardCtx::train(mix_seed(clip_seed, &[b as u64]))
            } else {
                ForwardCtx::eval()
            };
            let mut g = Graph::new();
            let loss = caption_loss(&mut g, model, &patches, &data[i].tokens, cfg.label_smoothing, &mut ctx)?;
            total += g.scalar(loss);
            let scaled = g.scale(loss, 1.0 / batch.len() as f64);
            g.backward_into(scaled, &mut model.params)?;
        }
        adam_step(&mut model.params, &mut state.adam, lr)?;
        batch_losses.push(total / batch.len() as f64);
    }
    state.epoch = epoch;
    Ok(EpochStats {
        epoch,
        lr,
        loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs caption epochs until `cfg.epochs` is reached, calling `on_epoch`
/// after each one (for logging and checkpoints). Resumes from `state.epoch`.
pub fn train_captioning<F>(
    model: &mut ActModel,
    data: &[CaptionExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>>
where
    F: FnMut(&EpochStats, &ActModel, &TrainState) -> Result<()>,
{
    let mut history = Vec::new();
    while state.epoch < cfg.epochs {
        let stats = train_caption_epoch(model, data, cfg, state)?;
        on_epoch(&stats, model, state)?;
        history.push(stats);
    }
    Ok(history)
}

/// Mean teacher-forced loss over `data` in evaluation mode, without masking.
pub fn evaluate_caption_loss(model: &ActModel, data: &[CaptionExample], smoothing: f64) -> Result<f64> {
    ensure!(!data.is_empty(), "caption dataset is empty");
    let mut total = 0.0;
    for ex in data {
        let patches = patchify(&ex.spec, model.config.encoder.patch_frames)?;
        let mut g = Graph::new();
        let loss = caption_loss(&mut g, model, &patches, &ex.tokens, smoothing, &mut ForwardCtx::eval())?;
        total += g.scalar(loss);
    }
    Ok(total / data.len() as f64)
}

/// Runs the next tagging epoch, updating only the encoder and tagging head.
pub fn pretrain_tagging_epoch(
    model: &mut ActModel,
    data: &[TagExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
) -> Result<EpochStats> {
    ensure!(!data.is_empty(), "tagging dataset is empty");
    let k = model.config.num_tags;
    ensure!(k >= 1, "tagging needs at least one class (zero classes configured)");
    for (i, ex) in data.iter().enumerate() {
        ensure!(
            ex.labels.len() == k,
            "clip {i} has {} tag labels, expected {k}",
            ex.labels.len()
        );
        ensure!(
            ex.labels.iter().all(|&y| y == 0.0 || y == 1.0),
            "clip {i} has non-binary tag labels"
        );
    }
    cfg.validate()?;
    state.expect_phase(TrainPhase::Tagging)?;
    let start = Instant::now();
    let epoch = state.epoch + 1;
    let lr = lr_at_epoch(epoch, cfg)?;
    apply_dropout(model, cfg.dropout);
    model.params.set_trainable(ActModel::is_tagging_param, true);
    model.params.set_trainable(|n| !ActModel::is_tagging_param(n), false);

    let order = epoch_order(data.len(), cfg.seed, epoch);
    let mut batch_losses = Vec::new();
    for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
        model.params.zero_grads();
        let mut total = 0.0;
        for &i in batch {
            let clip_seed = mix_seed(cfg.seed, &[epoch as u64, i as u64]);
            let patches = features(&data[i].spec, model, cfg, clip_seed)?;
            let mut ctx = if cfg.dropout > 0.0 {
                ForwardCtx::train(mix_seed(clip_seed, &[b as u64]))
            } else {
                ForwardCtx::eval()
            };
            let mut g = Graph::new();
            let enc = model.encode(&mut g, &patches, &mut ctx)?;
            let z = model.tagging_logits(&mut g, enc)?;
            let loss = g.bce_with_logits(z, &data[i].labels)?;
            total += g.scalar(loss);
            let scaled = g.scale(loss, 1.0 / batch.len() as f64);
            g.backward_into(scaled, &mut model.params)?;
        }
        adam_step(&mut model.params, &mut state.adam, lr)?;
        batch_losses.push(total / batch.len() as f64);
    }
    state.epoch = epoch;
    Ok(EpochStats {
        epoch,
        lr,
        loss: batch_losses.iter().sum::<f64>() / batch_losses.len() as f64,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Tagging pretraining for `cfg.epochs` epochs from `state.epoch`.
pub fn pretrain_tagging<F>(
    model: &mut ActModel,
    data: &[TagExample],
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: F,
) -> Result<Vec<EpochStats>>
where
    F: FnMut(&EpochStats, &ActModel, &TrainState) -> Result<()>,
{
    let mut history = Vec::new();
    while state.epoch < cfg.epochs {
        let stats = pretrain_tagging_epoch(model, data, cfg, state)?;
        on_epoch(&stats, model, state)?;
        history.push(stats);
    }
    Ok(history)
}

/// Tag probabilities for each spectrogram, `N×K_tags`, in evaluation mode.
pub fn predict_tags(model: &ActModel, specs: &[&LogMelSpectrogram]) -> Result<Tensor> {
    let k = model.config.num_tags;
    let mut out = Vec::with_capacity(specs.len() * k);
    for spec in specs {
        let patches = patchify(spec, model.config.encoder.patch_frames)?;
        let mut g = Graph::new();
        let enc = model.encode(&mut g, &patches, &mut ForwardCtx::eval())?;
        let p = model.tagging_head_forward(&mut g, enc)?;
        out.extend_from_slice(g.value(p).data());
    }
    Tensor::new(&[specs.len(), k], out)
}
