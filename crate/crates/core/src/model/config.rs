use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    /// Frames per patch (`t`).
    pub patch_frames: usize,
    pub mel_bins: usize,
    pub max_patches: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 128,
            heads: 4,
            layers: 2,
            ffn_dim: 512,
            dropout: 0.2,
            patch_frames: 4,
            mel_bins: 64,
            max_patches: 160,
        }
    }
}

impl EncoderConfig {
    /// ViT/DeiT-base sized encoder: 12 blocks, 12 heads, width 768.
    pub fn full_scale() -> Self {
        EncoderConfig {
            d_model: 768,
            heads: 12,
            layers: 12,
            ffn_dim: 3072,
            max_patches: 160,
            ..Self::default()
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_frames * self.mel_bins
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            d_model: 128,
            heads: 4,
            layers: 2,
            ffn_dim: 512,
            dropout: 0.2,
        }
    }
}

/// Published decoder variants (width, layers, heads).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderVariant {
    Small,
    Medium,
    Large,
}

impl DecoderConfig {
    pub fn variant(v: DecoderVariant) -> Self {
        let (layers, heads) = match v {
            DecoderVariant::Small => (2, 4),
            DecoderVariant::Medium => (4, 8),
            DecoderVariant::Large => (6, 8),
        };
        DecoderConfig {
            d_model: 512,
            heads,
            layers,
            ffn_dim: 2048,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub vocab_size: usize,
    pub num_tags: usize,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, decoder: DecoderConfig, vocab_size: usize, num_tags: usize) -> Self {
        ModelConfig {
            encoder,
            decoder,
            vocab_size,
            num_tags,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let d = &self.decoder;
        ensure!(e.d_model > 0 && e.heads > 0, "encoder width and heads must be positive");
        ensure!(
            e.d_model.is_multiple_of(e.heads),
            "encoder width {} is not divisible by {} heads",
            e.d_model,
            e.heads
        );
        ensure!(d.d_model > 0 && d.heads > 0, "decoder width and heads must be positive");
        ensure!(
            d.d_model.is_multiple_of(d.heads),
            "decoder width {} is not divisible by {} heads",
            d.d_model,
            d.heads
        );
        for (name, p) in [("encoder", e.dropout), ("decoder", d.dropout)] {
            ensure!((0.0..1.0).contains(&p), "{name} dropout {p} outside [0, 1)");
        }
        ensure!(e.ffn_dim > 0 && d.ffn_dim > 0, "feed-forward widths must be positive");
        ensure!(e.patch_dim() > 0, "patch size must be positive");
        ensure!(e.max_patches > 0, "max_patches must be positive");
        ensure!(self.vocab_size > crate::text::UNK, "vocabulary must include the reserved tokens");
        ensure!(self.init_std > 0.0, "init_std must be positive");
        Ok(())
    }

    /// Scalar count of the caption decoder as a function of its shape:
    /// per layer `2·(4d² + 3d) + (2·d·f + f + d) + 3·2d`, plus word embeddings
    /// `K·d`, final norm `2d`, output projection `d·K + K`, and the memory
    /// bridge `d_enc·d + d` when the widths differ.
    pub fn decoder_param_count(&self) -> usize {
        let d = self.decoder.d_model;
        let f = self.decoder.ffn_dim;
        let k = self.vocab_size;
        let per_layer = 2 * (4 * d * d + 3 * d) + (2 * d * f + f + d) + 3 * 2 * d;
        let bridge = if self.encoder.d_model != d {
            self.encoder.d_model * d + d
        } else {
            0
        };
        self.decoder.layers * per_layer + k * d + 2 * d + d * k + k + bridge
    }
}
