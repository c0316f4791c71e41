use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::MelConfig;
use crate::decoding::DecodeOptions;
use crate::error::{ensure, Error, Result};
use crate::model::{DecoderConfig, EncoderConfig, ModelConfig};
use crate::text::SkipGramConfig;
use crate::training::TrainConfig;

/// Model shape knobs not tied to the encoder or decoder alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, vocab_size: usize, num_tags: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(self.encoder.clone(), self.decoder.clone(), vocab_size, num_tags);
        c.init_std = self.init_std;
        c.layer_norm_eps = self.layer_norm_eps;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    pub patches: usize,
    pub caption_len: usize,
    /// Weight scale of the checked model; large enough that no gradient is
    /// vanishingly small next to finite-difference roundoff.
    pub init_std: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            step: 1e-4,
            tolerance: 1e-4,
            patches: 3,
            caption_len: 4,
            init_std: 0.3,
        }
    }
}

/// Skip-gram pretraining of the decoder word embeddings on the training
/// captions. Vector width follows the decoder and the seed follows the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordVectorSection {
    pub enabled: bool,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for WordVectorSection {
    fn default() -> Self {
        let s = SkipGramConfig::default();
        WordVectorSection {
            enabled: true,
            window: s.window,
            negatives: s.negatives,
            epochs: s.epochs,
            learning_rate: s.learning_rate,
        }
    }
}

impl WordVectorSection {
    pub fn skipgram(&self, dim: usize, seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

/// Every knob of a run. Loaded from TOML; unknown keys are rejected and any
/// omitted key takes the default listed in the README.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub frontend: MelConfig,
    pub model: ModelSection,
    /// Caption training recipe.
    pub caption: TrainConfig,
    /// Tagging pretraining recipe.
    pub tagging: TrainConfig,
    pub decoding: DecodeOptions,
    pub vocab_min_count: usize,
    pub word_vectors: WordVectorSection,
    /// Write a resumable checkpoint every this many epochs.
    pub checkpoint_every: usize,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            frontend: MelConfig::default(),
            model: ModelSection::default(),
            caption: TrainConfig::default(),
            tagging: TrainConfig::pretrain(),
            decoding: DecodeOptions::default(),
            vocab_min_count: 1,
            word_vectors: WordVectorSection::default(),
            checkpoint_every: 5,
            gradcheck: GradcheckSection::default(),
        }
    }
}

impl RunConfig {
    /// Laptop-scale settings used by the synthetic-corpus runs.
    pub fn desk() -> Self {
        let d = 64;
        let model = ModelSection {
            encoder: EncoderConfig {
                d_model: d,
                heads: 2,
                layers: 2,
                ffn_dim: 2 * d,
                dropout: 0.0,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                d_model: d,
                heads: 2,
                layers: 1,
                ffn_dim: 2 * d,
                dropout: 0.0,
            },
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        };
        RunConfig {
            model,
            caption: TrainConfig {
                batch_size: 4,
                ..TrainConfig::desk()
            },
            tagging: TrainConfig {
                epochs: 50,
                batch_size: 4,
                ..TrainConfig::desk()
            },
            checkpoint_every: 50,
            ..Self::default()
        }
    }

    /// The small model used by `gradcheck`: width 32, two heads, two encoder
    /// blocks and one decoder block, on narrow patches.
    pub fn gradcheck_model(&self) -> ModelSection {
        let d = 32;
        ModelSection {
            encoder: EncoderConfig {
                d_model: d,
                heads: 2,
                layers: 2,
                ffn_dim: 2 * d,
                dropout: 0.0,
                patch_frames: 2,
                mel_bins: 8,
                max_patches: 8,
            },
            decoder: DecoderConfig {
                d_model: d,
                heads: 2,
                layers: 1,
                ffn_dim: 2 * d,
                dropout: 0.0,
            },
            init_std: self.gradcheck.init_std,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::format(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run configuration serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.caption.validate()?;
        self.tagging.validate()?;
        self.model.model_config(16, 1)?;
        ensure!(self.checkpoint_every >= 1, "checkpoint_every must be at least 1");
        ensure!(self.vocab_min_count >= 1, "vocab_min_count must be at least 1");
        ensure!(self.word_vectors.window >= 1, "word_vectors.window must be at least 1");
        ensure!(self.word_vectors.negatives >= 1, "word_vectors.negatives must be at least 1");
        ensure!(self.decoding.max_len >= 1, "decoding.max_len must be at least 1");
        ensure!(self.decoding.beam_size >= 1, "decoding.beam_size must be at least 1");
        ensure!(
            self.frontend.mel_bins == self.model.encoder.mel_bins,
            "frontend.mel_bins ({}) differs from model.encoder.mel_bins ({})",
            self.frontend.mel_bins,
            self.model.encoder.mel_bins
        );
        Ok(())
    }
}
