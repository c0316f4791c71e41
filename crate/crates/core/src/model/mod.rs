//! The captioning network and its persistence.

mod checkpoint;
mod config;
mod network;
mod transfer;

pub use checkpoint::{Checkpoint, TensorEntry, CHECKPOINT_VERSION};
pub use config::{DecoderConfig, DecoderVariant, EncoderConfig, ModelConfig};
pub use network::{sinusoidal_positions, ActModel, AttentionMask, AttentionRecord, ForwardCtx};
pub use transfer::adapt_pretrained_patch_embedding;
