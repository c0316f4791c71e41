//! File formats and the command implementations behind the `act` binary.

mod commands;
mod config;
mod manifest;

pub use commands::{
    clip_features, cmd_caption, cmd_eval, cmd_gradcheck, cmd_synth_data, cmd_train, format_captions,
    latest_checkpoint, load_captioner, parse_captions, tag_probabilities, train_summary, GradcheckOutcome,
    RunRecord, SceneSet, SynthOutput, TrainMode, TrainOutput,
};
pub use config::{GradcheckSection, ModelSection, RunConfig, WordVectorSection};
pub use manifest::{ClipRecord, ClipSource, DatasetManifest, MANIFEST_VERSION};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "ACT_DATA_DIR";

/// `$ACT_DATA_DIR` if set and non-empty, else `./data`.
pub fn default_data_dir() -> std::path::PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => v.into(),
        _ => "data".into(),
    }
}
