//! Tagging pretraining, then caption training with and without the
//! pretrained encoder, compared by epochs to reach a caption loss below 0.1.
//!
//! Usage: `cargo run --release --example transfer_pretraining -- [config.toml] [seed]`

use std::path::{Path, PathBuf};

use act_core::cli_io::{clip_features, cmd_synth_data, cmd_train, DatasetManifest, RunConfig, SceneSet, TrainMode};
use act_core::metrics::mean_average_precision;
use act_core::model::Checkpoint;
use act_core::training::{predict_tags, restore_training, EpochStats, TagLabels};

const LOSS_TARGET: f64 = 0.1;

fn epochs_to_target(history: &[EpochStats]) -> Option<usize> {
    history.iter().find(|s| s.loss < LOSS_TARGET).map(|s| s.epoch)
}

fn held_out_map(cfg: &RunConfig, ckpt: &Path, held: &Path) -> act_core::Result<f64> {
    let (model, _, _) = restore_training(&Checkpoint::load(ckpt)?)?;
    let m = DatasetManifest::load(held)?;
    let names = m.tag_names();
    let mut specs = Vec::new();
    let mut rows = Vec::new();
    for r in &m.records {
        specs.push(clip_features(&m.waveform(r)?, cfg)?);
        let tags = r.tags.clone().unwrap_or_default();
        rows.push(names.iter().map(|n| f64::from(u8::from(tags.contains(n)))).collect());
    }
    let refs: Vec<_> = specs.iter().collect();
    mean_average_precision(&predict_tags(&model, &refs)?, &TagLabels::new(&rows)?)
}

fn main() -> act_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.first().filter(|a| a.ends_with(".toml")) {
        Some(p) => RunConfig::load(Path::new(p))?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = args.iter().find_map(|a| a.parse::<u64>().ok()) {
        cfg.seed = seed;
    }
    let scenes = if args.iter().any(|a| a == "multi") { SceneSet::Caption } else { SceneSet::Tagging };
    let root = tempfile_dir()?;
    let tag_train = cmd_synth_data(60, cfg.seed + 100, &root.join("tag-train"), scenes)?;
    let tag_held = cmd_synth_data(30, cfg.seed + 200, &root.join("tag-held"), scenes)?;
    let captions = cmd_synth_data(8, cfg.seed, &root.join("captions"), SceneSet::Caption)?;

    let tagging = cmd_train(&cfg, &tag_train.tag_manifest, TrainMode::PretrainTagging, None, false, &root.join("run-tag"))?;
    let map = held_out_map(&cfg, &tagging.final_checkpoint, &tag_held.tag_manifest)?;
    println!("tagging: {} epochs, held-out mAP {map:.4}", tagging.history.len());

    let scratch = cmd_train(&cfg, &captions.caption_manifest, TrainMode::Caption, None, false, &root.join("run-scratch"))?;
    let init = cmd_train(
        &cfg,
        &captions.caption_manifest,
        TrainMode::Caption,
        Some(&tagging.final_checkpoint),
        false,
        &root.join("run-init"),
    )?;
    let (a, b) = (epochs_to_target(&scratch.history), epochs_to_target(&init.history));
    println!("epochs to loss < {LOSS_TARGET}: scratch {a:?}, pretrained encoder {b:?}");
    if let (Some(a), Some(b)) = (a, b) {
        println!("ratio {:.3}", b as f64 / a as f64);
    }
    std::fs::remove_dir_all(&root).map_err(|e| act_core::Error::io(&root, e))?;
    Ok(())
}

fn tempfile_dir() -> act_core::Result<PathBuf> {
    let dir = std::env::temp_dir().join(format!("act-transfer-{}-{}", std::process::id(), std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap().as_nanos()));
    std::fs::create_dir_all(&dir).map_err(|e| act_core::Error::io(&dir, e))?;
    Ok(dir)
}
