//! Trains the desk-scale captioner on eight synthetic clips until it
//! memorizes them, then prints each greedy caption next to its reference.
//!
//! Usage: `cargo run --release --example overfit_captions -- [config.toml] [seed]`

use std::path::Path;

use act_core::cli_io::{cmd_caption, cmd_synth_data, cmd_train, DatasetManifest, RunConfig, SceneSet, TrainMode};
use act_core::text::tokenize_caption;

fn main() -> act_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.first().filter(|a| a.ends_with(".toml")) {
        Some(p) => RunConfig::load(Path::new(p))?,
        None => RunConfig::desk(),
    };
    if let Some(seed) = args.iter().find_map(|a| a.parse::<u64>().ok()) {
        cfg.seed = seed;
    }
    let root = std::env::temp_dir().join(format!("act-overfit-{}", std::process::id()));
    let data = cmd_synth_data(8, cfg.seed, &root.join("data"), SceneSet::Caption)?;
    let run = cmd_train(&cfg, &data.caption_manifest, TrainMode::Caption, None, false, &root.join("run"))?;
    for s in run.history.iter().filter(|s| s.epoch % 25 == 0) {
        println!("epoch {:4} loss {:.4}", s.epoch, s.loss);
    }

    let manifest = DatasetManifest::load(&data.caption_manifest)?;
    let rows = cmd_caption(&run.final_checkpoint, &data.caption_manifest, Some(1))?;
    let mut exact = 0;
    for (id, caption) in &rows {
        let reference = manifest.get(id).map(|r| r.captions[0].as_str()).unwrap_or("");
        let hit = tokenize_caption(reference) == tokenize_caption(caption);
        exact += usize::from(hit);
        println!("{} {id}: {caption}  |  {reference}", if hit { "=" } else { "x" });
    }
    println!("{exact}/{} verbatim", rows.len());
    std::fs::remove_dir_all(&root).map_err(|e| act_core::Error::io(&root, e))
}
