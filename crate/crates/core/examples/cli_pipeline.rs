//! The full command-line flow in-process: synthesize data, train a small
//! captioner, caption the training clips and score them.
//!
//! Usage: `cargo run --release --example cli_pipeline -- [out_dir]`

use std::path::PathBuf;

use act_core::cli_io::{cmd_caption, cmd_eval, cmd_synth_data, cmd_train, format_captions, RunConfig, SceneSet, TrainMode};

fn main() -> act_core::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("runs/example"), PathBuf::from);
    let mut cfg = RunConfig::desk();
    cfg.caption.epochs = 60;
    cfg.checkpoint_every = 20;

    let data = cmd_synth_data(6, cfg.seed, &out.join("data"), SceneSet::Caption)?;
    let run = cmd_train(&cfg, &data.caption_manifest, TrainMode::Caption, None, false, &out.join("run"))?;
    let last = run.history.last().map_or(f64::NAN, |s| s.loss);
    println!("trained {} epochs, final loss {last:.4}", run.history.len());

    let rows = cmd_caption(&run.final_checkpoint, &data.caption_manifest, Some(3))?;
    let text = format_captions(&rows);
    print!("{text}");
    let cand = out.join("captions.tsv");
    std::fs::write(&cand, text).map_err(|e| act_core::Error::io(&cand, e))?;

    let report = cmd_eval(&cand, &data.caption_manifest, None, Some(&out.join("eval")))?;
    print!("{}", report.to_key_value());
    Ok(())
}
