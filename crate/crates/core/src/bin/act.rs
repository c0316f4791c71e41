use std::path::{Path, PathBuf};
use std::process::ExitCode;

use act_core::cli_io::{
    cmd_caption, cmd_eval, cmd_gradcheck, cmd_synth_data, cmd_train, default_data_dir, format_captions,
    train_summary, RunConfig, SceneSet, TrainMode,
};
use act_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Automated audio captioning: synthetic data, training, captioning and scoring.
#[derive(Parser)]
#[command(name = "act", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration (omitted keys take defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `out_dir` from the config, else the data
    /// directory from ACT_DATA_DIR or ./data).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenes {
    Caption,
    Tagging,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic clips and write caption and tag manifests.
    SynthData {
        #[arg(long)]
        count: usize,
        #[arg(long, value_enum, default_value = "caption")]
        scenes: Scenes,
    },
    /// Train a caption model, or pretrain the encoder on tagging.
    Train {
        /// Dataset manifest (default: captions.jsonl or tags.jsonl in the data directory).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        pretrain_tagging: bool,
        /// Checkpoint whose encoder initialises this run.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Continue from the latest periodic checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Use the small laptop-scale preset as the base configuration.
        #[arg(long)]
        desk: bool,
    },
    /// Caption a WAV file or every clip of a manifest.
    Caption {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A `.wav` file or a dataset manifest.
        #[arg(long)]
        input: PathBuf,
        /// Beam size; 1 decodes greedily.
        #[arg(long)]
        beam: Option<usize>,
    },
    /// Score `id<TAB>caption` lines against a reference manifest.
    Eval {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Externally computed SPICE score, enabling SPIDEr.
        #[arg(long)]
        spice: Option<f64>,
    },
    /// Finite-difference check of every parameter gradient on a small model.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
}

fn load_config(common: &Common, desk: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None if desk => RunConfig::desk(),
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &RunConfig) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(default_data_dir)
}

fn write_or_print(dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::SynthData { count, scenes } => {
            let cfg = load_config(common, false)?;
            let out = out_dir(common, &cfg);
            let set = match scenes {
                Scenes::Caption => SceneSet::Caption,
                Scenes::Tagging => SceneSet::Tagging,
            };
            let r = cmd_synth_data(count, cfg.seed, &out, set)?;
            println!("wrote {} clips", r.clips);
            println!("{}", r.caption_manifest.display());
            println!("{}", r.tag_manifest.display());
        }
        Command::Train {
            manifest,
            pretrain_tagging,
            init,
            resume,
            desk,
        } => {
            let cfg = load_config(common, desk)?;
            let mode = if pretrain_tagging {
                TrainMode::PretrainTagging
            } else {
                TrainMode::Caption
            };
            let manifest = manifest.unwrap_or_else(|| {
                default_data_dir().join(if pretrain_tagging { "tags.jsonl" } else { "captions.jsonl" })
            });
            let out = common
                .out
                .clone()
                .or_else(|| cfg.out_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(if pretrain_tagging { "tagging" } else { "caption" }));
            let r = cmd_train(&cfg, &manifest, mode, init.as_deref(), resume, &out)?;
            println!("{}", train_summary(&r));
        }
        Command::Caption {
            checkpoint,
            input,
            beam,
        } => {
            let rows = cmd_caption(&checkpoint, &input, beam)?;
            write_or_print(common.out.as_deref(), "captions.tsv", &format_captions(&rows))?;
        }
        Command::Eval {
            candidates,
            references,
            spice,
        } => {
            let report = cmd_eval(&candidates, &references, spice, common.out.as_deref())?;
            print!("{}", report.to_key_value());
        }
        Command::Gradcheck { corrupt_backward } => {
            let cfg = load_config(common, false)?;
            let r = cmd_gradcheck(&cfg, cfg.seed, corrupt_backward)?;
            println!(
                "max_relative_error={:.3e} worst={}[{}] coordinates={} tolerance={:.0e}",
                r.max_relative_error,
                r.worst_parameter.as_deref().unwrap_or("-"),
                r.worst_index.map_or("-".into(), |i| i.to_string()),
                r.coordinates,
                r.tolerance
            );
            if !r.passed {
                return Err(Error::Numeric(format!(
                    "gradient check failed: {:.3e} >= {:.0e}",
                    r.max_relative_error, r.tolerance
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
