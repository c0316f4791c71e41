use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::RunConfig;
use super::manifest::{ClipRecord, ClipSource, DatasetManifest};
use crate::audio::{
    caption_scenes, compute_log_mel, patchify, read_wav, synthesize_event_clip, tagging_scenes, write_wav,
    LogMelSpectrogram, PatchSequence, Waveform, CLIP_SECONDS, SAMPLE_RATE, TAG_NAMES,
};
use crate::decoding::{caption_clip, DecodeOptions};
use crate::error::{ensure, Error, Result};
use crate::metrics::{BleuSmoothing, EvalPair, MetricReport};
use crate::model::{ActModel, Checkpoint, ModelConfig};
use crate::numerics::{param_gradcheck, Tensor};
use crate::text::{tokenize_caption, train_skipgram, CaptionTokens, Vocabulary, EOS, RESERVED, SOS};
use crate::training::{
    init_encoder_from, pretrain_tagging, restore_training, train_captioning, training_checkpoint, CaptionExample,
    EpochStats, TagExample, TrainPhase, TrainState,
};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---- synth-data ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneSet {
    /// One- and two-event scenes with distinct captions.
    Caption,
    /// Single-event scenes cycling through the three classes.
    Tagging,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub caption_manifest: PathBuf,
    pub tag_manifest: PathBuf,
    pub clips: usize,
}

/// Renders `count` clips to `out_dir/clips/*.wav` and writes a caption
/// manifest and a tag manifest over the same clips.
pub fn cmd_synth_data(count: usize, seed: u64, out_dir: &Path, scenes: SceneSet) -> Result<SynthOutput> {
    ensure!(count >= 1, "count must be at least 1");
    let clip_dir = out_dir.join("clips");
    create_dir(&clip_dir)?;
    let events = match scenes {
        SceneSet::Caption => caption_scenes(count, seed),
        SceneSet::Tagging => tagging_scenes(count, seed),
    };
    let mut noise_seeds = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut captions = Vec::with_capacity(count);
    let mut tags = Vec::with_capacity(count);
    for (i, ev) in events.iter().enumerate() {
        let id = format!("clip_{i:04}");
        let clip = synthesize_event_clip(ev, noise_seeds.gen())?;
        let rel = PathBuf::from("clips").join(format!("{id}.wav"));
        write_wav(&out_dir.join(&rel), &clip.waveform)?;
        let tag_names: Vec<String> = clip.tags.iter().map(|&t| TAG_NAMES[t].to_string()).collect();
        captions.push(ClipRecord {
            id: id.clone(),
            source: ClipSource::Wav(rel.clone()),
            captions: vec![clip.caption.clone()],
            tags: None,
        });
        tags.push(ClipRecord {
            id,
            source: ClipSource::Wav(rel),
            captions: vec![],
            tags: Some(tag_names),
        });
    }
    let caption_manifest = out_dir.join("captions.jsonl");
    let tag_manifest = out_dir.join("tags.jsonl");
    DatasetManifest::new(captions, out_dir.to_path_buf())?.save(&caption_manifest)?;
    DatasetManifest::new(tags, out_dir.to_path_buf())?.save(&tag_manifest)?;
    Ok(SynthOutput {
        caption_manifest,
        tag_manifest,
        clips: count,
    })
}

// ---- features ----

/// Resamples and pads a waveform to 10 s at 32 kHz, then computes its
/// log-mel spectrogram.
pub fn clip_features(w: &Waveform, cfg: &RunConfig) -> Result<LogMelSpectrogram> {
    let prepared = w.prepare(SAMPLE_RATE, CLIP_SECONDS);
    compute_log_mel(&prepared, &cfg.frontend)
}

fn record_features(m: &DatasetManifest, r: &ClipRecord, cfg: &RunConfig) -> Result<LogMelSpectrogram> {
    clip_features(&m.waveform(r)?, cfg)
}

// ---- train ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    PretrainTagging,
    Caption,
}

/// What a training checkpoint needs beyond tensors to be used on its own.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: TrainMode,
    pub config: RunConfig,
    /// Content words in id order (ids start after the reserved tokens).
    pub vocab: Vec<String>,
    pub tags: Vec<String>,
}

impl RunRecord {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let v = ck
            .config
            .get("run")
            .ok_or_else(|| Error::validation("checkpoint carries no run record"))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::validation(format!("checkpoint run record: {e}")))
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_words(self.vocab.iter().cloned())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub final_checkpoint: PathBuf,
    pub metrics_log: PathBuf,
    pub history: Vec<EpochStats>,
    /// Epoch the run started from (0 for a fresh run).
    pub resumed_from: usize,
}

const CHECKPOINT_PREFIX: &str = "checkpoint-epoch-";

fn periodic_checkpoint(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("{CHECKPOINT_PREFIX}{epoch:05}.ckpt"))
}

/// Most recent periodic checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(epoch) = name
            .strip_prefix(CHECKPOINT_PREFIX)
            .and_then(|s| s.strip_suffix(".ckpt"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(e, _)| epoch > *e) {
            best = Some((epoch, path));
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Keeps only metrics-log lines for epochs up to `epoch`.
fn truncate_log(path: &Path, epoch: usize) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in text.lines() {
        let s: EpochStats =
            serde_json::from_str(line).map_err(|e| Error::format(path, format!("metrics log line: {e}")))?;
        if s.epoch <= epoch {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

struct Prepared {
    model: ActModel,
    state: TrainState,
    record: RunRecord,
}

fn tag_rows(m: &DatasetManifest, names: &[String]) -> Result<Vec<Vec<f64>>> {
    m.records
        .iter()
        .map(|r| {
            let mut row = vec![0.0; names.len()];
            for t in r.tags.iter().flatten() {
                let k = names
                    .iter()
                    .position(|n| n == t)
                    .ok_or_else(|| Error::validation(format!("clip {}: unknown tag {t}", r.id)))?;
                row[k] = 1.0;
            }
            Ok(row)
        })
        .collect()
}

/// Trains a tagging or caption model from a manifest, writing the metrics
/// log, periodic checkpoints and `final.ckpt` into `out_dir`.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest_path: &Path,
    mode: TrainMode,
    init: Option<&Path>,
    resume: bool,
    out_dir: &Path,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    ensure!(!manifest.records.is_empty(), "manifest {} has no records", manifest_path.display());
    create_dir(out_dir)?;
    let metrics_log = out_dir.join("metrics.jsonl");

    let resumed = if resume { latest_checkpoint(out_dir)? } else { None };
    let phase = match mode {
        TrainMode::PretrainTagging => TrainPhase::Tagging,
        TrainMode::Caption => TrainPhase::Caption,
    };
    let prepared = match &resumed {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let record = RunRecord::from_checkpoint(&ck)?;
            if record.mode != mode {
                return Err(Error::validation(format!(
                    "{} was written by a {:?} run, not {:?}",
                    path.display(),
                    record.mode,
                    mode
                )));
            }
            if record.config.model != cfg.model {
                return Err(Error::validation(format!(
                    "the model section of the configuration differs from the one {} was trained with",
                    path.display()
                )));
            }
            let (model, state, _) = restore_training(&ck)?;
            let state = state.ok_or_else(|| Error::validation("checkpoint has no optimizer state to resume"))?;
            truncate_log(&metrics_log, state.epoch)?;
            // The current configuration governs the rest of the run (e.g. a
            // raised epoch count); vocabulary and tag names stay as stored.
            let record = RunRecord {
                config: cfg.clone(),
                ..record
            };
            Prepared { model, state, record }
        }
        None => {
            if metrics_log.exists() {
                fs::remove_file(&metrics_log).map_err(|e| Error::io(&metrics_log, e))?;
            }
            fresh_model(cfg, &manifest, mode, phase)?
        }
    };
    let Prepared {
        mut model,
        mut state,
        record,
    } = prepared;
    if resumed.is_none() {
        if let Some(init_path) = init {
            let ck = Checkpoint::load(init_path)?;
            init_encoder_from(&mut model, &ck)?;
        }
    }
    let resumed_from = state.epoch;
    let run = &record.config;
    let mut tc = match mode {
        TrainMode::PretrainTagging => run.tagging.clone(),
        TrainMode::Caption => run.caption.clone(),
    };
    tc.seed = run.seed;
    let run_json = serde_json::to_value(&record).map_err(|e| Error::Internal(e.to_string()))?;
    let every = run.checkpoint_every;

    let mut on_epoch = |s: &EpochStats, m: &ActModel, st: &TrainState| -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_log)
            .map_err(|e| Error::io(&metrics_log, e))?;
        let line = serde_json::to_string(s).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&metrics_log, e))?;
        if s.epoch.is_multiple_of(every) {
            training_checkpoint(m, st, run_json.clone())?.save(&periodic_checkpoint(out_dir, s.epoch))?;
        }
        Ok(())
    };

    let history = match mode {
        TrainMode::PretrainTagging => {
            manifest.require_tags()?;
            let rows = tag_rows(&manifest, &record.tags)?;
            let data = manifest
                .records
                .iter()
                .zip(rows)
                .map(|(r, labels)| {
                    Ok(TagExample {
                        spec: record_features(&manifest, r, run)?,
                        labels,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            pretrain_tagging(&mut model, &data, &tc, &mut state, &mut on_epoch)?
        }
        TrainMode::Caption => {
            manifest.require_captions()?;
            let vocab = record.vocabulary()?;
            let mut data = Vec::new();
            for r in &manifest.records {
                let spec = record_features(&manifest, r, run)?;
                for c in &r.captions {
                    data.push(CaptionExample {
                        spec: spec.clone(),
                        tokens: vocab.encode(&tokenize_caption(c)),
                    });
                }
            }
            train_captioning(&mut model, &data, &tc, &mut state, &mut on_epoch)?
        }
    };
    let final_checkpoint = out_dir.join("final.ckpt");
    training_checkpoint(&model, &state, run_json)?.save(&final_checkpoint)?;
    Ok(TrainOutput {
        final_checkpoint,
        metrics_log,
        history,
        resumed_from,
    })
}

fn fresh_model(cfg: &RunConfig, manifest: &DatasetManifest, mode: TrainMode, phase: TrainPhase) -> Result<Prepared> {
    let tags = manifest.tag_names();
    let vocab = match mode {
        TrainMode::Caption => {
            manifest.require_captions()?;
            let corpus: Vec<Vec<String>> = manifest
                .records
                .iter()
                .flat_map(|r| r.captions.iter().map(|c| tokenize_caption(c)))
                .collect();
            Vocabulary::build(&corpus, cfg.vocab_min_count)?
        }
        TrainMode::PretrainTagging => {
            manifest.require_tags()?;
            ensure!(!tags.is_empty(), "tagging needs at least one class (zero classes in the manifest)");
            Vocabulary::from_words(std::iter::empty())?
        }
    };
    let model_cfg = cfg.model.model_config(vocab.len(), tags.len().max(1))?;
    let mut model = ActModel::new(model_cfg, cfg.seed)?;
    if mode == TrainMode::Caption && cfg.word_vectors.enabled {
        init_word_vectors(&mut model, manifest, &vocab, cfg)?;
    }
    let state = TrainState::new(phase, &model);
    let record = RunRecord {
        mode,
        config: cfg.clone(),
        vocab: vocab.content_words().to_vec(),
        tags,
    };
    Ok(Prepared { model, state, record })
}

/// Seeds `decoder.word_embed` with skip-gram vectors trained on the manifest
/// captions, rescaled to the RMS of the random initialisation so the first
/// optimisation steps see the usual weight scale.
fn init_word_vectors(model: &mut ActModel, manifest: &DatasetManifest, vocab: &Vocabulary, cfg: &RunConfig) -> Result<()> {
    let corpus: Vec<Vec<usize>> = manifest
        .records
        .iter()
        .flat_map(|r| r.captions.iter().map(|c| vocab.encode(&tokenize_caption(c)).ids().to_vec()))
        .collect();
    let sg = cfg.word_vectors.skipgram(cfg.model.decoder.d_model, cfg.seed);
    let vectors = train_skipgram(&corpus, vocab.len(), &sg)?.embeddings.matrix;
    let rms = (vectors.data().iter().map(|v| v * v).sum::<f64>() / vectors.numel() as f64).sqrt();
    ensure!(rms > 0.0, "skip-gram produced all-zero word vectors");
    let scaled = vectors.map(|v| v * cfg.model.init_std / rms);
    model.params.assign("decoder.word_embed", &scaled)
}

// ---- caption ----

/// Loads a caption checkpoint: model, vocabulary and stored run configuration.
pub fn load_captioner(path: &Path) -> Result<(ActModel, Vocabulary, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    let record = RunRecord::from_checkpoint(&ck)?;
    if record.mode != TrainMode::Caption {
        return Err(Error::validation(format!(
            "{} is a tagging checkpoint; captioning needs a caption checkpoint",
            path.display()
        )));
    }
    let (model, _, _) = restore_training(&ck)?;
    Ok((model, record.vocabulary()?, record.config))
}

/// Captions one WAV file or every clip of a manifest, ordered by clip id.
/// `beam` overrides the stored beam size; 1 selects greedy decoding.
pub fn cmd_caption(checkpoint: &Path, input: &Path, beam: Option<usize>) -> Result<Vec<(String, String)>> {
    let (model, vocab, cfg) = load_captioner(checkpoint)?;
    let mut opts: DecodeOptions = cfg.decoding.clone();
    if let Some(b) = beam {
        ensure!(b >= 1, "beam size must be at least 1, got {b}");
        opts.beam_size = b;
    }
    let t = model.config.encoder.patch_frames;
    let mut clips: Vec<(String, PatchSequence)> = Vec::new();
    if input.extension().and_then(|e| e.to_str()) == Some("wav") {
        let id = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("clip")
            .to_string();
        clips.push((id, patchify(&clip_features(&read_wav(input)?, &cfg)?, t)?));
    } else {
        let m = DatasetManifest::load(input)?;
        for r in m.sorted() {
            clips.push((r.id.clone(), patchify(&record_features(&m, r, &cfg)?, t)?));
        }
    }
    clips
        .iter()
        .map(|(id, p)| {
            let tokens = caption_clip(&model, p, &opts)?;
            Ok((id.clone(), vocab.decode(tokens.ids())?.join(" ")))
        })
        .collect()
}

/// `id<TAB>caption` lines.
pub fn format_captions(rows: &[(String, String)]) -> String {
    rows.iter().map(|(id, c)| format!("{id}\t{c}\n")).collect()
}

pub fn parse_captions(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, c) = l
                .split_once('\t')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected `id<TAB>caption`", i + 1)))?;
            Ok((id.to_string(), c.to_string()))
        })
        .collect()
}

// ---- eval ----

/// Scores a candidates file against a reference manifest and writes
/// `metrics.txt` and `metrics.json` into `out_dir` when given.
pub fn cmd_eval(candidates: &Path, references: &Path, spice: Option<f64>, out_dir: Option<&Path>) -> Result<MetricReport> {
    let text = fs::read_to_string(candidates).map_err(|e| Error::io(candidates, e))?;
    let mut cands: BTreeMap<String, String> = BTreeMap::new();
    for (id, c) in parse_captions(&text, candidates)? {
        if cands.insert(id.clone(), c).is_some() {
            return Err(Error::validation(format!("candidate clip id {id} appears twice")));
        }
    }
    ensure!(!cands.is_empty(), "candidates file {} is empty", candidates.display());
    let refs = DatasetManifest::load(references)?;
    let mut ids = Vec::new();
    let mut pairs = Vec::new();
    for (id, c) in &cands {
        let r = refs
            .get(id)
            .ok_or_else(|| Error::validation(format!("clip id {id} is missing from the references")))?;
        if r.captions.is_empty() {
            return Err(Error::validation(format!("reference clip {id} has no captions")));
        }
        ids.push(id.clone());
        pairs.push(EvalPair::new(
            tokenize_caption(c),
            r.captions.iter().map(|x| tokenize_caption(x)).collect(),
        )?);
    }
    let report = MetricReport::compute(&ids, &pairs, spice, BleuSmoothing::None)?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        let kv = dir.join("metrics.txt");
        fs::write(&kv, report.to_key_value()).map_err(|e| Error::io(&kv, e))?;
        let js = dir.join("metrics.json");
        fs::write(&js, report.to_json()).map_err(|e| Error::io(&js, e))?;
    }
    Ok(report)
}

// ---- gradcheck ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckOutcome {
    pub max_relative_error: f64,
    pub worst_parameter: Option<String>,
    pub worst_index: Option<usize>,
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Central-difference check of the full training loss (caption CE plus
/// tagging BCE) over every parameter of the small gradcheck model.
/// `corrupt_backward` swaps in a broken GELU derivative to show the check
/// catches it.
pub fn cmd_gradcheck(cfg: &RunConfig, seed: u64, corrupt_backward: bool) -> Result<GradcheckOutcome> {
    let gc = &cfg.gradcheck;
    ensure!(gc.step > 0.0, "gradcheck.step must be positive");
    ensure!(gc.patches >= 1 && gc.caption_len >= 1, "gradcheck needs at least one patch and one word");
    let section = cfg.gradcheck_model();
    let words = 5;
    let tags = 3;
    let model_cfg: ModelConfig = section.model_config(RESERVED.len() + words, tags)?;
    ensure!(gc.patches <= model_cfg.encoder.max_patches, "gradcheck.patches exceeds the position table");
    let model = ActModel::new(model_cfg.clone(), seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let pd = model_cfg.encoder.patch_dim();
    let data = (0..gc.patches * pd).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let patches = PatchSequence::new(data, gc.patches, model_cfg.encoder.patch_frames, model_cfg.encoder.mel_bins)?;
    let mut ids = vec![SOS];
    ids.extend((0..gc.caption_len).map(|_| rng.gen_range(RESERVED.len()..RESERVED.len() + words)));
    ids.push(EOS);
    let tokens = CaptionTokens::new(ids)?;
    let labels: Vec<f64> = (0..tags).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
    let smoothing = cfg.caption.label_smoothing;

    let report = param_gradcheck(
        &model.params,
        |g, store| {
            if corrupt_backward {
                g.corrupt_gelu_backward();
            }
            let m = ActModel::from_params(model_cfg.clone(), store.clone())?;
            let mut ctx = crate::model::ForwardCtx::eval();
            let enc = m.encode(g, &patches, &mut ctx)?;
            let logits = m.decoder_forward(g, tokens.inputs(), enc, &mut ctx)?;
            let targets: Vec<Option<usize>> = tokens.targets().iter().map(|&t| Some(t)).collect();
            let ce = g.smoothed_cross_entropy(logits, &targets, smoothing)?;
            let z = m.tagging_logits(g, enc)?;
            let bce = g.bce_with_logits(z, &labels)?;
            g.add(ce, bce)
        },
        gc.step,
    )?;
    let (worst_parameter, worst_index) = match report.worst {
        Some((n, i)) => (Some(n), Some(i)),
        None => (None, None),
    };
    Ok(GradcheckOutcome {
        max_relative_error: report.max_relative_error,
        worst_parameter,
        worst_index,
        coordinates: report.coordinates,
        tolerance: gc.tolerance,
        passed: report.max_relative_error < gc.tolerance,
    })
}

/// Tag probabilities for a spectrogram batch, exposed for evaluation tools.
pub fn tag_probabilities(model: &ActModel, specs: &[LogMelSpectrogram]) -> Result<Tensor> {
    let refs: Vec<&LogMelSpectrogram> = specs.iter().collect();
    crate::training::predict_tags(model, &refs)
}

/// JSON summary line for the training command.
pub fn train_summary(out: &TrainOutput) -> serde_json::Value {
    let last = out.history.last();
    json!({
        "final_checkpoint": out.final_checkpoint,
        "metrics_log": out.metrics_log,
        "resumed_from": out.resumed_from,
        "epochs_run": out.history.len(),
        "final_loss": last.map(|s| s.loss),
    })
}
