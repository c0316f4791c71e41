//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use act_core::audio::{patchify, LogMelSpectrogram};
use act_core::cli_io::{
    clip_features, cmd_caption, cmd_eval, cmd_gradcheck, cmd_synth_data, cmd_train, format_captions,
    load_captioner, DatasetManifest, RunConfig, SceneSet, TrainMode, TrainOutput,
};
use act_core::decoding::{beam_search_decode, DecodeOptions, ModelScorer};
use act_core::metrics::{bleu, cider, mean_average_precision, rouge_l, spider, BleuSmoothing, EvalPair};
use act_core::model::{ActModel, Checkpoint, DecoderConfig, EncoderConfig, ForwardCtx, ModelConfig};
use act_core::numerics::{Graph, Tensor};
use act_core::text::{tokenize_caption, SOS};
use act_core::training::{evaluate_caption_loss, lr_at_epoch, predict_tags, restore_training, CaptionExample, TagLabels, TrainConfig};
use common::{exhaustive_best, random_patches, toy_model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(120);
const CAUSALITY_PREFIXES: usize = 100;
const BEAM_SCORE_TOLERANCE: f64 = 1e-9;
const LOSS_THRESHOLD: f64 = 0.1;
const MIN_VERBATIM: usize = 7;
const MIN_TRAIN_BLEU_1: f64 = 0.95;
const OVERFIT_BUDGET: Duration = Duration::from_secs(600);
const MIN_HELD_OUT_MAP: f64 = 0.9;
const TAGGING_EPOCHS: usize = 50;
const MAX_TRANSFER_RATIO: f64 = 0.5;
const BLEU_1_EXPECTED: f64 = 0.71653;
const ROUGE_L_EXPECTED: f64 = 0.87944;
const METRIC_TOLERANCE: f64 = 1e-5;
const CIDER_TOLERANCE: f64 = 1e-9;
const MAP_EXPECTED: f64 = 5.0 / 6.0;
const MAP_TOLERANCE: f64 = 1e-9;
const SPIDER_EXPECTED: f64 = 0.4195;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = act_core::Result<Outcome>;

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let m = cfg.gradcheck_model();
    let shape_ok = m.encoder.d_model == 32 && m.encoder.heads == 2 && m.encoder.layers == 2 && m.decoder.layers == 1;
    let r = cmd_gradcheck(&cfg, 0, false)?;
    let took = start.elapsed();
    Ok(outcome(
        shape_ok && r.max_relative_error < GRADCHECK_TOLERANCE && took < GRADCHECK_BUDGET,
        format!(
            "max relative error {:.2e} over {} coordinates (worst {}), {:.1} s",
            r.max_relative_error,
            r.coordinates,
            r.worst_parameter.unwrap_or_default(),
            took.as_secs_f64()
        ),
    ))
}

fn causality() -> Check {
    let m = toy_model(16, 12, 5);
    let memory = m.encode_memory(&random_patches(4, 6))?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let logits = |tokens: &[usize]| -> act_core::Result<Tensor> {
        let mut g = Graph::new();
        let mem = g.leaf(memory.clone());
        let out = m.decoder_forward(&mut g, tokens, mem, &mut ForwardCtx::eval())?;
        Ok(g.value(out).clone())
    };
    let mut violations = 0;
    for _ in 0..CAUSALITY_PREFIXES {
        let len = rng.gen_range(2..10);
        let mut tokens = vec![SOS];
        tokens.extend((1..len).map(|_| rng.gen_range(3..12)));
        let cut = rng.gen_range(0..len - 1);
        let mut changed = tokens.clone();
        for t in changed.iter_mut().skip(cut + 1) {
            *t = 3 + (*t - 3 + rng.gen_range(1..9)) % 9;
        }
        let (a, b) = (logits(&tokens)?, logits(&changed)?);
        let w = a.cols();
        if a.data()[..(cut + 1) * w] != b.data()[..(cut + 1) * w] {
            violations += 1;
        }
    }
    Ok(outcome(
        violations == 0,
        format!("{violations} of {CAUSALITY_PREFIXES} prefixes changed an earlier row"),
    ))
}

fn patch_shapes() -> Check {
    let spec = LogMelSpectrogram::new(vec![0.5; 500 * 64], 500, 64, 512)?;
    let p = patchify(&spec, 4)?;
    let d = 64;
    let encoder = EncoderConfig {
        d_model: d,
        heads: 2,
        layers: 1,
        ffn_dim: 2 * d,
        ..EncoderConfig::default()
    };
    let decoder = DecoderConfig {
        d_model: d,
        heads: 2,
        layers: 1,
        ffn_dim: 2 * d,
        dropout: 0.0,
    };
    let m = ActModel::new(ModelConfig::new(encoder, decoder, 8, 2), 0)?;
    let mut g = Graph::new();
    let x = m.embed_patches(&mut g, &p, &mut ForwardCtx::eval())?;
    let shape = g.shape(x).to_vec();
    Ok(outcome(
        p.count == 125 && shape == [126, d],
        format!("{} patches, encoder input {:?}", p.count, shape),
    ))
}

fn beam_oracle() -> Check {
    let start = Instant::now();
    let m = toy_model(8, 4, 11);
    let scorer = ModelScorer::new(&m, &random_patches(3, 12))?;
    let (seq, score) = exhaustive_best(&scorer, 3, &[]);
    let opts = DecodeOptions {
        max_len: 3,
        beam_size: 64,
        length_norm: false,
        banned: vec![],
    };
    let out = beam_search_decode(&scorer, &opts)?;
    let diff = (out.best.score - score).abs();
    Ok(outcome(
        out.best.tokens == seq && diff < BEAM_SCORE_TOLERANCE,
        format!(
            "beam {:?} vs exhaustive {:?}, score gap {diff:.1e}, {:.2} s",
            out.best.tokens,
            seq,
            start.elapsed().as_secs_f64()
        ),
    ))
}

/// One synth-data → train → caption → eval run on the 8-clip corpus.
struct Pipeline {
    train: TrainOutput,
    captions: Vec<u8>,
    metrics_json: Vec<u8>,
    metrics_txt: Vec<u8>,
    bleu_1: f64,
    verbatim: usize,
    final_loss: f64,
    seconds: f64,
}

fn pipeline(root: &Path, cfg: &RunConfig) -> act_core::Result<Pipeline> {
    let start = Instant::now();
    let data = cmd_synth_data(8, cfg.seed, &root.join("data"), SceneSet::Caption)?;
    let train = cmd_train(cfg, &data.caption_manifest, TrainMode::Caption, None, false, &root.join("run"))?;
    let rows = cmd_caption(&train.final_checkpoint, &data.caption_manifest, Some(1))?;
    let cand = root.join("captions.tsv");
    fs::write(&cand, format_captions(&rows)).map_err(|e| act_core::Error::io(&cand, e))?;
    let report = cmd_eval(&cand, &data.caption_manifest, None, Some(&root.join("eval")))?;
    let seconds = start.elapsed().as_secs_f64();

    let manifest = DatasetManifest::load(&data.caption_manifest)?;
    let mut verbatim = 0;
    for (id, caption) in &rows {
        let reference = &manifest.get(id).expect("captioned clip is in the manifest").captions[0];
        verbatim += usize::from(tokenize_caption(reference) == tokenize_caption(caption));
    }
    let (model, vocab, stored) = load_captioner(&train.final_checkpoint)?;
    let mut examples = Vec::new();
    for r in &manifest.records {
        examples.push(CaptionExample {
            spec: clip_features(&manifest.waveform(r)?, &stored)?,
            tokens: vocab.encode(&tokenize_caption(&r.captions[0])),
        });
    }
    let final_loss = evaluate_caption_loss(&model, &examples, stored.caption.label_smoothing)?;
    let read = |p: &Path| fs::read(p).map_err(|e| act_core::Error::io(p, e));
    Ok(Pipeline {
        captions: read(&cand)?,
        metrics_json: read(&root.join("eval/metrics.json"))?,
        metrics_txt: read(&root.join("eval/metrics.txt"))?,
        bleu_1: report.score("bleu_1").unwrap_or(0.0),
        verbatim,
        final_loss,
        seconds,
        train,
    })
}

fn overfit(p: &Pipeline) -> Outcome {
    outcome(
        p.final_loss < LOSS_THRESHOLD
            && p.verbatim >= MIN_VERBATIM
            && p.bleu_1 >= MIN_TRAIN_BLEU_1
            && p.seconds < OVERFIT_BUDGET.as_secs_f64(),
        format!(
            "loss {:.4}, {}/8 verbatim, BLEU_1 {:.3}, {} epochs in {:.1} s",
            p.final_loss,
            p.verbatim,
            p.bleu_1,
            p.train.history.len(),
            p.seconds
        ),
    )
}

fn epochs_to_threshold(t: &TrainOutput) -> Option<usize> {
    t.history.iter().find(|s| s.loss < LOSS_THRESHOLD).map(|s| s.epoch)
}

fn held_out_map(cfg: &RunConfig, ckpt: &Path, manifest: &Path) -> act_core::Result<f64> {
    let (model, _, _) = restore_training(&Checkpoint::load(ckpt)?)?;
    let m = DatasetManifest::load(manifest)?;
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

fn transfer(root: &Path, cfg: &RunConfig, scratch: &Pipeline) -> Check {
    let train = cmd_synth_data(60, cfg.seed + 100, &root.join("tag-train"), SceneSet::Tagging)?;
    let held = cmd_synth_data(30, cfg.seed + 200, &root.join("tag-held"), SceneSet::Tagging)?;
    let mut tcfg = cfg.clone();
    tcfg.tagging.epochs = TAGGING_EPOCHS;
    let tagging = cmd_train(&tcfg, &train.tag_manifest, TrainMode::PretrainTagging, None, false, &root.join("tag"))?;
    let map = held_out_map(cfg, &tagging.final_checkpoint, &held.tag_manifest)?;
    let captions = root.join("pipeline-a/data/captions.jsonl");
    let init = cmd_train(
        cfg,
        &captions,
        TrainMode::Caption,
        Some(&tagging.final_checkpoint),
        false,
        &root.join("init"),
    )?;
    let (a, b) = (epochs_to_threshold(&scratch.train), epochs_to_threshold(&init));
    let ratio = match (a, b) {
        (Some(a), Some(b)) => b as f64 / a as f64,
        _ => f64::INFINITY,
    };
    Ok(outcome(
        map > MIN_HELD_OUT_MAP && ratio <= MAX_TRANSFER_RATIO,
        format!(
            "held-out mAP {map:.4} after {TAGGING_EPOCHS} epochs; epochs to loss < {LOSS_THRESHOLD}: scratch {a:?}, pretrained {b:?}, ratio {ratio:.2} (need <= {MAX_TRANSFER_RATIO})"
        ),
    ))
}

fn metric_oracles() -> Check {
    let b1 = bleu(&[EvalPair::from_text("a cat sits", &["a cat sits down"])?], 1, BleuSmoothing::None)?;
    let r = rouge_l(&[EvalPair::from_text("a b c d", &["a c d"])?])?;
    let corpus = [
        EvalPair::from_text("a dog barks at night", &["a dog barks at night"])?,
        EvalPair::from_text("rain falls on the roof", &["rain falls on the roof"])?,
        EvalPair::from_text("an engine idles very quietly", &["an engine idles very quietly"])?,
    ];
    let c = cider(&corpus, 4, 6.0)?;
    let cider_err = c.per_clip.iter().map(|v| (v - 10.0).abs()).fold(0.0, f64::max);
    let map = mean_average_precision(
        &Tensor::new(&[3, 1], vec![0.9, 0.8, 0.7])?,
        &TagLabels::new(&[vec![1.0], vec![0.0], vec![1.0]])?,
    )?;
    let checks = [
        (b1 - BLEU_1_EXPECTED).abs() < METRIC_TOLERANCE,
        (r - ROUGE_L_EXPECTED).abs() < METRIC_TOLERANCE,
        cider_err < CIDER_TOLERANCE,
        (map - MAP_EXPECTED).abs() < MAP_TOLERANCE,
    ];
    let mark = |ok: bool| if ok { "ok" } else { "MISMATCH" };
    Ok(outcome(
        checks.iter().all(|&c| c),
        format!(
            "BLEU_1 {b1:.6} {}; ROUGE_L {r:.6} vs {ROUGE_L_EXPECTED} {}; CIDEr max |s-10| {cider_err:.1e} {}; mAP {map:.6} {}",
            mark(checks[0]),
            mark(checks[1]),
            mark(checks[2]),
            mark(checks[3])
        ),
    ))
}

fn lr_schedule() -> Check {
    let cfg = TrainConfig::default();
    let got: Vec<f64> = [1, 5, 10, 15].iter().map(|&e| lr_at_epoch(e, &cfg)).collect::<Result<_, _>>()?;
    let want = [2e-5, 1e-4, 1e-4, 1e-5];
    Ok(outcome(got == want, format!("epochs 1, 5, 10, 15 -> {got:?}")))
}

fn spider_composition() -> Check {
    let s = spider(0.679, 0.160);
    Ok(outcome(
        (s - SPIDER_EXPECTED).abs() < 1e-12 && (s - 0.420).abs() <= 5e-4 + 1e-12,
        format!("spider(0.679, 0.160) = {s}"),
    ))
}

fn determinism(a: &Pipeline, b: &Pipeline) -> Outcome {
    let same = [
        a.captions == b.captions,
        a.metrics_json == b.metrics_json,
        a.metrics_txt == b.metrics_txt,
    ];
    outcome(
        same.iter().all(|&s| s),
        format!(
            "captions identical: {}, metrics.json identical: {}, metrics.txt identical: {}",
            same[0], same[1], same[2]
        ),
    )
}

fn report(n: usize, name: &str, r: act_core::Result<Outcome>, failures: &mut usize) {
    let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    if !o.pass {
        *failures += 1;
    }
    println!("criterion {n:>2} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    // Ignore the harness flags cargo passes (e.g. --nocapture, a filter) but
    // honour `--list` so test discovery works.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut failures = 0;
    report(1, "gradient correctness", gradient_correctness(), &mut failures);
    report(2, "decoder causality", causality(), &mut failures);
    report(3, "patching shapes", patch_shapes(), &mut failures);
    report(4, "beam vs exhaustive search", beam_oracle(), &mut failures);

    let root = TempDir::new().expect("temporary directory");
    let cfg = RunConfig::desk();
    let first = pipeline(&root.path().join("pipeline-a"), &cfg);
    let second = pipeline(&root.path().join("pipeline-b"), &cfg);
    match (&first, &second) {
        (Ok(a), Ok(b)) => {
            report(5, "overfit memorization", Ok(overfit(a)), &mut failures);
            report(6, "transfer from tagging", transfer(root.path(), &cfg, a), &mut failures);
            report(7, "metric oracles", metric_oracles(), &mut failures);
            report(8, "learning-rate schedule", lr_schedule(), &mut failures);
            report(9, "SPIDEr composition", spider_composition(), &mut failures);
            report(10, "pipeline determinism", Ok(determinism(a, b)), &mut failures);
        }
        _ => {
            let err = first.err().or(second.err()).map(|e| e.to_string()).unwrap_or_default();
            report(5, "overfit memorization", Err(act_core::Error::Internal(err.clone())), &mut failures);
            report(6, "transfer from tagging", Err(act_core::Error::Internal(err.clone())), &mut failures);
            report(7, "metric oracles", metric_oracles(), &mut failures);
            report(8, "learning-rate schedule", lr_schedule(), &mut failures);
            report(9, "SPIDEr composition", spider_composition(), &mut failures);
            report(10, "pipeline determinism", Err(act_core::Error::Internal(err)), &mut failures);
        }
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
