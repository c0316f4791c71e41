//! Greedy and beam-search decoding from an untrained toy captioner,
//! showing the ranked hypothesis pool.
//!
//! Usage: `cargo run --example beam_search -- [beam]`

use act_core::audio::PatchSequence;
use act_core::decoding::{beam_search_decode, greedy_decode, DecodeOptions, ModelScorer};
use act_core::model::{ActModel, DecoderConfig, EncoderConfig, ModelConfig};
use act_core::text::RESERVED;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> act_core::Result<()> {
    let beam = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let enc = EncoderConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        ffn_dim: 32,
        patch_frames: 2,
        mel_bins: 4,
        max_patches: 8,
        dropout: 0.0,
    };
    let dec = DecoderConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        ffn_dim: 32,
        dropout: 0.0,
    };
    let mut cfg = ModelConfig::new(enc, dec, RESERVED.len() + 4, 3);
    cfg.init_std = 0.5;
    let model = ActModel::new(cfg, 7)?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = (0..3 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let patches = PatchSequence::new(data, 3, 2, 4)?;
    let scorer = ModelScorer::new(&model, &patches)?;
    let opts = DecodeOptions {
        max_len: 5,
        beam_size: beam,
        ..DecodeOptions::default()
    };

    let g = greedy_decode(&scorer, &opts)?;
    println!("greedy: {:?} score {:.4}", g.tokens, g.score);
    let out = beam_search_decode(&scorer, &opts)?;
    println!("beam {beam}: {:?} score {:.4}", out.best.tokens, out.best.score);
    for h in &out.top {
        println!("  {:?} {:.4}", h.tokens, h.score);
    }
    Ok(())
}
