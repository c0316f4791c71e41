#![allow(dead_code)]

use act_core::audio::PatchSequence;
use act_core::decoding::{rescore, NextTokenScorer};
use act_core::model::{ActModel, DecoderConfig, EncoderConfig, ModelConfig};
use act_core::text::{EOS, SOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small model over narrow patches; `vocab` includes the reserved tokens.
pub fn toy_model(d: usize, vocab: usize, seed: u64) -> ActModel {
    let encoder = EncoderConfig {
        d_model: d,
        heads: 2,
        layers: 1,
        ffn_dim: 2 * d,
        dropout: 0.0,
        patch_frames: 2,
        mel_bins: 4,
        max_patches: 8,
    };
    let decoder = DecoderConfig {
        d_model: d,
        heads: 2,
        layers: 1,
        ffn_dim: 2 * d,
        dropout: 0.0,
    };
    let mut cfg = ModelConfig::new(encoder, decoder, vocab, 3);
    cfg.init_std = 0.5;
    ActModel::new(cfg, seed).unwrap()
}

pub fn random_patches(n: usize, seed: u64) -> PatchSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    PatchSequence::new(data, n, 2, 4).unwrap()
}

/// Best sequence by exhaustive enumeration: every continuation of up to
/// `max_len` tokens that either ends in `<eos>` or hits the cap. Ties go
/// to the lexicographically smaller sequence.
pub fn exhaustive_best(scorer: &dyn NextTokenScorer, max_len: usize, banned: &[usize]) -> (Vec<usize>, f64) {
    fn walk(
        s: &dyn NextTokenScorer,
        prefix: &mut Vec<usize>,
        max_len: usize,
        banned: &[usize],
        out: &mut Vec<Vec<usize>>,
    ) {
        if prefix.len() > 1 && (prefix.last() == Some(&EOS) || prefix.len() - 1 == max_len) {
            out.push(prefix.clone());
            return;
        }
        for t in 0..s.vocab_size() {
            if banned.contains(&t) {
                continue;
            }
            prefix.push(t);
            walk(s, prefix, max_len, banned, out);
            prefix.pop();
        }
    }
    let mut all = Vec::new();
    walk(scorer, &mut vec![SOS], max_len, banned, &mut all);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for seq in all {
        let score = rescore(scorer, &seq).unwrap();
        let replace = match &best {
            None => true,
            Some((b, bs)) => score > *bs || (score == *bs && seq < *b),
        };
        if replace {
            best = Some((seq, score));
        }
    }
    best.unwrap()
}

/// Scorer whose log-probabilities are a fixed pseudo-random function of the
/// prefix, for decoding properties that do not need a network.
pub struct TableScorer {
    pub vocab: usize,
    pub seed: u64,
}

impl NextTokenScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> act_core::Result<Vec<f64>> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let z: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        Ok(z.iter().map(|v| v - lse).collect())
    }
}
