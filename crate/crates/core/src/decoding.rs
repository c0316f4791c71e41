//! Greedy and beam-search caption generation over any next-token scorer.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::audio::PatchSequence;
use crate::error::{ensure, Result};
use crate::model::ActModel;
use crate::numerics::Tensor;
use crate::text::{CaptionTokens, EOS, PAD, SOS, UNK};

/// Source of next-token log-probabilities given a prefix starting at `<sos>`.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// A trained model bound to one clip's encoder rows.
pub struct ModelScorer<'a> {
    model: &'a ActModel,
    memory: Tensor,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a ActModel, patches: &PatchSequence) -> Result<Self> {
        Ok(ModelScorer {
            model,
            memory: model.encode_memory(patches)?,
        })
    }

    pub fn from_memory(model: &'a ActModel, memory: Tensor) -> Self {
        ModelScorer { model, memory }
    }
}

impl NextTokenScorer for ModelScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        self.model.next_token_log_probs(&self.memory, prefix)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeOptions {
    /// Cap on generated tokens, `<eos>` included.
    pub max_len: usize,
    pub beam_size: usize,
    /// Rank hypotheses by score divided by generated length.
    pub length_norm: bool,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            max_len: 22,
            beam_size: 5,
            length_norm: false,
            banned: vec![PAD, SOS, UNK],
        }
    }
}

/// A decoded token sequence with its summed log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamHypothesis {
    /// Starts with `<sos>`; ends with `<eos>` once finished.
    pub tokens: Vec<usize>,
    /// Sum of the log-probabilities of every generated token.
    pub score: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    fn rank(&self, length_norm: bool) -> f64 {
        if length_norm {
            self.score / self.generated().max(1) as f64
        } else {
            self.score
        }
    }

    /// The sequence with `<eos>` appended when generation hit the length cap.
    pub fn closed(&self) -> Vec<usize> {
        let mut t = self.tokens.clone();
        if t.last() != Some(&EOS) {
            t.push(EOS);
        }
        t
    }

    pub fn caption_tokens(&self) -> Result<CaptionTokens> {
        CaptionTokens::new(self.closed())
    }
}

/// Higher rank first; equal ranks put the lexicographically smaller sequence first.
fn better(a: &BeamHypothesis, b: &BeamHypothesis, length_norm: bool) -> Ordering {
    b.rank(length_norm)
        .total_cmp(&a.rank(length_norm))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn step_log_probs(scorer: &dyn NextTokenScorer, prefix: &[usize], banned: &[usize]) -> Result<Vec<f64>> {
    let mut lp = scorer.log_probs(prefix)?;
    ensure!(
        lp.len() == scorer.vocab_size(),
        "scorer returned {} log-probabilities for a vocabulary of {}",
        lp.len(),
        scorer.vocab_size()
    );
    for &b in banned {
        if let Some(x) = lp.get_mut(b) {
            *x = f64::NEG_INFINITY;
        }
    }
    Ok(lp)
}

/// Picks the most probable token at each step (lowest id on ties) until
/// `<eos>` or `max_len` generated tokens.
pub fn greedy_decode(scorer: &dyn NextTokenScorer, opts: &DecodeOptions) -> Result<BeamHypothesis> {
    ensure!(opts.max_len >= 1, "max_len must be at least 1");
    let mut h = BeamHypothesis {
        tokens: vec![SOS],
        score: 0.0,
        finished: false,
    };
    for _ in 0..opts.max_len {
        let lp = step_log_probs(scorer, &h.tokens, &opts.banned)?;
        let mut best = None::<(usize, f64)>;
        for (tok, &v) in lp.iter().enumerate() {
            if v > f64::NEG_INFINITY && best.is_none_or(|(_, b)| v > b) {
                best = Some((tok, v));
            }
        }
        let Some((tok, v)) = best else {
            break;
        };
        h.tokens.push(tok);
        h.score += v;
        if tok == EOS {
            h.finished = true;
            break;
        }
    }
    Ok(h)
}

/// Beam search result: the winner and the final ranked pool (at most `B`
/// entries from the completed and length-capped hypotheses).
#[derive(Clone, Debug)]
pub struct BeamOutput {
    pub best: BeamHypothesis,
    pub top: Vec<BeamHypothesis>,
}

/// Standard beam search. Every live hypothesis is extended by every allowed
/// token and the best `B` candidates survive; those ending in `<eos>` retire
/// to the completed pool. Hypotheses still live at `max_len` join the pool
/// too, and the best of the pool is returned.
pub fn beam_search_decode(scorer: &dyn NextTokenScorer, opts: &DecodeOptions) -> Result<BeamOutput> {
    ensure!(opts.beam_size >= 1, "beam size must be at least 1, got {}", opts.beam_size);
    ensure!(opts.max_len >= 1, "max_len must be at least 1");
    let mut live = vec![BeamHypothesis {
        tokens: vec![SOS],
        score: 0.0,
        finished: false,
    }];
    let mut pool: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..opts.max_len {
        let mut candidates = Vec::new();
        for h in &live {
            let lp = step_log_probs(scorer, &h.tokens, &opts.banned)?;
            for (tok, &v) in lp.iter().enumerate() {
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                candidates.push(BeamHypothesis {
                    tokens,
                    score: h.score + v,
                    finished: tok == EOS,
                });
            }
        }
        candidates.sort_by(|a, b| better(a, b, opts.length_norm));
        candidates.truncate(opts.beam_size);
        live.clear();
        for c in candidates {
            if c.finished {
                pool.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
    }
    pool.extend(live);
    ensure!(!pool.is_empty(), "every token is banned; nothing to decode");
    pool.sort_by(|a, b| better(a, b, opts.length_norm));
    pool.truncate(opts.beam_size);
    Ok(BeamOutput {
        best: pool[0].clone(),
        top: pool,
    })
}

/// Decodes one clip with the model: greedy when `beam_size == 1`, beam
/// search otherwise.
pub fn caption_clip(model: &ActModel, patches: &PatchSequence, opts: &DecodeOptions) -> Result<CaptionTokens> {
    let scorer = ModelScorer::new(model, patches)?;
    let h = if opts.beam_size == 1 {
        greedy_decode(&scorer, opts)?
    } else {
        beam_search_decode(&scorer, opts)?.best
    };
    h.caption_tokens()
}

/// Recomputes a hypothesis score with fresh scorer calls.
pub fn rescore(scorer: &dyn NextTokenScorer, tokens: &[usize]) -> Result<f64> {
    ensure!(tokens.first() == Some(&SOS), "sequence must start with <sos>");
    let mut total = 0.0;
    for t in 1..tokens.len() {
        total += scorer.log_probs(&tokens[..t])?[tokens[t]];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Log-probabilities drawn from a hash of the prefix.
    struct Hashed(usize);

    impl NextTokenScorer for Hashed {
        fn vocab_size(&self) -> usize {
            self.0
        }
        fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
            let mut h = 1469598103934665603u64;
            for &t in prefix {
                h = (h ^ t as u64).wrapping_mul(1099511628211);
            }
            let z: Vec<f64> = (0..self.0)
                .map(|k| {
                    let x = (h ^ (k as u64 * 0x9e37_79b9)).wrapping_mul(0x2545_f491_4f6c_dd1d);
                    (x >> 11) as f64 / (1u64 << 53) as f64 * 4.0
                })
                .collect();
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            Ok(z.iter().map(|v| v - lse).collect())
        }
    }

    fn opts(b: usize, max_len: usize) -> DecodeOptions {
        DecodeOptions {
            max_len,
            beam_size: b,
            length_norm: false,
            banned: vec![],
        }
    }

    #[test]
    fn beam_of_one_is_greedy() {
        for k in [4, 7] {
            let s = Hashed(k);
            let g = greedy_decode(&s, &opts(1, 6)).unwrap();
            let b = beam_search_decode(&s, &opts(1, 6)).unwrap().best;
            assert_eq!(g, b);
        }
    }

    #[test]
    fn stored_score_matches_rescoring() {
        let s = Hashed(6);
        let out = beam_search_decode(&s, &opts(5, 5)).unwrap();
        for h in &out.top {
            assert!((rescore(&s, &h.tokens).unwrap() - h.score).abs() < 1e-12);
            let eos = h.tokens.iter().position(|&t| t == EOS);
            assert!(eos.is_none_or(|p| p == h.tokens.len() - 1));
        }
    }

    #[test]
    fn wider_beam_never_worse() {
        for k in 4..9 {
            let s = Hashed(k);
            let one = beam_search_decode(&s, &opts(1, 5)).unwrap().best.score;
            let five = beam_search_decode(&s, &opts(5, 5)).unwrap().best.score;
            assert!(five >= one - 1e-12);
        }
    }

    #[test]
    fn length_cap_closes_with_eos() {
        let s = Hashed(5);
        let h = greedy_decode(
            &s,
            &DecodeOptions {
                banned: vec![EOS],
                ..opts(1, 1)
            },
        )
        .unwrap();
        assert_eq!(h.tokens.len(), 2);
        let c = h.closed();
        assert_eq!((c[0], c.len(), c[2]), (SOS, 3, EOS));
    }

    #[test]
    fn invalid_arguments() {
        let s = Hashed(4);
        assert!(beam_search_decode(&s, &opts(0, 3)).is_err());
        assert!(greedy_decode(&s, &opts(1, 0)).is_err());
    }
}
