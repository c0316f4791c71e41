use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::numerics::kernels::{sigmoid, softplus};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 128,
            window: 3,
            negatives: 5,
            epochs: 20,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

/// `|V| × d` input-side word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddings {
    pub matrix: Tensor,
}

impl WordEmbeddings {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        let (x, y) = (self.vector(a), self.vector(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (nx * ny).max(1e-300)
    }
}

#[derive(Clone, Debug)]
pub struct SkipGramRun {
    pub embeddings: WordEmbeddings,
    /// Negative-sampling loss of the first training batch, re-measured after
    /// every epoch with the batch's negatives held fixed.
    pub probe_losses: Vec<f64>,
}

/// (center, context) pairs within `window` positions of each other.
pub fn skipgram_pairs(sentence: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, &c) in sentence.iter().enumerate() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(sentence.len() - 1);
        for (j, &o) in sentence.iter().enumerate().take(hi + 1).skip(lo) {
            if j != i {
                out.push((c, o));
            }
        }
    }
    out
}

const PROBE_PAIRS: usize = 64;

/// Skip-gram with negative sampling from the unigram^0.75 distribution,
/// trained by plain SGD. Sentences are id sequences below `vocab_size`.
pub fn train_skipgram(corpus: &[Vec<usize>], vocab_size: usize, cfg: &SkipGramConfig) -> Result<SkipGramRun> {
    ensure!(cfg.window >= 1, "window must be at least 1");
    ensure!(cfg.negatives >= 1, "need at least one negative sample");
    ensure!(cfg.dim >= 1, "embedding width must be positive");
    let total: usize = corpus.iter().map(Vec::len).sum();
    ensure!(
        total > cfg.window,
        "corpus of {total} tokens is smaller than the window {}",
        cfg.window
    );
    ensure!(
        corpus.iter().flatten().all(|&w| w < vocab_size),
        "corpus contains ids outside the vocabulary of {vocab_size}"
    );

    let mut counts = vec![0.0f64; vocab_size];
    for &w in corpus.iter().flatten() {
        counts[w] += 1.0;
    }
    let mut cumulative = Vec::with_capacity(vocab_size);
    let mut acc = 0.0;
    for c in &counts {
        acc += c.powf(0.75);
        cumulative.push(acc);
    }
    let draw_negative = |rng: &mut ChaCha8Rng| {
        let u = rng.gen::<f64>() * acc;
        cumulative.partition_point(|&c| c <= u).min(vocab_size - 1)
    };

    let mut pairs: Vec<(usize, usize)> = corpus
        .iter()
        .flat_map(|s| skipgram_pairs(s, cfg.window))
        .collect();
    ensure!(!pairs.is_empty(), "corpus yields no training pairs");

    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut input: Vec<f64> = (0..vocab_size * d)
        .map(|_| (rng.gen::<f64>() - 0.5) / d as f64)
        .collect();
    let mut output = vec![0.0; vocab_size * d];

    let probe: Vec<((usize, usize), Vec<usize>)> = pairs
        .iter()
        .take(PROBE_PAIRS)
        .map(|&p| (p, (0..cfg.negatives).map(|_| draw_negative(&mut rng)).collect()))
        .collect();
    let probe_loss = |input: &[f64], output: &[f64]| -> f64 {
        let dot = |a: usize, b: usize| -> f64 {
            input[a * d..(a + 1) * d]
                .iter()
                .zip(&output[b * d..(b + 1) * d])
                .map(|(x, y)| x * y)
                .sum()
        };
        probe
            .iter()
            .map(|&((c, o), ref negs)| {
                // -ln σ(s) = softplus(-s)
                softplus(-dot(c, o)) + negs.iter().map(|&n| softplus(dot(c, n))).sum::<f64>()
            })
            .sum::<f64>()
            / probe.len() as f64
    };

    let mut probe_losses = Vec::with_capacity(cfg.epochs);
    let mut grad_in = vec![0.0; d];
    for _ in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        for &(center, context) in &pairs {
            grad_in.fill(0.0);
            let targets = std::iter::once((context, 1.0))
                .chain((0..cfg.negatives).map(|_| (draw_negative(&mut rng), 0.0)))
                .collect::<Vec<_>>();
            let vc = center * d;
            for (word, label) in targets {
                let vo = word * d;
                let s: f64 = (0..d).map(|k| input[vc + k] * output[vo + k]).sum();
                let g = cfg.learning_rate * (label - sigmoid(s));
                for k in 0..d {
                    grad_in[k] += g * output[vo + k];
                    output[vo + k] += g * input[vc + k];
                }
            }
            for k in 0..d {
                input[vc + k] += grad_in[k];
            }
        }
        probe_losses.push(probe_loss(&input, &output));
    }

    Ok(SkipGramRun {
        embeddings: WordEmbeddings {
            matrix: Tensor::from_parts(vec![vocab_size, d], input),
        },
        probe_losses,
    })
}
