//! Caption metrics (BLEU, ROUGE_L, CIDEr-D, SPIDEr) and tagging mAP.

mod report;

pub use report::{ClipScores, MetricReport, REPORT_VERSION};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::Tensor;

/// One candidate caption and its references, all pre-tokenized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(candidate: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        ensure!(!references.is_empty(), "an evaluation pair needs at least one reference");
        Ok(EvalPair { candidate, references })
    }

    /// Convenience for whitespace-separated strings.
    pub fn from_text(candidate: &str, references: &[&str]) -> Result<Self> {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        Self::new(split(candidate), references.iter().map(|r| split(r)).collect())
    }
}

type NGram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<NGram<'_>, usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BleuSmoothing {
    /// Any order with zero matches gives a zero score.
    #[default]
    None,
    /// Add one to matched and total counts for orders above 1.
    AddOne,
}

/// Corpus BLEU over orders `1..=n` with uniform weights. Clipped n-gram
/// matches are pooled over the corpus; the brevity penalty compares the
/// total candidate length with the summed closest reference lengths
/// (shorter reference on ties).
pub fn bleu(pairs: &[EvalPair], n: usize, smoothing: BleuSmoothing) -> Result<f64> {
    ensure!(!pairs.is_empty(), "BLEU needs at least one candidate");
    ensure!(n >= 1, "BLEU order must be at least 1");
    let mut matched = vec![0usize; n];
    let mut total = vec![0usize; n];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        ensure!(!p.references.is_empty(), "candidate without references");
        c += p.candidate.len();
        r += p
            .references
            .iter()
            .map(|x| x.len())
            .min_by_key(|&l| (l.abs_diff(p.candidate.len()), l))
            .unwrap_or(0);
        for k in 1..=n {
            let cand = ngram_counts(&p.candidate, k);
            let mut max_ref: BTreeMap<NGram, usize> = BTreeMap::new();
            for rf in &p.references {
                for (g, cnt) in ngram_counts(rf, k) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            for (g, cnt) in cand {
                total[k - 1] += cnt;
                matched[k - 1] += cnt.min(max_ref.get(g).copied().unwrap_or(0));
            }
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for k in 0..n {
        let (m, t) = match smoothing {
            BleuSmoothing::AddOne if k > 0 => (matched[k] + 1, total[k] + 1),
            _ => (matched[k], total[k]),
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln() / n as f64;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * log_sum.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS-based F-measure of one clip, maximised over its references.
pub fn rouge_l_clip(pair: &EvalPair) -> f64 {
    if pair.candidate.is_empty() {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    pair.references
        .iter()
        .map(|r| {
            let l = lcs_len(&pair.candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let p = l / pair.candidate.len() as f64;
            let rc = l / r.len() as f64;
            (1.0 + b2) * p * rc / (rc + b2 * p)
        })
        .fold(0.0, f64::max)
}

/// Mean per-clip ROUGE_L.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64> {
    ensure!(!pairs.is_empty(), "ROUGE_L needs at least one candidate");
    Ok(pairs.iter().map(rouge_l_clip).sum::<f64>() / pairs.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CiderResult {
    pub corpus: f64,
    pub per_clip: Vec<f64>,
    /// Set when the corpus has a single clip: every document frequency
    /// equals the corpus size and all IDF weights vanish.
    pub degenerate_idf: bool,
}

pub const CIDER_MAX_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

type TfIdf<'a> = Vec<BTreeMap<NGram<'a>, f64>>;

fn tfidf<'a>(tokens: &'a [String], max_n: usize, df: &BTreeMap<NGram, usize>, log_docs: f64) -> (TfIdf<'a>, Vec<f64>) {
    let mut vecs = Vec::with_capacity(max_n);
    let mut norms = Vec::with_capacity(max_n);
    for n in 1..=max_n {
        let v: BTreeMap<NGram, f64> = ngram_counts(tokens, n)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (log_docs - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    (vecs, norms)
}

/// CIDEr-D: clipped TF-IDF cosine per n-gram order with document
/// frequencies over the reference sets, a Gaussian length penalty, averaged
/// over orders and references, scaled by 10.
pub fn cider(pairs: &[EvalPair], max_n: usize, sigma: f64) -> Result<CiderResult> {
    ensure!(!pairs.is_empty(), "CIDEr needs at least one candidate");
    ensure!(max_n >= 1, "CIDEr order must be at least 1");
    ensure!(sigma > 0.0, "CIDEr sigma must be positive");
    let mut df: BTreeMap<NGram, usize> = BTreeMap::new();
    for p in pairs {
        let mut seen = BTreeSet::new();
        for r in &p.references {
            for n in 1..=max_n {
                for g in ngram_counts(r, n).into_keys() {
                    seen.insert(g);
                }
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_docs = (pairs.len() as f64).ln();
    let mut per_clip = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (hv, hn) = tfidf(&p.candidate, max_n, &df, log_docs);
        let mut acc = 0.0;
        for r in &p.references {
            let (rv, rn) = tfidf(r, max_n, &df, log_docs);
            let delta = p.candidate.len() as f64 - r.len() as f64;
            let penalty = (-(delta * delta) / (2.0 * sigma * sigma)).exp();
            let mut s = 0.0;
            for n in 0..max_n {
                let mut val: f64 = hv[n]
                    .iter()
                    .filter_map(|(g, &h)| rv[n].get(g).map(|&r| h.min(r) * r))
                    .sum();
                if hn[n] != 0.0 && rn[n] != 0.0 {
                    val /= hn[n] * rn[n];
                }
                s += val * penalty;
            }
            acc += s / max_n as f64;
        }
        per_clip.push(10.0 * acc / p.references.len() as f64);
    }
    Ok(CiderResult {
        corpus: per_clip.iter().sum::<f64>() / per_clip.len() as f64,
        per_clip,
        degenerate_idf: pairs.len() == 1,
    })
}

/// SPIDEr: the mean of CIDEr and an externally computed SPICE score.
pub fn spider(cider: f64, spice: f64) -> f64 {
    (cider + spice) / 2.0
}

/// Average precision of one class: mean precision at the rank of each
/// positive, ranking by descending score (earlier index first on ties).
/// `None` when the class has no positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Unweighted mean of per-class AP over classes with at least one positive.
/// `scores` is `N×K`; `labels` is the matching binary matrix.
pub fn mean_average_precision(scores: &Tensor, labels: &crate::training::TagLabels) -> Result<f64> {
    ensure!(
        scores.ndim() == 2 && scores.rows() == labels.len() && scores.cols() == labels.num_tags(),
        "scores of shape {:?} do not match {} clips × {} classes",
        scores.shape(),
        labels.len(),
        labels.num_tags()
    );
    let (n, k) = (scores.rows(), scores.cols());
    let mut aps = Vec::new();
    for c in 0..k {
        let s: Vec<f64> = (0..n).map(|i| scores.get(&[i, c])).collect();
        let y: Vec<bool> = (0..n).map(|i| labels.row(i)[c] == 1.0).collect();
        if let Some(ap) = average_precision(&s, &y) {
            aps.push(ap);
        }
    }
    ensure!(!aps.is_empty(), "no class has a positive example");
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
