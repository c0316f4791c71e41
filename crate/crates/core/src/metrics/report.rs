use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{bleu, cider, rouge_l_clip, spider, BleuSmoothing, EvalPair, CIDER_MAX_N, CIDER_SIGMA};
use crate::error::{ensure, Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// Scores of one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipScores {
    pub id: String,
    pub bleu_1: f64,
    pub bleu_4: f64,
    pub rouge_l: f64,
    pub cider: f64,
}

/// Corpus and per-clip caption scores.
///
/// Metrics that could not be computed appear in `unavailable` with a reason
/// instead of being reported as zero. SPIDEr is listed there whenever no
/// SPICE score was supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub format_version: u32,
    pub corpus_size: usize,
    pub bleu_orders: Vec<usize>,
    pub bleu_smoothing: BleuSmoothing,
    pub cider_max_n: usize,
    pub cider_sigma: f64,
    pub cider_degenerate_idf: bool,
    pub scores: BTreeMap<String, f64>,
    pub unavailable: BTreeMap<String, String>,
    pub per_clip: Vec<ClipScores>,
}

const SPICE_UNAVAILABLE: &str = "SPICE unavailable";

impl MetricReport {
    pub fn compute(ids: &[String], pairs: &[EvalPair], spice: Option<f64>, smoothing: BleuSmoothing) -> Result<Self> {
        ensure!(!pairs.is_empty(), "cannot evaluate an empty corpus");
        ensure!(ids.len() == pairs.len(), "{} clip ids for {} pairs", ids.len(), pairs.len());
        let mut scores = BTreeMap::new();
        for n in 1..=4 {
            scores.insert(format!("bleu_{n}"), bleu(pairs, n, smoothing)?);
        }
        let rouge: Vec<f64> = pairs.iter().map(rouge_l_clip).collect();
        scores.insert("rouge_l".into(), rouge.iter().sum::<f64>() / rouge.len() as f64);
        let c = cider(pairs, CIDER_MAX_N, CIDER_SIGMA)?;
        scores.insert("cider".into(), c.corpus);

        let mut unavailable = BTreeMap::new();
        unavailable.insert("meteor".into(), "METEOR not computed".to_string());
        match spice {
            Some(s) => {
                ensure!((0.0..=1.0).contains(&s), "SPICE score {s} outside [0, 1]");
                scores.insert("spice".into(), s);
                scores.insert("spider".into(), spider(c.corpus, s));
            }
            None => {
                unavailable.insert("spice".into(), SPICE_UNAVAILABLE.to_string());
                unavailable.insert(
                    "spider".into(),
                    format!("{SPICE_UNAVAILABLE}; CIDEr-only score {:.6}", c.corpus),
                );
            }
        }

        let mut per_clip = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            let one = std::slice::from_ref(p);
            per_clip.push(ClipScores {
                id: ids[i].clone(),
                bleu_1: bleu(one, 1, smoothing)?,
                bleu_4: bleu(one, 4, smoothing)?,
                rouge_l: rouge[i],
                cider: c.per_clip[i],
            });
        }
        Ok(MetricReport {
            format_version: REPORT_VERSION,
            corpus_size: pairs.len(),
            bleu_orders: vec![1, 2, 3, 4],
            bleu_smoothing: smoothing,
            cider_max_n: CIDER_MAX_N,
            cider_sigma: CIDER_SIGMA,
            cider_degenerate_idf: c.degenerate_idf,
            scores,
            unavailable,
            per_clip,
        })
    }

    pub fn score(&self, name: &str) -> Option<f64> {
        self.scores.get(name).copied()
    }

    /// `key=value` lines: corpus scores, then unavailable metrics with their
    /// reason, then one `clip.<id>.<metric>` line per clip score.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "format=act-metrics v{}", self.format_version);
        let _ = writeln!(s, "corpus_size={}", self.corpus_size);
        if self.cider_degenerate_idf {
            let _ = writeln!(s, "warning=single-clip corpus: CIDEr document frequencies are degenerate");
        }
        for (k, v) in &self.scores {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        for (k, why) in &self.unavailable {
            let _ = writeln!(s, "{k}=unavailable ({why})");
        }
        for c in &self.per_clip {
            let _ = writeln!(s, "clip.{}.bleu_1={:.6}", c.id, c.bleu_1);
            let _ = writeln!(s, "clip.{}.bleu_4={:.6}", c.id, c.bleu_4);
            let _ = writeln!(s, "clip.{}.rouge_l={:.6}", c.id, c.rouge_l);
            let _ = writeln!(s, "clip.{}.cider={:.6}", c.id, c.cider);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let v: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::format(origin, format!("invalid report JSON: {e}")))?;
        let version = v.get("format_version").and_then(|x| x.as_u64());
        if version != Some(REPORT_VERSION as u64) {
            return Err(Error::format(
                origin,
                format!("unsupported metric report version {version:?}; expected {REPORT_VERSION}"),
            ));
        }
        serde_json::from_value(v).map_err(|e| Error::format(origin, e.to_string()))
    }
}
