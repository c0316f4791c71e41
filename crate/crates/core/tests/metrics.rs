use std::collections::BTreeMap;
use std::path::Path;

use act_core::metrics::{
    average_precision, bleu, cider, mean_average_precision, rouge_l, rouge_l_clip, BleuSmoothing, EvalPair,
    MetricReport, CIDER_MAX_N, CIDER_SIGMA,
};
use act_core::numerics::Tensor;
use act_core::training::TagLabels;
use proptest::prelude::*;

fn grams(t: &[String], n: usize) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in 0..t.len().saturating_sub(n - 1) {
        if i + n <= t.len() {
            *m.entry(t[i..i + n].join(" ")).or_insert(0) += 1;
        }
    }
    m
}

fn naive_bleu(pairs: &[EvalPair], n: usize) -> f64 {
    let mut logp = 0.0;
    for k in 1..=n {
        let (mut hit, mut tot) = (0, 0);
        for p in pairs {
            for (g, c) in grams(&p.candidate, k) {
                let best = p.references.iter().map(|r| grams(r, k).get(&g).copied().unwrap_or(0)).max().unwrap();
                hit += c.min(best);
                tot += c;
            }
        }
        if hit == 0 {
            return 0.0;
        }
        logp += (hit as f64 / tot as f64).ln();
    }
    let c: usize = pairs.iter().map(|p| p.candidate.len()).sum();
    let r: usize = pairs
        .iter()
        .map(|p| {
            let mut lens: Vec<usize> = p.references.iter().map(Vec::len).collect();
            lens.sort_by_key(|&l| (l.abs_diff(p.candidate.len()), l));
            lens[0]
        })
        .sum();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (logp / n as f64).exp()
}

fn is_subsequence(s: &[&String], r: &[String]) -> bool {
    let mut it = r.iter();
    s.iter().all(|x| it.any(|y| y == *x))
}

/// Longest common subsequence by trying every subset of the candidate.
fn brute_lcs(c: &[String], r: &[String]) -> usize {
    let mut best = 0;
    for mask in 0u32..(1 << c.len()) {
        let sub: Vec<&String> = (0..c.len()).filter(|i| mask >> i & 1 == 1).map(|i| &c[i]).collect();
        if sub.len() > best && is_subsequence(&sub, r) {
            best = sub.len();
        }
    }
    best
}

fn naive_rouge(p: &EvalPair) -> f64 {
    let b2: f64 = 1.2 * 1.2;
    p.references
        .iter()
        .map(|r| {
            let l = brute_lcs(&p.candidate, r) as f64;
            if l == 0.0 {
                return 0.0;
            }
            let (pr, rc) = (l / p.candidate.len() as f64, l / r.len() as f64);
            (1.0 + b2) * pr * rc / (rc + b2 * pr)
        })
        .fold(0.0, f64::max)
}

fn naive_cider(pairs: &[EvalPair]) -> Vec<f64> {
    let n_docs = pairs.len() as f64;
    let mut df: BTreeMap<String, f64> = BTreeMap::new();
    for p in pairs {
        let mut seen = std::collections::BTreeSet::new();
        for r in &p.references {
            for n in 1..=4 {
                seen.extend(grams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let vec = |t: &[String], n: usize| -> BTreeMap<String, f64> {
        grams(t, n)
            .into_iter()
            .map(|(g, c)| {
                let d = df.get(&g).copied().unwrap_or(1.0);
                let w = c as f64 * (n_docs.ln() - d.ln());
                (g, w)
            })
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
    pairs
        .iter()
        .map(|p| {
            let mut total = 0.0;
            for r in &p.references {
                let pen = (-((p.candidate.len() as f64 - r.len() as f64).powi(2)) / 72.0).exp();
                let mut s = 0.0;
                for n in 1..=4 {
                    let (h, rv) = (vec(&p.candidate, n), vec(r, n));
                    let mut dot = 0.0;
                    for (g, hw) in &h {
                        if let Some(rw) = rv.get(g) {
                            dot += hw.min(*rw) * rw;
                        }
                    }
                    let (a, b) = (norm(&h), norm(&rv));
                    if a != 0.0 && b != 0.0 {
                        dot /= a * b;
                    }
                    s += dot * pen;
                }
                total += s / 4.0;
            }
            10.0 * total / p.references.len() as f64
        })
        .collect()
}

fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..=max)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn corpus() -> impl Strategy<Value = Vec<EvalPair>> {
    prop::collection::vec(
        (words(7), prop::collection::vec(words(7), 1..=3))
            .prop_map(|(c, r)| EvalPair::new(c, r).unwrap()),
        5,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bleu_matches_naive_oracle(pairs in corpus(), n in 1usize..=4) {
        let got = bleu(&pairs, n, BleuSmoothing::None).unwrap();
        prop_assert!((got - naive_bleu(&pairs, n)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
    }

    #[test]
    fn rouge_matches_subset_lcs(pairs in corpus()) {
        for p in &pairs {
            prop_assert!((rouge_l_clip(p) - naive_rouge(p)).abs() < 1e-12);
        }
    }

    #[test]
    fn cider_matches_naive_oracle(pairs in corpus()) {
        let got = cider(&pairs, CIDER_MAX_N, CIDER_SIGMA).unwrap();
        for (a, b) in got.per_clip.iter().zip(naive_cider(&pairs)) {
            prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn corpus_scores_ignore_clip_order(pairs in corpus(), rot in 1usize..5) {
        let mut shuffled = pairs.clone();
        shuffled.rotate_left(rot);
        for n in 1..=4 {
            let a = bleu(&pairs, n, BleuSmoothing::None).unwrap();
            let b = bleu(&shuffled, n, BleuSmoothing::None).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert!((rouge_l(&pairs).unwrap() - rouge_l(&shuffled).unwrap()).abs() < 1e-12);
        let (a, b) = (cider(&pairs, 4, 6.0).unwrap().corpus, cider(&shuffled, 4, 6.0).unwrap().corpus);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn repeating_an_exact_match_lowers_cider(pairs in corpus(), k in 2usize..4) {
        let pairs: Vec<EvalPair> = pairs
            .into_iter()
            .map(|p| EvalPair::new(p.references[0].clone(), vec![p.references[0].clone()]).unwrap())
            .collect();
        let base = cider(&pairs, 4, 6.0).unwrap();
        let mut doubled = pairs.clone();
        doubled[0].candidate = vec![doubled[0].candidate.clone(); k].concat();
        let after = cider(&doubled, 4, 6.0).unwrap();
        prop_assert!(after.per_clip[0] < base.per_clip[0] || base.per_clip[0] == 0.0);
    }
}

#[test]
fn identical_candidates_score_ten_on_distinct_corpus() {
    let pairs = vec![
        EvalPair::from_text("a dog barks loudly", &["a dog barks loudly"]).unwrap(),
        EvalPair::from_text("rain falls on a roof", &["rain falls on a roof"]).unwrap(),
        EvalPair::from_text("an engine idles quietly", &["an engine idles quietly"]).unwrap(),
    ];
    let c = cider(&pairs, 4, 6.0).unwrap();
    for s in c.per_clip {
        assert!((s - 10.0).abs() < 1e-9, "{s}");
    }
    assert!(!c.degenerate_idf);
    assert!(cider(&pairs[..1], 4, 6.0).unwrap().degenerate_idf);
}

#[test]
fn map_averages_over_classes_with_positives() {
    let scores = Tensor::new(&[3, 2], vec![0.9, 0.1, 0.8, 0.2, 0.7, 0.3]).unwrap();
    let labels = TagLabels::new(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let m = mean_average_precision(&scores, &labels).unwrap();
    assert!((m - average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap()).abs() < 1e-15);
    assert!((m - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn report_round_trips_and_marks_spice() {
    let pairs = vec![
        EvalPair::from_text("a cat sits", &["a cat sits down"]).unwrap(),
        EvalPair::from_text("a dog runs", &["a dog runs fast", "the dog runs"]).unwrap(),
    ];
    let ids = vec!["x".to_string(), "y".to_string()];
    let r = MetricReport::compute(&ids, &pairs, None, BleuSmoothing::None).unwrap();
    assert!(r.unavailable["spider"].starts_with("SPICE unavailable"));
    assert!(r.score("spider").is_none());
    assert!(r.to_key_value().contains("SPICE unavailable"));
    for _ in 0..5 {
        let again = MetricReport::compute(&ids, &pairs, None, BleuSmoothing::None).unwrap();
        assert_eq!(again.to_json(), r.to_json());
    }
    let back = MetricReport::from_json(&r.to_json(), Path::new("m.json")).unwrap();
    assert_eq!(back, r);

    let with = MetricReport::compute(&ids, &pairs, Some(0.2), BleuSmoothing::None).unwrap();
    let c = with.score("cider").unwrap();
    assert!((with.score("spider").unwrap() - (c + 0.2) / 2.0).abs() < 1e-15);
    assert!(MetricReport::compute(&ids, &pairs, Some(1.5), BleuSmoothing::None).is_err());

    let newer = r.to_json().replacen("\"format_version\": 1", "\"format_version\": 2", 1);
    assert_ne!(newer, r.to_json());
    assert!(MetricReport::from_json(&newer, Path::new("m.json")).is_err());
}
