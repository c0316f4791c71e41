//! Scores candidate captions against references with BLEU, ROUGE_L,
//! CIDEr-D and, given a SPICE value, SPIDEr.
//!
//! Usage: `cargo run --example score_captions -- [spice]`

use act_core::metrics::{BleuSmoothing, EvalPair, MetricReport};

fn main() -> act_core::Result<()> {
    let spice = std::env::args().nth(1).and_then(|s| s.parse().ok());
    let pairs = vec![
        EvalPair::from_text(
            "a dog barks loudly in the yard",
            &["a dog is barking in the yard", "a dog barks loudly outside"],
        )?,
        EvalPair::from_text(
            "rain falls on a metal roof",
            &["rain is falling on a tin roof", "heavy rain hits the roof"],
        )?,
        EvalPair::from_text(
            "a car passes by",
            &["a car drives past on a wet road", "traffic passes on the street"],
        )?,
    ];
    let ids: Vec<String> = (0..pairs.len()).map(|i| format!("clip_{i}")).collect();
    let report = MetricReport::compute(&ids, &pairs, spice, BleuSmoothing::None)?;
    print!("{}", report.to_key_value());
    Ok(())
}
