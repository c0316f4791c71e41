//! Tokenizes synthetic captions, builds a vocabulary and trains skip-gram
//! word vectors on the encoded corpus.
//!
//! Usage: `cargo run --release --example text_embeddings`

use act_core::audio::{caption_for, caption_scenes};
use act_core::text::{tokenize_caption, train_skipgram, SkipGramConfig, Vocabulary};

fn main() -> act_core::Result<()> {
    let captions: Vec<Vec<String>> = caption_scenes(200, 3).iter().map(|s| tokenize_caption(&caption_for(s))).collect();
    println!("example: {:?}", captions[0]);
    let vocab = Vocabulary::build(&captions, 1)?;
    println!("vocabulary: {} entries, content words {:?}", vocab.len(), vocab.content_words());

    let corpus: Vec<Vec<usize>> = captions.iter().map(|c| vocab.encode(c).body().to_vec()).collect();
    let cfg = SkipGramConfig {
        dim: 16,
        epochs: 10,
        ..SkipGramConfig::default()
    };
    let run = train_skipgram(&corpus, vocab.len(), &cfg)?;
    println!(
        "probe loss {:.4} -> {:.4}",
        run.probe_losses[0],
        run.probe_losses.last().copied().unwrap_or(f64::NAN)
    );
    if let (Some(rises), Some(falls), Some(noise)) = (vocab.id("rises"), vocab.id("falls"), vocab.id("noise")) {
        println!("cos(rises, falls) = {:.3}", run.embeddings.cosine(rises, falls));
        println!("cos(rises, noise) = {:.3}", run.embeddings.cosine(rises, noise));
    }
    Ok(())
}
