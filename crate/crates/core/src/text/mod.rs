//! Caption normalization, vocabulary, token encoding and skip-gram word
//! vectors.

mod skipgram;
mod vocab;

use std::sync::OnceLock;

use regex::Regex;

pub use skipgram::{skipgram_pairs, train_skipgram, SkipGramConfig, SkipGramRun, WordEmbeddings};
pub use vocab::{CaptionTokens, Vocabulary, EOS, PAD, RESERVED, SOS, UNK};

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("valid regex"))
}

/// Lower-cases, strips Unicode punctuation and splits on whitespace.
pub fn tokenize_caption(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    punctuation()
        .replace_all(&lowered, "")
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(tokenize_caption("A man speaks, loudly!"), ["a", "man", "speaks", "loudly"]);
        assert!(tokenize_caption("").is_empty());
        assert_eq!(tokenize_caption("Dog   barks"), ["dog", "barks"]);
        assert_eq!(tokenize_caption("«Élan» — vital…"), ["élan", "vital"]);
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = tokenize_caption(&s);
            prop_assert_eq!(tokenize_caption(&once.join(" ")), once);
        }
    }
}
