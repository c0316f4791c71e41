use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<sos>", "<eos>", "<unk>"];

const FILE_MAGIC: &str = "# act-vocab v1";

/// Bijective word ↔ id map with ids 0..3 reserved for special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps words seen at least `min_count` times, ordered by descending
    /// frequency and then lexicographically.
    pub fn build<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Self> {
        ensure!(!corpus.is_empty(), "cannot build a vocabulary from an empty corpus");
        ensure!(min_count >= 1, "min_count must be at least 1");
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for w in sentence {
                *counts.entry(w.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(w, c)| c >= min_count && !RESERVED.contains(&w))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_words(kept.into_iter().map(|(w, _)| w.to_string()))
    }

    /// Builds from non-reserved words in id order (first word gets id 4).
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = Vocabulary {
            words: RESERVED.iter().map(|s| s.to_string()).collect(),
            ids: HashMap::new(),
        };
        for (i, w) in RESERVED.iter().enumerate() {
            v.ids.insert(w.to_string(), i);
        }
        for w in words {
            ensure!(!w.is_empty(), "empty word in vocabulary");
            if v.ids.contains_key(&w) {
                return Err(Error::validation(format!("duplicate vocabulary word {w:?}")));
            }
            v.ids.insert(w.clone(), v.words.len());
            v.words.push(w);
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    /// Non-reserved words in id order.
    pub fn content_words(&self) -> &[String] {
        &self.words[RESERVED.len()..]
    }

    /// Wraps with `<sos>`/`<eos>`, mapping unknown words to `<unk>`.
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> CaptionTokens {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(SOS);
        ids.extend(words.iter().map(|w| self.id(w.as_ref()).unwrap_or(UNK)));
        ids.push(EOS);
        CaptionTokens { ids }
    }

    /// Maps ids back to words, dropping `<pad>`, `<sos>` and `<eos>`.
    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | SOS | EOS))
            .map(|&i| {
                self.word(i)
                    .map(str::to_string)
                    .ok_or_else(|| Error::invalid(format!("token id {i} outside vocabulary of {}", self.len())))
            })
            .collect()
    }

    pub fn to_file_string(&self) -> String {
        let mut s = format!(
            "{FILE_MAGIC}: one word per line; the word on line k (counting from 0 after this header) has id k+4; ids 0-3 are <pad> <sos> <eos> <unk>\n"
        );
        for w in self.content_words() {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn parse_file_string(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let Some(rest) = header.strip_prefix("# act-vocab v") else {
            return Err(Error::format(origin, "missing vocabulary header"));
        };
        let version: String = rest.chars().take_while(char::is_ascii_digit).collect();
        if version != "1" {
            return Err(Error::format(
                origin,
                format!("unsupported vocabulary version in header {header:?}"),
            ));
        }
        Self::from_words(lines.map(str::to_string)).map_err(|e| Error::format(origin, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_file_string(&text, path)
    }
}

/// Token ids beginning with `<sos>` and ending with `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CaptionTokens {
    ids: Vec<usize>,
}

impl CaptionTokens {
    pub fn new(ids: Vec<usize>) -> Result<Self> {
        ensure!(
            ids.len() >= 2 && ids[0] == SOS && ids[ids.len() - 1] == EOS,
            "caption must start with <sos> and end with <eos>: {ids:?}"
        );
        ensure!(
            !ids[1..ids.len() - 1].iter().any(|&i| matches!(i, PAD | SOS | EOS)),
            "special token inside caption body: {ids:?}"
        );
        Ok(CaptionTokens { ids })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Decoder input under teacher forcing: every token but the last.
    pub fn inputs(&self) -> &[usize] {
        &self.ids[..self.ids.len() - 1]
    }

    /// Prediction targets: every token but `<sos>`.
    pub fn targets(&self) -> &[usize] {
        &self.ids[1..]
    }

    /// Body without the markers.
    pub fn body(&self) -> &[usize] {
        &self.ids[1..self.ids.len() - 1]
    }
}
