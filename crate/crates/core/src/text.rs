//! Tokenization, vocabulary construction and id encoding.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Default vocabulary frequency threshold.
pub const DEFAULT_MIN_COUNT: usize = 5;

/// Truncation limits, in words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaxLengths {
    pub caption: usize,
    pub question: usize,
    pub answer: usize,
}

impl Default for MaxLengths {
    fn default() -> Self {
        Self {
            caption: 24,
            question: 16,
            answer: 8,
        }
    }
}

/// Lowercases, drops punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// One token per line; line `i` holds id `i + 4`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in self.words() {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) || RESERVED.contains(&line) {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary line {}: invalid token `{line}`",
                    line_no + 1
                )));
            }
            words.push(line.to_string());
        }
        Self::from_tokens(words)
    }

    /// Stable fingerprint used to detect checkpoint/dataset mismatches.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(&Sha256::digest(self.to_text().as_bytes())[..8])
    }
}

/// Builds a vocabulary from tokens occurring at least `min_count` times.
///
/// Ids after the reserved block are assigned by descending frequency, then
/// lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if min_count == 0 {
        return Err(Error::InvalidArgument("min_count must be at least 1".into()));
    }
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::Empty("build_vocab"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for stream in corpus {
        for tok in stream {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && !RESERVED.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()).collect())
}

/// Token ids of one text, truncated to a maximum length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub ids: Vec<usize>,
    /// Word count before truncation.
    pub original_len: usize,
}

impl EncodedSequence {
    pub fn was_truncated(&self) -> bool {
        self.original_len > self.ids.len()
    }

    /// `BOS ids… EOS`, the framing the decoder scores.
    pub fn framed(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ids.len() + 2);
        out.push(BOS);
        out.extend_from_slice(&self.ids);
        out.push(EOS);
        out
    }
}

pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> EncodedSequence {
    let tokens = tokenize(text);
    let original_len = tokens.len();
    let ids = tokens
        .iter()
        .take(max_len.max(1))
        .map(|t| vocab.id(t))
        .collect();
    EncodedSequence { ids, original_len }
}

/// Renders ids as text, skipping padding and sequence delimiters.
pub fn decode(ids: &[usize], vocab: &Vocabulary) -> String {
    ids.iter()
        .filter(|&&id| !matches!(id, PAD | BOS | EOS))
        .map(|&id| vocab.token(id).unwrap_or(RESERVED[UNK]))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| tokenize(t)).collect()
    }

    #[test]
    fn min_count_filters() {
        let v = build_vocab(&corpus(&["a a a b"]), 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        let v = build_vocab(&corpus(&["a a a b"]), 1).unwrap();
        assert_eq!(v.words(), &["a", "b"]);
    }

    #[test]
    fn ordering_is_frequency_then_lexicographic() {
        let v = build_vocab(&corpus(&["c b b a a z"]), 1).unwrap();
        assert_eq!(v.words(), &["a", "b", "c", "z"]);
    }

    #[test]
    fn empty_corpus_rejected() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(build_vocab(&empty, 1).is_err());
        assert!(build_vocab(&corpus(&["a"]), 0).is_err());
    }

    #[test]
    fn encode_examples() {
        let v = build_vocab(&corpus(&["is it sunny"]), 1).unwrap();
        let e = encode("Is it sunny?", &v, 16);
        assert_eq!(e.ids.len(), 3);
        assert_eq!(decode(&e.ids, &v), "is it sunny");
        assert_eq!(encode("is it raining", &v, 16).ids[2], UNK);

        let long: Vec<String> = (0..20).map(|_| "it".to_string()).collect();
        let e = encode(&long.join(" "), &v, 16);
        assert_eq!(e.ids.len(), 16);
        assert_eq!(e.original_len, 20);
        assert!(e.was_truncated());
        assert_eq!(e.framed().first(), Some(&BOS));
        assert_eq!(e.framed().last(), Some(&EOS));
    }

    #[test]
    fn punctuation_is_stripped() {
        assert_eq!(tokenize("Yes, it's RED!"), vec!["yes", "its", "red"]);
        assert!(tokenize("?? !").is_empty());
    }

    #[test]
    fn text_file_roundtrip() {
        let v = build_vocab(&corpus(&["b a a", "c"]), 1).unwrap();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_text("a\n\nb\n").is_err());
        assert!(Vocabulary::from_text("a\n<unk>\n").is_err());
    }

    proptest! {
        #[test]
        fn ids_stay_in_range(
            words in prop::collection::vec("[a-e]{1,3}", 1..40),
            probe in prop::collection::vec("[a-g]{1,3}", 0..20),
            min_count in 1usize..4,
        ) {
            let v = build_vocab(&[words.clone()], min_count);
            prop_assume!(v.is_ok());
            let v = v.unwrap();
            let e = encode(&probe.join(" "), &v, 8);
            prop_assert!(e.ids.len() <= 8);
            prop_assert!(e.ids.iter().all(|&id| id < v.len()));
            prop_assert!(e.ids.iter().all(|&id| id != PAD && id != BOS && id != EOS));
        }

        #[test]
        fn decode_inverts_encode(words in prop::collection::vec("[a-zA-Z]{1,5}", 1..12)) {
            let text = words.join(" ");
            let v = build_vocab(&[tokenize(&text)], 1).unwrap();
            let e = encode(&text, &v, 16);
            prop_assert_eq!(decode(&e.ids, &v), text.to_lowercase());
        }

        #[test]
        fn vocab_is_deterministic(words in prop::collection::vec("[a-d]{1,2}", 1..30)) {
            let a = build_vocab(&[words.clone()], 1).unwrap();
            let b = build_vocab(&[words], 1).unwrap();
            prop_assert_eq!(a.to_text(), b.to_text());
        }
    }
}
