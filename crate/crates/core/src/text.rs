//! Caption tokenization, vocabulary construction and fixed-length encoding.
//!
//! This word-level path feeds caption statistics and the embedding branch of the fusion
//! models. Transformer classifiers use their own subword tokenizers on raw text instead.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::{MemeRecord, SplitCorpus};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const DEFAULT_MAX_LEN: usize = 50;
pub const DEFAULT_MIN_COUNT: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

fn is_edge_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2026}' | '\u{2013}' | '\u{2014}'
                | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Lowercases, splits on whitespace and strips punctuation from each token's edges.
///
/// Punctuation inside a token is kept; tokens that are pure punctuation disappear.
pub fn tokenize_caption(caption: &str) -> Vec<String> {
    caption
        .split_whitespace()
        .map(|w| w.trim_matches(is_edge_punctuation).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Word-to-id map with reserved padding (0) and unknown (1) ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Counts tokens over `captions` and keeps those seen at least `min_count` times.
    ///
    /// Ids are assigned by descending frequency, ties broken lexicographically.
    pub fn build<'c>(captions: impl IntoIterator<Item = &'c str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for caption in captions {
            for tok in tokenize_caption(caption) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Builds from the training split only, so valid/test words map to the unknown id.
    pub fn from_training(corpus: &SplitCorpus, min_count: usize) -> Self {
        Self::from_records(corpus.train(), min_count)
    }

    pub fn from_records(records: &[MemeRecord], min_count: usize) -> Self {
        Self::build(records.iter().map(|r| r.caption.as_str()), min_count)
    }

    /// Restores a vocabulary from its id-ordered token list (ids 0 and 1 reserved).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::from_tokens(self.tokens)
    }

    /// Tokenizes, maps unknown words to 1, truncates to `max_len` and right-pads with 0.
    pub fn encode(&self, caption: &str, max_len: usize) -> TokenSequence {
        let mut ids: Vec<u32> = tokenize_caption(caption)
            .iter()
            .take(max_len)
            .map(|t| self.id(t))
            .collect();
        ids.resize(max_len, PAD_ID);
        TokenSequence { ids }
    }

    /// Inverse of [`Vocabulary::encode`] for in-vocabulary words, ignoring padding.
    pub fn decode(&self, seq: &TokenSequence) -> Vec<String> {
        seq.ids
            .iter()
            .filter(|id| **id != PAD_ID)
            .map(|id| self.token(*id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

/// Fixed-length id sequence; padding only at the tail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn padding(max_len: usize) -> Self {
        Self {
            ids: vec![PAD_ID; max_len],
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn encode_caption(caption: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    vocab.encode(caption, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MemeRecord;
    use crate::label::Label;
    use proptest::prelude::*;

    #[test]
    fn tokenizes_sample_caption_keeping_inner_punctuation() {
        assert_eq!(
            tokenize_caption("I;M CHITTI 2.0  APPO NAAN YAARU?E"),
            ["i;m", "chitti", "2.0", "appo", "naan", "yaaru?e"]
        );
    }

    #[test]
    fn empty_and_whitespace_captions() {
        assert!(tokenize_caption("").is_empty());
        assert_eq!(tokenize_caption("  Hello   hello "), ["hello", "hello"]);
        assert!(tokenize_caption(" -- ... ").is_empty());
        assert_eq!(tokenize_caption("\u{201C}Hi!\u{201D}"), ["hi"]);
    }

    #[test]
    fn min_count_filters_rare_words() {
        let v = Vocabulary::build(["a a b", "a"], 2);
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a"]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), UNK_ID);
    }

    #[test]
    fn empty_corpus_has_reserved_ids_only() {
        let v = Vocabulary::build(core::iter::empty(), 1);
        assert_eq!(v.len(), 2);
        assert!(v.is_empty());
    }

    #[test]
    fn validation_only_words_are_unknown() {
        let rec = |id: &str, cap: &str| MemeRecord {
            id: id.into(),
            image_ref: String::new(),
            caption: cap.into(),
            label: Some(Label::Troll),
        };
        let corpus = SplitCorpus::new(
            vec![rec("a", "seen words")],
            vec![rec("b", "hidden")],
            vec![rec("c", "secret")],
        )
        .unwrap();
        let v = Vocabulary::from_training(&corpus, 1);
        assert!(!v.contains("hidden") && !v.contains("secret"));
        assert_eq!(v.encode("hidden seen", 3).ids, [UNK_ID, v.id("seen"), PAD_ID]);
    }

    #[test]
    fn encode_pads_and_truncates() {
        let v = Vocabulary::from_tokens(["<pad>", "<unk>", "a", "b"].map(String::from).to_vec());
        assert_eq!(v.encode("a b", 4).ids, [2, 3, 0, 0]);
        assert_eq!(v.encode("", 3).ids, [0, 0, 0]);
        let long: Vec<&str> = (0..60).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let seq = v.encode(&long.join(" "), 50);
        assert_eq!(seq.len(), 50);
        assert_eq!(&seq.ids[..4], &[2, 3, 2, 3]);
        assert!(seq.ids.iter().all(|id| *id != PAD_ID));
    }

    #[test]
    fn serde_round_trip_restores_lookup() {
        let v = Vocabulary::build(["x y z"], 1);
        let restored = Vocabulary::from_tokens(v.tokens().to_vec());
        assert_eq!(restored.id("y"), v.id("y"));
    }

    proptest! {
        #[test]
        fn encode_then_decode_is_identity_in_vocabulary(
            words in proptest::collection::vec("[a-z]{1,6}", 0..20),
            extra in 0usize..10,
        ) {
            let caption = words.join(" ");
            let vocab = Vocabulary::build([caption.as_str()], 1);
            let max_len = words.len() + extra;
            let seq = vocab.encode(&caption, max_len);
            prop_assert_eq!(seq.len(), max_len);
            prop_assert!(seq.ids.iter().all(|id| (*id as usize) < vocab.len()));
            let first_pad = seq.ids.iter().position(|id| *id == PAD_ID).unwrap_or(max_len);
            prop_assert!(seq.ids[first_pad..].iter().all(|id| *id == PAD_ID));
            prop_assert_eq!(vocab.decode(&seq), words);
        }
    }
}
