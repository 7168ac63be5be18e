//! Transformer caption classifiers and the offline stand-in transformer.
//!
//! The stand-in mirrors the interface of a pretrained sequence classifier: a subword
//! tokenizer with the checkpoint family's special-token layout, an encoder, a pooler and a
//! two-label classification head. It is randomly initialized and small enough to train on CPU.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{dropout, Activation, Dense, Embedding, LayerNorm, Mode};
use crate::models::{Batch, InputKind, Model, TokenBatch};
use crate::params::ParamStore;
use crate::seed::SeededRng;
use crate::tensor::Tensor;

pub const TEXT_MAX_LEN: usize = 50;
pub const NUM_LABELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKey {
    Mbert,
    Xlnet,
    Xlmr,
}

impl ModelKey {
    pub const ALL: [ModelKey; 3] = [ModelKey::Mbert, ModelKey::Xlmr, ModelKey::Xlnet];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKey::Mbert => "mbert",
            ModelKey::Xlnet => "xlnet",
            ModelKey::Xlmr => "xlmr",
        }
    }

    /// Default pretrained checkpoint for this key.
    pub fn checkpoint_name(self) -> &'static str {
        match self {
            ModelKey::Mbert => "bert-base-multilingual-cased",
            ModelKey::Xlnet => "xlnet-base-cased",
            ModelKey::Xlmr => "xlm-roberta-base",
        }
    }

    pub fn special_layout(self) -> SpecialLayout {
        match self {
            ModelKey::Mbert => SpecialLayout::ClsFirst,
            ModelKey::Xlmr => SpecialLayout::BosFirst,
            ModelKey::Xlnet => SpecialLayout::ClsLast,
        }
    }

    /// Longest piece the stand-in tokenizer emits. WordPiece vocabularies keep longer
    /// pieces than the SentencePiece ones, so the stand-ins segment differently too.
    pub fn stand_in_piece_chars(self) -> usize {
        match self {
            ModelKey::Mbert => 4,
            ModelKey::Xlmr | ModelKey::Xlnet => 3,
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mbert" | "m-bert" => Ok(ModelKey::Mbert),
            "xlnet" => Ok(ModelKey::Xlnet),
            "xlmr" | "xlm-r" => Ok(ModelKey::Xlmr),
            other => Err(Error::UnknownModelKey(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub model_key: ModelKey,
    pub max_len: usize,
    pub num_labels: usize,
}

impl TransformerSpec {
    pub fn new(model_key: ModelKey) -> Self {
        Self {
            model_key,
            max_len: TEXT_MAX_LEN,
            num_labels: NUM_LABELS,
        }
    }
}

/// Where the special tokens go and which side is padded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialLayout {
    /// `[CLS] text [SEP]`, right padding, pooled at position 0.
    ClsFirst,
    /// `<s> text </s>`, right padding, pooled at position 0.
    BosFirst,
    /// `text <sep> <cls>`, left padding, pooled at the last position.
    ClsLast,
}

pub const SUBWORD_PAD: u32 = 0;
pub const SUBWORD_UNK: u32 = 1;
pub const SUBWORD_START: u32 = 2;
pub const SUBWORD_END: u32 = 3;
const FIRST_PIECE_ID: u32 = 4;

/// Deterministic hashed subword tokenizer used by the stand-in transformers.
///
/// Text is split on whitespace, punctuation becomes its own token, and each word is cut
/// into pieces of at most `piece_chars` characters; continuation pieces hash differently
/// from word-initial ones. Case is preserved.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordTokenizer {
    pub layout: SpecialLayout,
    pub vocab_size: u32,
    pub piece_chars: usize,
}

impl SubwordTokenizer {
    pub fn new(layout: SpecialLayout, vocab_size: u32) -> Self {
        assert!(vocab_size > FIRST_PIECE_ID);
        Self {
            layout,
            vocab_size,
            piece_chars: 4,
        }
    }

    fn piece_id(&self, piece: &str, continuation: bool) -> u32 {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in [continuation as u8].iter().chain(piece.as_bytes()) {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        FIRST_PIECE_ID + (h % (self.vocab_size - FIRST_PIECE_ID) as u64) as u32
    }

    /// Subword ids for `text` without special tokens or truncation.
    pub fn pieces(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let mut current = String::new();
            let flush = |current: &mut String, ids: &mut Vec<u32>| {
                let chars: Vec<char> = current.chars().collect();
                for (i, chunk) in chars.chunks(self.piece_chars).enumerate() {
                    let piece: String = chunk.iter().collect();
                    ids.push(self.piece_id(&piece, i > 0));
                }
                current.clear();
            };
            for c in word.chars() {
                if c.is_ascii_punctuation() {
                    flush(&mut current, &mut ids);
                    let mut buf = [0u8; 4];
                    ids.push(self.piece_id(c.encode_utf8(&mut buf), false));
                } else {
                    current.push(c);
                }
            }
            flush(&mut current, &mut ids);
        }
        ids
    }

    /// Exactly `max_len` ids: truncated content framed by the layout's special tokens.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        assert!(max_len >= 2);
        let mut content = self.pieces(text);
        content.truncate(max_len - 2);
        let pad = max_len - content.len() - 2;
        let mut ids = Vec::with_capacity(max_len);
        match self.layout {
            SpecialLayout::ClsFirst | SpecialLayout::BosFirst => {
                ids.push(SUBWORD_START);
                ids.extend(content);
                ids.push(SUBWORD_END);
                ids.extend(core::iter::repeat_n(SUBWORD_PAD, pad));
            }
            SpecialLayout::ClsLast => {
                ids.extend(core::iter::repeat_n(SUBWORD_PAD, pad));
                ids.extend(content);
                ids.push(SUBWORD_END);
                ids.push(SUBWORD_START);
            }
        }
        ids
    }

    /// Position whose final hidden state is pooled for classification.
    pub fn pooled_position(&self, max_len: usize) -> usize {
        match self.layout {
            SpecialLayout::ClsFirst | SpecialLayout::BosFirst => 0,
            SpecialLayout::ClsLast => max_len - 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandInConfig {
    pub vocab_size: u32,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f32,
}

impl Default for StandInConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2048,
            dim: 32,
            ff_dim: 64,
            max_positions: 64,
            dropout: 0.1,
        }
    }
}

/// One-block transformer encoder with a tanh pooler over the layout's pooled position.
#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    config: StandInConfig,
    tokens: Embedding,
    positions: Embedding,
    embed_norm: LayerNorm,
    query: Dense,
    key: Dense,
    value: Dense,
    attn_out: Dense,
    attn_norm: LayerNorm,
    ff_in: Dense,
    ff_out: Dense,
    ff_norm: LayerNorm,
    pooler: Dense,
}

impl TransformerEncoder {
    pub fn new(config: StandInConfig, store: &mut ParamStore, prefix: &str, rng: &mut SeededRng) -> Self {
        let d = config.dim;
        let p = |s: &str| format!("{prefix}{s}");
        Self {
            tokens: Embedding::new_normal(store, &p("tokens"), config.vocab_size as usize, d, 0.02, rng),
            positions: Embedding::new_normal(store, &p("positions"), config.max_positions, d, 0.02, rng),
            embed_norm: LayerNorm::new(store, &p("embed_norm"), d),
            query: Dense::new(store, &p("attn.query"), d, d, Activation::Linear, rng),
            key: Dense::new(store, &p("attn.key"), d, d, Activation::Linear, rng),
            value: Dense::new(store, &p("attn.value"), d, d, Activation::Linear, rng),
            attn_out: Dense::new(store, &p("attn.out"), d, d, Activation::Linear, rng),
            attn_norm: LayerNorm::new(store, &p("attn_norm"), d),
            ff_in: Dense::new(store, &p("ff.in"), d, config.ff_dim, Activation::Relu, rng),
            ff_out: Dense::new(store, &p("ff.out"), config.ff_dim, d, Activation::Linear, rng),
            ff_norm: LayerNorm::new(store, &p("ff_norm"), d),
            pooler: Dense::new(store, &p("pooler"), d, d, Activation::Tanh, rng),
            config,
        }
    }

    pub fn config(&self) -> StandInConfig {
        self.config
    }

    /// Pooled `(batch, dim)` representation.
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        tokens: &TokenBatch,
        pooled_position: usize,
        mode: &mut Mode<'_>,
    ) -> Var {
        let (b, t, d) = (tokens.batch, tokens.len, self.config.dim);
        assert!(t <= self.config.max_positions);
        let positions: Vec<u32> = (0..b).flat_map(|_| 0..t as u32).collect();
        let tok = self.tokens.forward(g, &tokens.ids);
        let pos = self.positions.forward(g, &positions);
        let x = g.add(tok, pos);
        let x = self.embed_norm.forward(g, x);
        let x = dropout(g, x, self.config.dropout, mode);

        let q = self.query.forward(g, x);
        let q = g.reshape(q, &[b, t, d]);
        let k = self.key.forward(g, x);
        let k = g.reshape(k, &[b, t, d]);
        let v = self.value.forward(g, x);
        let v = g.reshape(v, &[b, t, d]);
        let scores = g.batch_matmul(q, k, true);
        let scores = g.scale(scores, 1.0 / libm::sqrtf(d as f32));
        let mut mask = vec![0.0f32; b * t * t];
        for bi in 0..b {
            for j in 0..t {
                if tokens.ids[bi * t + j] == SUBWORD_PAD {
                    for i in 0..t {
                        mask[(bi * t + i) * t + j] = -1e4;
                    }
                }
            }
        }
        let mask = g.input(Tensor::new(&[b, t, t], mask));
        let scores = g.add(scores, mask);
        let attn = g.softmax(scores);
        let ctx = g.batch_matmul(attn, v, false);
        let ctx = g.reshape(ctx, &[b * t, d]);
        let ctx = self.attn_out.forward(g, ctx);
        let ctx = dropout(g, ctx, self.config.dropout, mode);
        let x = g.add(x, ctx);
        let x = self.attn_norm.forward(g, x);

        let ff = self.ff_in.forward(g, x);
        let ff = self.ff_out.forward(g, ff);
        let ff = dropout(g, ff, self.config.dropout, mode);
        let x = g.add(x, ff);
        let x = self.ff_norm.forward(g, x);

        let rows: Vec<u32> = (0..b).map(|bi| (bi * t + pooled_position) as u32).collect();
        let table = x;
        let pooled = gather_rows(g, table, &rows);
        self.pooler.forward(g, pooled)
    }
}

fn gather_rows(g: &mut Graph<'_>, x: Var, rows: &[u32]) -> Var {
    let parts: Vec<Var> = rows.iter().map(|r| g.slice_rows(x, *r as usize, 1)).collect();
    g.concat_rows(&parts)
}

/// Supplies a subword tokenizer and encoder for a transformer model key.
pub trait TransformerProvider {
    fn supports(&self, key: ModelKey) -> bool;

    fn load(
        &self,
        spec: &TransformerSpec,
        store: &mut ParamStore,
        rng: &mut SeededRng,
    ) -> Result<(SubwordTokenizer, TransformerEncoder)>;
}

/// Offline provider returning a small randomly initialized encoder per key.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubTransformerProvider {
    pub config: StandInConfig,
}

impl TransformerProvider for StubTransformerProvider {
    fn supports(&self, _key: ModelKey) -> bool {
        true
    }

    fn load(
        &self,
        spec: &TransformerSpec,
        store: &mut ParamStore,
        rng: &mut SeededRng,
    ) -> Result<(SubwordTokenizer, TransformerEncoder)> {
        if spec.max_len > self.config.max_positions {
            return Err(Error::InvalidPlan(format!(
                "max_len {} exceeds the encoder's {} positions",
                spec.max_len, self.config.max_positions
            )));
        }
        let mut tokenizer = SubwordTokenizer::new(spec.model_key.special_layout(), self.config.vocab_size);
        tokenizer.piece_chars = spec.model_key.stand_in_piece_chars();
        let encoder = TransformerEncoder::new(self.config, store, "encoder.", rng);
        Ok((tokenizer, encoder))
    }
}

/// Sequence classifier whose troll probability is the softmax mass on the troll label.
#[derive(Clone, Debug)]
pub struct TextClassifier {
    store: ParamStore,
    spec: TransformerSpec,
    tokenizer: SubwordTokenizer,
    encoder: TransformerEncoder,
    classifier: Dense,
}

/// Index of the troll label in the two-way classification head.
pub const TROLL_LABEL_INDEX: usize = 1;

pub fn build_text_classifier(
    spec: TransformerSpec,
    provider: &dyn TransformerProvider,
    rng: &mut SeededRng,
) -> Result<TextClassifier> {
    if !provider.supports(spec.model_key) {
        return Err(Error::UnknownModelKey(spec.model_key.as_str().into()));
    }
    if spec.num_labels != NUM_LABELS {
        return Err(Error::InvalidPlan(format!("{} labels requested, 2 supported", spec.num_labels)));
    }
    let mut store = ParamStore::new();
    let (tokenizer, encoder) = provider.load(&spec, &mut store, rng)?;
    let classifier = Dense::new(
        &mut store,
        "classifier",
        encoder.config().dim,
        NUM_LABELS,
        Activation::Linear,
        rng,
    );
    Ok(TextClassifier {
        store,
        spec,
        tokenizer,
        encoder,
        classifier,
    })
}

impl TextClassifier {
    pub fn spec(&self) -> &TransformerSpec {
        &self.spec
    }

    pub fn tokenizer(&self) -> &SubwordTokenizer {
        &self.tokenizer
    }

    pub fn encode(&self, caption: &str) -> Vec<u32> {
        self.tokenizer.encode(caption, self.spec.max_len)
    }
}

impl Model for TextClassifier {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Text
    }

    fn encode_text(&self, captions: &[&str]) -> Option<TokenBatch> {
        let ids = captions.iter().flat_map(|c| self.encode(c)).collect();
        Some(TokenBatch::new(ids, captions.len(), self.spec.max_len))
    }

    /// Pooled, dropped-out encoder output; the two-label head's troll-minus-other score
    /// difference is the logit, so its sigmoid equals the softmax troll mass.
    fn features(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let tokens = batch.tokens.as_ref().ok_or(Error::MissingInput("text"))?;
        let pos = self.tokenizer.pooled_position(tokens.len);
        let pooled = self.encoder.forward(g, tokens, pos, mode);
        Ok(dropout(g, pooled, self.encoder.config().dropout, mode))
    }

    fn output_layer(&self) -> &Dense {
        &self.classifier
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_frame_content_with_special_tokens() {
        let bert = SubwordTokenizer::new(SpecialLayout::ClsFirst, 512);
        let ids = bert.encode("hi there", 8);
        assert_eq!(ids.len(), 8);
        assert_eq!(ids[0], SUBWORD_START);
        let end = ids.iter().position(|i| *i == SUBWORD_END).unwrap();
        assert!(ids[end + 1..].iter().all(|i| *i == SUBWORD_PAD));

        let xlnet = SubwordTokenizer::new(SpecialLayout::ClsLast, 512);
        let ids = xlnet.encode("hi there", 8);
        assert_eq!(ids[7], SUBWORD_START);
        assert_eq!(ids[6], SUBWORD_END);
        assert_eq!(ids[0], SUBWORD_PAD);
        assert_eq!(xlnet.pooled_position(8), 7);
    }

    #[test]
    fn long_text_truncates_to_max_len() {
        let tok = SubwordTokenizer::new(SpecialLayout::BosFirst, 512);
        let text = "word ".repeat(80);
        assert_eq!(tok.pieces(&text).len(), 80);
        let ids = tok.encode(&text, TEXT_MAX_LEN);
        assert_eq!(ids.len(), TEXT_MAX_LEN);
        assert_eq!(ids[TEXT_MAX_LEN - 1], SUBWORD_END);
        assert!(!ids.contains(&SUBWORD_PAD));
    }

    #[test]
    fn empty_caption_is_special_tokens_only() {
        let tok = SubwordTokenizer::new(SpecialLayout::ClsFirst, 512);
        let ids = tok.encode("", 6);
        assert_eq!(ids, [SUBWORD_START, SUBWORD_END, 0, 0, 0, 0]);
    }

    #[test]
    fn tokenizer_is_case_sensitive_and_splits_punctuation() {
        let tok = SubwordTokenizer::new(SpecialLayout::ClsFirst, 4096);
        assert_ne!(tok.pieces("Troll"), tok.pieces("troll"));
        assert_eq!(tok.pieces("yaaru?e").len(), 4); // "yaar", "##u", "?", "e"
        assert!(tok.pieces("anything at all").iter().all(|i| *i >= FIRST_PIECE_ID && *i < 4096));
    }

    #[test]
    fn model_keys_map_to_checkpoints() {
        assert_eq!(ModelKey::Xlnet.checkpoint_name(), "xlnet-base-cased");
        assert_eq!(ModelKey::Mbert.checkpoint_name(), "bert-base-multilingual-cased");
        assert_eq!(ModelKey::Xlmr.checkpoint_name(), "xlm-roberta-base");
        assert!(matches!("gpt2".parse::<ModelKey>(), Err(Error::UnknownModelKey(_))));
    }
}
