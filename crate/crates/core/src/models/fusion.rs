//! Early-fusion image + caption classifiers.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{dropout, Activation, BiLstm, Dense, Embedding, Mode};
use crate::models::backbone::{BackboneKey, BackboneProvider, FeatureExtractor};
use crate::models::sequential::{CnnArchitecture, SequentialNet};
use crate::models::visual::HEAD_UNITS;
use crate::models::{Batch, InputKind, Model, TokenBatch};
use crate::params::ParamStore;
use crate::seed::SeededRng;
use crate::tensor::Tensor;
use crate::text::{Vocabulary, DEFAULT_MAX_LEN};

pub const EMBEDDING_DIM: usize = 100;
pub const BILSTM_UNITS: usize = 128;
pub const STACKED_SECOND_UNITS: usize = 64;
pub const STACKED_DROPOUT: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageBranchKind {
    CustomCnn,
    InceptionV3,
    Resnet50,
}

impl ImageBranchKind {
    pub fn backbone(self) -> Option<BackboneKey> {
        match self {
            ImageBranchKind::CustomCnn => None,
            ImageBranchKind::InceptionV3 => Some(BackboneKey::InceptionV3),
            ImageBranchKind::Resnet50 => Some(BackboneKey::Resnet50),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextBranchKind {
    BilstmSingle,
    BilstmStacked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub image_branch: ImageBranchKind,
    pub text_branch: TextBranchKind,
    pub embedding_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl FusionSpec {
    pub fn new(image_branch: ImageBranchKind, text_branch: TextBranchKind, vocab_size: usize) -> Self {
        Self {
            image_branch,
            text_branch,
            embedding_dim: EMBEDDING_DIM,
            vocab_size,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    /// The three pairings the multimodal experiments used.
    pub fn is_paper_pairing(&self) -> bool {
        matches!(
            (self.image_branch, self.text_branch),
            (ImageBranchKind::CustomCnn, TextBranchKind::BilstmSingle)
                | (ImageBranchKind::InceptionV3, TextBranchKind::BilstmSingle)
                | (ImageBranchKind::Resnet50, TextBranchKind::BilstmStacked)
        )
    }
}

/// Image branch ending in its own one-unit sigmoid.
#[derive(Clone, Debug)]
pub enum ImageBranch {
    Cnn(SequentialNet),
    Pretrained {
        extractor: FeatureExtractor,
        hidden: Dense,
        output: Dense,
    },
}

pub const IMAGE_PREFIX: &str = "image.";
pub const IMAGE_BASE_PREFIX: &str = "image.base.";
pub const TEXT_PREFIX: &str = "text.";

/// Adds the branch to `store`; pretrained bases are frozen.
pub fn build_image_branch(
    kind: ImageBranchKind,
    provider: &dyn BackboneProvider,
    store: &mut ParamStore,
    rng: &mut SeededRng,
) -> Result<ImageBranch> {
    let Some(key) = kind.backbone() else {
        let net = SequentialNet::build(
            CnnArchitecture::fusion_cnn_branch(),
            store,
            &format!("{IMAGE_PREFIX}cnn."),
            rng,
        );
        return Ok(ImageBranch::Cnn(net));
    };
    if !provider.supports(key) {
        return Err(Error::UnknownBackbone(key.as_str().into()));
    }
    let extractor = provider.extractor(key, store, IMAGE_BASE_PREFIX)?;
    store.freeze_prefix(IMAGE_BASE_PREFIX);
    let hidden = Dense::new(
        store,
        &format!("{IMAGE_PREFIX}dense"),
        extractor.out_channels,
        HEAD_UNITS,
        Activation::Relu,
        rng,
    );
    let output = Dense::new(store, &format!("{IMAGE_PREFIX}output"), HEAD_UNITS, 1, Activation::Sigmoid, rng);
    Ok(ImageBranch::Pretrained {
        extractor,
        hidden,
        output,
    })
}

impl ImageBranch {
    /// Branch sigmoid output `(n, 1)`.
    pub fn forward(&self, g: &mut Graph<'_>, images: &Tensor, mode: &mut Mode<'_>) -> Var {
        match self {
            ImageBranch::Cnn(net) => {
                let x = g.input(images.clone());
                net.probabilities(g, x, mode)
            }
            ImageBranch::Pretrained {
                extractor,
                hidden,
                output,
            } => {
                let f = extractor.forward(g, images);
                let pooled = g.global_avg_pool(f);
                let h = hidden.forward(g, pooled);
                output.forward(g, h)
            }
        }
    }

    pub fn output_layer(&self) -> &Dense {
        match self {
            ImageBranch::Cnn(net) => net.head(),
            ImageBranch::Pretrained { output, .. } => output,
        }
    }
}

#[derive(Clone, Debug)]
enum Recurrent {
    Single(BiLstm),
    Stacked(BiLstm, BiLstm),
}

/// Trainable embedding, one or two BiLSTMs, one-unit sigmoid.
#[derive(Clone, Debug)]
pub struct TextBranch {
    kind: TextBranchKind,
    embedding: Embedding,
    recurrent: Recurrent,
    output: Dense,
}

pub fn build_text_branch(
    kind: TextBranchKind,
    vocab_size: usize,
    embedding_dim: usize,
    store: &mut ParamStore,
    rng: &mut SeededRng,
) -> Result<TextBranch> {
    if vocab_size < 2 {
        return Err(Error::InvalidPlan(format!("vocabulary of {vocab_size} tokens")));
    }
    let p = |s: &str| format!("{TEXT_PREFIX}{s}");
    let embedding = Embedding::new(store, &p("embedding"), vocab_size, embedding_dim, rng);
    let recurrent = match kind {
        TextBranchKind::BilstmSingle => {
            Recurrent::Single(BiLstm::new(store, &p("bilstm"), embedding_dim, BILSTM_UNITS, false, rng))
        }
        TextBranchKind::BilstmStacked => {
            let first = BiLstm::new(store, &p("bilstm1"), embedding_dim, BILSTM_UNITS, true, rng);
            let second = BiLstm::new(
                store,
                &p("bilstm2"),
                first.output_width(),
                STACKED_SECOND_UNITS,
                false,
                rng,
            );
            Recurrent::Stacked(first, second)
        }
    };
    let width = match &recurrent {
        Recurrent::Single(l) => l.output_width(),
        Recurrent::Stacked(_, l) => l.output_width(),
    };
    let output = Dense::new(store, &p("output"), width, 1, Activation::Sigmoid, rng);
    Ok(TextBranch {
        kind,
        embedding,
        recurrent,
        output,
    })
}

impl TextBranch {
    pub fn kind(&self) -> TextBranchKind {
        self.kind
    }

    /// Width of the final recurrent state fed to the sigmoid.
    pub fn hidden_width(&self) -> usize {
        self.output.inputs
    }

    pub fn layer_units(&self) -> Vec<usize> {
        match &self.recurrent {
            Recurrent::Single(l) => alloc::vec![l.units()],
            Recurrent::Stacked(a, b) => alloc::vec![a.units(), b.units()],
        }
    }

    /// Branch sigmoid output `(n, 1)`.
    pub fn forward(&self, g: &mut Graph<'_>, tokens: &TokenBatch, mode: &mut Mode<'_>) -> Var {
        let (b, t) = (tokens.batch, tokens.len);
        let x = self.embedding.forward(g, &tokens.time_major());
        let h = match &self.recurrent {
            Recurrent::Single(l) => l.apply(g, x, t, b),
            Recurrent::Stacked(first, second) => {
                let seq = first.apply(g, x, t, b);
                let seq = dropout(g, seq, STACKED_DROPOUT, mode);
                second.apply(g, seq, t, b)
            }
        };
        self.output.forward(g, h)
    }
}

/// Both branch sigmoids concatenated into a final one-unit sigmoid.
#[derive(Clone, Debug)]
pub struct FusionModel {
    store: ParamStore,
    spec: FusionSpec,
    vocabulary: Vocabulary,
    image: ImageBranch,
    text: TextBranch,
    fusion: Dense,
}

/// Concatenates the branch outputs `(n, 1)` and `(n, 1)` into `(n, 2)`.
pub fn fuse_branches(g: &mut Graph<'_>, image_out: Var, text_out: Var) -> Result<Var> {
    for (side, v) in [("image", image_out), ("text", text_out)] {
        let shape = g.shape(v);
        if shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "{side} branch output has shape {shape:?}, expected (batch, features)"
            )));
        }
    }
    if g.shape(image_out)[0] != g.shape(text_out)[0] {
        return Err(Error::ShapeMismatch("branch batch sizes differ".into()));
    }
    Ok(g.concat_cols(&[image_out, text_out]))
}

pub fn build_fusion_model(
    spec: FusionSpec,
    vocabulary: Vocabulary,
    provider: &dyn BackboneProvider,
    rng: &mut SeededRng,
) -> Result<FusionModel> {
    if vocabulary.len() != spec.vocab_size {
        return Err(Error::ShapeMismatch(format!(
            "spec vocabulary of {} tokens, got {}",
            spec.vocab_size,
            vocabulary.len()
        )));
    }
    let mut store = ParamStore::new();
    let image = build_image_branch(spec.image_branch, provider, &mut store, rng)?;
    let text = build_text_branch(spec.text_branch, spec.vocab_size, spec.embedding_dim, &mut store, rng)?;
    let fusion = Dense::new(&mut store, "fusion.output", 2, 1, Activation::Sigmoid, rng);
    Ok(FusionModel {
        store,
        spec,
        vocabulary,
        image,
        text,
        fusion,
    })
}

impl FusionModel {
    pub fn spec(&self) -> &FusionSpec {
        &self.spec
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn image_branch(&self) -> &ImageBranch {
        &self.image
    }

    pub fn text_branch(&self) -> &TextBranch {
        &self.text
    }
}

impl Model for FusionModel {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Both
    }

    fn encode_text(&self, captions: &[&str]) -> Option<TokenBatch> {
        let max_len = self.spec.max_len;
        let ids = captions
            .iter()
            .flat_map(|c| self.vocabulary.encode(c, max_len).ids)
            .collect();
        Some(TokenBatch::new(ids, captions.len(), max_len))
    }

    fn features(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let images = batch.images.as_ref().ok_or(Error::MissingInput("image"))?;
        let tokens = batch.tokens.as_ref().ok_or(Error::MissingInput("text"))?;
        let image_out = self.image.forward(g, images, mode);
        let text_out = self.text.forward(g, tokens, mode);
        fuse_branches(g, image_out, text_out)
    }

    fn output_layer(&self) -> &Dense {
        &self.fusion
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::backbone::StubBackboneProvider;
    use crate::seed::Seeds;

    #[test]
    fn supported_pairings() {
        use ImageBranchKind::*;
        use TextBranchKind::*;
        assert!(FusionSpec::new(CustomCnn, BilstmSingle, 10).is_paper_pairing());
        assert!(FusionSpec::new(InceptionV3, BilstmSingle, 10).is_paper_pairing());
        assert!(FusionSpec::new(Resnet50, BilstmStacked, 10).is_paper_pairing());
        assert!(!FusionSpec::new(CustomCnn, BilstmStacked, 10).is_paper_pairing());
    }

    #[test]
    fn text_branches_have_expected_widths() {
        let mut store = ParamStore::new();
        let rng = &mut Seeds::new(0).init_rng();
        let single = build_text_branch(TextBranchKind::BilstmSingle, 20, 100, &mut store, rng).unwrap();
        assert_eq!(single.hidden_width(), 256);
        let stacked = build_text_branch(TextBranchKind::BilstmStacked, 20, 100, &mut store, rng).unwrap();
        assert_eq!(stacked.layer_units(), [128, 64]);
        assert_eq!(stacked.hidden_width(), 128);
        assert!(build_text_branch(TextBranchKind::BilstmSingle, 1, 100, &mut store, rng).is_err());
    }

    #[test]
    fn all_padding_text_gives_finite_probability() {
        let mut store = ParamStore::new();
        let rng = &mut Seeds::new(0).init_rng();
        let branch = build_text_branch(TextBranchKind::BilstmStacked, 5, 8, &mut store, rng).unwrap();
        let mut g = Graph::new(&store);
        let p = branch.forward(&mut g, &TokenBatch::new(alloc::vec![0; 12], 2, 6), &mut Mode::Eval);
        assert_eq!(g.shape(p), &[2, 1]);
        assert!(g.value(p).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn fusion_rejects_rank_mismatch() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[2, 1]));
        let b = g.input(Tensor::zeros(&[2, 1, 1]));
        assert!(matches!(fuse_branches(&mut g, a, b), Err(Error::ShapeMismatch(_))));
        let c = g.input(Tensor::zeros(&[2, 1]));
        let fused = fuse_branches(&mut g, a, c).unwrap();
        assert_eq!(g.shape(fused), &[2, 2]);
    }

    #[test]
    fn fusion_head_has_three_parameters() {
        let vocab = Vocabulary::from_tokens(["<pad>", "<unk>", "a", "b"].map(Into::into).to_vec());
        let spec = FusionSpec::new(ImageBranchKind::Resnet50, TextBranchKind::BilstmStacked, vocab.len());
        let m = build_fusion_model(spec, vocab, &StubBackboneProvider, &mut Seeds::new(0).init_rng()).unwrap();
        let head = m.output_layer();
        let n = m.store().get(head.weight).value.len() + m.store().get(head.bias).value.len();
        assert_eq!(n, 3);
    }
}
