//! The nine classifier configurations and the common model interface.

pub mod backbone;
pub mod fusion;
pub mod sequential;
pub mod textual;
pub mod visual;

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Dense, Mode};
use crate::params::ParamStore;
use crate::seed::SeededRng;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

use backbone::{BackboneKey, BackboneProvider};
use fusion::{FusionModel, FusionSpec, ImageBranchKind, TextBranchKind};
use textual::{ModelKey, TextClassifier, TransformerProvider, TransformerSpec, TROLL_LABEL_INDEX};
use visual::{BackboneAdapter, CustomCnn, FineTuneClassifier, VisualSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Image,
    Text,
    Both,
}

impl InputKind {
    pub fn needs_image(self) -> bool {
        matches!(self, InputKind::Image | InputKind::Both)
    }

    pub fn needs_text(self) -> bool {
        matches!(self, InputKind::Text | InputKind::Both)
    }
}

/// Token ids laid out batch-major: `ids[b * len + t]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<u32>, batch: usize, len: usize) -> Self {
        assert_eq!(ids.len(), batch * len);
        Self { ids, batch, len }
    }

    /// The same ids reordered to `ids[t * batch + b]`.
    pub fn time_major(&self) -> Vec<u32> {
        (0..self.len)
            .flat_map(|t| (0..self.batch).map(move |b| self.ids[b * self.len + t]))
            .collect()
    }
}

/// Model-ready inputs for one batch; absent modalities are `None`.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    /// `(n, 150, 150, 3)`
    pub images: Option<Tensor>,
    pub tokens: Option<TokenBatch>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images
            .as_ref()
            .map(|t| t.shape()[0])
            .or(self.tokens.as_ref().map(|t| t.batch))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A binary classifier whose parameters live in its own store.
///
/// `features` produces the input of the output layer; the output layer maps it to the
/// troll logit. A two-unit output layer is read as label scores.
pub trait Model {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn input_kind(&self) -> InputKind;

    /// Caption encoding for text-consuming models.
    fn encode_text(&self, _captions: &[&str]) -> Option<TokenBatch> {
        None
    }

    fn features(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var>;

    fn output_layer(&self) -> &Dense;

    /// Troll logit `(n, 1)`; its sigmoid is the troll probability.
    fn logits(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let h = self.features(g, batch, mode)?;
        Ok(head_logit(g, self.output_layer(), h))
    }
}

/// Applies the output layer's affine map and reduces two label scores to one logit.
pub fn head_logit(g: &mut Graph<'_>, head: &Dense, h: Var) -> Var {
    let z = head.affine(g, h);
    match head.units {
        1 => z,
        2 => {
            let troll = g.slice_cols(z, TROLL_LABEL_INDEX, 1);
            let other = g.slice_cols(z, 1 - TROLL_LABEL_INDEX, 1);
            g.sub(troll, other)
        }
        n => panic!("output layer with {n} units"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Visual,
    Textual,
    Multimodal,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Visual => "visual",
            Approach::Textual => "textual",
            Approach::Multimodal => "multimodal",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "visual" => Ok(Approach::Visual),
            "textual" => Ok(Approach::Textual),
            "multimodal" => Ok(Approach::Multimodal),
            other => Err(Error::InvalidPlan(alloc::format!("unknown approach {other:?}"))),
        }
    }
}

/// Any buildable classifier description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "approach", rename_all = "snake_case")]
pub enum ModelSpec {
    Visual { model: VisualSpec },
    Textual { model: TransformerSpec },
    Multimodal { model: FusionSpec },
}

impl ModelSpec {
    pub fn approach(&self) -> Approach {
        match self {
            ModelSpec::Visual { .. } => Approach::Visual,
            ModelSpec::Textual { .. } => Approach::Textual,
            ModelSpec::Multimodal { .. } => Approach::Multimodal,
        }
    }

    /// The matching [`PaperConfig`], if this spec is one of the nine.
    pub fn paper_config(&self) -> Option<PaperConfig> {
        PaperConfig::ALL.into_iter().find(|c| c.matches(self))
    }
}

/// The nine configurations of the results table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaperConfig {
    Cnn,
    Vgg16,
    Inception,
    Mbert,
    Xlmr,
    Xlnet,
    CnnBilstm,
    InceptionBilstm,
    Resnet50Bilstm,
}

impl PaperConfig {
    pub const ALL: [PaperConfig; 9] = [
        PaperConfig::Cnn,
        PaperConfig::Vgg16,
        PaperConfig::Inception,
        PaperConfig::Mbert,
        PaperConfig::Xlmr,
        PaperConfig::Xlnet,
        PaperConfig::CnnBilstm,
        PaperConfig::InceptionBilstm,
        PaperConfig::Resnet50Bilstm,
    ];

    /// Command-line model key.
    pub fn key(self) -> &'static str {
        match self {
            PaperConfig::Cnn => "cnn",
            PaperConfig::Vgg16 => "vgg16",
            PaperConfig::Inception => "inception",
            PaperConfig::Mbert => "mbert",
            PaperConfig::Xlmr => "xlmr",
            PaperConfig::Xlnet => "xlnet",
            PaperConfig::CnnBilstm => "cnn-bilstm",
            PaperConfig::InceptionBilstm => "inception-bilstm",
            PaperConfig::Resnet50Bilstm => "resnet50-bilstm",
        }
    }

    /// Classifier name as printed in the results table.
    pub fn display_name(self) -> &'static str {
        match self {
            PaperConfig::Cnn => "CNN",
            PaperConfig::Vgg16 => "VGG16",
            PaperConfig::Inception => "Inception",
            PaperConfig::Mbert => "m-BERT",
            PaperConfig::Xlmr => "XLM-R",
            PaperConfig::Xlnet => "XLNet",
            PaperConfig::CnnBilstm => "CNNImage + BiLSTM",
            PaperConfig::InceptionBilstm => "Inception + BiLSTM",
            PaperConfig::Resnet50Bilstm => "ResNet50 + BiLSTM",
        }
    }

    pub fn approach(self) -> Approach {
        match self {
            PaperConfig::Cnn | PaperConfig::Vgg16 | PaperConfig::Inception => Approach::Visual,
            PaperConfig::Mbert | PaperConfig::Xlmr | PaperConfig::Xlnet => Approach::Textual,
            _ => Approach::Multimodal,
        }
    }

    /// `vocab_size` only matters for the multimodal configurations.
    pub fn spec(self, vocab_size: usize) -> ModelSpec {
        let fusion = |i, t| ModelSpec::Multimodal {
            model: FusionSpec::new(i, t, vocab_size),
        };
        let finetune = |b| ModelSpec::Visual {
            model: VisualSpec::FineTune(BackboneAdapter::frozen(b)),
        };
        let textual = |k| ModelSpec::Textual {
            model: TransformerSpec::new(k),
        };
        match self {
            PaperConfig::Cnn => ModelSpec::Visual {
                model: VisualSpec::CustomCnn,
            },
            PaperConfig::Vgg16 => finetune(BackboneKey::Vgg16),
            PaperConfig::Inception => finetune(BackboneKey::InceptionV3),
            PaperConfig::Mbert => textual(ModelKey::Mbert),
            PaperConfig::Xlmr => textual(ModelKey::Xlmr),
            PaperConfig::Xlnet => textual(ModelKey::Xlnet),
            PaperConfig::CnnBilstm => fusion(ImageBranchKind::CustomCnn, TextBranchKind::BilstmSingle),
            PaperConfig::InceptionBilstm => fusion(ImageBranchKind::InceptionV3, TextBranchKind::BilstmSingle),
            PaperConfig::Resnet50Bilstm => fusion(ImageBranchKind::Resnet50, TextBranchKind::BilstmStacked),
        }
    }

    /// Same architecture, ignoring sizes that depend on the corpus.
    pub fn matches(self, spec: &ModelSpec) -> bool {
        match (self.spec(0), spec) {
            (ModelSpec::Multimodal { model: a }, ModelSpec::Multimodal { model: b }) => {
                a.image_branch == b.image_branch
                    && a.text_branch == b.text_branch
                    && a.embedding_dim == b.embedding_dim
            }
            (ModelSpec::Textual { model: a }, ModelSpec::Textual { model: b }) => {
                a.model_key == b.model_key && a.num_labels == b.num_labels
            }
            (a, b) => a == *b,
        }
    }
}

impl fmt::Display for PaperConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for PaperConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        PaperConfig::ALL
            .into_iter()
            .find(|c| c.key() == s || c.display_name().to_ascii_lowercase() == s)
            .ok_or(Error::UnknownModelKey(s))
    }
}

/// Backbone and transformer sources used when building models.
#[derive(Clone, Copy)]
pub struct Providers<'p> {
    pub backbones: &'p dyn BackboneProvider,
    pub transformers: &'p dyn TransformerProvider,
}

/// Any built classifier.
#[derive(Clone, Debug)]
pub enum MemeClassifier {
    CustomCnn(CustomCnn),
    FineTune(FineTuneClassifier),
    Text(TextClassifier),
    Fusion(FusionModel),
}

/// Builds `spec`; multimodal specs need the training vocabulary.
pub fn build_model(
    spec: &ModelSpec,
    providers: Providers<'_>,
    vocabulary: Option<&Vocabulary>,
    rng: &mut SeededRng,
) -> Result<MemeClassifier> {
    Ok(match spec {
        ModelSpec::Visual {
            model: VisualSpec::CustomCnn,
        } => MemeClassifier::CustomCnn(visual::build_custom_cnn(rng)),
        ModelSpec::Visual {
            model: VisualSpec::FineTune(adapter),
        } => MemeClassifier::FineTune(visual::build_finetune_model(*adapter, providers.backbones, rng)?),
        ModelSpec::Textual { model } => {
            MemeClassifier::Text(textual::build_text_classifier(*model, providers.transformers, rng)?)
        }
        ModelSpec::Multimodal { model } => {
            let vocab = vocabulary.ok_or(Error::MissingInput("vocabulary"))?;
            MemeClassifier::Fusion(fusion::build_fusion_model(
                *model,
                vocab.clone(),
                providers.backbones,
                rng,
            )?)
        }
    })
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            MemeClassifier::CustomCnn($m) => $e,
            MemeClassifier::FineTune($m) => $e,
            MemeClassifier::Text($m) => $e,
            MemeClassifier::Fusion($m) => $e,
        }
    };
}

impl Model for MemeClassifier {
    fn store(&self) -> &ParamStore {
        dispatch!(self, m => m.store())
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        dispatch!(self, m => m.store_mut())
    }

    fn input_kind(&self) -> InputKind {
        dispatch!(self, m => m.input_kind())
    }

    fn encode_text(&self, captions: &[&str]) -> Option<TokenBatch> {
        dispatch!(self, m => m.encode_text(captions))
    }

    fn features(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        dispatch!(self, m => m.features(g, batch, mode))
    }

    fn output_layer(&self) -> &Dense {
        dispatch!(self, m => m.output_layer())
    }

    fn logits(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        dispatch!(self, m => m.logits(g, batch, mode))
    }
}
