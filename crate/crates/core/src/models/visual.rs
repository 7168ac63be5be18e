//! Image-only classifiers: the from-scratch CNN and frozen-backbone fine-tuning heads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Activation, Dense, Mode};
use crate::models::backbone::{BackboneKey, BackboneProvider, FeatureExtractor};
use crate::models::sequential::{CnnArchitecture, SequentialNet};
use crate::models::{Batch, InputKind, Model};
use crate::params::ParamStore;
use crate::seed::SeededRng;

pub const HEAD_UNITS: usize = 256;

/// A pretrained backbone with a new pooled dense head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneAdapter {
    pub backbone: BackboneKey,
    pub freeze_base: bool,
}

impl BackboneAdapter {
    pub fn frozen(backbone: BackboneKey) -> Self {
        Self {
            backbone,
            freeze_base: true,
        }
    }

    /// Trainable weights of the head alone: `(C*256 + 256) + (256 + 1)`.
    pub fn head_parameter_count(&self) -> usize {
        let c = self.backbone.feature_channels();
        (c * HEAD_UNITS + HEAD_UNITS) + (HEAD_UNITS + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VisualSpec {
    CustomCnn,
    FineTune(BackboneAdapter),
}

/// Four-stage CNN trained from scratch.
#[derive(Clone, Debug)]
pub struct CustomCnn {
    store: ParamStore,
    net: SequentialNet,
}

/// Prefix of every parameter in the custom CNN.
pub const CNN_PREFIX: &str = "cnn.";
/// Prefix of every backbone (base) parameter.
pub const BASE_PREFIX: &str = "base.";

pub fn build_custom_cnn(rng: &mut SeededRng) -> CustomCnn {
    let mut store = ParamStore::new();
    let net = SequentialNet::build(CnnArchitecture::visual_cnn(), &mut store, CNN_PREFIX, rng);
    CustomCnn { store, net }
}

impl CustomCnn {
    pub fn net(&self) -> &SequentialNet {
        &self.net
    }
}

impl Model for CustomCnn {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Image
    }

    fn features(&self, g: &mut Graph<'_>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let images = batch.images.as_ref().ok_or(Error::MissingInput("image"))?;
        let x = g.input(images.clone());
        Ok(self.net.features(g, x, mode, |_, _| {}))
    }

    fn output_layer(&self) -> &Dense {
        self.net.head()
    }
}

/// Backbone, global average pooling, dense 256 (ReLU), dense 1 (sigmoid).
#[derive(Clone, Debug)]
pub struct FineTuneClassifier {
    store: ParamStore,
    adapter: BackboneAdapter,
    extractor: FeatureExtractor,
    hidden: Dense,
    output: Dense,
}

pub fn build_finetune_model(
    adapter: BackboneAdapter,
    provider: &dyn BackboneProvider,
    rng: &mut SeededRng,
) -> Result<FineTuneClassifier> {
    if !provider.supports(adapter.backbone) {
        return Err(Error::UnknownBackbone(adapter.backbone.as_str().into()));
    }
    let mut store = ParamStore::new();
    let extractor = provider.extractor(adapter.backbone, &mut store, BASE_PREFIX)?;
    if adapter.freeze_base {
        store.freeze_prefix(BASE_PREFIX);
    }
    let hidden = Dense::new(
        &mut store,
        "head.dense",
        extractor.out_channels,
        HEAD_UNITS,
        Activation::Relu,
        rng,
    );
    let output = Dense::new(&mut store, "head.output", HEAD_UNITS, 1, Activation::Sigmoid, rng);
    Ok(FineTuneClassifier {
        store,
        adapter,
        extractor,
        hidden,
        output,
    })
}

impl FineTuneClassifier {
    pub fn adapter(&self) -> BackboneAdapter {
        self.adapter
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }
}

impl Model for FineTuneClassifier {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn input_kind(&self) -> InputKind {
        InputKind::Image
    }

    fn features(&self, g: &mut Graph<'_>, batch: &Batch, _mode: &mut Mode<'_>) -> Result<Var> {
        let images = batch.images.as_ref().ok_or(Error::MissingInput("image"))?;
        let features = self.extractor.forward(g, images);
        let pooled = g.global_avg_pool(features);
        Ok(self.hidden.forward(g, pooled))
    }

    fn output_layer(&self) -> &Dense {
        &self.output
    }
}
