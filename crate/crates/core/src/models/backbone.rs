//! Pretrained feature-extractor backbones and their providers.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{Activation, Conv2d};
use crate::params::ParamStore;
use crate::seed::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKey {
    Vgg16,
    InceptionV3,
    Resnet50,
}

impl BackboneKey {
    pub const ALL: [BackboneKey; 3] = [BackboneKey::Vgg16, BackboneKey::InceptionV3, BackboneKey::Resnet50];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKey::Vgg16 => "vgg16",
            BackboneKey::InceptionV3 => "inception_v3",
            BackboneKey::Resnet50 => "resnet50",
        }
    }

    /// Channel width of the headless backbone's final feature map.
    pub fn feature_channels(self) -> usize {
        match self {
            BackboneKey::Vgg16 => 512,
            BackboneKey::InceptionV3 | BackboneKey::Resnet50 => 2048,
        }
    }

    /// The input normalization each backbone was pretrained with.
    pub fn preprocessing(self) -> Preprocess {
        match self {
            BackboneKey::Vgg16 | BackboneKey::Resnet50 => Preprocess::Caffe,
            BackboneKey::InceptionV3 => Preprocess::SignedUnit,
        }
    }
}

impl fmt::Display for BackboneKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vgg16" => Ok(BackboneKey::Vgg16),
            "inception_v3" | "inceptionv3" | "inception" => Ok(BackboneKey::InceptionV3),
            "resnet50" => Ok(BackboneKey::Resnet50),
            other => Err(Error::UnknownBackbone(other.to_string())),
        }
    }
}

/// Backbone-specific input normalization, applied to `[0, 1]` images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// RGB to BGR, scale to `[0, 255]`, subtract the ImageNet channel means.
    Caffe,
    /// Scale to `[-1, 1]`.
    SignedUnit,
}

const CAFFE_BGR_MEAN: [f32; 3] = [103.939, 116.779, 123.68];

impl Preprocess {
    pub fn apply(self, images: &Tensor) -> Tensor {
        let mut out = images.clone();
        match self {
            Preprocess::Caffe => {
                for px in out.data_mut().chunks_mut(3) {
                    let (r, g, b) = (px[0] * 255.0, px[1] * 255.0, px[2] * 255.0);
                    px[0] = b - CAFFE_BGR_MEAN[0];
                    px[1] = g - CAFFE_BGR_MEAN[1];
                    px[2] = r - CAFFE_BGR_MEAN[2];
                }
            }
            Preprocess::SignedUnit => {
                for v in out.data_mut() {
                    *v = *v * 2.0 - 1.0;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub enum ExtractorStage {
    Conv(Conv2d),
    MaxPool(usize),
}

/// A headless convolutional backbone whose parameters live in a model's store.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub key: BackboneKey,
    pub stages: Vec<ExtractorStage>,
    pub out_channels: usize,
    /// Name prefix shared by every backbone parameter.
    pub prefix: String,
}

impl FeatureExtractor {
    /// Normalizes `(n, 150, 150, 3)` images and returns the `(n, h, w, c)` feature map.
    pub fn forward(&self, g: &mut Graph<'_>, images: &Tensor) -> Var {
        let x = self.key.preprocessing().apply(images);
        let mut h = g.input(x);
        for stage in &self.stages {
            h = match stage {
                ExtractorStage::Conv(c) => c.forward(g, h),
                ExtractorStage::MaxPool(w) => g.max_pool(h, *w),
            };
        }
        h
    }
}

/// Supplies backbone feature extractors by key.
pub trait BackboneProvider {
    fn supports(&self, key: BackboneKey) -> bool;

    /// Adds the backbone's parameters to `store` under `prefix` and returns the extractor.
    fn extractor(&self, key: BackboneKey, store: &mut ParamStore, prefix: &str) -> Result<FeatureExtractor>;
}

/// Offline stand-in backbones: small fixed-weight conv stacks with the real output width.
///
/// Weights depend only on the backbone key, playing the role of fixed pretrained weights.
/// Output is `(n, 18, 18, C)` for `150 x 150` input, with `C` the real backbone's width.
#[derive(Clone, Copy, Debug, Default)]
pub struct StubBackboneProvider;

impl StubBackboneProvider {
    fn key_seed(key: BackboneKey) -> u64 {
        match key {
            BackboneKey::Vgg16 => 0x5647_4731,
            BackboneKey::InceptionV3 => 0x494e_4333,
            BackboneKey::Resnet50 => 0x5253_3530,
        }
    }
}

impl BackboneProvider for StubBackboneProvider {
    fn supports(&self, _key: BackboneKey) -> bool {
        true
    }

    fn extractor(&self, key: BackboneKey, store: &mut ParamStore, prefix: &str) -> Result<FeatureExtractor> {
        let mut rng = SeededRng::seed_from_u64(Self::key_seed(key));
        let channels = key.feature_channels();
        let stages = alloc::vec![
            ExtractorStage::Conv(Conv2d::new(
                store,
                &format!("{prefix}block1"),
                3,
                16,
                3,
                2,
                Activation::Relu,
                &mut rng,
            )),
            ExtractorStage::MaxPool(2),
            ExtractorStage::Conv(Conv2d::new(
                store,
                &format!("{prefix}block2"),
                16,
                32,
                3,
                2,
                Activation::Relu,
                &mut rng,
            )),
            ExtractorStage::Conv(Conv2d::new(
                store,
                &format!("{prefix}block3"),
                32,
                channels,
                1,
                1,
                Activation::Relu,
                &mut rng,
            )),
        ];
        Ok(FeatureExtractor {
            key,
            stages,
            out_channels: channels,
            prefix: prefix.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_rejects_unknown() {
        assert_eq!("vgg16".parse::<BackboneKey>().unwrap(), BackboneKey::Vgg16);
        assert_eq!("inception_v3".parse::<BackboneKey>().unwrap(), BackboneKey::InceptionV3);
        assert_eq!(
            "alexnet".parse::<BackboneKey>().unwrap_err(),
            Error::UnknownBackbone("alexnet".into())
        );
    }

    #[test]
    fn stub_extractor_emits_real_channel_width() {
        for key in BackboneKey::ALL {
            let mut store = ParamStore::new();
            let ex = StubBackboneProvider.extractor(key, &mut store, "base.").unwrap();
            let mut g = Graph::new(&store);
            let y = ex.forward(&mut g, &Tensor::full(&[2, 150, 150, 3], 0.5));
            assert_eq!(g.shape(y), &[2, 18, 18, key.feature_channels()]);
        }
    }

    #[test]
    fn stub_weights_depend_only_on_key() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        StubBackboneProvider.extractor(BackboneKey::Resnet50, &mut a, "x.").unwrap();
        StubBackboneProvider.extractor(BackboneKey::Resnet50, &mut b, "x.").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn caffe_preprocessing_swaps_channels_and_centers() {
        let img = Tensor::new(&[1, 1, 1, 3], alloc::vec![1.0, 0.0, 0.0]);
        let out = Preprocess::Caffe.apply(&img);
        assert_eq!(out.data(), &[-103.939, -116.779, 255.0 - 123.68]);
        let out = Preprocess::SignedUnit.apply(&img);
        assert_eq!(out.data(), &[1.0, -1.0, -1.0]);
    }
}
