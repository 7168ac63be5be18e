//! Descriptor-driven convolutional stacks ending in a one-unit sigmoid layer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::layers::{dropout, Activation, Conv2d, Dense, Mode};
use crate::params::ParamStore;
use crate::seed::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerDesc {
    Conv {
        filters: usize,
        kernel: usize,
        activation: Activation,
    },
    MaxPool {
        window: usize,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f32,
    },
}

/// Ordered layer descriptors of a sequential CNN over `150 x 150 x 3` input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnArchitecture {
    pub input: [usize; 3],
    pub layers: Vec<LayerDesc>,
}

const RELU_CONV3: fn(usize) -> LayerDesc = |filters| LayerDesc::Conv {
    filters,
    kernel: 3,
    activation: Activation::Relu,
};

impl CnnArchitecture {
    fn conv_pool_stack(filters: &[usize]) -> Vec<LayerDesc> {
        filters
            .iter()
            .flat_map(|f| [RELU_CONV3(*f), LayerDesc::MaxPool { window: 2 }])
            .collect()
    }

    /// The visual-approach CNN: four 3x3 conv + 2x2 pool stages (32, 64, 128, 128 filters),
    /// dense 512, dropout 0.1, sigmoid output.
    pub fn visual_cnn() -> Self {
        let mut layers = Self::conv_pool_stack(&[32, 64, 128, 128]);
        layers.extend([
            LayerDesc::Flatten,
            LayerDesc::Dense {
                units: 512,
                activation: Activation::Relu,
            },
            LayerDesc::Dropout { rate: 0.1 },
            LayerDesc::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ]);
        Self {
            input: [150, 150, 3],
            layers,
        }
    }

    /// The fusion image branch: conv stages of 32, 64, 128, 64 filters, dense 256, sigmoid output.
    pub fn fusion_cnn_branch() -> Self {
        let mut layers = Self::conv_pool_stack(&[32, 64, 128, 64]);
        layers.extend([
            LayerDesc::Flatten,
            LayerDesc::Dense {
                units: 256,
                activation: Activation::Relu,
            },
            LayerDesc::Dense {
                units: 1,
                activation: Activation::Sigmoid,
            },
        ]);
        Self {
            input: [150, 150, 3],
            layers,
        }
    }

    /// Output shape (without batch axis) after each layer, by shape arithmetic on descriptors.
    pub fn stage_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape: Vec<usize> = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = match *layer {
                LayerDesc::Conv {
                    filters, kernel, ..
                } => vec![shape[0] - kernel + 1, shape[1] - kernel + 1, filters],
                LayerDesc::MaxPool { window } => {
                    vec![shape[0] / window, shape[1] / window, shape[2]]
                }
                LayerDesc::Flatten => vec![shape.iter().product()],
                LayerDesc::Dense { units, .. } => vec![units],
                LayerDesc::Dropout { .. } => shape,
            };
            out.push(shape.clone());
        }
        out
    }

    pub fn flatten_width(&self) -> Option<usize> {
        self.layers
            .iter()
            .zip(self.stage_shapes())
            .find(|(l, _)| matches!(l, LayerDesc::Flatten))
            .map(|(_, s)| s[0])
    }
}

#[derive(Clone, Debug)]
enum Built {
    Conv(Conv2d),
    MaxPool(usize),
    Flatten,
    Dense(Dense),
    Dropout(f32),
}

/// A built [`CnnArchitecture`]; the last descriptor must be a one-unit sigmoid dense layer.
#[derive(Clone, Debug)]
pub struct SequentialNet {
    arch: CnnArchitecture,
    body: Vec<Built>,
    head: Dense,
}

impl SequentialNet {
    pub fn build(
        arch: CnnArchitecture,
        store: &mut ParamStore,
        prefix: &str,
        rng: &mut SeededRng,
    ) -> Self {
        let mut channels = arch.input[2];
        let mut width = 0;
        let mut body = Vec::new();
        let shapes = arch.stage_shapes();
        let (last, rest) = arch.layers.split_last().expect("non-empty architecture");
        let (mut conv_i, mut dense_i) = (0, 0);
        for (layer, shape) in rest.iter().zip(&shapes) {
            match *layer {
                LayerDesc::Conv {
                    filters,
                    kernel,
                    activation,
                } => {
                    conv_i += 1;
                    let name = format!("{prefix}conv{conv_i}");
                    body.push(Built::Conv(Conv2d::new(
                        store, &name, channels, filters, kernel, 1, activation, rng,
                    )));
                    channels = filters;
                }
                LayerDesc::MaxPool { window } => body.push(Built::MaxPool(window)),
                LayerDesc::Flatten => {
                    width = shape[0];
                    body.push(Built::Flatten);
                }
                LayerDesc::Dense { units, activation } => {
                    dense_i += 1;
                    let name = format!("{prefix}dense{dense_i}");
                    body.push(Built::Dense(Dense::new(store, &name, width, units, activation, rng)));
                    width = units;
                }
                LayerDesc::Dropout { rate } => body.push(Built::Dropout(rate)),
            }
        }
        let LayerDesc::Dense { units, activation } = *last else {
            panic!("architecture must end in a dense layer");
        };
        assert_eq!((units, activation), (1, Activation::Sigmoid));
        let head = Dense::new(store, &format!("{prefix}output"), width, 1, activation, rng);
        Self { arch, body, head }
    }

    pub fn architecture(&self) -> &CnnArchitecture {
        &self.arch
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Everything before the output layer. `trace` receives every intermediate node.
    pub fn features(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        mode: &mut Mode<'_>,
        mut trace: impl FnMut(&Graph<'_>, Var),
    ) -> Var {
        let mut h = x;
        for layer in &self.body {
            h = match layer {
                Built::Conv(c) => c.forward(g, h),
                Built::MaxPool(w) => g.max_pool(h, *w),
                Built::Flatten => g.flatten(h),
                Built::Dense(d) => d.forward(g, h),
                Built::Dropout(rate) => dropout(g, h, *rate, mode),
            };
            trace(g, h);
        }
        h
    }

    /// Pre-sigmoid output `(n, 1)`.
    pub fn logits(&self, g: &mut Graph<'_>, x: Var, mode: &mut Mode<'_>) -> Var {
        let h = self.features(g, x, mode, |_, _| {});
        self.head.affine(g, h)
    }

    /// Sigmoid output `(n, 1)`.
    pub fn probabilities(&self, g: &mut Graph<'_>, x: Var, mode: &mut Mode<'_>) -> Var {
        let z = self.logits(g, x, mode);
        g.sigmoid(z)
    }

    /// Per-layer output shapes (batch axis included) observed on an actual forward pass.
    pub fn traced_shapes(&self, store: &ParamStore, batch: usize) -> Vec<Vec<usize>> {
        let [h, w, c] = self.arch.input;
        let mut g = Graph::new(store);
        let x = g.input(Tensor::zeros(&[batch, h, w, c]));
        let mut shapes = Vec::new();
        let f = self.features(&mut g, x, &mut Mode::Eval, |g, v| shapes.push(g.shape(v).to_vec()));
        let z = self.head.affine(&mut g, f);
        shapes.push(g.shape(z).to_vec());
        shapes
    }
}
