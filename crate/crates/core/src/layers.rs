//! Keras-style layers expressed as graph builders over parameters in a [`ParamStore`].

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{glorot_uniform, normal, orthogonal, ParamId, ParamStore};
use crate::seed::SeededRng;
use crate::tensor::Tensor;

/// Whether a forward pass is training (dropout active) or inference.
pub enum Mode<'r> {
    Train(&'r mut SeededRng),
    Eval,
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph<'_>, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Tanh => g.tanh(x),
        }
    }
}

/// Fully connected layer, `y = act(x W + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
    pub inputs: usize,
    pub units: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        units: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            glorot_uniform(&[inputs, units], inputs, units, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[units]), true);
        Self {
            weight,
            bias,
            activation,
            inputs,
            units,
        }
    }

    /// The affine part only, before the activation.
    pub fn affine(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let h = g.matmul(x, w);
        g.add_bias(h, b)
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let h = self.affine(g, x);
        self.activation.apply(g, h)
    }
}

/// Square-kernel valid convolution with an activation.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub size: usize,
    pub stride: usize,
    pub filters: usize,
    pub activation: Activation,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: usize,
        size: usize,
        stride: usize,
        activation: Activation,
        rng: &mut SeededRng,
    ) -> Self {
        let fan_in = size * size * in_channels;
        let fan_out = size * size * filters;
        let kernel = store.add(
            format!("{name}.kernel"),
            glorot_uniform(&[size, size, in_channels, filters], fan_in, fan_out, rng),
            true,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[filters]), true);
        Self {
            kernel,
            bias,
            size,
            stride,
            filters,
            activation,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (k, b) = (g.param(self.kernel), g.param(self.bias));
        let y = g.conv2d(x, k, b, self.stride);
        self.activation.apply(g, y)
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side - self.size) / self.stride + 1
    }
}

/// Token embedding table; row 0 is the padding id but is trained like any other row.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub dim: usize,
    pub vocab_size: usize,
}

impl Embedding {
    /// Keras-default uniform(-0.05, 0.05) initialization.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let table = store.add(
            format!("{name}.table"),
            crate::params::uniform(&[vocab_size, dim], 0.05, rng),
            true,
        );
        Self {
            table,
            dim,
            vocab_size,
        }
    }

    /// Normal(0, std) initialization, as transformer embeddings use.
    pub fn new_normal(
        store: &mut ParamStore,
        name: &str,
        vocab_size: usize,
        dim: usize,
        std: f32,
        rng: &mut SeededRng,
    ) -> Self {
        let table = store.add(
            format!("{name}.table"),
            normal(&[vocab_size, dim], std, rng),
            true,
        );
        Self {
            table,
            dim,
            vocab_size,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, ids: &[u32]) -> Var {
        let t = g.param(self.table);
        g.gather(t, ids)
    }
}

/// Inverted dropout; identity outside training.
pub fn dropout(g: &mut Graph<'_>, x: Var, rate: f32, mode: &mut Mode<'_>) -> Var {
    match mode {
        Mode::Eval => x,
        Mode::Train(rng) => {
            if rate <= 0.0 {
                return x;
            }
            let keep = 1.0 - rate;
            let n = g.value(x).len();
            let mask = (0..n)
                .map(|_| if rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            g.dropout_with_mask(x, mask)
        }
    }
}

/// Single-direction LSTM with Keras gate order (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_kernel: ParamId,
    pub recurrent_kernel: ParamId,
    pub bias: ParamId,
    pub units: usize,
}

impl Lstm {
    /// Glorot-uniform input kernel, orthogonal recurrent kernel, forget-gate bias of 1.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        units: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let input_kernel = store.add(
            format!("{name}.input_kernel"),
            glorot_uniform(&[inputs, 4 * units], inputs, 4 * units, rng),
            true,
        );
        let recurrent_kernel = store.add(
            format!("{name}.recurrent_kernel"),
            orthogonal(units, 4 * units, rng),
            true,
        );
        let mut bias = Tensor::zeros(&[4 * units]);
        bias.data_mut()[units..2 * units].fill(1.0);
        let bias = store.add(format!("{name}.bias"), bias, true);
        Self {
            input_kernel,
            recurrent_kernel,
            bias,
            units,
        }
    }

    /// Runs over a time-major sequence `(steps * batch, features)`.
    ///
    /// Returns the hidden state for every time index (indexed by time, not processing order).
    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        steps: usize,
        batch: usize,
        reverse: bool,
    ) -> Vec<Var> {
        let h_units = self.units;
        let (wi, wr, b) = (
            g.param(self.input_kernel),
            g.param(self.recurrent_kernel),
            g.param(self.bias),
        );
        let projected = g.matmul(x, wi);
        let projected = g.add_bias(projected, b);
        let mut h = g.input(Tensor::zeros(&[batch, h_units]));
        let mut c = g.input(Tensor::zeros(&[batch, h_units]));
        let mut outputs: Vec<Option<Var>> = (0..steps).map(|_| None).collect();
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let xt = g.slice_rows(projected, t * batch, batch);
            let rec = g.matmul(h, wr);
            let z = g.add(xt, rec);
            let i = g.slice_cols(z, 0, h_units);
            let i = g.sigmoid(i);
            let f = g.slice_cols(z, h_units, h_units);
            let f = g.sigmoid(f);
            let cand = g.slice_cols(z, 2 * h_units, h_units);
            let cand = g.tanh(cand);
            let o = g.slice_cols(z, 3 * h_units, h_units);
            let o = g.sigmoid(o);
            let keep = g.mul(f, c);
            let write = g.mul(i, cand);
            c = g.add(keep, write);
            let ct = g.tanh(c);
            h = g.mul(o, ct);
            outputs[t] = Some(h);
        }
        outputs.into_iter().map(|o| o.expect("every step visited")).collect()
    }
}

/// Bidirectional LSTM; forward and backward states are concatenated (forward first).
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
    pub return_sequences: bool,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        units: usize,
        return_sequences: bool,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            forward: Lstm::new(store, &format!("{name}.forward"), inputs, units, rng),
            backward: Lstm::new(store, &format!("{name}.backward"), inputs, units, rng),
            return_sequences,
        }
    }

    pub fn units(&self) -> usize {
        self.forward.units
    }

    pub fn output_width(&self) -> usize {
        2 * self.forward.units
    }

    /// `(steps * batch, features)` time-major in; either the same layout with `2 * units`
    /// features, or `(batch, 2 * units)` final states.
    pub fn apply(&self, g: &mut Graph<'_>, x: Var, steps: usize, batch: usize) -> Var {
        let fwd = self.forward.forward(g, x, steps, batch, false);
        let bwd = self.backward.forward(g, x, steps, batch, true);
        if self.return_sequences {
            let per_step: Vec<Var> = fwd
                .iter()
                .zip(&bwd)
                .map(|(f, b)| g.concat_cols(&[*f, *b]))
                .collect();
            g.concat_rows(&per_step)
        } else {
            // backward direction finishes at t = 0
            g.concat_cols(&[fwd[steps - 1], bwd[0]])
        }
    }
}

/// Learned layer-normalization scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0), true),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim]), true),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seeds;

    #[test]
    fn bilstm_final_state_width_doubles_units() {
        let mut store = ParamStore::new();
        let mut rng = Seeds::new(0).init_rng();
        let layer = BiLstm::new(&mut store, "bi", 5, 7, false, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full(&[3 * 2, 5], 0.1));
        let y = layer.apply(&mut g, x, 3, 2);
        assert_eq!(g.shape(y), &[2, 14]);
    }

    #[test]
    fn bilstm_sequence_output_is_time_major() {
        let mut store = ParamStore::new();
        let mut rng = Seeds::new(0).init_rng();
        let layer = BiLstm::new(&mut store, "bi", 4, 3, true, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full(&[5 * 2, 4], 0.2));
        let y = layer.apply(&mut g, x, 5, 2);
        assert_eq!(g.shape(y), &[10, 6]);
    }

    #[test]
    fn lstm_forget_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let mut rng = Seeds::new(0).init_rng();
        let lstm = Lstm::new(&mut store, "l", 2, 4, &mut rng);
        let b = store.get(lstm.bias).value.data();
        assert_eq!(&b[0..4], &[0.0; 4]);
        assert_eq!(&b[4..8], &[1.0; 4]);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_scaled_in_train() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full(&[1, 1000], 1.0));
        let same = dropout(&mut g, x, 0.2, &mut Mode::Eval);
        assert_eq!(same, x);
        let mut rng = Seeds::new(1).dropout_rng();
        let d = dropout(&mut g, x, 0.2, &mut Mode::Train(&mut rng));
        let vals = g.value(d).data();
        assert!(vals.iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-6));
        let kept = vals.iter().filter(|v| **v > 0.0).count();
        assert!((700..900).contains(&kept));
    }
}
