//! Define-by-run reverse-mode autodiff over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters are borrowed from a
//! [`ParamStore`] rather than copied; frozen parameters never receive gradients and no
//! gradient work is done for subgraphs that only depend on constants or frozen weights.

mod kernels;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

pub use kernels::ConvGeometry;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: ConvGeometry,
        cols: Option<Vec<f32>>,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    Reshape(Var),
    Dropout {
        input: Var,
        mask: Vec<f32>,
    },
    Gather {
        table: Var,
        ids: Vec<u32>,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BatchMatMul {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Softmax(Var),
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<f32>,
        inv_std: Vec<f32>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f32>,
    },
}

struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the trainable parameters it touched.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    nodes: Vec<Node>,
    param_vars: BTreeMap<ParamId, Var>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => &self.store.get(*id).value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; never differentiated.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            requires_grad: self.store.get(id).trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `(m, k) x (k, n) -> (m, n)`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0], "matmul {sa:?} x {sb:?}");
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        self.push(Tensor::new(&[m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// Adds a bias vector along the trailing axis.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let f = self.value(bias).len();
        assert_eq!(self.value(x).last_dim(), f);
        let mut out = self.value(x).clone();
        let b = self.value(bias).data();
        for row in out.data_mut().chunks_mut(f) {
            for (o, v) in row.iter_mut().zip(b) {
                *o += *v;
            }
        }
        self.push(out, Op::AddBias(x, bias), &[x, bias])
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape(), data)
    }

    fn map(&self, x: Var, f: impl Fn(f32) -> f32) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape(), t.data().iter().map(|v| f(*v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let out = self.map(x, |v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.map(x, |v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.map(x, sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.map(x, libm::tanhf);
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Valid (unpadded) 2-D convolution over NHWC input with a `[k, k, c_in, c_out]` kernel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Var {
        let xs = self.shape(input);
        let ks = self.shape(kernel);
        assert!(xs.len() == 4 && ks.len() == 4 && ks[0] == ks[1] && ks[2] == xs[3]);
        let geometry = ConvGeometry {
            batch: xs[0],
            height: xs[1],
            width: xs[2],
            in_channels: xs[3],
            kernel: ks[0],
            stride,
            out_channels: ks[3],
        };
        assert!(geometry.height >= geometry.kernel && geometry.width >= geometry.kernel);
        let cols = kernels::im2col(self.value(input).data(), &geometry);
        let (m, k, n) = (geometry.patches(), geometry.patch_len(), geometry.out_channels);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &cols, false, self.value(kernel).data(), false, 0.0, &mut out);
        let b = self.value(bias).data();
        for row in out.chunks_mut(n) {
            for (o, v) in row.iter_mut().zip(b) {
                *o += *v;
            }
        }
        let shape = [
            geometry.batch,
            geometry.out_height(),
            geometry.out_width(),
            geometry.out_channels,
        ];
        let keep_cols = self.requires_grad(kernel);
        self.push(
            Tensor::new(&shape, out),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols: keep_cols.then_some(cols),
            },
            &[input, kernel, bias],
        )
    }

    /// Non-overlapping `window x window` max pooling (floor on odd sizes).
    pub fn max_pool(&mut self, input: Var, window: usize) -> Var {
        let s = self.shape(input);
        assert_eq!(s.len(), 4);
        let (values, argmax, shape) =
            kernels::max_pool(self.value(input).data(), [s[0], s[1], s[2], s[3]], window);
        self.push(
            Tensor::new(&shape, values),
            Op::MaxPool { input, argmax },
            &[input],
        )
    }

    /// `(n, h, w, c) -> (n, c)`
    pub fn global_avg_pool(&mut self, input: Var) -> Var {
        let s = self.shape(input).to_vec();
        assert_eq!(s.len(), 4);
        let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
        let x = self.value(input).data();
        let mut out = vec![0.0; n * c];
        for b in 0..n {
            for p in 0..hw {
                let row = &x[(b * hw + p) * c..(b * hw + p + 1) * c];
                for (o, v) in out[b * c..(b + 1) * c].iter_mut().zip(row) {
                    *o += *v;
                }
            }
        }
        let inv = 1.0 / hw as f32;
        out.iter_mut().for_each(|v| *v *= inv);
        self.push(Tensor::new(&[n, c], out), Op::GlobalAvgPool(input), &[input])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshaped(shape);
        self.push(out, Op::Reshape(x), &[x])
    }

    /// `(n, ...) -> (n, prod(...))`
    pub fn flatten(&mut self, x: Var) -> Var {
        let (n, w) = (self.value(x).rows(), self.value(x).row_width());
        self.reshape(x, &[n, w])
    }

    /// Multiplies by a precomputed mask (already scaled by `1 / (1 - rate)`).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<f32>) -> Var {
        assert_eq!(mask.len(), self.value(x).len());
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(t.shape(), data);
        self.push(out, Op::Dropout { input: x, mask }, &[x])
    }

    /// Selects rows of a `(v, f)` table: `(ids.len(), f)`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Var {
        let t = self.value(table);
        assert_eq!(t.rank(), 2);
        let f = t.shape()[1];
        let mut out = Vec::with_capacity(ids.len() * f);
        for &id in ids {
            let id = id as usize;
            assert!(id < t.shape()[0], "row {id} out of range");
            out.extend_from_slice(&t.data()[id * f..(id + 1) * f]);
        }
        let ids = ids.to_vec();
        self.push(
            Tensor::new(&[ids.len(), f], out),
            Op::Gather { table, ids },
            &[table],
        )
    }

    /// Columns `start..start + width` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let t = self.value(x);
        assert_eq!(t.rank(), 2);
        let (n, f) = (t.shape()[0], t.shape()[1]);
        assert!(start + width <= f);
        let mut out = Vec::with_capacity(n * width);
        for row in t.data().chunks(f) {
            out.extend_from_slice(&row[start..start + width]);
        }
        self.push(
            Tensor::new(&[n, width], out),
            Op::SliceCols { input: x, start },
            &[x],
        )
    }

    /// Rows `start..start + count` along the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Var {
        let t = self.value(x);
        let w = t.row_width();
        assert!(start + count <= t.rows());
        let mut shape = t.shape().to_vec();
        shape[0] = count;
        let out = Tensor::new(&shape, t.data()[start * w..(start + count) * w].to_vec());
        self.push(out, Op::SliceRows { input: x, start }, &[x])
    }

    /// Concatenates rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = self.shape(*p);
                assert!(s.len() == 2 && s[0] == n, "concat_cols expects (n, f) parts");
                s[1]
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(Tensor::new(&[n, total], out), Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Concatenates tensors along the leading axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let mut shape = self.shape(parts[0]).to_vec();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            assert_eq!(&t.shape()[1..], &shape[1..]);
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        shape[0] = rows;
        self.push(Tensor::new(&shape, out), Op::ConcatRows(parts.to_vec()), parts)
    }

    /// `(b, m, k) x (b, k, n) -> (b, m, n)`, or `(b, m, k) x (b, n, k)^T` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0]);
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let n = if transpose_b { sb[1] } else { sb[2] };
        assert_eq!(if transpose_b { sb[2] } else { sb[1] }, k);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                false,
                &db[i * k * n..(i + 1) * k * n],
                transpose_b,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.push(
            Tensor::new(&[bs, m, n], out),
            Op::BatchMatMul { a, b, transpose_b },
            &[a, b],
        )
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let f = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(f) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = libm::expf(*v - max);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(t.shape(), out);
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Layer normalization over the trailing axis with learned scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let t = self.value(x);
        let f = t.last_dim();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut normed = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(t.len() / f);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(f) {
            let mean = row.iter().sum::<f32>() / f as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / f as f32;
            let inv = 1.0 / libm::sqrtf(var + LAYER_NORM_EPS);
            inv_std.push(inv);
            for (i, v) in row.iter().enumerate() {
                let n = (v - mean) * inv;
                normed.push(n);
                out.push(n * g[i] + b[i]);
            }
        }
        let out = Tensor::new(t.shape(), out);
        self.push(
            out,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Mean binary cross-entropy of `(n, 1)` logits against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f32]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        let mut acc = 0.0f64;
        for (z, y) in z.data().iter().zip(targets) {
            let (z, y) = (*z as f64, *y as f64);
            acc += z.max(0.0) - z * y + libm::log1p(libm::exp(-z.abs()));
        }
        let loss = if targets.is_empty() {
            0.0
        } else {
            (acc / targets.len() as f64) as f32
        };
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.shape(loss), vec![1.0]));
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.propagate(Var(i), gout, &mut grads, &mut out);
        }
        out
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: Var, gout: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let y = self.value(node);
        match &self.nodes[node.0].op {
            Op::Leaf => {}
            Op::Param(id) => {
                out.by_param.insert(*id, gout);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, gout.data(), false, tb.data(), true, 0.0, &mut ga);
                    self.accumulate(grads, *a, Tensor::new(&[m, k], ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gout.data(), false, 0.0, &mut gb);
                    self.accumulate(grads, *b, Tensor::new(&[k, n], gb));
                }
            }
            Op::AddBias(x, bias) => {
                if self.wants(*bias) {
                    let f = self.value(*bias).len();
                    let mut gb = vec![0.0; f];
                    for row in gout.data().chunks(f) {
                        for (g, v) in gb.iter_mut().zip(row) {
                            *g += *v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(&[f], gb));
                }
                self.accumulate(grads, *x, gout);
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, gout.clone());
                }
                self.accumulate(grads, *a, gout);
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    let neg = Tensor::new(gout.shape(), gout.data().iter().map(|v| -v).collect());
                    self.accumulate(grads, *b, neg);
                }
                self.accumulate(grads, *a, gout);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let g = zip(&gout, self.value(*b), |g, v| g * v);
                    self.accumulate(grads, *a, g);
                }
                if self.wants(*b) {
                    let g = zip(&gout, self.value(*a), |g, v| g * v);
                    self.accumulate(grads, *b, g);
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                let g = Tensor::new(gout.shape(), gout.data().iter().map(|v| v * s).collect());
                self.accumulate(grads, *x, g);
            }
            Op::Relu(x) => {
                let g = zip(&gout, y, |g, v| if v > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = zip(&gout, y, |g, v| g * v * (1.0 - v));
                self.accumulate(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = zip(&gout, y, |g, v| g * (1.0 - v * v));
                self.accumulate(grads, *x, g);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            } => {
                let (m, k, n) = (geometry.patches(), geometry.patch_len(), geometry.out_channels);
                if self.wants(*bias) {
                    let mut gb = vec![0.0; n];
                    for row in gout.data().chunks(n) {
                        for (g, v) in gb.iter_mut().zip(row) {
                            *g += *v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(&[n], gb));
                }
                if self.wants(*kernel) {
                    let cols = cols.as_ref().expect("patches kept for trainable kernel");
                    let mut gk = vec![0.0; k * n];
                    gemm(k, m, n, cols, true, gout.data(), false, 0.0, &mut gk);
                    let shape = self.shape(*kernel).to_vec();
                    self.accumulate(grads, *kernel, Tensor::new(&shape, gk));
                }
                if self.wants(*input) {
                    let mut gcols = vec![0.0; m * k];
                    gemm(m, n, k, gout.data(), false, self.value(*kernel).data(), true, 0.0, &mut gcols);
                    let gx = kernels::col2im(&gcols, geometry);
                    let shape = self.shape(*input).to_vec();
                    self.accumulate(grads, *input, Tensor::new(&shape, gx));
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*input));
                let d = gx.data_mut();
                for (g, idx) in gout.data().iter().zip(argmax) {
                    d[*idx as usize] += *g;
                }
                self.accumulate(grads, *input, gx);
            }
            Op::GlobalAvgPool(input) => {
                let s = self.shape(*input).to_vec();
                let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
                let inv = 1.0 / hw as f32;
                let mut gx = vec![0.0; n * hw * c];
                for b in 0..n {
                    let g = &gout.data()[b * c..(b + 1) * c];
                    for p in 0..hw {
                        for (o, v) in gx[(b * hw + p) * c..(b * hw + p + 1) * c].iter_mut().zip(g) {
                            *o = *v * inv;
                        }
                    }
                }
                self.accumulate(grads, *input, Tensor::new(&s, gx));
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                self.accumulate(grads, *x, gout.reshaped(&shape));
            }
            Op::Dropout { input, mask } => {
                let data = gout.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *input, Tensor::new(gout.shape(), data));
            }
            Op::Gather { table, ids } => {
                let mut gt = Tensor::zeros(self.shape(*table));
                let f = gt.shape()[1];
                let d = gt.data_mut();
                for (row, id) in gout.data().chunks(f).zip(ids) {
                    let id = *id as usize;
                    for (o, v) in d[id * f..(id + 1) * f].iter_mut().zip(row) {
                        *o += *v;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::SliceCols { input, start } => {
                let s = self.shape(*input).to_vec();
                let width = gout.shape()[1];
                let mut gx = vec![0.0; s[0] * s[1]];
                for (r, row) in gout.data().chunks(width).enumerate() {
                    gx[r * s[1] + start..r * s[1] + start + width].copy_from_slice(row);
                }
                self.accumulate(grads, *input, Tensor::new(&s, gx));
            }
            Op::SliceRows { input, start } => {
                let mut gx = Tensor::zeros(self.shape(*input));
                let w = gx.row_width();
                gx.data_mut()[start * w..start * w + gout.len()].copy_from_slice(gout.data());
                self.accumulate(grads, *input, gx);
            }
            Op::ConcatCols(parts) => {
                let n = gout.shape()[0];
                let total = gout.shape()[1];
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if self.wants(*p) {
                        let mut g = Vec::with_capacity(n * w);
                        for row in gout.data().chunks(total) {
                            g.extend_from_slice(&row[offset..offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::new(&[n, w], g));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if self.wants(*p) {
                        let shape = self.shape(*p).to_vec();
                        let g = gout.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, *p, Tensor::new(&shape, g));
                    }
                    offset += len;
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = gout.shape()[2];
                if self.wants(*a) {
                    let mut ga = vec![0.0; bs * m * k];
                    for i in 0..bs {
                        // transposed: b is (n, k), ga = gout . b ; else b is (k, n), ga = gout . b^T
                        gemm(
                            m,
                            n,
                            k,
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            false,
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            !*transpose_b,
                            0.0,
                            &mut ga[i * m * k..(i + 1) * m * k],
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(ta.shape(), ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; bs * k * n];
                    for i in 0..bs {
                        let go = &gout.data()[i * m * n..(i + 1) * m * n];
                        let av = &ta.data()[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // gb (n, k) = gout^T . a
                            gemm(n, m, k, go, true, av, false, 0.0, dst);
                        } else {
                            // gb (k, n) = a^T . gout
                            gemm(k, m, n, av, true, go, false, 0.0, dst);
                        }
                    }
                    self.accumulate(grads, *b, Tensor::new(tb.shape(), gb));
                }
            }
            Op::Softmax(x) => {
                let f = y.last_dim();
                let mut gx = Vec::with_capacity(y.len());
                for (yr, gr) in y.data().chunks(f).zip(gout.data().chunks(f)) {
                    let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
                }
                self.accumulate(grads, *x, Tensor::new(y.shape(), gx));
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let f = y.last_dim();
                let g = self.value(*gamma).data();
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut gg = vec![0.0; f];
                    let mut gbeta = vec![0.0; f];
                    for (gr, nr) in gout.data().chunks(f).zip(normed.chunks(f)) {
                        for i in 0..f {
                            gg[i] += gr[i] * nr[i];
                            gbeta[i] += gr[i];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::new(&[f], gg));
                    self.accumulate(grads, *beta, Tensor::new(&[f], gbeta));
                }
                if self.wants(*input) {
                    let mut gx = Vec::with_capacity(y.len());
                    for ((gr, nr), inv) in gout.data().chunks(f).zip(normed.chunks(f)).zip(inv_std) {
                        let dxhat: Vec<f32> = gr.iter().zip(g).map(|(a, b)| a * b).collect();
                        let sum: f32 = dxhat.iter().sum();
                        let dot: f32 = dxhat.iter().zip(nr).map(|(a, b)| a * b).sum();
                        let fl = f as f32;
                        gx.extend(
                            dxhat
                                .iter()
                                .zip(nr)
                                .map(|(d, n)| inv / fl * (fl * d - sum - n * dot)),
                        );
                    }
                    self.accumulate(grads, *input, Tensor::new(y.shape(), gx));
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits);
                let scale = gout.data()[0] / targets.len().max(1) as f32;
                let g = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(z, t)| (sigmoid(*z) - t) * scale)
                    .collect();
                self.accumulate(grads, *logits, Tensor::new(z.shape(), g));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect(),
    )
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::expf(-x))
    } else {
        let e = libm::expf(x);
        e / (1.0 + e)
    }
}
