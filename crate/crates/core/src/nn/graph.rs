//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation eagerly: each call computes its value
//! immediately and remembers its inputs. [`Graph::backward`] then walks the
//! record in reverse, accumulating gradients. Matrices are the last two axes
//! flattened as `[rows, cols]`; batch-major everywhere.

use std::collections::HashMap;
use std::sync::Arc;

use super::optim::{Grads, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    LogSoftmax(Var),
    Softmax(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    GatherCols(Var, Vec<usize>),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    BceWithLogits(Var, Arc<Tensor>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients aligned with `store`; zero for parameters the loss did not touch.
    pub fn for_params(&self, store: &ParamStore) -> Grads {
        Grads(
            store
                .ids()
                .map(|id| match self.params.get(&id).and_then(|v| self.grads[v.0].as_ref()) {
                    Some(g) => g.clone(),
                    None => Tensor::zeros(store.get(id).shape()),
                })
                .collect(),
        )
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a stored parameter (used by tests).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Parameter leaf. Repeated calls for the same id share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: store.shared(id),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    /// Parameter leaf that is detached from the gradient computation.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.shared(id),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = (av.rows(), av.cols());
        let (k2, n) = (bv.rows(), bv.cols());
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?}", av.shape(), bv.shape());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b), ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.len(), bv.len(), "shapes {:?} vs {:?}", av.shape(), bv.shape());
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(t, op, ng)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(t, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, f64::min, Op::Minimum(a, b))
    }

    /// `a[m, n] + b[n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.cols();
        assert_eq!(bv.len(), n, "bias {:?} for {:?}", bv.shape(), av.shape());
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::AddRow(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            let lse = log_sum_exp(row);
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.ng(a);
        self.push(t, Op::LogSoftmax(a), ng)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(av.shape().to_vec(), data).unwrap();
        let ng = self.ng(a);
        self.push(t, Op::Softmax(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        let (m, n) = (av.rows(), av.cols());
        assert!(start + len <= n);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&av.data()[i * n + start..i * n + start + len]);
        }
        let t = Tensor::new(vec![m, len], data).unwrap();
        let ng = self.ng(a);
        self.push(t, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let pv = self.value(p);
                assert_eq!(pv.rows(), m, "concat rows");
                data.extend_from_slice(&pv.data()[i * w..(i + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let t = Tensor::new(vec![m, total], data).unwrap();
        self.push(t, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = (*self.nodes[a.0].value).clone().reshaped(shape).expect("reshape");
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let s = av.sum() / av.len() as f64;
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Picks `a[i, idx[i]]` for every row, giving a `[m]` vector.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let n = av.cols();
        assert_eq!(av.rows(), idx.len());
        let data = idx.iter().enumerate().map(|(i, &j)| av.data()[i * n + j]).collect();
        let t = Tensor::new(vec![idx.len()], data).unwrap();
        let ng = self.ng(a);
        self.push(t, Op::GatherCols(a, idx.to_vec()), ng)
    }

    /// Same-padded, stride-1 convolution of `input[B, C, H, W]` with
    /// `kernel[O, C, k, k]` and `bias[O]`, giving `[B, O, H, W]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Var {
        let iv = self.value(input);
        let kv = self.value(kernel);
        assert_eq!(iv.shape().len(), 4, "conv input must be [B, C, H, W]");
        assert_eq!(kv.shape().len(), 4, "conv kernel must be [O, C, k, k]");
        let (b, c, h, w) = (iv.shape()[0], iv.shape()[1], iv.shape()[2], iv.shape()[3]);
        let (o, kc, k) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        assert_eq!(kc, c, "conv channels");
        assert_eq!(k % 2, 1, "odd kernel");
        let geom = ConvGeom {
            batch: b,
            in_ch: c,
            out_ch: o,
            height: h,
            width: w,
            kernel: k,
        };
        let cols = im2col(iv.data(), &geom);
        let rows = b * h * w;
        let ckk = c * k * k;
        let mut tmp = vec![0.0; rows * o];
        gemm(rows, ckk, o, &cols, false, kv.data(), true, &mut tmp, 0.0);
        let bv = self.value(bias);
        let mut out = vec![0.0; b * o * h * w];
        for bi in 0..b {
            for p in 0..h * w {
                let src = &tmp[(bi * h * w + p) * o..(bi * h * w + p + 1) * o];
                for oc in 0..o {
                    out[(bi * o + oc) * h * w + p] = src[oc] + bv.data()[oc];
                }
            }
        }
        let ng = self.ng(input) || self.ng(kernel) || self.ng(bias);
        let t = Tensor::new(vec![b, o, h, w], out).unwrap();
        self.push(
            t,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            ng,
        )
    }

    /// Mean binary cross-entropy of `logits` against constant `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Tensor) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.len(), targets.len());
        let total: f64 = lv
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .sum();
        let ng = self.ng(logits);
        let mean = total / lv.len() as f64;
        self.push(Tensor::scalar(mean), Op::BceWithLogits(logits, Arc::new(targets)), ng)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                self.accumulate_with(grads, *a, |ga| {
                    gemm(m, n, k, g.data(), false, bv.data(), true, ga, 1.0)
                });
                self.accumulate_with(grads, *b, |gb| {
                    gemm(k, m, n, av.data(), true, g.data(), false, gb, 1.0)
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |ga| {
                    for ((d, &gi), &bi) in ga.iter_mut().zip(g.data()).zip(bv.data()) {
                        *d += gi * bi;
                    }
                });
                self.accumulate_with(grads, *b, |gb| {
                    for ((d, &gi), &ai) in gb.iter_mut().zip(g.data()).zip(av.data()) {
                        *d += gi * ai;
                    }
                });
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if av.data()[i] <= bv.data()[i] {
                            ga[i] += g.data()[i];
                        }
                    }
                });
                self.accumulate_with(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        if av.data()[i] > bv.data()[i] {
                            gb[i] += g.data()[i];
                        }
                    }
                });
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let n = g.cols();
                self.accumulate_with(grads, *b, |gb| {
                    for row in g.data().chunks(n) {
                        for (d, &x) in gb.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                });
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| x * k)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.accumulate_with(grads, *a, |ga| {
                    for ((d, &gi), &x) in ga.iter_mut().zip(g.data()).zip(av.data()) {
                        if x > 0.0 {
                            *d += gi;
                        }
                    }
                });
            }
            Op::Tanh(a) => self.elementwise_back(grads, *a, g, y, |_, y| 1.0 - y * y),
            Op::Sigmoid(a) => self.elementwise_back(grads, *a, g, y, |_, y| y * (1.0 - y)),
            Op::Exp(a) => self.elementwise_back(grads, *a, g, y, |_, y| y),
            Op::Ln(a) => self.elementwise_back(grads, *a, g, y, |x, _| 1.0 / x),
            Op::Square(a) => self.elementwise_back(grads, *a, g, y, |x, _| 2.0 * x),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.elementwise_back(grads, *a, g, y, move |x, _| {
                    if x >= lo && x <= hi {
                        1.0
                    } else {
                        0.0
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let n = y.cols();
                self.accumulate_with(grads, *a, |ga| {
                    for ((d, gr), yr) in ga.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                        let s: f64 = gr.iter().sum();
                        for j in 0..n {
                            d[j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::Softmax(a) => {
                let n = y.cols();
                self.accumulate_with(grads, *a, |ga| {
                    for ((d, gr), yr) in ga.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            d[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let n = self.value(*a).cols();
                let len = g.cols();
                let start = *start;
                self.accumulate_with(grads, *a, |ga| {
                    for (i, gr) in g.data().chunks(len).enumerate() {
                        for (j, &x) in gr.iter().enumerate() {
                            ga[i * n + start + j] += x;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let off = offset;
                    self.accumulate_with(grads, p, |gp| {
                        for (i, gr) in g.data().chunks(total).enumerate() {
                            for j in 0..w {
                                gp[i * w + j] += gr[off + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(&shape).unwrap());
            }
            Op::Sum(a) => {
                let gi = g.item();
                self.accumulate_with(grads, *a, |ga| ga.iter_mut().for_each(|d| *d += gi));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let gi = g.item() / n;
                self.accumulate_with(grads, *a, |ga| ga.iter_mut().for_each(|d| *d += gi));
            }
            Op::GatherCols(a, idx) => {
                let n = self.value(*a).cols();
                self.accumulate_with(grads, *a, |ga| {
                    for (i, &j) in idx.iter().enumerate() {
                        ga[i * n + j] += g.data()[i];
                    }
                });
            }
            Op::BceWithLogits(a, targets) => {
                let av = self.value(*a);
                let scale = g.item() / av.len() as f64;
                self.accumulate_with(grads, *a, |ga| {
                    for ((d, &x), &t) in ga.iter_mut().zip(av.data()).zip(targets.data()) {
                        *d += scale * (sigmoid(x) - t);
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let ConvGeom {
                    batch: b,
                    in_ch: c,
                    out_ch: o,
                    height: h,
                    width: w,
                    kernel: k,
                } = *geom;
                let rows = b * h * w;
                let ckk = c * k * k;
                // [B, O, H, W] -> [B*H*W, O]
                let mut gt = vec![0.0; rows * o];
                for bi in 0..b {
                    for oc in 0..o {
                        for p in 0..h * w {
                            gt[(bi * h * w + p) * o + oc] = g.data()[(bi * o + oc) * h * w + p];
                        }
                    }
                }
                self.accumulate_with(grads, *kernel, |gk| {
                    gemm(o, rows, ckk, &gt, true, cols, false, gk, 1.0)
                });
                self.accumulate_with(grads, *bias, |gb| {
                    for row in gt.chunks(o) {
                        for (d, &x) in gb.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                });
                if self.ng(*input) {
                    let kv = self.value(*kernel);
                    let mut gcols = vec![0.0; rows * ckk];
                    gemm(rows, o, ckk, &gt, false, kv.data(), false, &mut gcols, 0.0);
                    self.accumulate_with(grads, *input, |gi| col2im(&gcols, geom, gi));
                }
            }
        }
    }

    fn elementwise_back(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        g: &Tensor,
        y: &Tensor,
        dydx: impl Fn(f64, f64) -> f64,
    ) {
        let av = self.value(a);
        self.accumulate_with(grads, a, |ga| {
            for i in 0..ga.len() {
                ga[i] += g.data()[i] * dydx(av.data()[i], y.data()[i]);
            }
        });
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn im2col(input: &[f64], geom: &ConvGeom) -> Vec<f64> {
    let ConvGeom {
        batch: b,
        in_ch: c,
        height: h,
        width: w,
        kernel: k,
        ..
    } = *geom;
    let pad = (k / 2) as isize;
    let ckk = c * k * k;
    let mut cols = vec![0.0; b * h * w * ckk];
    for bi in 0..b {
        for r in 0..h {
            for col in 0..w {
                let row_base = ((bi * h + r) * w + col) * ckk;
                for ch in 0..c {
                    for kr in 0..k {
                        let ir = r as isize + kr as isize - pad;
                        if ir < 0 || ir >= h as isize {
                            continue;
                        }
                        for kc in 0..k {
                            let ic = col as isize + kc as isize - pad;
                            if ic < 0 || ic >= w as isize {
                                continue;
                            }
                            cols[row_base + (ch * k + kr) * k + kc] =
                                input[((bi * c + ch) * h + ir as usize) * w + ic as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(gcols: &[f64], geom: &ConvGeom, gi: &mut [f64]) {
    let ConvGeom {
        batch: b,
        in_ch: c,
        height: h,
        width: w,
        kernel: k,
        ..
    } = *geom;
    let pad = (k / 2) as isize;
    let ckk = c * k * k;
    for bi in 0..b {
        for r in 0..h {
            for col in 0..w {
                let row_base = ((bi * h + r) * w + col) * ckk;
                for ch in 0..c {
                    for kr in 0..k {
                        let ir = r as isize + kr as isize - pad;
                        if ir < 0 || ir >= h as isize {
                            continue;
                        }
                        for kc in 0..k {
                            let ic = col as isize + kc as isize - pad;
                            if ic < 0 || ic >= w as isize {
                                continue;
                            }
                            gi[((bi * c + ch) * h + ir as usize) * w + ic as usize] +=
                                gcols[row_base + (ch * k + kr) * k + kc];
                        }
                    }
                }
            }
        }
    }
}
