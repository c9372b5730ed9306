use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::optim::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(x),
            Activation::Relu => g.relu(x),
        }
    }
}

fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Fully connected layer `y = x·W + b` with `W: [inputs, outputs]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Glorot-uniform weights scaled by `gain`, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut Rng,
    ) -> Self {
        let bound = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, &[inputs, outputs], bound));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Dense {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Same-padded stride-1 convolution, NCHW layout.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub size: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        size: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan = (size * size) as f64;
        let bound = (6.0 / (fan * (in_ch + out_ch) as f64)).sqrt();
        let kernel = store.add(
            format!("{name}.kernel"),
            uniform(rng, &[out_ch, in_ch, size, size], bound),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Conv2d {
            kernel,
            bias,
            in_ch,
            out_ch,
            size,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d(x, k, b)
    }
}

/// Single-layer LSTM cell; gate order input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = store.add(format!("{name}.w_input"), uniform(rng, &[inputs, 4 * hidden], bound));
        let w_hidden = store.add(format!("{name}.w_hidden"), uniform(rng, &[hidden, 4 * hidden], bound));
        let mut b = Tensor::zeros(&[4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), b);
        Lstm {
            w_input,
            w_hidden,
            bias,
            inputs,
            hidden,
        }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> LstmState {
        LstmState {
            h: g.input(Tensor::zeros(&[batch, self.hidden])),
            c: g.input(Tensor::zeros(&[batch, self.hidden])),
        }
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: LstmState) -> LstmState {
        let h = self.hidden;
        let wi = g.param(store, self.w_input);
        let wh = g.param(store, self.w_hidden);
        let b = g.param(store, self.bias);
        let zx = g.matmul(x, wi);
        let zh = g.matmul(state.h, wh);
        let z = g.add(zx, zh);
        let z = g.add_row(z, b);
        let i = g.slice_cols(z, 0, h);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, h, h);
        let f = g.sigmoid(f);
        let cc = g.slice_cols(z, 2 * h, h);
        let cc = g.tanh(cc);
        let o = g.slice_cols(z, 3 * h, h);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, cc);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }
}

/// Mean squared error.
pub fn mse(g: &mut Graph, pred: Var, target: Var) -> Var {
    let d = g.sub(pred, target);
    let sq = g.square(d);
    g.mean(sq)
}

/// Row-averaged cross-entropy of `logits` against soft target rows.
pub fn cross_entropy(g: &mut Graph, logits: Var, targets: Tensor) -> Var {
    let rows = g.value(logits).rows() as f64;
    let lp = g.log_softmax(logits);
    let t = g.input(targets);
    let prod = g.mul(lp, t);
    let s = g.sum(prod);
    g.scale(s, -1.0 / rows)
}

/// Row-averaged entropy of the categorical distributions given by `logits`.
pub fn entropy(g: &mut Graph, logits: Var) -> Var {
    let rows = g.value(logits).rows() as f64;
    let lp = g.log_softmax(logits);
    let p = g.exp(lp);
    let prod = g.mul(p, lp);
    let s = g.sum(prod);
    g.scale(s, -1.0 / rows)
}
