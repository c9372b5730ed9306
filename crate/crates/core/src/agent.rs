//! Recurrent actor-critic for the reveal task, trained with clipped-surrogate
//! policy optimization and an optional task-grounding regression loss.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::bootstrap_mean_ci;
use crate::board::{BoardDataset, DatasetError};
use crate::embeddings::EmbeddingProvider;
use crate::env::{
    heuristic_stats, z_score, EnvConfig, EnvError, EpisodeTrace, HeuristicStats, Observation, RevealEnv,
    DEFAULT_HEURISTIC_RUNS,
};
use crate::nn::gradcheck::{self, GradCheckConfig, GradCheckReport};
use crate::nn::{checkpoint, Activation, AdamConfig, Conv2d, Dense, Graph, Lstm, LstmState, NnError, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub const ENCODER_DIM: usize = 64;
pub const LSTM_UNITS: usize = 120;
const CONV_CHANNELS: usize = 16;
pub const CURVE_EVERY: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("grounding target dim {got} does not match head dim {expected}")]
    PsiDim { expected: usize, got: usize },
    #[error("no grounding target for board {0:?}")]
    MissingBoard(String),
    #[error("grounding loss enabled but no provider given")]
    NoProvider,
    #[error("board size {got} does not match network size {expected}")]
    BoardSize { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub batch_size: usize,
    pub n_steps: usize,
    pub gamma: f64,
    pub lr: f64,
    pub ent_coef: f64,
    pub clip: f64,
    pub n_epochs: usize,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub vf_coef: f64,
    pub activation: Activation,
    pub c_task: f64,
    pub episodes: usize,
    /// Parallel environments per rollout; `n_envs · n_steps` steps per update.
    pub n_envs: usize,
    pub adam: AdamConfig,
    pub env: EnvConfig,
}

impl PpoConfig {
    /// Hyperparameters tuned with the grounding loss on.
    pub fn grounding() -> Self {
        PpoConfig {
            batch_size: 256,
            n_steps: 8,
            gamma: 0.9,
            lr: 0.000376021,
            ent_coef: 1.45674e-6,
            clip: 0.3,
            n_epochs: 5,
            gae_lambda: 0.95,
            max_grad_norm: 0.6,
            vf_coef: 0.016291309,
            activation: Activation::Tanh,
            c_task: 0.494866282,
            episodes: 50_000,
            n_envs: 32,
            adam: AdamConfig::default(),
            env: EnvConfig::default(),
        }
    }

    /// Hyperparameters tuned without grounding.
    pub fn no_grounding() -> Self {
        PpoConfig {
            batch_size: 16,
            n_steps: 2048,
            gamma: 0.9,
            lr: 0.000516501,
            ent_coef: 1.3907e-5,
            clip: 0.3,
            n_epochs: 10,
            gae_lambda: 0.8,
            max_grad_norm: 2.0,
            vf_coef: 0.000914363,
            activation: Activation::Relu,
            c_task: 0.0,
            episodes: 50_000,
            n_envs: 1,
            adam: AdamConfig::default(),
            env: EnvConfig::default(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "grounding" => Some(Self::grounding()),
            "no-grounding" => Some(Self::no_grounding()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.into()));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.n_steps == 0 || self.n_envs == 0 || self.n_epochs == 0 {
            return bad("batch_size, n_steps, n_envs and n_epochs must be positive");
        }
        if !(self.lr > 0.0) || self.c_task < 0.0 || self.max_grad_norm <= 0.0 {
            return bad("lr and max_grad_norm must be positive, c_task nonnegative");
        }
        Ok(())
    }

    /// Steps per BPTT chunk.
    pub fn chunk_len(&self) -> usize {
        self.n_steps.min(self.batch_size)
    }
}

#[derive(Clone, Copy, Debug)]
struct PolicyLayers {
    n: usize,
    activation: Activation,
    conv: Conv2d,
    enc: Dense,
    lstm: Lstm,
    policy: Dense,
    value: Dense,
    ground: Option<(Dense, Dense)>,
}

/// Recurrent state for a batch, row-major `[batch, LSTM_UNITS]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Hidden {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl Hidden {
    pub fn zeros(batch: usize) -> Self {
        Hidden {
            h: vec![0.0; batch * LSTM_UNITS],
            c: vec![0.0; batch * LSTM_UNITS],
        }
    }

    pub fn reset_row(&mut self, row: usize) {
        self.h[row * LSTM_UNITS..(row + 1) * LSTM_UNITS].fill(0.0);
        self.c[row * LSTM_UNITS..(row + 1) * LSTM_UNITS].fill(0.0);
    }

    fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let r = i * LSTM_UNITS..(i + 1) * LSTM_UNITS;
        (&self.h[r.clone()], &self.c[r])
    }
}

pub struct StepVars {
    pub logits: Var,
    pub value: Var,
    pub encoding: Var,
    pub state: LstmState,
}

pub struct PolicyNet {
    pub store: ParamStore,
    layers: PolicyLayers,
}

impl PolicyNet {
    /// `grounding_dim = 0` builds no grounding head.
    pub fn new(n: usize, grounding_dim: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let cells = n * n;
        let gain = match activation {
            Activation::Tanh => 1.0,
            Activation::Relu => 2f64.sqrt(),
        };
        let conv = Conv2d::new(&mut store, "conv", Observation::CHANNELS, CONV_CHANNELS, 3, &mut rng);
        let enc = Dense::new(&mut store, "enc", CONV_CHANNELS * cells, ENCODER_DIM, gain, &mut rng);
        let lstm = Lstm::new(&mut store, "lstm", ENCODER_DIM + cells + 1, LSTM_UNITS, &mut rng);
        let policy = Dense::new(&mut store, "policy", LSTM_UNITS, cells, 0.01, &mut rng);
        let value = Dense::new(&mut store, "value", LSTM_UNITS, 1, 1.0, &mut rng);
        let ground = (grounding_dim > 0).then(|| {
            (
                Dense::new(&mut store, "ground1", ENCODER_DIM, ENCODER_DIM, gain, &mut rng),
                Dense::new(&mut store, "ground2", ENCODER_DIM, grounding_dim, 1.0, &mut rng),
            )
        });
        PolicyNet {
            store,
            layers: PolicyLayers {
                n,
                activation,
                conv,
                enc,
                lstm,
                policy,
                value,
                ground,
            },
        }
    }

    pub fn side(&self) -> usize {
        self.layers.n
    }

    pub fn actions(&self) -> usize {
        self.layers.n * self.layers.n
    }

    pub fn grounding_dim(&self) -> usize {
        self.layers.ground.map_or(0, |(_, g)| g.outputs)
    }

    pub fn activation(&self) -> Activation {
        self.layers.activation
    }

    /// Encoder output `[B, ENCODER_DIM]` for observations `[B, 3, n, n]`.
    pub fn encode(&self, g: &mut Graph, obs: Tensor) -> Var {
        let l = &self.layers;
        let b = obs.shape()[0];
        let x = g.input(obs);
        let h = l.conv.forward(g, &self.store, x);
        let h = l.activation.apply(g, h);
        let h = g.reshape(h, &[b, CONV_CHANNELS * l.n * l.n]);
        let h = l.enc.forward(g, &self.store, h);
        l.activation.apply(g, h)
    }

    /// One recurrent step. `prev` is `[B, n² + 1]`: previous action one-hot
    /// then previous reward.
    pub fn step(&self, g: &mut Graph, obs: Tensor, prev: Tensor, state: LstmState) -> StepVars {
        let l = &self.layers;
        let encoding = self.encode(g, obs);
        let p = g.input(prev);
        let x = g.concat_cols(&[encoding, p]);
        let state = l.lstm.step(g, &self.store, x, state);
        let logits = l.policy.forward(g, &self.store, state.h);
        let value = l.value.forward(g, &self.store, state.h);
        StepVars {
            logits,
            value,
            encoding,
            state,
        }
    }

    /// Grounding prediction ψ̂ from the encoder output.
    pub fn ground(&self, g: &mut Graph, encoding: Var) -> Option<Var> {
        let (g1, g2) = self.layers.ground?;
        let h = g1.forward(g, &self.store, encoding);
        let h = self.layers.activation.apply(g, h);
        Some(g2.forward(g, &self.store, h))
    }

    fn obs_tensor(&self, obs: &[Observation]) -> Tensor {
        let cells = self.actions();
        let mut data = vec![0.0; obs.len() * 3 * cells];
        for (o, chunk) in obs.iter().zip(data.chunks_mut(3 * cells)) {
            o.write_channels(chunk);
        }
        Tensor::new(vec![obs.len(), 3, self.layers.n, self.layers.n], data).unwrap()
    }

    fn prev_tensor(&self, prev_actions: &[Option<usize>], prev_rewards: &[f64]) -> Tensor {
        let w = self.actions() + 1;
        let mut data = vec![0.0; prev_actions.len() * w];
        for (i, (a, r)) in prev_actions.iter().zip(prev_rewards).enumerate() {
            if let Some(a) = a {
                data[i * w + a] = 1.0;
            }
            data[i * w + w - 1] = *r;
        }
        Tensor::new(vec![prev_actions.len(), w], data).unwrap()
    }

    /// Batched action selection. Samples from the policy with `rng`, or
    /// takes the argmax over covered tiles (lowest index on ties) when `rng`
    /// is `None`.
    pub fn act(
        &self,
        obs: &[Observation],
        prev_actions: &[Option<usize>],
        prev_rewards: &[f64],
        hidden: &Hidden,
        rng: Option<&mut Rng>,
    ) -> ActOutput {
        let b = obs.len();
        let mut g = Graph::new();
        let state = LstmState {
            h: g.input(Tensor::new(vec![b, LSTM_UNITS], hidden.h.clone()).unwrap()),
            c: g.input(Tensor::new(vec![b, LSTM_UNITS], hidden.c.clone()).unwrap()),
        };
        let s = self.step(&mut g, self.obs_tensor(obs), self.prev_tensor(prev_actions, prev_rewards), state);
        let logits = g.value(s.logits);
        let values = g.value(s.value).data().to_vec();
        let cells = self.actions();
        let mut actions = Vec::with_capacity(b);
        let mut log_probs = Vec::with_capacity(b);
        let mut rng = rng;
        for i in 0..b {
            let row = logits.row(i);
            let lse = crate::nn::graph::log_sum_exp(row);
            let a = match rng.as_deref_mut() {
                Some(r) => {
                    let u: f64 = r.random();
                    let mut acc = 0.0;
                    let mut pick = cells - 1;
                    for (k, &l) in row.iter().enumerate() {
                        acc += (l - lse).exp();
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    pick
                }
                None => {
                    let covered = |k: usize| obs[i].revealed & (1 << k) == 0;
                    let mut best: Option<usize> = None;
                    for (k, &l) in row.iter().enumerate() {
                        if covered(k) && best.is_none_or(|b| l > row[b]) {
                            best = Some(k);
                        }
                    }
                    best.unwrap_or(0)
                }
            };
            actions.push(a);
            log_probs.push(row[a] - lse);
        }
        ActOutput {
            actions,
            log_probs,
            values,
            hidden: Hidden {
                h: g.value(s.state.h).data().to_vec(),
                c: g.value(s.state.c).data().to_vec(),
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        checkpoint::save(
            &self.store,
            path,
            json!({
                "kind": "policy",
                "side": self.side(),
                "grounding_dim": self.grounding_dim(),
                "activation": self.activation(),
            }),
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let m = checkpoint::read_manifest(path)?;
        let side = m.meta["side"].as_u64().unwrap_or(0) as usize;
        let dim = m.meta["grounding_dim"].as_u64().unwrap_or(0) as usize;
        let activation: Activation =
            serde_json::from_value(m.meta["activation"].clone()).unwrap_or_default();
        let mut net = PolicyNet::new(side, dim, activation, 0);
        checkpoint::load_into(&mut net.store, path)?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub hidden: Hidden,
}

/// Generalized advantage estimates for one trajectory. `values` holds one
/// more entry than `rewards`: the bootstrap value after the last step.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let t = rewards.len();
    assert_eq!(values.len(), t + 1);
    assert_eq!(dones.len(), t);
    let mut adv = vec![0.0; t];
    let mut next = 0.0;
    for i in (0..t).rev() {
        let live = if dones[i] { 0.0 } else { 1.0 };
        let delta = rewards[i] + gamma * values[i + 1] * live - values[i];
        next = delta + gamma * lambda * live * next;
        adv[i] = next;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts to mean 0 and scales to (population) std 1.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let m = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt();
    let sd = sd.max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - m) / sd);
}

/// One BPTT step across a minibatch of chunks.
#[derive(Clone, Debug)]
pub struct MiniStep {
    pub obs: Tensor,
    pub prev: Tensor,
    /// Rows whose episode starts here; their recurrent state is zeroed.
    pub reset: Vec<bool>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// `[B, dim]` grounding targets, when grounding is on.
    pub psi: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct MiniBatch {
    pub h0: Tensor,
    pub c0: Tensor,
    pub steps: Vec<MiniStep>,
}

impl MiniBatch {
    pub fn samples(&self) -> usize {
        self.steps.iter().map(|s| s.actions.len()).sum()
    }

    /// Normalizes advantages across every sample in the batch.
    pub fn normalize(&mut self) {
        let mut all: Vec<f64> = self.steps.iter().flat_map(|s| s.advantages.iter().copied()).collect();
        normalize_advantages(&mut all);
        let mut it = all.into_iter();
        for s in &mut self.steps {
            for a in &mut s.advantages {
                *a = it.next().unwrap();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub grounding: f64,
}

pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub grounding: Option<Var>,
}

/// Coefficients of the combined objective.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub clip: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub c_task: f64,
}

impl From<&PpoConfig> for LossWeights {
    fn from(c: &PpoConfig) -> Self {
        LossWeights {
            clip: c.clip,
            vf_coef: c.vf_coef,
            ent_coef: c.ent_coef,
            c_task: c.c_task,
        }
    }
}

fn vec_input(g: &mut Graph, v: &[f64]) -> Var {
    g.input(Tensor::new(vec![v.len()], v.to_vec()).unwrap())
}

/// Clipped surrogate + value + entropy + grounding objective over a minibatch.
pub fn ppo_loss(g: &mut Graph, net: &PolicyNet, batch: &MiniBatch, w: &LossWeights) -> Result<LossVars, AgentError> {
    let rows = batch.h0.rows();
    let mut state = LstmState {
        h: g.input(batch.h0.clone()),
        c: g.input(batch.c0.clone()),
    };
    let mut pg_sum: Option<Var> = None;
    let mut v_sum: Option<Var> = None;
    let mut e_sum: Option<Var> = None;
    let mut gr_sum: Option<Var> = None;
    let acc = |g: &mut Graph, slot: &mut Option<Var>, v: Var| {
        *slot = Some(match *slot {
            Some(s) => g.add(s, v),
            None => v,
        });
    };
    for (k, st) in batch.steps.iter().enumerate() {
        if k > 0 && st.reset.iter().any(|&r| r) {
            let mut mask = vec![1.0; rows * LSTM_UNITS];
            for (i, &r) in st.reset.iter().enumerate() {
                if r {
                    mask[i * LSTM_UNITS..(i + 1) * LSTM_UNITS].fill(0.0);
                }
            }
            let m = g.input(Tensor::new(vec![rows, LSTM_UNITS], mask).unwrap());
            state = LstmState {
                h: g.mul(state.h, m),
                c: g.mul(state.c, m),
            };
        }
        let s = net.step(g, st.obs.clone(), st.prev.clone(), state);
        state = s.state;

        let lp = g.log_softmax(s.logits);
        let lp_a = g.gather_cols(lp, &st.actions);
        let old = vec_input(g, &st.old_log_probs);
        let diff = g.sub(lp_a, old);
        let ratio = g.exp(diff);
        let adv = vec_input(g, &st.advantages);
        let s1 = g.mul(ratio, adv);
        let clipped = g.clamp(ratio, 1.0 - w.clip, 1.0 + w.clip);
        let s2 = g.mul(clipped, adv);
        let surr = g.minimum(s1, s2);
        let surr = g.sum(surr);
        acc(g, &mut pg_sum, surr);

        let v = g.reshape(s.value, &[rows]);
        let ret = vec_input(g, &st.returns);
        let d = g.sub(v, ret);
        let d = g.square(d);
        let d = g.sum(d);
        acc(g, &mut v_sum, d);

        let p = g.exp(lp);
        let plp = g.mul(p, lp);
        let ent = g.sum(plp);
        acc(g, &mut e_sum, ent);

        if let Some(psi) = &st.psi {
            let pred = net.ground(g, s.encoding).ok_or(AgentError::PsiDim {
                expected: 0,
                got: psi.cols(),
            })?;
            if psi.cols() != net.grounding_dim() {
                return Err(AgentError::PsiDim {
                    expected: net.grounding_dim(),
                    got: psi.cols(),
                });
            }
            let t = g.input(psi.clone());
            let d = g.sub(pred, t);
            let d = g.square(d);
            let d = g.sum(d);
            acc(g, &mut gr_sum, d);
        }
    }
    let n = batch.samples() as f64;
    let policy = g.scale(pg_sum.expect("empty minibatch"), -1.0 / n);
    let value = g.scale(v_sum.unwrap(), 1.0 / n);
    let entropy = g.scale(e_sum.unwrap(), -1.0 / n);
    let grounding = gr_sum.map(|s| g.scale(s, 1.0 / (n * net.grounding_dim() as f64)));

    let vt = g.scale(value, w.vf_coef);
    let et = g.scale(entropy, -w.ent_coef);
    let mut total = g.add(policy, vt);
    total = g.add(total, et);
    if let Some(gr) = grounding {
        if w.c_task != 0.0 {
            let gt = g.scale(gr, w.c_task);
            total = g.add(total, gt);
        }
    }
    Ok(LossVars {
        total,
        policy,
        value,
        entropy,
        grounding,
    })
}

fn read_parts(g: &Graph, l: &LossVars) -> LossParts {
    LossParts {
        total: g.value(l.total).item(),
        policy: g.value(l.policy).item(),
        value: g.value(l.value).item(),
        entropy: g.value(l.entropy).item(),
        grounding: l.grounding.map_or(f64::NAN, |v| g.value(v).item()),
    }
}

/// Per-step rollout storage, indexed `[t][env]`.
#[derive(Clone, Debug)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub n_steps: usize,
    pub chunk_len: usize,
    pub cells: usize,
    pub obs: Vec<Observation>,
    pub prev_actions: Vec<Option<usize>>,
    pub prev_rewards: Vec<f64>,
    pub episode_start: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub psi: Vec<Vec<f64>>,
    /// Hidden state at each chunk start, `[chunk][env]`.
    pub chunk_hidden: Vec<Hidden>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    fn idx(&self, t: usize, e: usize) -> usize {
        t * self.n_envs + e
    }

    /// Fills advantages and returns from per-env bootstrap values.
    pub fn finish(&mut self, last_values: &[f64], gamma: f64, lambda: f64) {
        let (t_len, e_len) = (self.n_steps, self.n_envs);
        self.advantages = vec![0.0; t_len * e_len];
        self.returns = vec![0.0; t_len * e_len];
        for e in 0..e_len {
            let r: Vec<f64> = (0..t_len).map(|t| self.rewards[self.idx(t, e)]).collect();
            let mut v: Vec<f64> = (0..t_len).map(|t| self.values[self.idx(t, e)]).collect();
            v.push(last_values[e]);
            let d: Vec<bool> = (0..t_len).map(|t| self.dones[self.idx(t, e)]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, gamma, lambda);
            for t in 0..t_len {
                let i = self.idx(t, e);
                self.advantages[i] = adv[t];
                self.returns[i] = ret[t];
            }
        }
    }

    /// Chunks are `(chunk index, env)` pairs.
    pub fn chunks(&self) -> Vec<(usize, usize)> {
        let per_env = self.n_steps.div_ceil(self.chunk_len);
        (0..per_env)
            .flat_map(|c| (0..self.n_envs).map(move |e| (c, e)))
            .collect()
    }

    pub fn minibatch(&self, net: &PolicyNet, chunks: &[(usize, usize)], grounding: bool) -> MiniBatch {
        let b = chunks.len();
        let mut h0 = Vec::with_capacity(b * LSTM_UNITS);
        let mut c0 = Vec::with_capacity(b * LSTM_UNITS);
        for &(c, e) in chunks {
            let (h, cc) = self.chunk_hidden[c].row(e);
            h0.extend_from_slice(h);
            c0.extend_from_slice(cc);
        }
        let start = chunks[0].0 * self.chunk_len;
        let len = self.chunk_len.min(self.n_steps - start);
        let mut steps = Vec::with_capacity(len);
        for k in 0..len {
            let ids: Vec<usize> = chunks.iter().map(|&(c, e)| self.idx(c * self.chunk_len + k, e)).collect();
            let obs: Vec<Observation> = ids.iter().map(|&i| self.obs[i]).collect();
            let pa: Vec<Option<usize>> = ids.iter().map(|&i| self.prev_actions[i]).collect();
            let pr: Vec<f64> = ids.iter().map(|&i| self.prev_rewards[i]).collect();
            let psi = grounding.then(|| {
                let dim = self.psi[ids[0]].len();
                let data: Vec<f64> = ids.iter().flat_map(|&i| self.psi[i].iter().copied()).collect();
                Tensor::new(vec![b, dim], data).unwrap()
            });
            steps.push(MiniStep {
                obs: net.obs_tensor(&obs),
                prev: net.prev_tensor(&pa, &pr),
                reset: ids.iter().map(|&i| self.episode_start[i]).collect(),
                actions: ids.iter().map(|&i| self.actions[i]).collect(),
                old_log_probs: ids.iter().map(|&i| self.log_probs[i]).collect(),
                advantages: ids.iter().map(|&i| self.advantages[i]).collect(),
                returns: ids.iter().map(|&i| self.returns[i]).collect(),
                psi,
            });
        }
        MiniBatch {
            h0: Tensor::new(vec![b, LSTM_UNITS], h0).unwrap(),
            c0: Tensor::new(vec![b, LSTM_UNITS], c0).unwrap(),
            steps,
        }
    }
}

#[derive(Clone, Debug)]
struct Slot {
    env: RevealEnv,
    entry: usize,
    psi: Vec<f64>,
    prev_action: Option<usize>,
    prev_reward: f64,
    start: bool,
    ret: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinishedEpisode {
    pub entry: usize,
    pub ret: f64,
    pub whites: u32,
}

/// Steps `n_envs` environments in lockstep, resetting finished ones on a
/// freshly sampled board.
pub struct Rollout<'a> {
    dataset: &'a BoardDataset,
    sampler: crate::board::BoardSampler,
    provider: Option<&'a EmbeddingProvider>,
    env_cfg: EnvConfig,
    slots: Vec<Slot>,
    hidden: Hidden,
    rng: Rng,
}

impl<'a> Rollout<'a> {
    pub fn new(
        dataset: &'a BoardDataset,
        provider: Option<&'a EmbeddingProvider>,
        n_envs: usize,
        env_cfg: EnvConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        let mut r = Rollout {
            dataset,
            sampler: dataset.sampler()?,
            provider,
            env_cfg,
            slots: Vec::with_capacity(n_envs),
            hidden: Hidden::zeros(n_envs),
            rng: rng_from_seed(seed),
        };
        for _ in 0..n_envs {
            let s = r.fresh_slot()?;
            r.slots.push(s);
        }
        Ok(r)
    }

    fn fresh_slot(&mut self) -> Result<Slot, AgentError> {
        loop {
            let entry = self.sampler.sample_index(&mut self.rng);
            let e = &self.dataset.entries[entry];
            let psi = match self.provider {
                Some(p) => p
                    .sample(&e.id, &mut self.rng)
                    .ok_or_else(|| AgentError::MissingBoard(e.id.clone()))?
                    .to_vec(),
                None => Vec::new(),
            };
            let (env, _) = RevealEnv::reset_with(e.board, self.env_cfg, &mut self.rng)?;
            // single-red boards finish at reset and give the agent nothing to do
            if env.done() {
                continue;
            }
            return Ok(Slot {
                env,
                entry,
                psi,
                prev_action: None,
                prev_reward: 0.0,
                start: true,
                ret: 0.0,
            });
        }
    }

    pub fn collect(
        &mut self,
        net: &PolicyNet,
        n_steps: usize,
        chunk_len: usize,
        finished: &mut Vec<FinishedEpisode>,
    ) -> Result<(RolloutBuffer, Vec<f64>), AgentError> {
        let e_len = self.slots.len();
        let total = n_steps * e_len;
        let mut buf = RolloutBuffer {
            n_envs: e_len,
            n_steps,
            chunk_len,
            cells: net.actions(),
            obs: Vec::with_capacity(total),
            prev_actions: Vec::with_capacity(total),
            prev_rewards: Vec::with_capacity(total),
            episode_start: Vec::with_capacity(total),
            actions: Vec::with_capacity(total),
            log_probs: Vec::with_capacity(total),
            values: Vec::with_capacity(total),
            rewards: Vec::with_capacity(total),
            dones: Vec::with_capacity(total),
            psi: Vec::with_capacity(if self.provider.is_some() { total } else { 0 }),
            chunk_hidden: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        };
        for t in 0..n_steps {
            if t % chunk_len == 0 {
                buf.chunk_hidden.push(self.hidden.clone());
            }
            let obs: Vec<Observation> = self.slots.iter().map(|s| s.env.observation()).collect();
            let pa: Vec<Option<usize>> = self.slots.iter().map(|s| s.prev_action).collect();
            let pr: Vec<f64> = self.slots.iter().map(|s| s.prev_reward).collect();
            let out = net.act(&obs, &pa, &pr, &self.hidden, Some(&mut self.rng));
            self.hidden = out.hidden;
            for e in 0..e_len {
                let a = out.actions[e];
                let step = self.slots[e].env.step(a)?;
                let reward = f64::from(step.reward);
                buf.obs.push(obs[e]);
                buf.prev_actions.push(pa[e]);
                buf.prev_rewards.push(pr[e]);
                buf.episode_start.push(self.slots[e].start);
                buf.actions.push(a);
                buf.log_probs.push(out.log_probs[e]);
                buf.values.push(out.values[e]);
                buf.rewards.push(reward);
                buf.dones.push(step.done);
                if self.provider.is_some() {
                    buf.psi.push(self.slots[e].psi.clone());
                }
                let slot = &mut self.slots[e];
                slot.ret += reward;
                slot.start = false;
                slot.prev_action = Some(a);
                slot.prev_reward = reward;
                if step.done {
                    finished.push(FinishedEpisode {
                        entry: slot.entry,
                        ret: slot.ret,
                        whites: slot.env.whites_revealed(),
                    });
                    self.slots[e] = self.fresh_slot()?;
                    self.hidden.reset_row(e);
                }
            }
        }
        let obs: Vec<Observation> = self.slots.iter().map(|s| s.env.observation()).collect();
        let pa: Vec<Option<usize>> = self.slots.iter().map(|s| s.prev_action).collect();
        let pr: Vec<f64> = self.slots.iter().map(|s| s.prev_reward).collect();
        let last = net.act(&obs, &pa, &pr, &self.hidden, None).values;
        Ok((buf, last))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: usize,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grounding_mse: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub episodes: usize,
    pub updates: usize,
    pub curve: Vec<CurveRow>,
    /// Grounding MSE of the untrained network on the first minibatch.
    pub initial_grounding_mse: Option<f64>,
    /// Mean grounding MSE over the final curve window.
    pub final_grounding_mse: Option<f64>,
    /// Mean z of training episodes in the final curve window.
    pub final_train_z: f64,
}

pub fn curve_csv(curve: &[CurveRow]) -> String {
    let mut s = String::from("episode,mean_return,policy_loss,value_loss,grounding_mse,entropy\n");
    for r in curve {
        s += &format!(
            "{},{},{},{},{},{}\n",
            r.episode, r.mean_return, r.policy_loss, r.value_loss, r.grounding_mse, r.entropy
        );
    }
    s
}

#[derive(Default)]
struct Window {
    returns: Vec<f64>,
    z: Vec<f64>,
    parts: Vec<LossParts>,
}

impl Window {
    fn row(&self, episode: usize) -> CurveRow {
        let m = |f: &dyn Fn(&LossParts) -> f64| {
            if self.parts.is_empty() {
                f64::NAN
            } else {
                self.parts.iter().map(f).sum::<f64>() / self.parts.len() as f64
            }
        };
        CurveRow {
            episode,
            mean_return: crate::analysis::mean(&self.returns),
            policy_loss: m(&|p| p.policy),
            value_loss: m(&|p| p.value),
            grounding_mse: m(&|p| p.grounding),
            entropy: m(&|p| p.entropy),
        }
    }
}

/// Heuristic statistics for every red-bearing board in a dataset.
pub fn dataset_heuristic_stats(dataset: &BoardDataset, runs: usize, seed: u64) -> Result<HashMap<String, HeuristicStats>, AgentError> {
    let mut out = HashMap::new();
    for (i, e) in dataset.entries.iter().enumerate() {
        if e.board.red_count() == 0 {
            continue;
        }
        out.insert(e.id.clone(), heuristic_stats(&e.board, &e.id, runs, derive_seed(seed, i as u64))?);
    }
    Ok(out)
}

/// Trains a fresh network. Grounding targets come from `provider` when given;
/// they enter the loss only if `c_task > 0`.
pub fn train(
    dataset: &BoardDataset,
    cfg: &PpoConfig,
    provider: Option<&EmbeddingProvider>,
    seed: u64,
    mut progress: impl FnMut(&CurveRow),
) -> Result<(PolicyNet, TrainReport), AgentError> {
    cfg.validate()?;
    let dataset = dataset.without_all_white();
    let n = dataset.entries.first().ok_or(DatasetError::Empty)?.board.n();
    if let Some(e) = dataset.entries.iter().find(|e| e.board.n() != n) {
        return Err(AgentError::BoardSize { expected: n, got: e.board.n() });
    }
    if cfg.c_task > 0.0 && provider.is_none() {
        return Err(AgentError::NoProvider);
    }
    if let Some(p) = provider {
        p.check_covers(dataset.ids())
            .map_err(|e| AgentError::MissingBoard(e.to_string()))?;
    }
    let dim = provider.map_or(0, |p| p.dim());
    let mut net = PolicyNet::new(n, dim, cfg.activation, derive_seed(seed, 0));
    let stats = dataset_heuristic_stats(&dataset, DEFAULT_HEURISTIC_RUNS, derive_seed(seed, 1))?;
    let mut rollout = Rollout::new(&dataset, provider, cfg.n_envs, cfg.env, derive_seed(seed, 2))?;
    let mut rng = rng_from_seed(derive_seed(seed, 3));
    let weights = LossWeights::from(cfg);
    let chunk_len = cfg.chunk_len();
    let per_batch = (cfg.batch_size / chunk_len).max(1);

    let mut episodes = 0usize;
    let mut updates = 0usize;
    let mut curve = Vec::new();
    let mut window = Window::default();
    let mut last_window = Window::default();
    let mut initial_grounding = None;
    let mut finished = Vec::new();
    while episodes < cfg.episodes {
        let lr = cfg.lr * (1.0 - episodes as f64 / cfg.episodes as f64);
        finished.clear();
        let (mut buf, last) = rollout.collect(&net, cfg.n_steps, chunk_len, &mut finished)?;
        buf.finish(&last, cfg.gamma, cfg.gae_lambda);

        let mut parts_sum = LossParts::default();
        let mut parts_n = 0.0;
        let mut chunks = buf.chunks();
        for _ in 0..cfg.n_epochs {
            chunks.shuffle(&mut rng);
            // chunks in one minibatch must share a time offset for batched BPTT
            let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
            let mut by_offset: Vec<Vec<(usize, usize)>> = vec![Vec::new(); buf.n_steps.div_ceil(chunk_len)];
            for &c in &chunks {
                by_offset[c.0].push(c);
            }
            for list in by_offset {
                for g in list.chunks(per_batch) {
                    groups.push(g.to_vec());
                }
            }
            groups.shuffle(&mut rng);
            for group in groups {
                let mut mb = buf.minibatch(&net, &group, provider.is_some());
                mb.normalize();
                let mut g = Graph::new();
                let lv = ppo_loss(&mut g, &net, &mb, &weights)?;
                let parts = read_parts(&g, &lv);
                if initial_grounding.is_none() && provider.is_some() {
                    initial_grounding = Some(parts.grounding);
                }
                let mut grads = g.backward(lv.total).for_params(&net.store);
                drop(g);
                grads.clip_global_norm(cfg.max_grad_norm);
                net.store.adam_step(&grads, lr, &cfg.adam);
                parts_sum.total += parts.total;
                parts_sum.policy += parts.policy;
                parts_sum.value += parts.value;
                parts_sum.entropy += parts.entropy;
                parts_sum.grounding += parts.grounding;
                parts_n += 1.0;
            }
        }
        updates += 1;
        let avg = LossParts {
            total: parts_sum.total / parts_n,
            policy: parts_sum.policy / parts_n,
            value: parts_sum.value / parts_n,
            entropy: parts_sum.entropy / parts_n,
            grounding: parts_sum.grounding / parts_n,
        };
        window.parts.push(avg);
        for f in &finished {
            let e = &dataset.entries[f.entry];
            window.returns.push(f.ret);
            window.z.push(z_score(f64::from(f.whites), &stats[&e.id]));
            episodes += 1;
            if episodes % CURVE_EVERY == 0 || episodes == cfg.episodes {
                let row = window.row(episodes);
                progress(&row);
                curve.push(row);
                last_window = std::mem::take(&mut window);
            }
            if episodes >= cfg.episodes {
                break;
            }
        }
    }
    let final_grounding = provider.map(|_| {
        let p = &last_window.parts;
        p.iter().map(|x| x.grounding).sum::<f64>() / p.len().max(1) as f64
    });
    let report = TrainReport {
        episodes,
        updates,
        curve,
        initial_grounding_mse: initial_grounding,
        final_grounding_mse: final_grounding,
        final_train_z: crate::analysis::mean(&last_window.z),
    };
    Ok((net, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoardEval {
    pub board_id: String,
    pub episodes: usize,
    pub mean_whites: f64,
    pub mean_z: f64,
    pub ci95: (f64, f64),
    pub heuristic: HeuristicStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub episodes_per_board: usize,
    pub mean_z: f64,
    pub ci95: (f64, f64),
    pub boards: Vec<BoardEval>,
    #[serde(skip)]
    pub traces: Vec<EpisodeTrace>,
}

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// Greedy rollouts from seeded random starts, scored against the heuristic.
pub fn evaluate(
    net: &PolicyNet,
    test: &BoardDataset,
    episodes_per_board: usize,
    env_cfg: EnvConfig,
    seed: u64,
) -> Result<EvalReport, AgentError> {
    let test = test.without_all_white();
    let stats = dataset_heuristic_stats(&test, DEFAULT_HEURISTIC_RUNS, derive_seed(seed, 1))?;
    let mut boards = Vec::new();
    let mut traces = Vec::new();
    let mut all_z = Vec::new();
    for (bi, e) in test.entries.iter().enumerate() {
        if e.board.n() != net.side() {
            return Err(AgentError::BoardSize {
                expected: net.side(),
                got: e.board.n(),
            });
        }
        let st = &stats[&e.id];
        let mut zs = Vec::with_capacity(episodes_per_board);
        let mut whites_sum = 0.0;
        for k in 0..episodes_per_board {
            let ep_seed = derive_seed(seed, ((bi as u64) << 32) | k as u64);
            let trace = greedy_episode(net, &e.id, &e.board, env_cfg, ep_seed, st)?;
            whites_sum += f64::from(trace.whites);
            zs.push(trace.z);
            traces.push(trace);
        }
        all_z.extend_from_slice(&zs);
        boards.push(BoardEval {
            board_id: e.id.clone(),
            episodes: episodes_per_board,
            mean_whites: whites_sum / episodes_per_board.max(1) as f64,
            mean_z: crate::analysis::mean(&zs),
            ci95: bootstrap_mean_ci(&zs, BOOTSTRAP_RESAMPLES, 0.95, derive_seed(seed, 1_000 + bi as u64)),
            heuristic: st.clone(),
        });
    }
    Ok(EvalReport {
        seed,
        episodes_per_board,
        mean_z: crate::analysis::mean(&all_z),
        ci95: bootstrap_mean_ci(&all_z, BOOTSTRAP_RESAMPLES, 0.95, derive_seed(seed, 2)),
        boards,
        traces,
    })
}

pub fn greedy_episode(
    net: &PolicyNet,
    board_id: &str,
    board: &crate::board::Board,
    env_cfg: EnvConfig,
    seed: u64,
    stats: &HeuristicStats,
) -> Result<EpisodeTrace, AgentError> {
    let (mut env, mut obs) = RevealEnv::reset_with(*board, env_cfg, &mut rng_from_seed(seed))?;
    let mut hidden = Hidden::zeros(1);
    let mut prev = (None, 0.0);
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    while !env.done() {
        let out = net.act(&[obs], &[prev.0], &[prev.1], &hidden, None);
        hidden = out.hidden;
        let a = out.actions[0];
        let r = env.step(a)?;
        obs = r.obs;
        actions.push(a);
        rewards.push(r.reward);
        prev = (Some(a), f64::from(r.reward));
    }
    Ok(EpisodeTrace {
        board_id: board_id.to_string(),
        seed,
        actions,
        rewards,
        whites: env.whites_revealed(),
        z: z_score(f64::from(env.whites_revealed()), stats),
    })
}

pub fn write_traces(path: &Path, traces: &[EpisodeTrace]) -> Result<(), AgentError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for t in traces {
        writeln!(w, "{}", serde_json::to_string(t).map_err(std::io::Error::other)?)?;
    }
    w.flush()?;
    Ok(())
}

/// A small two-step rollout with random targets, for gradient checks.
pub fn toy_minibatch(net: &PolicyNet, seed: u64) -> MiniBatch {
    let n = net.side();
    let cells = n * n;
    let mut rng = rng_from_seed(seed);
    let b = 2;
    let mut steps = Vec::new();
    for k in 0..2 {
        let obs: Vec<Observation> = (0..b)
            .map(|_| {
                let revealed: u64 = rng.random::<u64>() & ((1 << cells) - 1);
                Observation {
                    n,
                    revealed,
                    reds: revealed & rng.random::<u64>(),
                }
            })
            .collect();
        let pa: Vec<Option<usize>> = (0..b).map(|i| (k > 0 || i == 1).then(|| rng.random_range(0..cells))).collect();
        let pr: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..5.0)).collect();
        let psi = net.grounding_dim();
        steps.push(MiniStep {
            obs: net.obs_tensor(&obs),
            prev: net.prev_tensor(&pa, &pr),
            reset: vec![k == 0, k == 1],
            actions: (0..b).map(|_| rng.random_range(0..cells)).collect(),
            old_log_probs: (0..b).map(|_| -(cells as f64).ln() + rng.random_range(-0.1..0.1)).collect(),
            advantages: (0..b).map(|_| rng.random_range(-1.0..1.0)).collect(),
            returns: (0..b).map(|_| rng.random_range(-1.0..3.0)).collect(),
            psi: (psi > 0).then(|| {
                Tensor::new(vec![b, psi], (0..b * psi).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            }),
        });
    }
    let h = (0..b * LSTM_UNITS).map(|_| rng.random_range(-0.5..0.5)).collect();
    let c = (0..b * LSTM_UNITS).map(|_| rng.random_range(-0.5..0.5)).collect();
    MiniBatch {
        h0: Tensor::new(vec![b, LSTM_UNITS], h).unwrap(),
        c0: Tensor::new(vec![b, LSTM_UNITS], c).unwrap(),
        steps,
    }
}

/// Finite-difference check of the full objective on a toy rollout.
pub fn policy_grad_check(seed: u64, per_param: Option<usize>) -> GradCheckReport {
    let mut net = PolicyNet::new(3, 8, Activation::Tanh, seed);
    let batch = toy_minibatch(&net, seed ^ 1);
    let w = LossWeights {
        clip: 0.3,
        vf_coef: 0.5,
        ent_coef: 0.01,
        c_task: 0.5,
    };
    let layers = net.layers;
    let cfg = GradCheckConfig {
        per_param,
        seed,
        ..Default::default()
    };
    gradcheck::check(&mut net.store, &cfg, |g, store| {
        let view = PolicyNetView { store, layers };
        view.loss(g, &batch, &w)
    })
}

/// Borrowed network, so gradient checks can rebuild the loss from a
/// perturbed store.
struct PolicyNetView<'a> {
    store: &'a ParamStore,
    layers: PolicyLayers,
}

impl PolicyNetView<'_> {
    fn loss(&self, g: &mut Graph, batch: &MiniBatch, w: &LossWeights) -> Var {
        let net = PolicyNet {
            store: self.store.clone(),
            layers: self.layers,
        };
        ppo_loss(g, &net, batch, w).unwrap().total
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::Board;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let mut net = PolicyNet::new(4, 0, Activation::Tanh, 0);
        let w = net.layers.policy.weight;
        net.store.replace(w, Tensor::zeros(&[LSTM_UNITS, 16]));
        let (env, obs) = RevealEnv::reset(Board::full(4).unwrap(), 0).unwrap();
        drop(env);
        let out = net.act(&[obs], &[None], &[0.0], &Hidden::zeros(1), Some(&mut rng_from_seed(1)));
        assert!((out.log_probs[0] - (1.0f64 / 16.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn act_is_deterministic() {
        let net = PolicyNet::new(4, 0, Activation::Tanh, 3);
        let b: Board = "1100/0000/0000/0000".parse().unwrap();
        let (_, obs) = RevealEnv::reset(b, 0).unwrap();
        let run = || net.act(&[obs, obs], &[None, Some(3)], &[0.0, 1.0], &Hidden::zeros(2), Some(&mut rng_from_seed(9)));
        assert_eq!(run(), run());
    }

    #[test]
    fn greedy_picks_argmax() {
        let mut net = PolicyNet::new(4, 0, Activation::Tanh, 0);
        let (w, bias) = (net.layers.policy.weight, net.layers.policy.bias);
        net.store.replace(w, Tensor::zeros(&[LSTM_UNITS, 16]));
        let mut bv = Tensor::zeros(&[16]);
        bv.data_mut()[0] = 10.0;
        net.store.replace(bias, bv);
        let b: Board = "0110/0000/0000/0000".parse().unwrap();
        let (_, obs) = RevealEnv::reset(b, 0).unwrap();
        assert_eq!(net.act(&[obs], &[None], &[0.0], &Hidden::zeros(1), None).actions, vec![0]);
        // revealed tiles are never chosen greedily
        let mut bv = Tensor::zeros(&[16]);
        let first = obs.revealed.trailing_zeros() as usize;
        bv.data_mut()[first] = 10.0;
        net.store.replace(bias, bv);
        assert_ne!(net.act(&[obs], &[None], &[0.0], &Hidden::zeros(1), None).actions[0], first);
    }

    #[test]
    fn gae_hand_cases() {
        let (a, r) = compute_gae(&[2.5], &[0.0, 0.0], &[true], 1.0, 1.0);
        assert_eq!((a[0], r[0]), (2.5, 2.5));
        let (a, _) = compute_gae(&[0.0; 3], &[4.0; 4], &[false; 3], 1.0, 0.95);
        assert!(a.iter().all(|&x| x == 0.0));
        let (a, _) = compute_gae(&[1.0, 1.0], &[0.0; 3], &[false, false], 0.9, 0.95);
        assert!((a[0] - 1.855).abs() < 1e-12);
        assert!((a[1] - 1.0).abs() < 1e-12);
        // terminal cuts the recursion
        let (a, _) = compute_gae(&[1.0, 7.0], &[0.0, 5.0, 9.0], &[true, false], 0.9, 0.95);
        assert!((a[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn advantage_normalization_contract() {
        let mut rng = rng_from_seed(4);
        let mut a: Vec<f64> = (0..257).map(|_| rng.random_range(-30.0..50.0)).collect();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / a.len() as f64;
        let sd = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }

    fn losses(net: &PolicyNet, mb: &MiniBatch, w: &LossWeights) -> (LossParts, crate::nn::Grads) {
        let mut g = Graph::new();
        let lv = ppo_loss(&mut g, net, mb, w).unwrap();
        let parts = read_parts(&g, &lv);
        (parts, g.backward(lv.total).for_params(&net.store))
    }

    #[test]
    fn clipped_surrogate_uses_min() {
        // single sample, ratio forced to 2 via old log-prob
        let net = PolicyNet::new(3, 0, Activation::Tanh, 0);
        let mut mb = toy_minibatch(&net, 2);
        mb.steps.truncate(1);
        let mut g = Graph::new();
        let state = LstmState {
            h: g.input(mb.h0.clone()),
            c: g.input(mb.c0.clone()),
        };
        let s = net.step(&mut g, mb.steps[0].obs.clone(), mb.steps[0].prev.clone(), state);
        let lp = g.log_softmax(s.logits);
        let lp = g.value(lp).clone();
        let st = &mut mb.steps[0];
        for i in 0..2 {
            st.old_log_probs[i] = lp.row(i)[st.actions[i]] - 2f64.ln();
            st.advantages[i] = 1.0;
        }
        let w = LossWeights {
            clip: 0.3,
            vf_coef: 0.0,
            ent_coef: 0.0,
            c_task: 0.0,
        };
        let (p, _) = losses(&net, &mb, &w);
        assert!((p.policy + 1.3).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn zero_task_weight_matches_pure_ppo() {
        let net = PolicyNet::new(3, 5, Activation::Tanh, 1);
        let mb = toy_minibatch(&net, 3);
        let mut no_psi = mb.clone();
        no_psi.steps.iter_mut().for_each(|s| s.psi = None);
        let w = LossWeights {
            clip: 0.3,
            vf_coef: 0.4,
            ent_coef: 0.02,
            c_task: 0.0,
        };
        let (a, ga) = losses(&net, &mb, &w);
        let (b, gb) = losses(&net, &no_psi, &w);
        assert_eq!(a.total, b.total);
        for (x, y) in ga.0.iter().zip(&gb.0) {
            assert!(x.max_abs_diff(y) == 0.0);
        }
    }

    #[test]
    fn perfect_grounding_prediction_costs_nothing() {
        let net = PolicyNet::new(3, 4, Activation::Relu, 5);
        let mut mb = toy_minibatch(&net, 6);
        for st in &mut mb.steps {
            let mut g = Graph::new();
            let e = net.encode(&mut g, st.obs.clone());
            let p = net.ground(&mut g, e).unwrap();
            st.psi = Some(g.value(p).clone());
        }
        let w = LossWeights {
            clip: 0.3,
            vf_coef: 0.5,
            ent_coef: 0.0,
            c_task: 1.0,
        };
        assert!(losses(&net, &mb, &w).0.grounding.abs() < 1e-24);
        let mut bad = mb.clone();
        bad.steps[0].psi = Some(Tensor::zeros(&[2, 3]));
        let mut g = Graph::new();
        assert!(matches!(ppo_loss(&mut g, &net, &bad, &w), Err(AgentError::PsiDim { .. })));
    }

    #[test]
    fn grounding_gradient_stays_in_encoder_and_head() {
        let net = PolicyNet::new(3, 6, Activation::Tanh, 7);
        let mb = toy_minibatch(&net, 8);
        let mut g = Graph::new();
        let lv = ppo_loss(&mut g, &net, &mb, &LossWeights {
            clip: 0.3,
            vf_coef: 1.0,
            ent_coef: 1.0,
            c_task: 1.0,
        })
        .unwrap();
        let grads = g.backward(lv.grounding.unwrap()).for_params(&net.store);
        for (id, t) in net.store.ids().zip(&grads.0) {
            let name = net.store.name(id);
            let norm = t.norm_sq();
            if name.starts_with("conv") || name.starts_with("enc") || name.starts_with("ground") {
                if !name.ends_with("bias") {
                    assert!(norm > 0.0, "{name} has no grounding gradient");
                }
            } else {
                assert_eq!(norm, 0.0, "{name} receives grounding gradient");
            }
        }
    }

    #[test]
    fn full_loss_gradient_check() {
        let r = policy_grad_check(11, Some(6));
        let w = r.worst().unwrap();
        assert!(r.max_rel_err() < 1e-4, "{} [{}]: {} vs {}", w.param, w.index, w.analytic, w.numeric);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.bin");
        let net = PolicyNet::new(4, 7, Activation::Relu, 2);
        net.save(&p).unwrap();
        let back = PolicyNet::load(&p).unwrap();
        assert_eq!(back.store.flat_values(), net.store.flat_values());
        assert_eq!((back.grounding_dim(), back.activation()), (7, Activation::Relu));
    }

    #[test]
    fn presets_validate() {
        PpoConfig::grounding().validate().unwrap();
        PpoConfig::no_grounding().validate().unwrap();
        let mut c = PpoConfig::grounding();
        c.clip = 1.0;
        assert!(c.validate().is_err());
        assert_eq!(PpoConfig::preset("no-grounding").unwrap().n_steps, 2048);
    }
}
