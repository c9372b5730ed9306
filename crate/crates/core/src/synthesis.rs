//! Program search over the drawing DSL: unigram-guided best-first
//! enumeration, the convolutional recognition model, dream sampling, and
//! the wake/sleep loop that ties them to library compression.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use ordered_float::OrderedFloat;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::board::{Board, BoardDataset};
use crate::dsl::{parse_program, DslError, FnId, Instr, Library, Machine, Program, Score, MISSED_CELL_PENALTY};
use crate::library::{compress, mdl, CompressionReport};
use crate::nn::gradcheck::{check, GradCheckConfig, GradCheckReport};
use crate::nn::layers::cross_entropy;
use crate::nn::{checkpoint, AdamConfig, Conv2d, Dense, Graph, NnError, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Production {
    Move,
    Left,
    Right,
    PenUp,
    PenDown,
    Fork,
    Call(FnId),
}

pub const PRIMITIVE_COUNT: usize = 6;

impl Production {
    pub fn of(instr: &Instr) -> Production {
        match instr {
            Instr::Move => Production::Move,
            Instr::Left => Production::Left,
            Instr::Right => Production::Right,
            Instr::PenUp => Production::PenUp,
            Instr::PenDown => Production::PenDown,
            Instr::Fork(_) => Production::Fork,
            Instr::Call(id) => Production::Call(*id),
        }
    }

    /// Position in the production list of any library.
    pub fn index(self) -> usize {
        match self {
            Production::Move => 0,
            Production::Left => 1,
            Production::Right => 2,
            Production::PenUp => 3,
            Production::PenDown => 4,
            Production::Fork => 5,
            Production::Call(id) => PRIMITIVE_COUNT + id.0,
        }
    }

    pub fn from_index(i: usize) -> Production {
        match i {
            0 => Production::Move,
            1 => Production::Left,
            2 => Production::Right,
            3 => Production::PenUp,
            4 => Production::PenDown,
            5 => Production::Fork,
            k => Production::Call(FnId(k - PRIMITIVE_COUNT)),
        }
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Production::Move => f.write_str("move"),
            Production::Left => f.write_str("left"),
            Production::Right => f.write_str("right"),
            Production::PenUp => f.write_str("pen-up"),
            Production::PenDown => f.write_str("pen-down"),
            Production::Fork => f.write_str("fork"),
            Production::Call(id) => write!(f, "{id}"),
        }
    }
}

pub fn production_count(library: &Library) -> usize {
    PRIMITIVE_COUNT + library.len()
}

/// Token counts of a program, indexed like [`Production::index`].
pub fn token_counts(program: &Program, productions: usize) -> Vec<f64> {
    fn walk(p: &Program, out: &mut Vec<f64>) {
        for i in p.instrs() {
            let k = Production::of(i).index();
            if k >= out.len() {
                out.resize(k + 1, 0.0);
            }
            out[k] += 1.0;
            if let Instr::Fork(body) = i {
                walk(body, out);
            }
        }
    }
    let mut out = vec![0.0; productions];
    walk(program, &mut out);
    out
}

/// Normalized log-probabilities over the productions of one library state.
#[derive(Clone, Debug, PartialEq)]
pub struct UnigramGrammar {
    log_weights: Vec<f64>,
}

impl UnigramGrammar {
    pub fn uniform(library: &Library) -> Self {
        let k = production_count(library);
        UnigramGrammar {
            log_weights: vec![-(k as f64).ln(); k],
        }
    }

    /// Normalizes arbitrary logits (softmax).
    pub fn from_logits(logits: &[f64]) -> Self {
        let lse = crate::nn::graph::log_sum_exp(logits);
        UnigramGrammar {
            log_weights: logits.iter().map(|x| x - lse).collect(),
        }
    }

    /// Normalizes nonnegative weights; zero weights become impossible tokens.
    pub fn from_weights(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "grammar needs positive total weight");
        UnigramGrammar {
            log_weights: weights.iter().map(|w| (w / total).ln()).collect(),
        }
    }

    /// Token frequencies of a corpus plus `pseudo_count` per production.
    pub fn empirical(programs: &[Program], library: &Library, pseudo_count: f64) -> Self {
        let k = production_count(library);
        let mut w = vec![pseudo_count; k];
        for p in programs {
            for (a, b) in w.iter_mut().zip(token_counts(p, k)) {
                *a += b;
            }
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return UnigramGrammar::uniform(library);
        }
        UnigramGrammar::from_weights(&w)
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_prob(&self, p: Production) -> f64 {
        self.log_weights.get(p.index()).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn prob(&self, p: Production) -> f64 {
        self.log_prob(p).exp()
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_weights.iter().map(|x| x.exp()).collect()
    }

    /// KL(self ‖ other) in nats.
    pub fn kl(&self, other: &UnigramGrammar) -> f64 {
        self.log_weights
            .iter()
            .zip(&other.log_weights)
            .filter(|(a, _)| a.is_finite())
            .map(|(a, b)| a.exp() * (a - b))
            .sum()
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.log_weights
            .iter()
            .enumerate()
            .map(|(i, &w)| (Production::from_index(i).to_string(), w))
            .collect()
    }

    fn sample(&self, rng: &mut Rng) -> Production {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.log_weights.iter().enumerate() {
            acc += w.exp();
            if u < acc {
                return Production::from_index(i);
            }
        }
        let last = self.log_weights.iter().rposition(|w| w.is_finite()).unwrap_or(0);
        Production::from_index(last)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_nodes: usize,
    pub max_program_size: usize,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_nodes: 200_000,
            max_program_size: 20,
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult {
    pub task_id: String,
    pub best_program: Option<Program>,
    pub best_score: Score,
    pub nodes_expanded: usize,
    /// Node count at which the returned program was first seen.
    pub found_at: usize,
    /// The frontier emptied, so the result is optimal within the size cap.
    pub exhausted: bool,
}

impl SolveResult {
    /// The program reproduces every red cell of the target.
    pub fn solved(&self) -> bool {
        self.best_score.value().is_some_and(|v| v > -MISSED_CELL_PENALTY)
    }
}

const END: u16 = u16::MAX;

struct SearchNode {
    parent: u32,
    token: u16,
    open: u8,
    size: u16,
    cost: f64,
}

fn build_program(arena: &[SearchNode], mut idx: u32) -> Program {
    let mut tokens = Vec::new();
    while idx != 0 {
        let node = &arena[idx as usize];
        tokens.push(node.token);
        idx = node.parent;
    }
    tokens.reverse();
    let mut stack: Vec<Vec<Instr>> = vec![Vec::new()];
    for t in tokens {
        if t == END {
            let body = stack.pop().unwrap();
            stack.last_mut().unwrap().push(Instr::Fork(Program(body)));
            continue;
        }
        match Production::from_index(t as usize) {
            Production::Fork => stack.push(Vec::new()),
            p => stack.last_mut().unwrap().push(match p {
                Production::Move => Instr::Move,
                Production::Left => Instr::Left,
                Production::Right => Instr::Right,
                Production::PenUp => Instr::PenUp,
                Production::PenDown => Instr::PenDown,
                Production::Call(id) => Instr::Call(id),
                Production::Fork => unreachable!(),
            }),
        }
    }
    while stack.len() > 1 {
        let body = stack.pop().unwrap();
        stack.last_mut().unwrap().push(Instr::Fork(Program(body)));
    }
    Program(stack.pop().unwrap())
}

struct Evaluation {
    score: Score,
    /// Upper bound on the score of any extension.
    bound: Option<i64>,
}

fn evaluate(program: &Program, target: &Board, library: &Library) -> Evaluation {
    let n = target.n();
    let mask = target.mask();
    let mut score = Score::NegInfinity;
    let mut bound: Option<i64> = None;
    for r in 0..n {
        for c in 0..n {
            let mut m = Machine::new(n, r, c);
            if m.run(program, library, 0).is_err() {
                continue;
            }
            if m.marked & !mask != 0 {
                continue;
            }
            let missed = (mask & !m.marked).count_ones() as i64;
            let s = -MISSED_CELL_PENALTY * missed - m.pen_motions as i64;
            score = score.max(Score::Finite(s));
            let b = -(m.pen_motions as i64);
            bound = Some(bound.map_or(b, |x| x.max(b)));
        }
    }
    Evaluation { score, bound }
}

/// Best-first search over token sequences ordered by prefix cost
/// `Σ −log p(token)`. Every popped prefix is scored as a complete program
/// (open forks closed). Ties in score go to the smaller program, then to
/// the lexicographically smaller printed form.
pub fn enumerate(target: &Board, grammar: &UnigramGrammar, budget: &SearchBudget, library: &Library) -> SolveResult {
    let started = Instant::now();
    let prods = production_count(library).min(grammar.len());
    let costs: Vec<f64> = (0..prods).map(|i| -grammar.log_weights()[i]).collect();
    let fork = Production::Fork.index();

    let mut arena = vec![SearchNode {
        parent: 0,
        token: 0,
        open: 0,
        size: 0,
        cost: 0.0,
    }];
    let mut heap: BinaryHeap<Reverse<(OrderedFloat<f64>, u32)>> = BinaryHeap::new();
    heap.push(Reverse((OrderedFloat(0.0), 0)));

    let mut best: Option<(Program, Score, usize, String)> = None;
    let mut found_at = 0;
    let mut expanded = 0;
    let mut exhausted = true;

    while let Some(Reverse((_, idx))) = heap.pop() {
        if expanded >= budget.max_nodes || (expanded % 256 == 0 && started.elapsed() >= budget.timeout) {
            exhausted = false;
            break;
        }
        expanded += 1;
        let (size, open, cost, token) = {
            let n = &arena[idx as usize];
            (n.size as usize, n.open, n.cost, n.token)
        };
        let program = build_program(&arena, idx);
        let eval = evaluate(&program, target, library);
        if eval.score.is_finite() {
            let better = match &best {
                None => true,
                Some((_, s, bs, bp)) => {
                    eval.score > *s
                        || (eval.score == *s
                            && (size < *bs || (size == *bs && program.to_string() < *bp)))
                }
            };
            if better {
                let printed = program.to_string();
                best = Some((program, eval.score, size, printed));
                found_at = expanded;
            }
        }
        let Some(bound) = eval.bound else { continue };
        if let Some((_, Score::Finite(bs), bsize, _)) = &best {
            if bound < *bs || (bound == *bs && size >= *bsize) {
                continue;
            }
        }
        if arena.len() >= u32::MAX as usize - prods - 2 {
            exhausted = false;
            break;
        }
        let just_opened = idx != 0 && token as usize == fork;
        if open > 0 && !just_opened {
            arena.push(SearchNode {
                parent: idx,
                token: END,
                open: open - 1,
                size: size as u16,
                cost,
            });
            heap.push(Reverse((OrderedFloat(cost), (arena.len() - 1) as u32)));
        }
        for (k, &c) in costs.iter().enumerate() {
            if !c.is_finite() {
                continue;
            }
            // a fork needs room for at least one body token
            let extra = if k == fork { 2 } else { 1 };
            if size + extra > budget.max_program_size {
                continue;
            }
            arena.push(SearchNode {
                parent: idx,
                token: k as u16,
                open: if k == fork { open + 1 } else { open },
                size: (size + 1) as u16,
                cost: cost + c,
            });
            heap.push(Reverse((OrderedFloat(cost + c), (arena.len() - 1) as u32)));
        }
    }

    let (best_program, best_score) = match best {
        Some((p, s, ..)) => (Some(p), s),
        None => (None, Score::NegInfinity),
    };
    SolveResult {
        task_id: String::new(),
        best_program,
        best_score,
        nodes_expanded: expanded,
        found_at,
        exhausted,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("board side {got} does not match model side {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("no training examples")]
    EmptyTraining,
    #[error("no tasks")]
    NoTasks,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dsl(#[from] DslError),
    #[error("bad checkpoint metadata: {0}")]
    Meta(String),
}

/// conv(1→16, 3×3) → relu → dense 64 → relu → dense 64 → relu → linear head.
/// The second 64-unit layer is the board embedding.
pub struct RecognitionNet {
    pub store: ParamStore,
    layers: RecognitionLayers,
}

#[derive(Clone, Copy)]
struct RecognitionLayers {
    n: usize,
    conv: Conv2d,
    fc1: Dense,
    fc2: Dense,
    head: Dense,
}

impl RecognitionLayers {
    fn forward(&self, g: &mut Graph, store: &ParamStore, input: Tensor) -> (Var, Var) {
        let b = input.shape()[0];
        let x = g.input(input);
        let h = self.conv.forward(g, store, x);
        let h = g.relu(h);
        let h = g.reshape(h, &[b, CONV_CHANNELS * self.n * self.n]);
        let h = self.fc1.forward(g, store, h);
        let h = g.relu(h);
        let h = self.fc2.forward(g, store, h);
        let e = g.relu(h);
        let logits = self.head.forward(g, store, e);
        (e, logits)
    }
}

pub const EMBEDDING_DIM: usize = 64;
const CONV_CHANNELS: usize = 16;

impl RecognitionNet {
    pub fn new(n: usize, productions: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "conv", 1, CONV_CHANNELS, 3, &mut rng);
        let gain = 2f64.sqrt();
        let fc1 = Dense::new(&mut store, "fc1", CONV_CHANNELS * n * n, EMBEDDING_DIM, gain, &mut rng);
        let fc2 = Dense::new(&mut store, "fc2", EMBEDDING_DIM, EMBEDDING_DIM, gain, &mut rng);
        let head = Dense::new(&mut store, "head", EMBEDDING_DIM, productions, 1.0, &mut rng);
        RecognitionNet {
            store,
            layers: RecognitionLayers {
                n,
                conv,
                fc1,
                fc2,
                head,
            },
        }
    }

    pub fn side(&self) -> usize {
        self.layers.n
    }

    pub fn productions(&self) -> usize {
        self.layers.head.outputs
    }

    pub fn zero_parameters(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            let shape = self.store.get(id).shape().to_vec();
            self.store.replace(id, Tensor::zeros(&shape));
        }
    }

    fn input(&self, boards: &[&Board]) -> Result<Tensor, SynthesisError> {
        let n = self.layers.n;
        let mut data = Vec::with_capacity(boards.len() * n * n);
        for b in boards {
            if b.n() != n {
                return Err(SynthesisError::SizeMismatch { expected: n, got: b.n() });
            }
            data.extend(b.to_f64());
        }
        Ok(Tensor::new(vec![boards.len(), 1, n, n], data)?)
    }

    /// Returns `(embedding, logits)` nodes for a batch.
    pub fn forward(&self, g: &mut Graph, input: Tensor) -> (Var, Var) {
        self.layers.forward(g, &self.store, input)
    }

    pub fn embed_board(&self, board: &Board) -> Result<Vec<f64>, SynthesisError> {
        let input = self.input(&[board])?;
        let mut g = Graph::new();
        let (e, _) = self.forward(&mut g, input);
        Ok(g.value(e).data().to_vec())
    }

    pub fn logits(&self, board: &Board) -> Result<Vec<f64>, SynthesisError> {
        let input = self.input(&[board])?;
        let mut g = Graph::new();
        let (_, l) = self.forward(&mut g, input);
        Ok(g.value(l).data().to_vec())
    }

    pub fn predict_grammar(&self, board: &Board) -> Result<UnigramGrammar, SynthesisError> {
        Ok(UnigramGrammar::from_logits(&self.logits(board)?))
    }

    /// Widens the head for newly adopted library functions; old outputs are kept.
    pub fn grow_head(&mut self, productions: usize) {
        let old = self.layers.head.outputs;
        if productions <= old {
            return;
        }
        let w = self.store.get(self.layers.head.weight).clone();
        let rows = w.rows();
        let mut nw = vec![0.0; rows * productions];
        for r in 0..rows {
            nw[r * productions..r * productions + old].copy_from_slice(w.row(r));
        }
        let mut nb = self.store.get(self.layers.head.bias).data().to_vec();
        nb.resize(productions, 0.0);
        self.store.replace(self.layers.head.weight, Tensor::new(vec![rows, productions], nw).unwrap());
        self.store.replace(self.layers.head.bias, Tensor::new(vec![productions], nb).unwrap());
        self.layers.head.outputs = productions;
    }

    fn loss(&self, g: &mut Graph, input: Tensor, targets: Tensor) -> Var {
        let (_, logits) = self.forward(g, input);
        cross_entropy(g, logits, targets)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthesisError> {
        let meta = serde_json::json!({
            "model": "recognition",
            "side": self.layers.n,
            "productions": self.layers.head.outputs,
            "conv_channels": CONV_CHANNELS,
            "hidden": [EMBEDDING_DIM, EMBEDDING_DIM],
            "activation": "relu",
        });
        checkpoint::save(&self.store, path, meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        let manifest = checkpoint::read_manifest(path)?;
        let get = |k: &str| {
            manifest.meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| SynthesisError::Meta(format!("missing {k}")))
        };
        let mut net = RecognitionNet::new(get("side")?, get("productions")?, 0);
        checkpoint::load_into(&mut net.store, path)?;
        Ok(net)
    }
}

/// Gradient check of the recognition loss on a small batch.
pub fn recognition_grad_check(seed: u64, per_param: Option<usize>) -> GradCheckReport {
    let mut net = RecognitionNet::new(4, 8, seed);
    let boards: Vec<Board> = [0x8421u64, 0x0f0f, 0x0660]
        .iter()
        .map(|&m| Board::from_mask(4, m).unwrap())
        .collect();
    let refs: Vec<&Board> = boards.iter().collect();
    let input = net.input(&refs).unwrap();
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let targets: Vec<f64> = (0..3 * 8).map(|_| rng.random::<f64>()).collect();
    let mut targets = Tensor::new(vec![3, 8], targets).unwrap();
    for r in 0..3 {
        let s: f64 = targets.row(r).iter().sum();
        for x in &mut targets.data_mut()[r * 8..(r + 1) * 8] {
            *x /= s;
        }
    }
    // shift biases away from relu kinks
    for id in net.store.ids().collect::<Vec<_>>() {
        if net.store.name(id).ends_with(".bias") {
            for (i, x) in net.store.get_mut(id).data_mut().iter_mut().enumerate() {
                *x = 0.05 + 0.01 * (i % 7) as f64;
            }
        }
    }
    let layers = net.layers;
    let cfg = GradCheckConfig {
        per_param,
        seed,
        ..Default::default()
    };
    check(&mut net.store, &cfg, |g, store| {
        let (_, logits) = layers.forward(g, store, input.clone());
        cross_entropy(g, logits, targets.clone())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognitionTrainConfig {
    pub dream_fraction: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RecognitionTrainConfig {
    fn default() -> Self {
        RecognitionTrainConfig {
            dream_fraction: 0.5,
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// A board paired with a program that draws it.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub board: Board,
    pub program: Program,
}

/// Fits the head to each example's empirical token distribution. Each epoch
/// mixes all solved examples with enough sampled dreams to make up
/// `dream_fraction` of the batch stream. Returns the mean loss per epoch.
pub fn train_recognition(
    net: &mut RecognitionNet,
    solved: &[Example],
    dreams: &[Example],
    cfg: &RecognitionTrainConfig,
) -> Result<Vec<f64>, SynthesisError> {
    let p = net.productions();
    let usable = |e: &&Example| e.program.size() > 0;
    let solved: Vec<&Example> = solved.iter().filter(usable).collect();
    let dreams: Vec<&Example> = dreams.iter().filter(usable).collect();
    if solved.is_empty() && dreams.is_empty() {
        return Err(SynthesisError::EmptyTraining);
    }
    let mut rng = rng_from_seed(cfg.seed);
    let adam = AdamConfig::default();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut batch: Vec<&Example> = solved.clone();
        if !dreams.is_empty() {
            let want = if solved.is_empty() {
                dreams.len()
            } else {
                let f = cfg.dream_fraction.clamp(0.0, 0.99);
                (solved.len() as f64 * f / (1.0 - f)).round() as usize
            };
            for _ in 0..want {
                batch.push(dreams[rng.random_range(0..dreams.len())]);
            }
        }
        batch.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in batch.chunks(cfg.batch_size.max(1)) {
            let boards: Vec<&Board> = chunk.iter().map(|e| &e.board).collect();
            let input = net.input(&boards)?;
            let mut t = Vec::with_capacity(chunk.len() * p);
            for e in chunk {
                let mut c = token_counts(&e.program, p);
                c.truncate(p);
                let s: f64 = c.iter().sum();
                t.extend(c.iter().map(|x| x / s));
            }
            let targets = Tensor::new(vec![chunk.len(), p], t)?;
            let mut g = Graph::new();
            let loss = net.loss(&mut g, input, targets);
            total += g.value(loss).item() * chunk.len() as f64;
            count += chunk.len();
            let grads = g.backward(loss).for_params(&net.store);
            drop(g);
            net.store.adam_step(&grads, cfg.lr, &adam);
        }
        losses.push(total / count as f64);
    }
    Ok(losses)
}

fn sample_body(grammar: &UnigramGrammar, budget: usize, rng: &mut Rng) -> Vec<Instr> {
    let mut out = Vec::new();
    let mut remaining = budget;
    let mut stalls = 0;
    while remaining > 0 && stalls < 64 {
        let instr = match grammar.sample(rng) {
            Production::Move => Instr::Move,
            Production::Left => Instr::Left,
            Production::Right => Instr::Right,
            Production::PenUp => Instr::PenUp,
            Production::PenDown => Instr::PenDown,
            Production::Call(id) => Instr::Call(id),
            Production::Fork => {
                if remaining < 2 {
                    stalls += 1;
                    continue;
                }
                let inner = rng.random_range(1..remaining);
                let body = sample_body(grammar, inner, rng);
                if body.is_empty() {
                    stalls += 1;
                    continue;
                }
                Instr::Fork(Program(body))
            }
        };
        let cost = match &instr {
            Instr::Fork(b) => 1 + b.size(),
            _ => 1,
        };
        remaining = remaining.saturating_sub(cost);
        out.push(instr);
    }
    out
}

/// Random programs drawn token by token from `grammar`, each run from a
/// random start; the board of a dream is exactly its mark set.
pub fn sample_dreams(
    grammar: &UnigramGrammar,
    library: &Library,
    n: usize,
    count: usize,
    max_size: usize,
    seed: u64,
) -> Vec<Example> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count);
    let cap = count.saturating_mul(100).max(100);
    for _ in 0..cap {
        if out.len() >= count {
            break;
        }
        let size = rng.random_range(1..=max_size.max(1));
        let program = Program(sample_body(grammar, size, &mut rng));
        let (r, c) = (rng.random_range(0..n), rng.random_range(0..n));
        let mut m = Machine::new(n, r, c);
        if m.run(&program, library, 0).is_err() || m.marked == 0 {
            continue;
        }
        out.push(Example {
            board: Board::from_mask(n, m.marked).expect("mark set within grid"),
            program,
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub task_id: String,
    pub program: Program,
    pub score: Score,
}

/// On-disk form of a [`Solution`]; the program is kept as text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub task_id: String,
    pub program: String,
    pub score: Score,
}

impl Solution {
    pub fn record(&self) -> SolutionRecord {
        SolutionRecord {
            task_id: self.task_id.clone(),
            program: self.program.to_string(),
            score: self.score,
        }
    }

    pub fn from_record(r: &SolutionRecord, library: &Library) -> Result<Self, DslError> {
        Ok(Solution {
            task_id: r.task_id.clone(),
            program: parse_program(&r.program, library)?,
            score: r.score,
        })
    }

    pub fn solved(&self) -> bool {
        self.score.value().is_some_and(|v| v > -MISSED_CELL_PENALTY)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WakeSleepConfig {
    pub iterations: usize,
    pub budget: SearchBudget,
    pub lambda: f64,
    pub library_learning: bool,
    pub max_new_functions: usize,
    pub dream_count: usize,
    pub dream_max_size: usize,
    pub recognition: RecognitionTrainConfig,
    pub seed: u64,
}

impl Default for WakeSleepConfig {
    fn default() -> Self {
        WakeSleepConfig {
            iterations: 4,
            budget: SearchBudget::default(),
            lambda: crate::library::DEFAULT_LAMBDA,
            library_learning: true,
            max_new_functions: 5,
            dream_count: 500,
            dream_max_size: 12,
            recognition: RecognitionTrainConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub solved: usize,
    pub mean_score: f64,
    pub nodes_expanded: usize,
    pub library_size: usize,
    pub compression: Option<CompressionReport>,
    pub recognition_loss: Option<f64>,
}

pub struct WakeSleepResult {
    pub library: Library,
    pub solutions: Vec<Solution>,
    pub recognition: RecognitionNet,
    pub history: Vec<IterationStats>,
}

/// Alternates enumeration (wake), compression and recognition training (sleep).
pub fn wake_sleep(
    tasks: &BoardDataset,
    cfg: &WakeSleepConfig,
    mut progress: impl FnMut(&IterationStats),
) -> Result<WakeSleepResult, SynthesisError> {
    let first = tasks.entries.first().ok_or(SynthesisError::NoTasks)?;
    let n = first.board.n();
    let mut library = Library::new();
    let mut net = RecognitionNet::new(n, production_count(&library), derive_seed(cfg.seed, 1));
    let mut best: Vec<Option<Solution>> = vec![None; tasks.len()];
    let mut history = Vec::new();

    for iteration in 0..cfg.iterations {
        let mut nodes = 0;
        for (slot, entry) in best.iter_mut().zip(&tasks.entries) {
            let grammar = if iteration == 0 {
                UnigramGrammar::uniform(&library)
            } else {
                net.predict_grammar(&entry.board)?
            };
            let r = enumerate(&entry.board, &grammar, &cfg.budget, &library);
            nodes += r.nodes_expanded;
            let Some(program) = r.best_program else { continue };
            let candidate = Solution {
                task_id: entry.id.clone(),
                program,
                score: r.best_score,
            };
            let replace = match slot {
                None => true,
                Some(old) => {
                    candidate.score > old.score
                        || (candidate.score == old.score && candidate.program.size() < old.program.size())
                }
            };
            if replace {
                *slot = Some(candidate);
            }
        }

        let mut compression = None;
        if cfg.library_learning {
            let solved_idx: Vec<usize> = (0..best.len())
                .filter(|&i| best[i].as_ref().is_some_and(Solution::solved))
                .collect();
            let programs: Vec<Program> = solved_idx
                .iter()
                .map(|&i| best[i].as_ref().unwrap().program.clone())
                .collect();
            if !programs.is_empty() {
                let result = compress(&programs, &library, cfg.lambda, cfg.max_new_functions);
                for (&i, p) in solved_idx.iter().zip(result.rewritten) {
                    best[i].as_mut().unwrap().program = p;
                }
                library = result.library;
                net.grow_head(production_count(&library));
                compression = Some(result.report);
            }
        }

        let examples: Vec<Example> = best
            .iter()
            .zip(&tasks.entries)
            .filter_map(|(s, e)| {
                s.as_ref().filter(|s| s.solved()).map(|s| Example {
                    board: e.board.clone(),
                    program: s.program.clone(),
                })
            })
            .collect();
        let programs: Vec<Program> = examples.iter().map(|e| e.program.clone()).collect();
        let dream_grammar = UnigramGrammar::empirical(&programs, &library, 1.0);
        let dreams = sample_dreams(
            &dream_grammar,
            &library,
            n,
            cfg.dream_count,
            cfg.dream_max_size,
            derive_seed(cfg.seed, 100 + iteration as u64),
        );
        let mut rcfg = cfg.recognition.clone();
        rcfg.seed = derive_seed(cfg.seed, 200 + iteration as u64);
        let recognition_loss = match train_recognition(&mut net, &examples, &dreams, &rcfg) {
            Ok(l) => l.last().copied(),
            Err(SynthesisError::EmptyTraining) => None,
            Err(e) => return Err(e),
        };

        let scored: Vec<f64> = best
            .iter()
            .flatten()
            .filter_map(|s| s.score.value())
            .map(|v| v as f64)
            .collect();
        let stats = IterationStats {
            iteration,
            solved: best.iter().flatten().filter(|s| s.solved()).count(),
            mean_score: if scored.is_empty() {
                f64::NAN
            } else {
                scored.iter().sum::<f64>() / scored.len() as f64
            },
            nodes_expanded: nodes,
            library_size: library.len(),
            compression,
            recognition_loss,
        };
        progress(&stats);
        history.push(stats);
    }

    Ok(WakeSleepResult {
        library,
        solutions: best.into_iter().flatten().collect(),
        recognition: net,
        history,
    })
}

/// MDL of a solution set under its library.
pub fn solutions_mdl(solutions: &[Solution], library: &Library, lambda: f64) -> f64 {
    let programs: Vec<Program> = solutions.iter().map(|s| s.program.clone()).collect();
    mdl(&programs, library, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::parse_board;
    use crate::dsl::score;

    fn p(text: &str, lib: &Library) -> Program {
        parse_program(text, lib).unwrap()
    }

    fn small_budget() -> SearchBudget {
        SearchBudget {
            max_nodes: 20_000,
            max_program_size: 8,
            timeout: Duration::from_secs(30),
        }
    }

    #[test]
    fn single_cell_found_immediately() {
        let lib = Library::new();
        let target = parse_board("0000/0100/0000/0000").unwrap();
        let r = enumerate(&target, &UnigramGrammar::uniform(&lib), &small_budget(), &lib);
        assert_eq!(r.best_program.unwrap().to_string(), "pen-down");
        assert_eq!(r.best_score, Score::Finite(0));
        assert!(r.found_at <= 100);
        assert!(r.exhausted);
    }

    #[test]
    fn all_white_target_gives_empty_program() {
        let lib = Library::new();
        let target = Board::empty(4).unwrap();
        let r = enumerate(&target, &UnigramGrammar::uniform(&lib), &small_budget(), &lib);
        assert_eq!(r.best_program, Some(Program::default()));
        assert_eq!(r.best_score, Score::Finite(0));
    }

    #[test]
    fn short_line_uses_one_motion() {
        let lib = Library::new();
        let target = parse_board("0000/0110/0000/0000").unwrap();
        let mut budget = small_budget();
        budget.max_program_size = 3;
        let r = enumerate(&target, &UnigramGrammar::uniform(&lib), &budget, &lib);
        let best = r.best_program.unwrap();
        assert_eq!(r.best_score, Score::Finite(-1));
        assert_eq!(best.to_string(), "pen-down move");
        assert_eq!(score(&best, &target, &lib).unwrap(), r.best_score);
        // a pen-up step is free, so four tokens reach a perfect score
        let r = enumerate(&target, &UnigramGrammar::uniform(&lib), &small_budget(), &lib);
        assert_eq!(r.best_score, Score::Finite(0));
        assert_eq!(r.best_program.unwrap().to_string(), "(fork move pen-down) pen-down");
    }

    #[test]
    fn library_calls_are_searched() {
        let mut lib = Library::new();
        lib.push(p("pen-down move move move", &lib)).unwrap();
        let target = parse_board("0000/1111/0000/0000").unwrap();
        let r = enumerate(&target, &UnigramGrammar::uniform(&lib), &small_budget(), &lib);
        assert_eq!(r.best_program.unwrap().to_string(), "f0");
        assert_eq!(r.best_score, Score::Finite(-3));
    }

    #[test]
    fn grammar_normalization() {
        let g = UnigramGrammar::from_logits(&[1.0, 1.0, 1.0, 1.0]);
        assert!(g.probs().iter().all(|&x| (x - 0.25).abs() < 1e-12));
        let shifted = UnigramGrammar::from_logits(&[101.0, 101.0, 101.0, 101.0]);
        assert!(g.kl(&shifted).abs() < 1e-12);
        let peaked = UnigramGrammar::from_logits(&[10.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(peaked.prob(Production::Move) > 0.99);
        let total: f64 = UnigramGrammar::uniform(&Library::new()).probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn token_distribution_of_program() {
        let lib = Library::new();
        let c = token_counts(&p("pen-down move move", &lib), 6);
        assert_eq!(c, vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let c = token_counts(&p("(fork move) left", &lib), 6);
        assert_eq!(c, vec![1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_network_embeds_to_zero() {
        let mut net = RecognitionNet::new(4, 6, 1);
        net.zero_parameters();
        let e = net.embed_board(&parse_board("1000/0100/0010/0001").unwrap()).unwrap();
        assert_eq!(e.len(), EMBEDDING_DIM);
        assert!(e.iter().all(|&x| x == 0.0));
        assert!(net.embed_board(&Board::empty(3).unwrap()).is_err());
    }

    #[test]
    fn dreams_reproduce_their_boards() {
        let lib = Library::new();
        let g = UnigramGrammar::uniform(&lib);
        let dreams = sample_dreams(&g, &lib, 4, 40, 8, 9);
        assert_eq!(dreams.len(), 40);
        for d in &dreams {
            let s = score(&d.program, &d.board, &lib).unwrap();
            assert!(s.value().unwrap() >= -(d.program.size() as i64), "{} {s}", d.program);
        }
        assert_eq!(dreams, sample_dreams(&g, &lib, 4, 40, 8, 9));
    }

    #[test]
    fn degenerate_grammar_dream() {
        let lib = Library::new();
        let g = UnigramGrammar::from_weights(&[0.5, 0.0, 0.0, 0.0, 0.5, 0.0]);
        for d in sample_dreams(&g, &lib, 4, 20, 4, 3) {
            // only moves and pen-downs: the board is a single horizontal run
            let reds = d.board.reds();
            assert!(reds.iter().all(|&(r, _)| r == reds[0].0));
        }
    }

    #[test]
    fn head_growth_keeps_old_logits() {
        let mut net = RecognitionNet::new(4, 6, 2);
        let b = parse_board("1100/0000/0000/0011").unwrap();
        let before = net.logits(&b).unwrap();
        net.grow_head(8);
        let after = net.logits(&b).unwrap();
        assert_eq!(&after[..6], &before[..]);
        assert_eq!(after.len(), 8);
    }

    #[test]
    fn recognition_gradients_match_finite_differences() {
        let report = recognition_grad_check(3, Some(40));
        assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.bin");
        let net = RecognitionNet::new(4, 7, 5);
        net.save(&path).unwrap();
        let back = RecognitionNet::load(&path).unwrap();
        let b = parse_board("0110/0000/0000/0000").unwrap();
        assert_eq!(net.logits(&b).unwrap(), back.logits(&b).unwrap());
    }
}
