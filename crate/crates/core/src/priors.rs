//! Board distributions: a rule-based prior corpus, a masked-tile conditional
//! network, a random-scan Gibbs sampler driven by any tile conditional, and
//! the exact stationary distribution of that sampler for small grids.

use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::board::{full_mask, Board, BoardDataset};
use crate::nn::gradcheck::{check, GradCheckConfig, GradCheckReport};
use crate::nn::{checkpoint, AdamConfig, Dense, Graph, NnError, ParamStore, Tensor, Var};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, thiserror::Error)]
pub enum PriorsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid of {0} cells is too large to enumerate")]
    TooLarge(usize),
    #[error("the chain has {0} closed classes, so its stationary distribution is not unique")]
    NonErgodic(usize),
    #[error("power iteration did not converge (residual {0:e})")]
    NoConvergence(f64),
    #[error("board side {got} does not match model side {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum RuleFamily {
    FullRow,
    FullColumn,
    /// Border of an axis-aligned rectangle, both sides at least 3.
    RectOutline,
    /// Filled axis-aligned rectangle with an even number of cells.
    RectFill,
    MainDiagonal,
    AntiDiagonal,
    /// One or two cells on the left half, each mirrored across the vertical axis.
    MirrorPair,
}

impl RuleFamily {
    pub const ALL: [RuleFamily; 7] = [
        RuleFamily::FullRow,
        RuleFamily::FullColumn,
        RuleFamily::RectOutline,
        RuleFamily::RectFill,
        RuleFamily::MainDiagonal,
        RuleFamily::AntiDiagonal,
        RuleFamily::MirrorPair,
    ];

    /// Every board this family can emit on an `n×n` grid.
    pub fn boards(self, n: usize) -> Vec<Board> {
        let mut out = Vec::new();
        let cells = |list: Vec<(usize, usize)>| Board::from_cells(&list, n).expect("cells in range");
        match self {
            RuleFamily::FullRow => {
                for r in 0..n {
                    out.push(cells((0..n).map(|c| (r, c)).collect()));
                }
            }
            RuleFamily::FullColumn => {
                for c in 0..n {
                    out.push(cells((0..n).map(|r| (r, c)).collect()));
                }
            }
            RuleFamily::RectOutline | RuleFamily::RectFill => {
                for h in 1..=n {
                    for w in 1..=n {
                        let ok = match self {
                            RuleFamily::RectOutline => h >= 3 && w >= 3,
                            _ => (h * w) % 2 == 0,
                        };
                        if !ok {
                            continue;
                        }
                        for r0 in 0..=n - h {
                            for c0 in 0..=n - w {
                                let mut list = Vec::new();
                                for r in r0..r0 + h {
                                    for c in c0..c0 + w {
                                        let edge = r == r0 || r == r0 + h - 1 || c == c0 || c == c0 + w - 1;
                                        if self == RuleFamily::RectFill || edge {
                                            list.push((r, c));
                                        }
                                    }
                                }
                                out.push(cells(list));
                            }
                        }
                    }
                }
            }
            RuleFamily::MainDiagonal => out.push(cells((0..n).map(|i| (i, i)).collect())),
            RuleFamily::AntiDiagonal => out.push(cells((0..n).map(|i| (i, n - 1 - i)).collect())),
            RuleFamily::MirrorPair => {
                let half: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n / 2).map(move |c| (r, c))).collect();
                let mirrored = |list: &[(usize, usize)]| {
                    list.iter().flat_map(|&(r, c)| [(r, c), (r, n - 1 - c)]).collect::<Vec<_>>()
                };
                for (i, &a) in half.iter().enumerate() {
                    out.push(cells(mirrored(&[a])));
                    for &b in &half[i + 1..] {
                        out.push(cells(mirrored(&[a, b])));
                    }
                }
            }
        }
        out.sort_by_key(Board::mask);
        out.dedup();
        out
    }

    pub fn contains(self, board: &Board) -> bool {
        self.boards(board.n()).contains(board)
    }
}

/// First family (in [`RuleFamily::ALL`] order) that can produce `board`.
pub fn rule_witness(board: &Board) -> Option<RuleFamily> {
    RuleFamily::ALL.into_iter().find(|f| f.contains(board))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleGenerator {
    pub n: usize,
    pub mixture: Vec<(RuleFamily, f64)>,
}

impl RuleGenerator {
    /// All families with equal weight.
    pub fn uniform(n: usize) -> Self {
        RuleGenerator {
            n,
            mixture: RuleFamily::ALL.iter().map(|&f| (f, 1.0)).collect(),
        }
    }

    pub fn only(n: usize, family: RuleFamily) -> Self {
        RuleGenerator {
            n,
            mixture: vec![(family, 1.0)],
        }
    }
}

/// Draws a family by mixture weight, then a board uniformly within it.
/// Duplicate boards are merged with their counts as weights.
pub fn generate_prior_corpus(gen: &RuleGenerator, count: usize, seed: u64) -> Result<BoardDataset, PriorsError> {
    if count == 0 {
        return Err(PriorsError::Config("count must be positive".into()));
    }
    let families: Vec<(RuleFamily, Vec<Board>)> = gen
        .mixture
        .iter()
        .map(|&(f, _)| (f, f.boards(gen.n)))
        .collect();
    let weights: Vec<f64> = gen
        .mixture
        .iter()
        .zip(&families)
        .map(|(&(_, w), (_, b))| if b.is_empty() { 0.0 } else { w })
        .collect();
    let dist = WeightedIndex::new(&weights)
        .map_err(|e| PriorsError::Config(format!("mixture weights: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let boards = (0..count).map(|_| {
        let (_, pool) = &families[dist.sample(&mut rng)];
        pool[rng.random_range(0..pool.len())]
    });
    Ok(BoardDataset::from_counts("prior", boards))
}

/// Probability that a masked tile is red given the rest of the board.
pub trait TileConditional {
    /// `board`'s value at `index` is ignored.
    fn prob_red(&self, board: &Board, index: usize) -> f64;
}

/// Explicit conditional for every (board-without-tile, tile) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTable {
    n: usize,
    /// Indexed by `mask_with_tile_cleared * n² + index`.
    probs: Vec<f64>,
}

impl ConditionalTable {
    pub fn from_fn(n: usize, f: impl Fn(u64, usize) -> f64) -> Result<Self, PriorsError> {
        let cells = n * n;
        if cells > 16 {
            return Err(PriorsError::TooLarge(cells));
        }
        let mut probs = vec![0.0; (1usize << cells) * cells];
        for mask in 0..1u64 << cells {
            for i in 0..cells {
                let p = f(mask & !(1 << i), i);
                if !(0.0..=1.0).contains(&p) {
                    return Err(PriorsError::Config(format!("probability {p} out of range")));
                }
                probs[(mask as usize) * cells + i] = p;
            }
        }
        Ok(ConditionalTable { n, probs })
    }

    /// Exact full conditionals of a joint distribution over boards.
    pub fn from_joint(n: usize, joint: &[f64]) -> Result<Self, PriorsError> {
        ConditionalTable::from_fn(n, |rest, i| {
            let red = joint[(rest | 1 << i) as usize];
            let white = joint[rest as usize];
            if red + white == 0.0 {
                0.5
            } else {
                red / (red + white)
            }
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

impl TileConditional for ConditionalTable {
    fn prob_red(&self, board: &Board, index: usize) -> f64 {
        let cells = self.n * self.n;
        let rest = board.mask() & !(1 << index);
        self.probs[rest as usize * cells + index]
    }
}

/// Constant conditional, handy for degenerate cases.
#[derive(Clone, Copy, Debug)]
pub struct ConstantConditional(pub f64);

impl TileConditional for ConstantConditional {
    fn prob_red(&self, _: &Board, _: usize) -> f64 {
        self.0
    }
}

/// Random-scan Gibbs kernel over all `2^(n²)` boards, as a dense row-stochastic matrix.
pub fn gibbs_kernel(cond: &dyn TileConditional, n: usize) -> Result<Vec<Vec<f64>>, PriorsError> {
    let cells = n * n;
    if cells > 16 {
        return Err(PriorsError::TooLarge(cells));
    }
    let states = 1usize << cells;
    let mut kernel = vec![vec![0.0; states]; states];
    for s in 0..states {
        let board = Board::from_mask(n, s as u64).map_err(|e| PriorsError::Config(e.to_string()))?;
        for i in 0..cells {
            let p = cond.prob_red(&board, i);
            let red = s | 1 << i;
            let white = s & !(1 << i);
            kernel[s][red] += p / cells as f64;
            kernel[s][white] += (1.0 - p) / cells as f64;
        }
    }
    Ok(kernel)
}

fn closed_classes(kernel: &[Vec<f64>]) -> usize {
    // Kosaraju on the support graph, then count SCCs with no outgoing edge.
    let s = kernel.len();
    let adj: Vec<Vec<usize>> = kernel
        .iter()
        .map(|row| (0..s).filter(|&j| row[j] > 0.0).collect())
        .collect();
    let mut radj = vec![Vec::new(); s];
    for (i, row) in adj.iter().enumerate() {
        for &j in row {
            radj[j].push(i);
        }
    }
    let mut order = Vec::with_capacity(s);
    let mut seen = vec![false; s];
    for root in 0..s {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some((v, k)) = stack.pop() {
            if k < adj[v].len() {
                stack.push((v, k + 1));
                let w = adj[v][k];
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
            }
        }
    }
    let mut comp = vec![usize::MAX; s];
    let mut ncomp = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let mut stack = vec![root];
        comp[root] = ncomp;
        while let Some(v) = stack.pop() {
            for &w in &radj[v] {
                if comp[w] == usize::MAX {
                    comp[w] = ncomp;
                    stack.push(w);
                }
            }
        }
        ncomp += 1;
    }
    let mut leaves = vec![true; ncomp];
    for (i, row) in adj.iter().enumerate() {
        for &j in row {
            if comp[i] != comp[j] {
                leaves[comp[i]] = false;
            }
        }
    }
    leaves.iter().filter(|&&l| l).count()
}

/// Stationary distribution of the random-scan Gibbs kernel, by power
/// iteration on the lazy kernel `(I + T)/2` until `‖πT − π‖₁ < 1e-12`.
pub fn exact_stationary(cond: &dyn TileConditional, n: usize) -> Result<Vec<f64>, PriorsError> {
    let kernel = gibbs_kernel(cond, n)?;
    let closed = closed_classes(&kernel);
    if closed != 1 {
        return Err(PriorsError::NonErgodic(closed));
    }
    let s = kernel.len();
    let mut pi = vec![1.0 / s as f64; s];
    let mut residual = f64::INFINITY;
    for _ in 0..2_000_000 {
        let next = apply_kernel(&kernel, &pi);
        residual = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if residual < 1e-12 {
            return Ok(next);
        }
        for (p, q) in pi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + q);
        }
    }
    Err(PriorsError::NoConvergence(residual))
}

/// `π T` for a row-stochastic kernel.
pub fn apply_kernel(kernel: &[Vec<f64>], pi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; pi.len()];
    for (i, row) in kernel.iter().enumerate() {
        if pi[i] == 0.0 {
            continue;
        }
        for (j, &t) in row.iter().enumerate() {
            out[j] += pi[i] * t;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            chains: 200,
            sweeps: 500,
            burn_in: 100,
            thin: 5,
            seed: 0,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), PriorsError> {
        if self.chains == 0 || self.sweeps == 0 {
            return Err(PriorsError::Config("chains and sweeps must be positive".into()));
        }
        if self.burn_in >= self.sweeps {
            return Err(PriorsError::Config("burn-in must be smaller than sweeps".into()));
        }
        if self.thin == 0 {
            return Err(PriorsError::Config("thin must be at least 1".into()));
        }
        Ok(())
    }
}

/// One random-scan Gibbs chain.
pub struct GibbsChain {
    pub board: Board,
    rng: Rng,
}

impl GibbsChain {
    /// Starts from an iid fair-coin board.
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mask = rng.random::<u64>() & full_mask(n);
        GibbsChain {
            board: Board::from_mask(n, mask).expect("valid side"),
            rng,
        }
    }

    /// Resamples one uniformly chosen tile; returns `(index, new value)`.
    pub fn step(&mut self, cond: &dyn TileConditional) -> (usize, bool) {
        let cells = self.board.cell_count();
        let i = self.rng.random_range(0..cells);
        let p = cond.prob_red(&self.board, i);
        let red = self.rng.random::<f64>() < p;
        self.board.set_index(i, red);
        (i, red)
    }

    pub fn sweep(&mut self, cond: &dyn TileConditional) {
        for _ in 0..self.board.cell_count() {
            self.step(cond);
        }
    }
}

/// Runs `chains` independent chains and records each board every `thin`
/// sweeps after `burn_in`; weights are occurrence counts.
pub fn gibbs_sample(cond: &dyn TileConditional, n: usize, cfg: &GibbsConfig) -> Result<BoardDataset, PriorsError> {
    cfg.validate()?;
    let mut samples = Vec::new();
    for c in 0..cfg.chains {
        let mut chain = GibbsChain::new(n, derive_seed(cfg.seed, c as u64));
        for sweep in 1..=cfg.sweeps {
            chain.sweep(cond);
            if sweep > cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
                samples.push(chain.board);
            }
        }
    }
    Ok(BoardDataset::from_counts("gibbs", samples))
}

/// 2n² → 16 → 16 → 16 → 1 tanh MLP giving P(masked tile is red).
/// Input: the board with the masked cell zeroed, then a one-hot mask channel.
pub struct ConditionalModel {
    pub store: ParamStore,
    layers: ConditionalLayers,
}

#[derive(Clone, Copy)]
struct ConditionalLayers {
    n: usize,
    l1: Dense,
    l2: Dense,
    l3: Dense,
    out: Dense,
}

pub const CONDITIONAL_HIDDEN: usize = 16;

impl ConditionalLayers {
    fn logits(&self, g: &mut Graph, store: &ParamStore, x: Tensor) -> Var {
        let x = g.input(x);
        let h = self.l1.forward(g, store, x);
        let h = g.tanh(h);
        let h = self.l2.forward(g, store, h);
        let h = g.tanh(h);
        let h = self.l3.forward(g, store, h);
        let h = g.tanh(h);
        self.out.forward(g, store, h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ConditionalTrainConfig {
    fn default() -> Self {
        ConditionalTrainConfig {
            epochs: 400,
            lr: 3e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

pub fn masked_input(board: &Board, index: usize) -> Vec<f64> {
    let cells = board.cell_count();
    let mut x = board.to_f64();
    x[index] = 0.0;
    x.resize(2 * cells, 0.0);
    x[cells + index] = 1.0;
    x
}

impl ConditionalModel {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut store = ParamStore::new();
        let cells = n * n;
        let gain = 5.0 / 3.0;
        let l1 = Dense::new(&mut store, "l1", 2 * cells, CONDITIONAL_HIDDEN, gain, &mut rng);
        let l2 = Dense::new(&mut store, "l2", CONDITIONAL_HIDDEN, CONDITIONAL_HIDDEN, gain, &mut rng);
        let l3 = Dense::new(&mut store, "l3", CONDITIONAL_HIDDEN, CONDITIONAL_HIDDEN, gain, &mut rng);
        let out = Dense::new(&mut store, "out", CONDITIONAL_HIDDEN, 1, 1.0, &mut rng);
        ConditionalModel {
            store,
            layers: ConditionalLayers { n, l1, l2, l3, out },
        }
    }

    pub fn side(&self) -> usize {
        self.layers.n
    }

    /// Plain forward pass without building a graph; used inside Gibbs chains.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let layers = [self.layers.l1, self.layers.l2, self.layers.l3, self.layers.out];
        for (k, layer) in layers.iter().enumerate() {
            let w = self.store.get(layer.weight).data();
            let b = self.store.get(layer.bias).data();
            let mut next = b.to_vec();
            for (i, &hi) in h.iter().enumerate() {
                if hi == 0.0 {
                    continue;
                }
                let row = &w[i * layer.outputs..(i + 1) * layer.outputs];
                for (o, &wij) in next.iter_mut().zip(row) {
                    *o += hi * wij;
                }
            }
            if k < 3 {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        crate::nn::graph::sigmoid(h[0])
    }

    fn batch(items: &[(Board, usize)]) -> (Tensor, Tensor) {
        let cells = items[0].0.cell_count();
        let mut x = Vec::with_capacity(items.len() * 2 * cells);
        let mut y = Vec::with_capacity(items.len());
        for (b, i) in items {
            x.extend(masked_input(b, *i));
            y.push(if b.is_red(*i) { 1.0 } else { 0.0 });
        }
        (
            Tensor::new(vec![items.len(), 2 * cells], x).unwrap(),
            Tensor::new(vec![items.len(), 1], y).unwrap(),
        )
    }

    pub fn save(&self, path: &Path) -> Result<(), PriorsError> {
        let meta = serde_json::json!({
            "model": "conditional",
            "side": self.layers.n,
            "hidden": [CONDITIONAL_HIDDEN, CONDITIONAL_HIDDEN, CONDITIONAL_HIDDEN],
            "activation": "tanh",
        });
        checkpoint::save(&self.store, path, meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PriorsError> {
        let m = checkpoint::read_manifest(path)?;
        let n = m.meta["side"]
            .as_u64()
            .ok_or_else(|| PriorsError::Config("checkpoint lacks side".into()))? as usize;
        let mut model = ConditionalModel::new(n, 0);
        checkpoint::load_into(&mut model.store, path)?;
        Ok(model)
    }
}

impl TileConditional for ConditionalModel {
    fn prob_red(&self, board: &Board, index: usize) -> f64 {
        self.predict(&masked_input(board, index))
    }
}

/// Minimizes masked-tile binary cross-entropy. Each epoch visits every
/// (distinct board, tile) pair; pairs are weighted by board weight through
/// repetition in proportion to the weight, rounded up to at least one.
/// Returns the mean loss per epoch.
pub fn train_conditional(
    dataset: &BoardDataset,
    cfg: &ConditionalTrainConfig,
) -> Result<(ConditionalModel, Vec<f64>), PriorsError> {
    let first = dataset.entries.first().ok_or(PriorsError::EmptyDataset)?;
    let n = first.board.n();
    let mut model = ConditionalModel::new(n, derive_seed(cfg.seed, 1));
    let losses = fit_conditional(&mut model, dataset, cfg)?;
    Ok((model, losses))
}

pub fn fit_conditional(
    model: &mut ConditionalModel,
    dataset: &BoardDataset,
    cfg: &ConditionalTrainConfig,
) -> Result<Vec<f64>, PriorsError> {
    let n = model.side();
    let total = dataset.total_weight();
    if dataset.is_empty() || total <= 0.0 {
        return Err(PriorsError::EmptyDataset);
    }
    let mean_w = total / dataset.len() as f64;
    let mut pairs = Vec::new();
    for e in &dataset.entries {
        if e.board.n() != n {
            return Err(PriorsError::SizeMismatch { expected: n, got: e.board.n() });
        }
        let reps = (e.weight / mean_w).round().max(1.0) as usize;
        for _ in 0..reps {
            for i in 0..n * n {
                pairs.push((e.board, i));
            }
        }
    }
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 2));
    let adam = AdamConfig::default();
    let layers = model.layers;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        pairs.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in pairs.chunks(cfg.batch_size.max(1)) {
            let (x, y) = ConditionalModel::batch(chunk);
            let mut g = Graph::new();
            let logits = layers.logits(&mut g, &model.store, x);
            let loss = g.bce_with_logits(logits, y);
            sum += g.value(loss).item() * chunk.len() as f64;
            let grads = g.backward(loss).for_params(&model.store);
            drop(g);
            model.store.adam_step(&grads, cfg.lr, &adam);
        }
        losses.push(sum / pairs.len() as f64);
    }
    Ok(losses)
}

/// Fraction of random (board, tile) trials where thresholding at 0.5 is right.
/// Boards are drawn by weight, tiles uniformly.
pub fn masked_accuracy(
    cond: &dyn TileConditional,
    dataset: &BoardDataset,
    trials: usize,
    seed: u64,
) -> Result<f64, PriorsError> {
    let sampler = dataset.sampler().map_err(|_| PriorsError::EmptyDataset)?;
    if trials == 0 {
        return Err(PriorsError::Config("trials must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut hits = 0;
    for _ in 0..trials {
        let board = dataset.entries[sampler.sample_index(&mut rng)].board;
        let i = rng.random_range(0..board.cell_count());
        let p = cond.prob_red(&board, i);
        if (p > 0.5) == board.is_red(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

/// Gradient check of the conditional network's BCE loss.
pub fn conditional_grad_check(seed: u64) -> GradCheckReport {
    let mut model = ConditionalModel::new(4, seed);
    let items: Vec<(Board, usize)> = [(0x000fu64, 2usize), (0x8421, 5), (0x0660, 9), (0xf00f, 15)]
        .iter()
        .map(|&(m, i)| (Board::from_mask(4, m).unwrap(), i))
        .collect();
    let (x, y) = ConditionalModel::batch(&items);
    let layers = model.layers;
    check(&mut model.store, &GradCheckConfig { seed, ..Default::default() }, |g, s| {
        let logits = layers.logits(g, s, x.clone());
        g.bce_with_logits(logits, y.clone())
    })
}

/// Per-tile red frequency under the dataset weights.
pub fn tile_marginals(dataset: &BoardDataset) -> Vec<f64> {
    let total = dataset.total_weight();
    let cells = dataset.entries.first().map_or(0, |e| e.board.cell_count());
    let mut out = vec![0.0; cells];
    for e in &dataset.entries {
        for i in e.board.red_indices() {
            out[i] += e.weight / total;
        }
    }
    out
}
