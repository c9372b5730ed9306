//! The tile-reveal task, its nearest-neighbour heuristic and the z-score metric.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::board::Board;
use crate::rng::{rng_from_seed, Rng};

pub const REWARD_RED: i32 = 1;
pub const REWARD_WHITE: i32 = -1;
pub const REWARD_LAST_RED: i32 = 5;
pub const REWARD_REPEAT: i32 = -2;
pub const DEFAULT_STEP_CAP: u32 = 50;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("board has no red tile")]
    AllWhite,
    #[error("action {action} outside 0..{cells}")]
    ActionOutOfRange { action: usize, cells: usize },
    #[error("episode already finished")]
    Finished,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub step_cap: u32,
    /// Pay the red reward on top of the last-red bonus.
    pub final_red_bonus_additive: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            step_cap: DEFAULT_STEP_CAP,
            final_red_bonus_additive: false,
        }
    }
}

/// What the agent sees: which tiles are revealed and their colours.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Observation {
    pub n: usize,
    pub revealed: u64,
    pub reds: u64,
}

impl Observation {
    pub const CHANNELS: usize = 3;

    /// `[masked, red, white]` planes, each row-major `n×n`.
    pub fn channels(&self) -> Vec<f64> {
        let cells = self.n * self.n;
        let mut out = vec![0.0; 3 * cells];
        self.write_channels(&mut out);
        out
    }

    pub fn write_channels(&self, out: &mut [f64]) {
        let cells = self.n * self.n;
        for i in 0..cells {
            let bit = 1u64 << i;
            let plane = if self.revealed & bit == 0 {
                0
            } else if self.reds & bit != 0 {
                1
            } else {
                2
            };
            out[i] = 0.0;
            out[cells + i] = 0.0;
            out[2 * cells + i] = 0.0;
            out[plane * cells + i] = 1.0;
        }
    }

    pub fn masked_count(&self) -> usize {
        self.n * self.n - self.revealed.count_ones() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: i32,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct RevealEnv {
    board: Board,
    revealed: u64,
    steps: u32,
    done: bool,
    whites_revealed: u32,
    cfg: EnvConfig,
}

impl RevealEnv {
    /// Starts an episode with one uniformly chosen red tile revealed.
    pub fn reset(board: Board, seed: u64) -> Result<(Self, Observation), EnvError> {
        Self::reset_with(board, EnvConfig::default(), &mut rng_from_seed(seed))
    }

    pub fn reset_with(board: Board, cfg: EnvConfig, rng: &mut Rng) -> Result<(Self, Observation), EnvError> {
        let reds = board.red_indices();
        if reds.is_empty() {
            return Err(EnvError::AllWhite);
        }
        let first = reds[rng.random_range(0..reds.len())];
        let env = RevealEnv {
            board,
            revealed: 1 << first,
            steps: 0,
            done: reds.len() == 1,
            whites_revealed: 0,
            cfg,
        };
        let obs = env.observation();
        Ok((env, obs))
    }

    pub fn observation(&self) -> Observation {
        Observation {
            n: self.board.n(),
            revealed: self.revealed,
            reds: self.revealed & self.board.mask(),
        }
    }

    pub fn board(&self) -> &Board {
        &self.board
    }

    pub fn revealed(&self) -> u64 {
        self.revealed
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn whites_revealed(&self) -> u32 {
        self.whites_revealed
    }

    pub fn reds_remaining(&self) -> u32 {
        (self.board.mask() & !self.revealed).count_ones()
    }

    /// Re-reveals cost −2 and change nothing but the step count.
    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let cells = self.board.cell_count();
        if action >= cells {
            return Err(EnvError::ActionOutOfRange { action, cells });
        }
        if self.done {
            return Err(EnvError::Finished);
        }
        self.steps += 1;
        let bit = 1u64 << action;
        let reward = if self.revealed & bit != 0 {
            REWARD_REPEAT
        } else {
            self.revealed |= bit;
            if self.board.mask() & bit == 0 {
                self.whites_revealed += 1;
                REWARD_WHITE
            } else if self.reds_remaining() == 0 {
                self.done = true;
                if self.cfg.final_red_bonus_additive {
                    REWARD_LAST_RED + REWARD_RED
                } else {
                    REWARD_LAST_RED
                }
            } else {
                REWARD_RED
            }
        };
        if self.steps >= self.cfg.step_cap {
            self.done = true;
        }
        Ok(StepResult {
            obs: self.observation(),
            reward,
            done: self.done,
        })
    }
}

fn neighbours(n: usize, i: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / n, i % n);
    let up = (r > 0).then(|| i - n);
    let down = (r + 1 < n).then_some(i + n);
    let left = (c > 0).then(|| i - 1);
    let right = (c + 1 < n).then_some(i + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Covered tiles the heuristic may pick next: those 4-adjacent to a revealed
/// red, or every covered tile when there are none.
pub fn heuristic_choices(board: &Board, revealed: u64) -> Vec<usize> {
    let n = board.n();
    let cells = n * n;
    let revealed_reds = revealed & board.mask();
    let mut near = Vec::new();
    for i in 0..cells {
        if revealed & (1 << i) == 0 && neighbours(n, i).any(|j| revealed_reds & (1 << j) != 0) {
            near.push(i);
        }
    }
    if near.is_empty() {
        (0..cells).filter(|&i| revealed & (1 << i) == 0).collect()
    } else {
        near
    }
}

/// Whites revealed by one heuristic run from a fresh reset.
pub fn nn_heuristic_episode(board: &Board, rng: &mut Rng) -> Result<u32, EnvError> {
    let (mut env, _) = RevealEnv::reset_with(
        *board,
        EnvConfig {
            step_cap: u32::MAX,
            ..Default::default()
        },
        rng,
    )?;
    while !env.done() {
        let choices = heuristic_choices(board, env.revealed());
        let a = choices[rng.random_range(0..choices.len())];
        env.step(a)?;
    }
    Ok(env.whites_revealed())
}

/// Exact distribution of whites revealed by the heuristic from a given
/// start mask, by recursion over revealed sets.
pub fn heuristic_distribution_from(board: &Board, revealed: u64) -> Vec<f64> {
    fn go(board: &Board, revealed: u64, memo: &mut HashMap<u64, Vec<f64>>) -> Vec<f64> {
        if board.mask() & !revealed == 0 {
            return vec![1.0];
        }
        if let Some(d) = memo.get(&revealed) {
            return d.clone();
        }
        let choices = heuristic_choices(board, revealed);
        let w = 1.0 / choices.len() as f64;
        let mut out: Vec<f64> = Vec::new();
        for a in choices {
            let white = board.mask() & (1 << a) == 0;
            let sub = go(board, revealed | 1 << a, memo);
            let shift = usize::from(white);
            if out.len() < sub.len() + shift {
                out.resize(sub.len() + shift, 0.0);
            }
            for (k, p) in sub.iter().enumerate() {
                out[k + shift] += w * p;
            }
        }
        memo.insert(revealed, out.clone());
        out
    }
    go(board, revealed, &mut HashMap::new())
}

/// Exact distribution of whites, averaging over the uniformly random first red.
pub fn heuristic_distribution(board: &Board) -> Result<Vec<f64>, EnvError> {
    let reds = board.red_indices();
    if reds.is_empty() {
        return Err(EnvError::AllWhite);
    }
    let w = 1.0 / reds.len() as f64;
    let mut out: Vec<f64> = Vec::new();
    for r in reds {
        let d = heuristic_distribution_from(board, 1 << r);
        if out.len() < d.len() {
            out.resize(d.len(), 0.0);
        }
        for (k, p) in d.iter().enumerate() {
            out[k] += w * p;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicStats {
    pub board_id: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

pub const DEFAULT_HEURISTIC_RUNS: usize = 1000;

/// Sample mean and standard deviation (n − 1 denominator) of heuristic whites.
pub fn heuristic_stats(board: &Board, board_id: &str, runs: usize, seed: u64) -> Result<HeuristicStats, EnvError> {
    let runs = runs.max(1);
    let mut rng = rng_from_seed(seed);
    let whites: Vec<f64> = (0..runs)
        .map(|_| nn_heuristic_episode(board, &mut rng).map(f64::from))
        .collect::<Result<_, _>>()?;
    let mean = whites.iter().sum::<f64>() / runs as f64;
    let std = if runs > 1 {
        (whites.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(HeuristicStats {
        board_id: board_id.to_string(),
        mean,
        std,
        runs,
    })
}

/// Negative means fewer whites than the heuristic.
pub fn z_score(whites: f64, stats: &HeuristicStats) -> f64 {
    (whites - stats.mean) / stats.std.max(1e-9)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub board_id: String,
    pub seed: u64,
    pub actions: Vec<usize>,
    pub rewards: Vec<i32>,
    pub whites: u32,
    pub z: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::parse_board;

    fn two_red() -> Board {
        parse_board("1100/0000/0000/0000").unwrap()
    }

    #[test]
    fn reset_reveals_one_red() {
        let (env, obs) = RevealEnv::reset(two_red(), 3).unwrap();
        assert_eq!(env.revealed().count_ones(), 1);
        assert_eq!(env.revealed() & !two_red().mask(), 0);
        assert_eq!(obs.masked_count(), 15);
        let ch = obs.channels();
        assert_eq!(ch[..16].iter().sum::<f64>(), 15.0);
        assert_eq!(ch[16..32].iter().sum::<f64>(), 1.0);
        assert!(!env.done());
        assert_eq!(
            RevealEnv::reset(Board::empty(4).unwrap(), 0).unwrap_err(),
            EnvError::AllWhite
        );
    }

    #[test]
    fn single_red_is_done_at_reset() {
        let (env, _) = RevealEnv::reset(parse_board("0000/0010/0000/0000").unwrap(), 1).unwrap();
        assert!(env.done());
        assert_eq!(env.whites_revealed(), 0);
    }

    #[test]
    fn reward_schedule() {
        let board = parse_board("1110/0000/0000/0000").unwrap();
        let mut rng = rng_from_seed(0);
        let (mut env, _) = RevealEnv::reset_with(board, EnvConfig::default(), &mut rng).unwrap();
        let first = env.revealed().trailing_zeros() as usize;
        assert_eq!(env.step(first).unwrap().reward, REWARD_REPEAT);
        assert_eq!(env.revealed(), 1 << first);
        assert_eq!(env.step(15).unwrap().reward, REWARD_WHITE);
        let mut reds: Vec<usize> = (0..3).filter(|&i| i != first).collect();
        assert_eq!(env.step(reds.remove(0)).unwrap().reward, REWARD_RED);
        let last = env.step(reds[0]).unwrap();
        assert_eq!((last.reward, last.done), (REWARD_LAST_RED, true));
        assert_eq!(env.step(4).unwrap_err(), EnvError::Finished);
        assert_eq!(env.whites_revealed(), 1);
    }

    #[test]
    fn additive_bonus_flag() {
        let cfg = EnvConfig {
            final_red_bonus_additive: true,
            ..Default::default()
        };
        let (mut env, _) = RevealEnv::reset_with(two_red(), cfg, &mut rng_from_seed(1)).unwrap();
        let other = if env.revealed() == 1 { 1 } else { 0 };
        assert_eq!(env.step(other).unwrap().reward, 6);
    }

    #[test]
    fn step_cap_ends_episode() {
        let (mut env, _) = RevealEnv::reset(two_red(), 0).unwrap();
        let first = env.revealed().trailing_zeros() as usize;
        for k in 0..DEFAULT_STEP_CAP {
            let r = env.step(first).unwrap();
            assert_eq!(r.done, k + 1 == DEFAULT_STEP_CAP);
        }
        assert!(env.step(0).is_err());
        assert!(matches!(env.step(16), Err(EnvError::ActionOutOfRange { .. })));
    }

    #[test]
    fn all_red_heuristic_reveals_no_whites() {
        let s = heuristic_stats(&Board::full(4).unwrap(), "full", 50, 1).unwrap();
        assert_eq!((s.mean, s.std), (0.0, 0.0));
    }

    #[test]
    fn two_red_expectations() {
        let b = two_red();
        let from_corner = heuristic_distribution_from(&b, 1);
        let mean = |d: &[f64]| d.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>();
        assert!((mean(&from_corner) - 0.5).abs() < 1e-12);
        assert!((mean(&heuristic_distribution(&b).unwrap()) - 0.75).abs() < 1e-12);
        let s = heuristic_stats(&b, "b", 1000, 4).unwrap();
        let se = s.std / (s.runs as f64).sqrt();
        assert!((s.mean - 0.75).abs() < 3.0 * se, "{s:?}");
        assert_eq!(s, heuristic_stats(&b, "b", 1000, 4).unwrap());
    }

    #[test]
    fn z_score_cases() {
        let s = HeuristicStats {
            board_id: "x".into(),
            mean: 3.0,
            std: 2.0,
            runs: 10,
        };
        assert_eq!(z_score(3.0, &s), 0.0);
        assert_eq!(z_score(1.0, &s), -1.0);
        let flat = HeuristicStats { mean: 0.0, std: 0.0, ..s };
        assert_eq!(z_score(0.0, &flat), 0.0);
    }
}
