use std::io::{BufRead, Write};

use gridmind::board::sample_board;
use gridmind::env::{heuristic_stats, z_score, RevealEnv, DEFAULT_HEURISTIC_RUNS};
use gridmind::rng::derive_seed;

use crate::{load_dataset, runtime, CliError, ExperimentConfig, PlayArgs};

fn render(env: &RevealEnv) -> String {
    let obs = env.observation();
    let n = obs.n;
    let mut s = String::from("   ");
    for c in 0..n {
        s += &format!("{c} ");
    }
    s.push('\n');
    for r in 0..n {
        s += &format!("{r}  ");
        for c in 0..n {
            let bit = 1u64 << (r * n + c);
            let ch = if obs.revealed & bit == 0 {
                '?'
            } else if obs.reds & bit != 0 {
                '#'
            } else {
                '.'
            };
            s.push(ch);
            s.push(' ');
        }
        s.push('\n');
    }
    s
}

/// Accepts `row col` or a flat index.
fn parse_tile(line: &str, n: usize) -> Option<usize> {
    let nums: Vec<usize> = line.split_whitespace().map(str::parse).collect::<Result<_, _>>().ok()?;
    let idx = match nums[..] {
        [i] => i,
        [r, c] if r < n && c < n => r * n + c,
        _ => return None,
    };
    (idx < n * n).then_some(idx)
}

/// Interactive play: `#` red, `.` white, `?` covered. Ends when every red
/// is found, on `q`, or at end of input.
pub fn play<R: BufRead, W: Write>(cfg: &ExperimentConfig, a: &PlayArgs, input: R, mut out: W) -> Result<(), CliError> {
    let ds = load_dataset(&a.data)?.without_all_white();
    let (id, board) = match &a.board {
        Some(id) => {
            let e = ds
                .get(id)
                .ok_or_else(|| CliError::Validation(format!("no board {id:?} with reds in {}", a.data.display())))?;
            (e.id.clone(), e.board)
        }
        None => {
            let b = sample_board(&ds, derive_seed(cfg.seed, 0)).map_err(|e| CliError::Validation(e.to_string()))?;
            let id = ds.entries.iter().find(|e| e.board == b).map(|e| e.id.clone()).unwrap_or_default();
            (id, b)
        }
    };
    let (mut env, _) = RevealEnv::reset(board, derive_seed(cfg.seed, 1)).map_err(runtime)?;
    let w = |out: &mut W, s: &str| out.write_all(s.as_bytes()).map_err(runtime);
    w(&mut out, &format!("board {id}: find every red tile, revealing as few whites as you can\n"))?;
    let n = board.n();
    let mut lines = input.lines();
    while !env.done() {
        w(&mut out, &render(&env))?;
        w(&mut out, "tile (row col, or q)> ")?;
        out.flush().map_err(runtime)?;
        let Some(line) = lines.next() else { return Ok(()) };
        let line = line.map_err(runtime)?;
        if line.trim() == "q" {
            return Ok(());
        }
        let Some(tile) = parse_tile(&line, n) else {
            w(&mut out, &format!("expected `row col` with values below {n}\n"))?;
            continue;
        };
        let r = env.step(tile).map_err(runtime)?;
        w(&mut out, &format!("reward {:+}\n", r.reward))?;
    }
    w(&mut out, &render(&env))?;
    let stats = heuristic_stats(&board, &id, DEFAULT_HEURISTIC_RUNS, derive_seed(cfg.seed, 2)).map_err(runtime)?;
    let whites = env.whites_revealed();
    w(
        &mut out,
        &format!(
            "done: {whites} whites revealed (heuristic mean {:.2}); z = {:.3}\n",
            stats.mean,
            z_score(f64::from(whites), &stats)
        ),
    )
}
