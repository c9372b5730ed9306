//! Slow, obviously-correct reference implementations for tests.
//!
//! Nothing here shares code with `gridmind-core`. Each oracle is written
//! from the task rules directly, favouring clarity over speed.

pub mod dsl {
    use std::collections::BTreeSet;

    #[derive(Clone, Debug, PartialEq)]
    pub enum Tok {
        Move,
        Left,
        Right,
        PenUp,
        PenDown,
        Fork(Vec<Tok>),
        Call(usize),
    }

    pub fn parse(text: &str) -> Vec<Tok> {
        let spaced = text.replace('(', " ( ").replace(')', " ) ");
        let words: Vec<&str> = spaced.split_whitespace().collect();
        let mut i = 0;
        let out = parse_seq(&words, &mut i);
        assert_eq!(i, words.len(), "trailing tokens in {text:?}");
        out
    }

    fn parse_seq(words: &[&str], i: &mut usize) -> Vec<Tok> {
        let mut out = Vec::new();
        while *i < words.len() {
            match words[*i] {
                ")" => return out,
                "(" => {
                    assert_eq!(words[*i + 1], "fork");
                    *i += 2;
                    let body = parse_seq(words, i);
                    assert_eq!(words[*i], ")");
                    *i += 1;
                    out.push(Tok::Fork(body));
                }
                "move" => {
                    out.push(Tok::Move);
                    *i += 1
                }
                "left" => {
                    out.push(Tok::Left);
                    *i += 1
                }
                "right" => {
                    out.push(Tok::Right);
                    *i += 1
                }
                "pen-up" => {
                    out.push(Tok::PenUp);
                    *i += 1
                }
                "pen-down" => {
                    out.push(Tok::PenDown);
                    *i += 1
                }
                w => {
                    let k: usize = w[1..].parse().expect("fN");
                    out.push(Tok::Call(k));
                    *i += 1
                }
            }
        }
        out
    }

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub struct Pointer {
        pub row: i64,
        pub col: i64,
        /// (drow, dcol); east is (0, 1)
        pub dir: (i64, i64),
        pub pen: bool,
    }

    #[derive(Clone, Debug, PartialEq, Eq)]
    pub struct Run {
        pub cells: BTreeSet<(i64, i64)>,
        pub motions: i64,
        pub pointer: Pointer,
    }

    pub fn simulate(prog: &[Tok], lib: &[Vec<Tok>], n: i64, start: (i64, i64)) -> Run {
        let mut run = Run {
            cells: BTreeSet::new(),
            motions: 0,
            pointer: Pointer {
                row: start.0,
                col: start.1,
                dir: (0, 1),
                pen: false,
            },
        };
        exec(prog, lib, n, &mut run);
        run
    }

    fn exec(prog: &[Tok], lib: &[Vec<Tok>], n: i64, run: &mut Run) {
        for t in prog {
            let p = &mut run.pointer;
            match t {
                Tok::Move => {
                    let (r, c) = (p.row + p.dir.0, p.col + p.dir.1);
                    if (0..n).contains(&r) && (0..n).contains(&c) {
                        p.row = r;
                        p.col = c;
                        if p.pen {
                            run.cells.insert((r, c));
                        }
                    }
                    if p.pen {
                        run.motions += 1;
                    }
                }
                Tok::Left => {
                    p.dir = (-p.dir.1, p.dir.0);
                    if p.pen {
                        run.motions += 1;
                    }
                }
                Tok::Right => {
                    p.dir = (p.dir.1, -p.dir.0);
                    if p.pen {
                        run.motions += 1;
                    }
                }
                Tok::PenUp => p.pen = false,
                Tok::PenDown => {
                    p.pen = true;
                    run.cells.insert((p.row, p.col));
                }
                Tok::Fork(body) => {
                    let saved = run.pointer;
                    exec(body, lib, n, run);
                    run.pointer = saved;
                }
                Tok::Call(k) => exec(&lib[*k], lib, n, run),
            }
        }
    }

    /// Score from one start; `None` stands for minus infinity.
    pub fn score_from(run: &Run, target: &BTreeSet<(i64, i64)>) -> Option<i64> {
        if run.cells.iter().any(|c| !target.contains(c)) {
            return None;
        }
        let missed = target.iter().filter(|c| !run.cells.contains(c)).count() as i64;
        Some(-10 * missed - run.motions)
    }

    pub fn best_score(prog: &[Tok], lib: &[Vec<Tok>], n: i64, target: &BTreeSet<(i64, i64)>) -> Option<i64> {
        let mut best: Option<i64> = None;
        for r in 0..n {
            for c in 0..n {
                let s = score_from(&simulate(prog, lib, n, (r, c)), target);
                best = match (best, s) {
                    (None, s) => s,
                    (b, None) => b,
                    (Some(a), Some(b)) => Some(a.max(b)),
                };
            }
        }
        best
    }

    pub fn size(prog: &[Tok]) -> usize {
        prog.iter()
            .map(|t| match t {
                Tok::Fork(b) => 1 + size(b),
                _ => 1,
            })
            .sum()
    }

    pub fn print(prog: &[Tok]) -> String {
        prog.iter()
            .map(|t| match t {
                Tok::Move => "move".to_string(),
                Tok::Left => "left".to_string(),
                Tok::Right => "right".to_string(),
                Tok::PenUp => "pen-up".to_string(),
                Tok::PenDown => "pen-down".to_string(),
                Tok::Call(k) => format!("f{k}"),
                Tok::Fork(b) if b.is_empty() => "(fork)".to_string(),
                Tok::Fork(b) => format!("(fork {})", print(b)),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Every primitive program (forks included) with size exactly `s`.
    pub fn programs_of_size(s: usize) -> Vec<Vec<Tok>> {
        if s == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for prim in [Tok::Move, Tok::Left, Tok::Right, Tok::PenUp, Tok::PenDown] {
            for rest in programs_of_size(s - 1) {
                let mut p = vec![prim.clone()];
                p.extend(rest);
                out.push(p);
            }
        }
        for body_size in 0..s {
            for body in programs_of_size(body_size) {
                for rest in programs_of_size(s - 1 - body_size) {
                    let mut p = vec![Tok::Fork(body.clone())];
                    p.extend(rest);
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn programs_up_to(max: usize) -> Vec<Vec<Tok>> {
        (0..=max).flat_map(programs_of_size).collect()
    }

    /// Every subset of the `n×n` grid with at most `k` cells.
    pub fn targets_up_to(n: i64, k: usize) -> Vec<BTreeSet<(i64, i64)>> {
        let cells: Vec<(i64, i64)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
        let mut out = Vec::new();
        for mask in 0u64..(1 << cells.len()) {
            if (mask.count_ones() as usize) <= k {
                out.push(
                    cells
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask >> i & 1 == 1)
                        .map(|(_, c)| *c)
                        .collect(),
                );
            }
        }
        out
    }
}

pub mod heuristic {
    use std::collections::HashMap;

    /// Exact distribution of whites revealed by the nearest-neighbour
    /// heuristic, starting from `start` already revealed. Cells are row-major
    /// indices; `reds` is a bitmask.
    pub fn whites_distribution_from(n: usize, reds: u64, start: usize) -> Vec<f64> {
        let mut memo = HashMap::new();
        dist(n, reds, 1u64 << start, &mut memo)
    }

    /// Same, averaged over a uniformly random red start.
    pub fn whites_distribution(n: usize, reds: u64) -> Vec<f64> {
        let starts: Vec<usize> = (0..n * n).filter(|i| reds >> i & 1 == 1).collect();
        let mut total = vec![0.0; n * n + 1];
        for &s in &starts {
            for (w, p) in whites_distribution_from(n, reds, s).into_iter().enumerate() {
                total[w] += p / starts.len() as f64;
            }
        }
        total
    }

    pub fn mean(dist: &[f64]) -> f64 {
        dist.iter().enumerate().map(|(w, p)| w as f64 * p).sum()
    }

    fn neighbours(n: usize, i: usize) -> Vec<usize> {
        let (r, c) = ((i / n) as i64, (i % n) as i64);
        [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0 && (a as usize) < n && (b as usize) < n)
            .map(|(a, b)| a as usize * n + b as usize)
            .collect()
    }

    fn dist(n: usize, reds: u64, revealed: u64, memo: &mut HashMap<u64, Vec<f64>>) -> Vec<f64> {
        if let Some(d) = memo.get(&revealed) {
            return d.clone();
        }
        let mut out = vec![0.0; n * n + 1];
        if revealed & reds == reds {
            let whites = (revealed & !reds).count_ones() as usize;
            out[whites] = 1.0;
        } else {
            let covered: Vec<usize> = (0..n * n).filter(|i| revealed >> i & 1 == 0).collect();
            let mut frontier: Vec<usize> = covered
                .iter()
                .copied()
                .filter(|&i| {
                    neighbours(n, i)
                        .into_iter()
                        .any(|j| revealed >> j & 1 == 1 && reds >> j & 1 == 1)
                })
                .collect();
            if frontier.is_empty() {
                frontier = covered;
            }
            let p = 1.0 / frontier.len() as f64;
            for i in frontier {
                for (w, q) in dist(n, reds, revealed | 1 << i, memo).into_iter().enumerate() {
                    out[w] += p * q;
                }
            }
        }
        memo.insert(revealed, out.clone());
        out
    }
}

pub mod mdl {
    /// Leftmost-first, non-overlapping occurrences of `pat` in `seq`.
    pub fn count_occurrences(seq: &[String], pat: &[String]) -> usize {
        let mut i = 0;
        let mut count = 0;
        while i + pat.len() <= seq.len() {
            if seq[i..i + pat.len()] == *pat {
                count += 1;
                i += pat.len();
            } else {
                i += 1;
            }
        }
        count
    }

    /// Description length after abstracting `body` out of a flat corpus:
    /// each occurrence shrinks to one token, plus `lambda·|body|` for the library.
    pub fn mdl_with(corpus: &[Vec<String>], body: &[String], lambda: f64) -> f64 {
        let programs: usize = corpus
            .iter()
            .map(|p| {
                let k = count_occurrences(p, body);
                p.len() - k * body.len() + k
            })
            .sum();
        programs as f64 + lambda * body.len() as f64
    }

    /// Scores every contiguous substring (length ≥ 2) occurring at least
    /// twice; returns `(mdl, body)` sorted best first.
    pub fn score_all(corpus: &[Vec<String>], lambda: f64) -> Vec<(f64, Vec<String>)> {
        let mut bodies: Vec<Vec<String>> = Vec::new();
        for p in corpus {
            for i in 0..p.len() {
                for j in i + 2..=p.len() {
                    let b = p[i..j].to_vec();
                    if !bodies.contains(&b) {
                        bodies.push(b);
                    }
                }
            }
        }
        let mut scored: Vec<(f64, Vec<String>)> = bodies
            .into_iter()
            .filter(|b| corpus.iter().map(|p| count_occurrences(p, b)).sum::<usize>() >= 2)
            .map(|b| (mdl_with(corpus, &b, lambda), b))
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.len().cmp(&b.1.len())));
        scored
    }

    pub fn baseline(corpus: &[Vec<String>]) -> f64 {
        corpus.iter().map(|p| p.len()).sum::<usize>() as f64
    }
}

pub mod stats {
    /// Kolmogorov–Smirnov statistic of `samples` against U[0, 1].
    pub fn ks_uniform(samples: &[f64]) -> f64 {
        let mut xs = samples.to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = x - i as f64 / n;
                let hi = (i as f64 + 1.0) / n - x;
                lo.max(hi)
            })
            .fold(0.0, f64::max)
    }

    /// Asymptotic KS critical value at alpha = 0.01.
    pub fn ks_critical_01(n: usize) -> f64 {
        1.628 / (n as f64).sqrt()
    }

    /// Central finite-difference derivative.
    pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, eps: f64) -> f64 {
        (f(x + eps) - f(x - eps)) / (2.0 * eps)
    }
}
