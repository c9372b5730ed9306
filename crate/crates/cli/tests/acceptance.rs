//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p gridmind-cli --test acceptance`. A substring
//! argument runs only matching criteria. The process exits non-zero when a
//! criterion fails, except for those listed in `MAY_FAIL`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use gridmind::agent::{evaluate, policy_grad_check, train, PpoConfig};
use gridmind::analysis::{bootstrap_test, pearson, perm_corr_diff, rsa_matrix};
use gridmind::board::{Board, BoardDataset};
use gridmind::dsl::{execute, parse_program, score, score_trace, Instr, Library, Program, Score};
use gridmind::embeddings::{description_length, synth_describe, synth_description_length, EmbeddingProvider};
use gridmind::library::{compress, mdl};
use gridmind::priors::{
    conditional_grad_check, generate_prior_corpus, masked_accuracy, train_conditional, ConditionalTable,
    ConditionalTrainConfig, GibbsChain, RuleFamily, RuleGenerator,
};
use gridmind::synthesis::{
    enumerate, recognition_grad_check, wake_sleep, RecognitionTrainConfig, SearchBudget, UnigramGrammar,
    WakeSleepConfig,
};
use gridmind_oracles::{dsl as odsl, mdl as omdl, stats as ostats};

/// Criteria whose failure is recorded but does not fail the run.
const MAY_FAIL: &[&str] = &["grounding-direction"];

type Check = fn() -> Result<String, String>;

const CRITERIA: &[(&str, u64, Check)] = &[
    ("dsl-oracle-equivalence", 120, dsl_oracle_equivalence),
    ("score-spot-values", 0, score_spot_values),
    ("library-learning", 60, library_learning),
    ("gibbs-stationary", 60, gibbs_stationary),
    ("conditional-accuracy", 300, conditional_accuracy),
    ("gradient-checks", 120, gradient_checks),
    ("rl-sanity", 1800, rl_sanity),
    ("grounding-direction", 4 * 3600, grounding_direction),
    ("statistics", 300, statistics),
    ("description-length", 0, description_length_mechanics),
    ("determinism", 0, determinism),
];

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut hard_failures = 0;
    for &(name, limit, check) in CRITERIA {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = started.elapsed();
        let outcome = match outcome {
            Ok(d) if limit > 0 && took > Duration::from_secs(limit) => Err(format!("{d}; over the {limit}s limit")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} {name} ({:.1}s): {detail}", took.as_secs_f64());
        if outcome.is_err() && !MAY_FAIL.contains(&name) {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Result<String, String> {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn program(text: &str) -> Program {
    parse_program(text, &Library::new()).unwrap()
}

fn cells_mask(cells: &BTreeSet<(i64, i64)>, n: i64) -> u64 {
    cells.iter().fold(0, |m, &(r, c)| m | 1 << (r * n + c))
}

fn dsl_oracle_equivalence() -> Result<String, String> {
    let n = 3i64;
    let lib = Library::new();
    let programs = odsl::programs_up_to(6);
    let targets = odsl::targets_up_to(n, 3);
    let masks: Vec<u64> = targets.iter().map(|t| cells_mask(t, n)).collect();
    let mut compared = 0usize;
    for toks in &programs {
        let text = odsl::print(toks);
        let prog = parse_program(&text, &lib).map_err(|e| format!("{text}: {e}"))?;
        for r in 0..n {
            for c in 0..n {
                let run = odsl::simulate(toks, &[], n, (r, c));
                let trace = execute(&prog, (r as usize, c as usize), n as usize, &lib).map_err(|e| e.to_string())?;
                for (t, &mask) in targets.iter().zip(&masks) {
                    let want = odsl::score_from(&run, t).map_or(Score::NegInfinity, Score::Finite);
                    let got = score_trace(&trace, mask);
                    if got != want {
                        return Err(format!("{text} from ({r},{c}) on {t:?}: {got} vs oracle {want}"));
                    }
                    compared += 1;
                }
            }
        }
        // the max over start cells goes through the public scorer
        for (t, &mask) in targets.iter().zip(&masks).step_by(7) {
            let want = odsl::best_score(toks, &[], n, t).map_or(Score::NegInfinity, Score::Finite);
            let board = Board::from_mask(n as usize, mask).unwrap();
            let got = score(&prog, &board, &lib).map_err(|e| e.to_string())?;
            if got != want {
                return Err(format!("{text} on {t:?}: best {got} vs oracle {want}"));
            }
        }
    }
    Ok(format!("{} programs, {} targets, {compared} scored runs agree", programs.len(), targets.len()))
}

fn score_spot_values() -> Result<String, String> {
    let lib = Library::new();
    let board = |rows: &str| rows.parse::<Board>().unwrap();
    let three = board("1110/0000/0000/0000");
    let empty = score(&Program::default(), &three, &lib).unwrap();
    let mut bad = Vec::new();
    if empty != Score::Finite(-30) {
        bad.push(format!("empty program {empty}"));
    }
    // k counts moves and turns made with the pen down
    let cases = [
        ("pen-down", "1000/0000/0000/0000", 0),
        ("pen-down pen-up move move pen-down move", "1011/0000/0000/0000", 1),
        ("pen-down move move", "1110/0000/0000/0000", 2),
        ("pen-down move pen-up right move pen-down move pen-up left move pen-down", "1100/0100/0110/0000", 2),
        ("pen-down move move move right move move move", "1111/0001/0001/0001", 7),
    ];
    for (text, target, k) in cases {
        let b = board(target);
        let s = score(&program(text), &b, &lib).unwrap();
        let cells: BTreeSet<(i64, i64)> = b.reds().iter().map(|&(r, c)| (r as i64, c as i64)).collect();
        let oracle = odsl::best_score(&odsl::parse(text), &[], 4, &cells);
        if s != Score::Finite(-k) || oracle != Some(-k) {
            bad.push(format!("{text} on {target}: {s} (oracle {oracle:?}), expected -{k}"));
        }
    }
    let extra = score(&program("pen-down move move move"), &three, &lib).unwrap();
    let stray = score(&program("pen-down"), &board("0000/0000/0000/0000"), &lib).unwrap();
    for (what, s) in [("overshoot", extra), ("mark on white board", stray)] {
        if s != Score::NegInfinity {
            bad.push(format!("{what}: {s}"));
        }
    }
    ensure(
        bad.is_empty(),
        if bad.is_empty() { "empty -30, exact covers -k for k in 0,1,2,2,7, extra marks -inf".into() } else { bad.join("; ") },
    )
}

fn words(p: &Program) -> Vec<String> {
    p.to_string().split_whitespace().map(str::to_string).collect()
}

fn oracle_lib(lib: &Library) -> Vec<Vec<odsl::Tok>> {
    lib.functions.iter().map(|f| odsl::parse(&f.to_string())).collect()
}

/// Rewritten programs must trace exactly like the originals from every start.
fn same_behaviour(before: &[Program], after: &[Program], lib: &Library, n: i64) -> Result<(), String> {
    let olib = oracle_lib(lib);
    for (a, b) in before.iter().zip(after) {
        let (ta, tb) = (odsl::parse(&a.to_string()), odsl::parse(&b.to_string()));
        for r in 0..n {
            for c in 0..n {
                let ra = odsl::simulate(&ta, &[], n, (r, c));
                let rb = odsl::simulate(&tb, &olib, n, (r, c));
                let ea = execute(a, (r as usize, c as usize), n as usize, &Library::new()).map_err(|e| e.to_string())?;
                let eb = execute(b, (r as usize, c as usize), n as usize, lib).map_err(|e| e.to_string())?;
                if ra != rb || ea.marked != eb.marked || ea.pen_motions != eb.pen_motions || ea.final_state != eb.final_state {
                    return Err(format!("{a} vs rewrite {b} from ({r},{c})"));
                }
            }
        }
    }
    Ok(())
}

fn random_program(rng: &mut ChaCha8Rng, len: usize, depth: u32) -> Program {
    Program(
        (0..len)
            .map(|_| match rng.random_range(0..if depth > 0 { 7 } else { 6 }) {
                0 | 5 => Instr::Move,
                1 => Instr::Left,
                2 => Instr::Right,
                3 => Instr::PenUp,
                4 => Instr::PenDown,
                _ => {
                    let l = rng.random_range(1..4);
                    Instr::Fork(random_program(rng, l, depth - 1))
                }
            })
            .collect(),
    )
}

fn oracle_mdl(programs: &[Program], lib: &Library, lambda: f64) -> f64 {
    let size = |p: &Program| odsl::size(&odsl::parse(&p.to_string())) as f64;
    programs.iter().map(size).sum::<f64>() + lambda * lib.functions.iter().map(size).sum::<f64>()
}

fn library_learning() -> Result<String, String> {
    // 3 × "pen-down move move move"
    let corpus = vec![program("pen-down move move move"); 3];
    let r = compress(&corpus, &Library::new(), 1.5, 10);
    let flat: Vec<Vec<String>> = corpus.iter().map(words).collect();
    let best = omdl::score_all(&flat, 1.5);
    let (ob, obody) = (&best[0].0, best[0].1.join(" "));
    if (r.report.mdl_before, r.report.mdl_after) != (12.0, 9.0)
        || r.library.functions != [program("pen-down move move move")]
        || *ob != 9.0
        || obody != "pen-down move move move"
    {
        return Err(format!(
            "MDL {} -> {} with {:?}; oracle best {ob} with {obody:?}",
            r.report.mdl_before,
            r.report.mdl_after,
            r.library.functions.iter().map(|f| f.to_string()).collect::<Vec<_>>()
        ));
    }
    same_behaviour(&corpus, &r.rewritten, &r.library, 4)?;

    // planted motif
    let motif = program("left move pen-down");
    let mut recovered = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus: Vec<Program> = (0..8)
            .map(|_| {
                let len = rng.random_range(3..7);
                let mut body = random_program(&mut rng, len, 0).0;
                let at = rng.random_range(0..=body.len());
                body.splice(at..at, motif.0.iter().cloned());
                Program(body)
            })
            .collect();
        let r = compress(&corpus, &Library::new(), 1.5, 5);
        if r.library.functions.iter().any(|f| f.inline(&r.library).0.windows(3).any(|w| w == motif.0.as_slice())) {
            recovered += 1;
        }
        same_behaviour(&corpus, &r.rewritten, &r.library, 4)?;
    }
    if recovered < 10 {
        return Err(format!("planted motif recovered in {recovered}/10 corpora"));
    }

    // MDL bookkeeping on random nested corpora
    let mut rounds = 0;
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let lambda = [0.5, 1.5, 3.0][seed as usize % 3];
        let corpus: Vec<Program> = (0..6)
            .map(|_| {
                let len = rng.random_range(2..9);
                random_program(&mut rng, len, 2)
            })
            .collect();
        let r = compress(&corpus, &Library::new(), lambda, 4);
        let before = oracle_mdl(&corpus, &Library::new(), lambda);
        let after = oracle_mdl(&r.rewritten, &r.library, lambda);
        if after > before || (after - r.report.mdl_after).abs() > 1e-9 || (before - r.report.mdl_before).abs() > 1e-9 {
            return Err(format!("seed {seed}: oracle MDL {before} -> {after}, reported {:?}", r.report));
        }
        if r.report.rounds.iter().any(|x| x.mdl_delta >= 0.0) {
            return Err(format!("seed {seed}: non-improving round {:?}", r.report.rounds));
        }
        rounds += r.adopted();
        same_behaviour(&corpus, &r.rewritten, &r.library, 4)?;
    }
    Ok(format!(
        "12 -> 9 (oracle agrees), motif recovered 10/10, 60 random corpora ({rounds} rounds) never raise MDL, all rewrites trace-identical"
    ))
}

/// Stationary law of the random-scan kernel, solved directly.
fn oracle_stationary(p_red: impl Fn(u64, usize) -> f64) -> Vec<f64> {
    const S: usize = 16;
    let mut t = [[0.0f64; S]; S];
    for (from, row) in t.iter_mut().enumerate() {
        for i in 0..4 {
            let rest = from as u64 & !(1 << i);
            let p = p_red(rest, i);
            row[(rest | 1 << i) as usize] += p / 4.0;
            row[rest as usize] += (1.0 - p) / 4.0;
        }
    }
    // π (T − I) = 0 with Σπ = 1: Gaussian elimination on the transposed system
    let mut a = vec![vec![0.0f64; S + 1]; S];
    for j in 0..S {
        for i in 0..S {
            a[j][i] = t[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[S - 1] = vec![1.0; S + 1];
    for col in 0..S {
        let piv = (col..S).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..S {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..=S {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..S).map(|i| a[i][S] / a[i][i]).collect()
}

fn gibbs_stationary() -> Result<String, String> {
    let f = |rest: u64, i: usize| (0.2 + 0.15 * rest.count_ones() as f64 + 0.05 * i as f64).min(0.95);
    let table = ConditionalTable::from_fn(2, f).map_err(|e| e.to_string())?;
    let exact = oracle_stationary(f);
    let mut chain = GibbsChain::new(2, 17);
    let steps = 100_000;
    let mut counts = [0.0f64; 16];
    for _ in 0..steps {
        chain.step(&table);
        counts[chain.board.mask() as usize] += 1.0;
    }
    let tv = counts.iter().zip(&exact).map(|(c, p)| (c / steps as f64 - p).abs()).sum::<f64>() / 2.0;
    ensure(tv < 0.05, format!("TV {tv:.4} after {steps} steps (tolerance 0.05)"))
}

fn conditional_accuracy() -> Result<String, String> {
    let d = generate_prior_corpus(&RuleGenerator::uniform(4), 500, 11).map_err(|e| e.to_string())?;
    let (model, _) = train_conditional(&d, &ConditionalTrainConfig::default()).map_err(|e| e.to_string())?;
    let acc = masked_accuracy(&model, &d, 20_000, 5).map_err(|e| e.to_string())?;
    ensure(acc >= 0.99, format!("masked accuracy {:.4} on 500 rule draws (need 0.99)", acc))
}

fn gradient_checks() -> Result<String, String> {
    let reports = [
        ("conditional", conditional_grad_check(2)),
        ("recognition", recognition_grad_check(3, Some(40))),
        ("policy+grounding, ppo loss", policy_grad_check(11, Some(12))),
        ("policy+grounding, ppo loss (reseeded)", policy_grad_check(23, Some(12))),
    ];
    let parts: Vec<String> = reports.iter().map(|(n, r)| format!("{n} {:.2e}", r.max_rel_err())).collect();
    ensure(
        reports.iter().all(|(_, r)| r.max_rel_err() < 1e-4 && !r.entries.is_empty()),
        format!("max relative error: {} (tolerance 1e-4)", parts.join(", ")),
    )
}

fn full_rows() -> BoardDataset {
    BoardDataset::from_counts("row", RuleFamily::FullRow.boards(4))
}

fn rl_sanity() -> Result<String, String> {
    let rows = full_rows();
    let cfg = PpoConfig { c_task: 0.0, episodes: 50_000, ..PpoConfig::grounding() };
    let (net, rep) = train(&rows, &cfg, None, 0, |_| {}).map_err(|e| e.to_string())?;
    let eval = evaluate(&net, &rows, 50, cfg.env, 1).map_err(|e| e.to_string())?;
    ensure(
        eval.mean_z < 0.0,
        format!("mean eval z {:.3} after {} episodes (need < 0)", eval.mean_z, rep.episodes),
    )
}

const GROUNDING_EPISODES: usize = 50_000;

fn grounding_direction() -> Result<String, String> {
    let data = generate_prior_corpus(&RuleGenerator::uniform(4), 500, 1).map_err(|e| e.to_string())?;
    let (train_ds, test_ds) = gridmind_cli::split_by_id(&data, 0.8, 2);
    let ws = WakeSleepConfig {
        iterations: 2,
        budget: SearchBudget { max_nodes: 20_000, max_program_size: 16, timeout: Duration::from_secs(600) },
        dream_count: 200,
        recognition: RecognitionTrainConfig { epochs: 30, ..Default::default() },
        seed: 3,
        ..Default::default()
    };
    let r = wake_sleep(&data.top_k(40), &ws, |_| {}).map_err(|e| e.to_string())?;
    let truth = EmbeddingProvider::from_recognition(&r.recognition, &data).map_err(|e| e.to_string())?;
    let shuffled = truth.shuffled(4);
    let cfg = PpoConfig { episodes: GROUNDING_EPISODES, ..PpoConfig::grounding() };
    let (mut wins, mut mse_ok) = (0, 0);
    let mut zs = Vec::new();
    for pair in 0..10u64 {
        let seed = 100 + pair;
        let run = |p: &EmbeddingProvider| -> Result<(f64, bool), String> {
            let (net, rep) = train(&train_ds, &cfg, Some(p), seed, |_| {}).map_err(|e| e.to_string())?;
            let eval = evaluate(&net, &test_ds, 20, cfg.env, 7).map_err(|e| e.to_string())?;
            let fell = match (rep.initial_grounding_mse, rep.final_grounding_mse) {
                (Some(a), Some(b)) => b <= 0.5 * a,
                _ => false,
            };
            Ok((eval.mean_z, fell))
        };
        let (zt, ft) = run(&truth)?;
        let (zs_, fs) = run(&shuffled)?;
        wins += usize::from(zt < zs_);
        mse_ok += usize::from(ft) + usize::from(fs);
        zs.push(format!("{zt:.2}/{zs_:.2}"));
    }
    ensure(
        wins >= 7 && mse_ok == 20,
        format!(
            "true beats shuffled in {wins}/10 pairs (need 7); MSE halved in {mse_ok}/20 agents; z true/shuffled {}",
            zs.join(" ")
        ),
    )
}

fn null_p_values(sims: u64, f: impl Fn(&mut ChaCha8Rng, u64) -> f64) -> f64 {
    let ps: Vec<f64> = (0..sims)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            f(&mut rng, s)
        })
        .collect();
    ostats::ks_uniform(&ps)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller
    let (u, v): (f64, f64) = (1.0 - rng.random::<f64>(), rng.random());
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn statistics() -> Result<String, String> {
    let sims = 500;
    let crit = ostats::ks_critical_01(sims as usize);
    let d_boot = null_p_values(sims, |rng, s| {
        let a: Vec<f64> = (0..40).map(|_| normal(rng)).collect();
        let b: Vec<f64> = (0..40).map(|_| normal(rng)).collect();
        bootstrap_test(&a, &b, 2000, s).unwrap().p_value
    });
    let d_perm = null_p_values(sims, |rng, s| {
        let x: Vec<f64> = (0..30).map(|_| normal(rng)).collect();
        let y1: Vec<f64> = x.iter().map(|v| 0.5 * v + normal(rng)).collect();
        let y2: Vec<f64> = x.iter().map(|v| 0.5 * v + normal(rng)).collect();
        perm_corr_diff(&x, &y1, &y2, 2000, s).unwrap().p_value
    });

    let mut bad = Vec::new();
    let hand: [(&[f64], &[f64], f64); 4] = [
        (&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0], 1.0),
        (&[1.0, 2.0, 3.0, 4.0], &[-1.0, -2.0, -3.0, -4.0], -1.0),
        (&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0], 0.5),
        (&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0], 0.0),
    ];
    for (x, y, want) in hand {
        let got = pearson(x, y).map_err(|e| e.to_string())?;
        if got != want {
            bad.push(format!("pearson {x:?} {y:?} = {got}, expected {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vectors: Vec<Vec<f64>> = (0..12).map(|_| (0..20).map(|_| normal(&mut rng)).collect()).collect();
    let m = rsa_matrix(&vectors).map_err(|e| e.to_string())?;
    for i in 0..m.len() {
        if m[i][i] != 1.0 {
            bad.push(format!("rsa diagonal {i} = {}", m[i][i]));
        }
        for j in 0..m.len() {
            if m[i][j] != m[j][i] {
                bad.push(format!("rsa asymmetric at ({i},{j})"));
            }
        }
    }
    if d_boot >= crit {
        bad.push(format!("bootstrap KS {d_boot:.4} >= {crit:.4}"));
    }
    if d_perm >= crit {
        bad.push(format!("permutation KS {d_perm:.4} >= {crit:.4}"));
    }
    ensure(
        bad.is_empty(),
        format!(
            "KS vs U[0,1] over {sims} nulls: bootstrap {d_boot:.4}, permutation {d_perm:.4} (critical {crit:.4}); {}",
            if bad.is_empty() { "pearson and rsa exact".to_string() } else { bad.join("; ") }
        ),
    )
}

fn description_length_mechanics() -> Result<String, String> {
    // synthetic descriptions
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut by_count = Vec::new();
    for k in 1..=16usize {
        let mut lengths = BTreeSet::new();
        for s in 0..5 {
            let mut cells: Vec<usize> = (0..16).collect();
            for i in 0..k {
                let j = rng.random_range(i..16);
                cells.swap(i, j);
            }
            let mask = cells[..k].iter().fold(0u64, |m, &c| m | 1 << c);
            let b = Board::from_mask(4, mask).unwrap();
            lengths.insert(description_length(&synth_describe(&b, s).map_err(|e| e.to_string())?));
        }
        if lengths.len() != 1 || lengths.first() != Some(&synth_description_length(k)) || synth_description_length(k) != 4 + 5 * k {
            return Err(format!("{k} reds: lengths {lengths:?}"));
        }
        by_count.push(synth_description_length(k));
    }
    if !by_count.windows(2).all(|w| w[0] < w[1]) {
        return Err(format!("lengths not increasing: {by_count:?}"));
    }

    // programs found by search, then compressed
    let data = generate_prior_corpus(&RuleGenerator::uniform(4), 300, 6).map_err(|e| e.to_string())?;
    let lib = Library::new();
    let grammar = UnigramGrammar::uniform(&lib);
    let budget = SearchBudget { max_nodes: 20_000, max_program_size: 16, timeout: Duration::from_secs(600) };
    let solved: Vec<Program> = data
        .top_k(30)
        .entries
        .iter()
        .filter_map(|e| {
            let r = enumerate(&e.board, &grammar, &budget, &lib);
            if r.solved() {
                r.best_program
            } else {
                None
            }
        })
        .collect();
    let r = compress(&solved, &lib, 1.5, 5);
    let mean = |ps: &[Program]| ps.iter().map(Program::size).sum::<usize>() as f64 / ps.len() as f64;
    let (before, after) = (mean(&solved), mean(&r.rewritten));
    if r.adopted() == 0 {
        return Err(format!("no abstraction adopted over {} solutions", solved.len()));
    }
    same_behaviour(&solved, &r.rewritten, &r.library, 4)?;
    let mdl_ok = mdl(&r.rewritten, &r.library, 1.5) < mdl(&solved, &lib, 1.5);
    ensure(
        after < before && mdl_ok,
        format!(
            "synthetic DL 9..84 strictly increasing; mean program DL {before:.2} -> {after:.2} over {} solutions after {} abstractions",
            solved.len(),
            r.adopted()
        ),
    )
}

fn tiny_config() -> Value {
    json!({
        "seed": 3,
        "prior_count": 80,
        "conditional": { "epochs": 5 },
        "accuracy_trials": 200,
        "gibbs": { "chains": 4, "sweeps": 30, "burn_in": 10, "thin": 5 },
        "synth_tasks": 6,
        "wake_sleep": {
            "iterations": 1,
            "budget": { "max_nodes": 3000, "max_program_size": 12, "timeout": 600.0 },
            "dream_count": 20,
            "recognition": { "epochs": 2 }
        },
        "describe_per_board": 2,
        "text_dim": 64,
        "ppo_grounding": { "episodes": 40 },
        "ppo_baseline": { "episodes": 40, "n_steps": 64, "n_epochs": 2 },
        "eval_episodes": 2,
        "eval_boards": 5,
        "resamples": 200
    })
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if rel.ends_with("manifest.json") {
                let mut v: Value = serde_json::from_slice(&bytes).unwrap();
                let m = v.as_object_mut().unwrap();
                m.remove("started_unix");
                m.remove("wall_time_secs");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            out.insert(rel, bytes);
        }
    }
    out
}

fn determinism() -> Result<String, String> {
    let runs: Vec<BTreeMap<String, Vec<u8>>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            std::fs::write(dir.path().join("config.json"), tiny_config().to_string()).unwrap();
            // same relative paths in both runs, so recorded paths match too
            let status = Command::new(env!("CARGO_BIN_EXE_gridmind"))
                .current_dir(dir.path())
                .args(["--config", "config.json", "pipeline", "--out-dir", "out"])
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
            snapshot(&dir.path().join("out"))
        })
        .collect();
    let (a, b) = (&runs[0], &runs[1]);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    ensure(
        a.keys().eq(b.keys()) && differing.is_empty(),
        format!("{} files, {bytes} bytes; differing: {differing:?}", a.len()),
    )
}
